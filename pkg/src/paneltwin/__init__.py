"""Two-timescale conditional RBMs for panel data: training, digital twin
generation, hyperparameter selection, and calibration statistics."""

__version__ = "0.1.0"

from .composite import (
    AssemblyError,
    CompositeModel,
    TwinSet,
    assemble_composite,
    conditional_sample,
    generate_digital_subject,
    generate_digital_twins,
)
from .crbm_core import (
    CRBMModel,
    CRBMParams,
    GibbsState,
    LayerConfig,
    energy,
    exact_enumerate,
    free_energy,
    gibbs_sample,
    hidden_conditional,
    load_model,
    save_model,
    visible_conditional,
)
from .evaluation import (
    CompositeEndpoint,
    calibration_report,
    composite_scores,
    discriminator_probe,
    endpoint_progression,
    marginal_moment_tests,
    moment_report,
    phi_statistic,
    subject_level_fit,
    theil_sen,
)
from .panel_data import (
    MISSING,
    EncodedDataset,
    PanelDataset,
    Shingle,
    SubjectRecord,
    VariableSpec,
    encode,
    extract_shingles,
    load_panel,
    save_panel,
    split_dataset,
)
from .sweep import GridSpec, MetricTable, minimax_select, run_sweep, selection_metrics
from .synthetic import SynthConfig, generate_cohort, true_conditional_moments
from .training import (
    TrainConfig,
    TrainingDiverged,
    adam_update,
    adversary_gradient,
    impute_type_II,
    pcd_step,
    pl_gradient_exact,
    train_crbm,
    train_imputer,
)
