"""Packaged defaults: split ratios, twin count, hyperparameter grids with
their selected configurations, selection-metric sets, and the canonical
composite endpoint definitions."""

from __future__ import annotations

from dataclasses import dataclass

from .evaluation import CompositeEndpoint
from .training import IMPUTER_CONFIG, TrainConfig

SPLIT_RATIOS = (0.5, 0.2, 0.3)
TWIN_COUNT = 100
BONFERRONI_ALPHA = 0.05

GRID_3MO = {
    "batch_size": (400, 600, 800),
    "epochs": (1000,),
    "learning_rate": (0.002, 0.004, 0.008, 0.012, 0.016),
    "beta_std": (0.15, 0.30, 0.45),
    "weight_penalty": (0.001,),
    "mc_steps": (25,),
    "adversary_weight": (0.0, 0.15, 0.30),
    "hidden_units": (65, 130, 195),
}

GRID_6MO = {
    "batch_size": (100, 200, 400),
    "epochs": (1000,),
    "learning_rate": (0.004, 0.008, 0.012, 0.016, 0.024, 0.032),
    "beta_std": (0.15, 0.30, 0.45),
    "weight_penalty": (0.001,),
    "mc_steps": (25,),
    "adversary_weight": (0.0, 0.15, 0.30),
    "hidden_units": (32, 64),
}

SELECTED_3MO = TrainConfig(
    batch_size=400,
    epochs=1000,
    learning_rate=0.016,
    beta_std=0.15,
    weight_penalty=0.001,
    mc_steps=25,
    adversary_weight=0.30,
    hidden_units=65,
)

SELECTED_6MO = TrainConfig(
    batch_size=100,
    epochs=1000,
    learning_rate=0.032,
    beta_std=0.15,
    weight_penalty=0.001,
    mc_steps=25,
    adversary_weight=0.0,
    hidden_units=32,
)

# Imputer hyperparameters are fixed, never swept.
IMPUTER = IMPUTER_CONFIG


@dataclass(frozen=True)
class MetricDef:
    name: str
    kind: str  # statistical | performance
    direction: str  # higher | lower


SELECTION_METRICS_3MO = (
    MetricDef("R2 correlations", "statistical", "higher"),
    MetricDef("R2 3-month autocorrelations", "statistical", "higher"),
    MetricDef("R2 6-month autocorrelations", "statistical", "higher"),
    MetricDef("R2 9-month autocorrelations", "statistical", "higher"),
    MetricDef("RMS ADAS-Cog11 progression at 6 months", "performance", "lower"),
    MetricDef("RMS ADAS-Cog11 progression at 12 months", "performance", "lower"),
    MetricDef("RMS ADAS-Cog11 progression at 18 months", "performance", "lower"),
)

SELECTION_METRICS_6MO = (
    MetricDef("R2 correlations", "statistical", "higher"),
    MetricDef("R2 6-month autocorrelations", "statistical", "higher"),
    MetricDef("R2 12-month autocorrelations", "statistical", "higher"),
    MetricDef("RMS ADAS-Cog11 progression at 6 months", "performance", "lower"),
    MetricDef("RMS ADAS-Cog11 progression at 12 months", "performance", "lower"),
    MetricDef("RMS ADAS-Cog11 progression at 18 months", "performance", "lower"),
    MetricDef("RMS CDR-SB progression at 6 months", "performance", "lower"),
    MetricDef("RMS CDR-SB progression at 12 months", "performance", "lower"),
    MetricDef("RMS CDR-SB progression at 18 months", "performance", "lower"),
)


def selection_metric_defs(model_kind: str) -> tuple:
    if model_kind == "3mo":
        return SELECTION_METRICS_3MO
    if model_kind == "6mo":
        return SELECTION_METRICS_6MO
    raise ValueError(f"model_kind must be '3mo' or '6mo', got {model_kind!r}")


# Canonical endpoint definitions over the clinical variable names. The
# 11-item composite drops delayed word recall and cancellation from the 13
# modeled task scores.
ADAS_COG11 = CompositeEndpoint(
    "ADAS-Cog11",
    (
        "ADAS commands",
        "ADAS comprehension",
        "ADAS construction",
        "ADAS ideational",
        "ADAS naming",
        "ADAS orientation",
        "ADAS remember instructions",
        "ADAS spoken language",
        "ADAS word finding",
        "ADAS word recall",
        "ADAS word recognition",
    ),
)

CDR_SB = CompositeEndpoint(
    "CDR-SB",
    (
        "CDR community",
        "CDR home & hobbies",
        "CDR judgement",
        "CDR memory",
        "CDR orientation",
        "CDR personal care",
    ),
)

MMSE = CompositeEndpoint(
    "MMSE",
    (
        "MMSE attention",
        "MMSE language",
        "MMSE orientation",
        "MMSE recall",
        "MMSE registration",
    ),
)

CLINICAL_ENDPOINTS = {"ADAS-Cog11": ADAS_COG11, "CDR-SB": CDR_SB, "MMSE": MMSE}
