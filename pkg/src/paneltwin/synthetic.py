"""Synthetic two-timescale cohorts from a known latent progression process.

Each subject carries one (optionally two) latent severity trajectories
s_t = s_{t-1} + drift + noise; every variable is a noisy linear emission of
the latent, mapped into its domain. The generator returns the cohort plus a
GroundTruth with closed-form conditional moments, which stands in for
restricted clinical data in the acceptance tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .panel_data import MISSING, PanelDataset, SubjectRecord, VariableSpec


class OracleScopeError(ValueError):
    pass


@dataclass(frozen=True)
class SynthVariable:
    name: str
    domain: str  # binary | ordinal | continuous
    role: str
    groups: frozenset
    loading: float
    loading2: float = 0.0
    offset: float = 0.0
    noise: float = 0.1
    levels: tuple = ()
    threshold: float = 0.0


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int
    visit_count: int  # visits at the 3-month cadence
    drift: float
    latent_noise: float
    variables: tuple
    baseline_mean: float = 0.0
    baseline_sd: float = 1.0
    second_latent: bool = False
    drift2: float = 0.0
    latent_noise2: float = 0.0
    baseline_sd2: float = 1.0
    dropout: float = 0.0
    studies: tuple = ("STUDY_A",)

    def __post_init__(self):
        if self.n_subjects < 1 or self.visit_count < 1:
            raise ValueError("n_subjects and visit_count must be >= 1")
        if self.latent_noise < 0 or not (0.0 <= self.dropout < 1.0):
            raise ValueError("latent_noise must be >= 0 and dropout in [0, 1)")


@dataclass
class GroundTruth:
    config: SynthConfig
    latent: np.ndarray  # (n_subjects, visit_count)
    latent2: np.ndarray | None
    subject_ids: tuple

    def subject_index(self, subject_id: str) -> int:
        return self.subject_ids.index(subject_id)


def spec_for(v: SynthVariable) -> VariableSpec:
    if v.domain == "continuous":
        return VariableSpec(v.name, "continuous", v.role, v.groups, vrange=(-1e6, 1e6))
    if v.domain == "ordinal":
        return VariableSpec(v.name, "ordinal", v.role, v.groups, levels=v.levels)
    return VariableSpec(v.name, "binary", v.role, v.groups)


def schema_for(cfg: SynthConfig) -> tuple:
    return tuple(spec_for(v) for v in cfg.variables)


def _domain_map(v: SynthVariable, y: np.ndarray):
    if v.domain == "continuous":
        return np.clip(y, -1e6, 1e6)
    if v.domain == "binary":
        return (y > v.threshold).astype(int)
    idx = np.clip(np.rint(y), 0, len(v.levels) - 1).astype(int)
    return np.asarray(v.levels)[idx]


def generate_cohort(cfg: SynthConfig, seed: int):
    """Sample a cohort; returns (PanelDataset, GroundTruth)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n, T = cfg.n_subjects, cfg.visit_count

    s = np.empty((n, T))
    s[:, 0] = cfg.baseline_mean + cfg.baseline_sd * rng.standard_normal(n)
    for t in range(1, T):
        s[:, t] = s[:, t - 1] + cfg.drift + cfg.latent_noise * rng.standard_normal(n)
    s2 = None
    if cfg.second_latent:
        s2 = np.empty((n, T))
        s2[:, 0] = cfg.baseline_sd2 * rng.standard_normal(n)
        for t in range(1, T):
            s2[:, t] = s2[:, t - 1] + cfg.drift2 + cfg.latent_noise2 * rng.standard_normal(n)

    emitted = {}
    for v in cfg.variables:
        base = v.loading * s + v.offset + v.noise * rng.standard_normal((n, T))
        if s2 is not None and v.loading2:
            base = base + v.loading2 * s2
        emitted[v.name] = _domain_map(v, base)

    # missingness plan: variables only in the 6-month group exist at even visits
    observed = {}
    for v in cfg.variables:
        obs = np.ones((n, T), dtype=bool)
        if v.groups == frozenset((6,)):
            obs[:, 1::2] = False
        observed[v.name] = obs
    if cfg.dropout > 0.0:
        for v in cfg.variables:
            if v.role == "longitudinal":
                drop = rng.random((n, T)) < cfg.dropout
                observed[v.name] &= ~drop

    schema = schema_for(cfg)
    bg_vars = [v for v in cfg.variables if v.role == "background"]
    long_vars = [v for v in cfg.variables if v.role == "longitudinal"]
    width = max(4, len(str(n)))
    subject_ids = tuple(f"SUB{i:0{width}d}" for i in range(n))
    subjects = []
    for i in range(n):
        study = cfg.studies[i % len(cfg.studies)]
        background = tuple(
            emitted[v.name][i, 0] if observed[v.name][i, 0] else MISSING for v in bg_vars
        )
        visits = tuple(
            tuple(
                emitted[v.name][i, t] if observed[v.name][i, t] else MISSING
                for v in long_vars
            )
            for t in range(T)
        )
        subjects.append(SubjectRecord(subject_ids[i], study, background, visits))
    ds = PanelDataset(schema, tuple(subjects), 3, T)
    gt = GroundTruth(cfg, s, s2, subject_ids)
    return ds, gt


def true_conditional_moments(gt: GroundTruth, subject_id: str, variable: str, visit: int):
    """Closed-form (mean, variance) of a continuous emission given the
    subject's baseline latent state."""
    cfg = gt.config
    var = next((v for v in cfg.variables if v.name == variable), None)
    if var is None:
        raise KeyError(variable)
    if var.domain != "continuous":
        raise OracleScopeError(f"{variable!r} is not continuous-emitted")
    i = gt.subject_index(subject_id)
    mean = var.loading * (gt.latent[i, 0] + cfg.drift * visit) + var.offset
    variance = var.loading**2 * visit * cfg.latent_noise**2 + var.noise**2
    if gt.latent2 is not None and var.loading2:
        mean += var.loading2 * (gt.latent2[i, 0] + cfg.drift2 * visit)
        variance += var.loading2**2 * visit * cfg.latent_noise2**2
    return float(mean), float(variance)


def true_mean_endpoint_change(cfg: SynthConfig, components, visit: int) -> float:
    """Population-mean change-from-baseline of a sum of continuous emissions."""
    total = 0.0
    for name in components:
        var = next(v for v in cfg.variables if v.name == name)
        total += var.loading * cfg.drift * visit + var.loading2 * cfg.drift2 * visit
    return total


def save_ground_truth(gt: GroundTruth, path) -> None:
    doc = {
        "drift": gt.config.drift,
        "latent_noise": gt.config.latent_noise,
        "drift2": gt.config.drift2,
        "latent_noise2": gt.config.latent_noise2,
        "second_latent": gt.config.second_latent,
        "subject_ids": list(gt.subject_ids),
        "latent": [[float(x) for x in row] for row in gt.latent],
        "latent2": None
        if gt.latent2 is None
        else [[float(x) for x in row] for row in gt.latent2],
        "variables": [
            {
                "name": v.name,
                "domain": v.domain,
                "role": v.role,
                "groups": sorted(v.groups),
                "loading": v.loading,
                "loading2": v.loading2,
                "offset": v.offset,
                "noise": v.noise,
                "levels": list(v.levels),
                "threshold": v.threshold,
            }
            for v in gt.config.variables
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def default_variables(second_latent: bool = True) -> tuple:
    """The standard 12-longitudinal / 3-background variable set.

    Eight variables are available at the 3-month cadence (five of them shared
    with the 6-month model) and four are 6-month only; endpoint components are
    continuous so composite progressions have exact linear ground truth.
    """
    shared = [
        SynthVariable(f"score_s{i}", "continuous", "longitudinal", frozenset((3, 6)),
                      loading=1.0 - 0.12 * i, loading2=(0.35 if second_latent and i % 2 else 0.0),
                      offset=0.4 * i, noise=0.35)
        for i in range(5)
    ]
    only3 = [
        SynthVariable("lab_a", "continuous", "longitudinal", frozenset((3,)),
                      loading=0.7, loading2=(-0.4 if second_latent else 0.0), offset=-0.5, noise=0.4),
        SynthVariable("lab_b", "ordinal", "longitudinal", frozenset((3,)),
                      loading=1.1, offset=2.5, noise=0.45, levels=tuple(range(6))),
        SynthVariable("event_flag", "binary", "longitudinal", frozenset((3,)),
                      loading=0.8, offset=0.0, noise=0.6, threshold=0.55),
    ]
    only6 = [
        SynthVariable(f"rating_r{i}", "continuous", "longitudinal", frozenset((6,)),
                      loading=0.85 - 0.1 * i, loading2=(0.3 if second_latent and i % 2 == 0 else 0.0),
                      offset=0.2 * i, noise=0.35)
        for i in range(4)
    ]
    background = [
        SynthVariable("bg_marker", "continuous", "background", frozenset((3, 6)),
                      loading=0.9, offset=1.0, noise=0.3),
        SynthVariable("bg_flag", "binary", "background", frozenset((3, 6)),
                      loading=0.7, noise=0.5, threshold=0.0),
        SynthVariable("bg_grade", "ordinal", "background", frozenset((3,)),
                      loading=0.8, offset=2.0, noise=0.5, levels=tuple(range(5))),
    ]
    return tuple(shared + only3 + only6 + background)


def default_config(n_subjects: int, visit_count: int = 7, dropout: float = 0.0,
                   studies: tuple = ("STUDY_A", "STUDY_B")) -> SynthConfig:
    return SynthConfig(
        n_subjects=n_subjects,
        visit_count=visit_count,
        drift=0.22,
        latent_noise=0.28,
        variables=default_variables(second_latent=True),
        baseline_mean=0.0,
        baseline_sd=1.0,
        second_latent=True,
        drift2=0.0,
        latent_noise2=0.22,
        baseline_sd2=0.8,
        dropout=dropout,
        studies=studies,
    )


def endpoint_catalog(cfg: SynthConfig) -> dict:
    """Map the canonical endpoint names onto the synthetic variable set."""
    names = [v.name for v in cfg.variables]
    adas = [n for n in names if n.startswith("score_s")]
    cdr = [n for n in names if n.startswith("rating_r")]
    mmse = [n for n in names if n.startswith("score_s")][:3]
    if not adas or not cdr:
        raise ValueError("synthetic config lacks endpoint component variables")
    return {"ADAS-Cog11": adas, "CDR-SB": cdr, "MMSE": mmse}
