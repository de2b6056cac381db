"""Single-CRBM training: persistent contrastive divergence, adversarial
regularizer, adaptive-moment updates, and the auxiliary imputation workflow.

The objective blends the pseudolikelihood gradient (estimated by PCD over
shingle windows) with an adversarial contribution weighted by ``lambda``; at
``lambda = 0`` the update path is exactly plain PCD.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import crbm_core as core
from .panel_data import (
    MISSING,
    UNIT_BINARY,
    UNIT_CATEGORICAL,
    UNIT_GAUSSIAN,
    EncodedDataset,
    Shingle,
    decode_visit,
    encode_value,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PARAM_FIELDS = ("m", "log_sigma", "b", "W")


class TrainingDiverged(RuntimeError):
    """Raised when parameters or gradients go non-finite; carries the last
    finite checkpoint when one exists."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    epochs: int
    learning_rate: float
    beta_std: float
    weight_penalty: float
    mc_steps: int
    adversary_weight: float
    hidden_units: int
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.hidden_units < 1 or self.mc_steps < 1:
            raise ValueError("batch_size, hidden_units and mc_steps must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.adversary_weight < 1.0):
            raise ValueError("adversary_weight must be in [0, 1)")
        if self.weight_penalty < 0 or self.beta_std < 0:
            raise ValueError("weight_penalty and beta_std must be >= 0")


# Fixed hyperparameters of the auxiliary 3-month imputation model (not swept).
IMPUTER_CONFIG = TrainConfig(
    batch_size=500,
    epochs=1000,
    learning_rate=0.02,
    beta_std=0.15,
    weight_penalty=0.001,
    mc_steps=25,
    adversary_weight=0.30,
    hidden_units=32,
    seed=0,
)


@dataclass
class GradientSet:
    m: np.ndarray
    log_sigma: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def norm(self) -> float:
        return math.sqrt(
            sum(float((getattr(self, f) ** 2).sum()) for f in PARAM_FIELDS)
        )

    def finite(self) -> bool:
        return all(np.isfinite(getattr(self, f)).all() for f in PARAM_FIELDS)


def zero_gradient(layer: core.LayerConfig) -> GradientSet:
    n, M = layer.n_visible, layer.hidden_units
    return GradientSet(np.zeros(n), np.zeros(n), np.zeros(M), np.zeros((n, M)))


@dataclass
class OptimizerState:
    step: int
    mom1: dict
    mom2: dict


def init_optimizer(layer: core.LayerConfig) -> OptimizerState:
    z = zero_gradient(layer)
    return OptimizerState(
        step=0,
        mom1={f: getattr(z, f).copy() for f in PARAM_FIELDS},
        mom2={f: getattr(z, f).copy() for f in PARAM_FIELDS},
    )


def adam_update(opt: OptimizerState, params: core.CRBMParams, grad: GradientSet, learning_rate: float):
    """One ascent step with bias-corrected first/second moments."""
    if not grad.finite():
        raise TrainingDiverged(f"non-finite gradient at optimizer step {opt.step + 1}")
    t = opt.step + 1
    new = params.copy()
    mom1, mom2 = {}, {}
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for f in PARAM_FIELDS:
        g = getattr(grad, f)
        m = ADAM_BETA1 * opt.mom1[f] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * opt.mom2[f] + (1.0 - ADAM_BETA2) * g**2
        mom1[f], mom2[f] = m, v
        step = learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        setattr(new, f, getattr(new, f) + step)
    return new, OptimizerState(t, mom1, mom2)


# --- shingle windows in unit space -------------------------------------------


@dataclass
class WindowSet:
    """Flattened encoded windows: [slot 0 .. slot L, background] per row."""

    values: np.ndarray  # (N, n_visible)
    mask: np.ndarray  # True where observed
    kinds: np.ndarray  # 'complete' | 'typeI' | 'typeII'
    subject_index: np.ndarray
    start_slot: np.ndarray


def layer_for(enc: EncodedDataset, lag: int, hidden_units: int) -> core.LayerConfig:
    return core.LayerConfig(lag, enc.long_blocks, enc.bg_blocks, hidden_units, enc.cadence_months)


def _check_layer(enc: EncodedDataset, layer: core.LayerConfig):
    if enc.long_blocks != layer.long_blocks or enc.bg_blocks != layer.bg_blocks:
        raise ValueError("encoded dataset unit blocks do not match the layer config")
    if enc.cadence_months != layer.cadence_months:
        raise ValueError(
            f"encoded cadence {enc.cadence_months} != layer cadence {layer.cadence_months}"
        )


def encoded_windows(enc: EncodedDataset, lag: int) -> WindowSet:
    n, T = enc.n_subjects, enc.visit_count
    n_long = enc.n_long_units
    rows, masks, kinds, subj, starts = [], [], [], [], []
    for si in range(n):
        for t in range(T - lag):
            win_v = enc.longitudinal[si, t : t + lag + 1].reshape((lag + 1) * n_long)
            win_m = enc.longitudinal_mask[si, t : t + lag + 1].reshape((lag + 1) * n_long)
            rows.append(np.concatenate([win_v, enc.background[si]]))
            masks.append(np.concatenate([win_m, enc.background_mask[si]]))
            slot_empty = [
                not enc.longitudinal_mask[si, t + i].any() for i in range(lag + 1)
            ]
            if lag == 2 and slot_empty[0] and slot_empty[2]:
                kinds.append("typeI")
            elif lag == 2 and slot_empty[1] and not slot_empty[0] and not slot_empty[2]:
                kinds.append("typeII")
            else:
                kinds.append("complete")
            subj.append(si)
            starts.append(t)
    if not rows:
        raise ValueError("no shingle windows: trajectory shorter than lag + 1")
    return WindowSet(
        np.asarray(rows),
        np.asarray(masks),
        np.asarray(kinds, dtype=object),
        np.asarray(subj),
        np.asarray(starts),
    )


def init_params(layer: core.LayerConfig, cfg: TrainConfig, values, mask, rng) -> core.CRBMParams:
    """Weights ~ N(0, 0.01); locations/scales from observed unit moments;
    hidden biases ~ N(0, beta_std)."""
    n, M = layer.n_visible, layer.hidden_units
    params = core.zero_params(layer)
    params.W = rng.normal(0.0, 0.01, size=(n, M))
    params.b = rng.normal(0.0, cfg.beta_std, size=M)
    kinds = layer.unit_kinds()
    for j in range(n):
        col = values[:, j][mask[:, j]]
        if kinds[j] == UNIT_GAUSSIAN:
            if col.size >= 2:
                params.m[j] = float(col.mean())
                params.log_sigma[j] = math.log(max(float(col.std()), 0.05))
        else:
            if col.size:
                p = (float(col.sum()) + 0.5) / (col.size + 1.0)
                params.m[j] = math.log(p / (1.0 - p))
    return params


def mean_stats(params, layer, visible, hidden_probs, weights=None) -> GradientSet:
    """(1/B) sum_k w_k * (minus dU/dtheta at sample k); w defaults to 1."""
    B = visible.shape[0]
    sigma2 = np.exp(2.0 * params.log_sigma)
    gauss = core.gaussian_mask(layer)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)

    gm = np.where(gauss, (visible - params.m) / sigma2, visible)
    wh = hidden_probs @ params.W.T
    glog = np.where(gauss, ((visible - params.m) ** 2 - 2.0 * visible * wh) / sigma2, 0.0)
    xs = visible / sigma2
    return GradientSet(
        m=(w @ gm) / B,
        log_sigma=(w @ glog) / B,
        b=(w @ hidden_probs) / B,
        W=(xs * w[:, None]).T @ hidden_probs / B,
    )


def pl_gradient_exact(params, layer, batch_visible) -> GradientSet:
    """Exact pseudolikelihood gradient via the enumeration oracle.

    Positive phase uses closed-form hidden conditionals on the data; negative
    phase uses exact model expectations. All-binary models only.
    """
    joint = core.exact_enumerate(params, layer)
    batch_visible = np.asarray(batch_visible, dtype=float)
    h = core.hidden_conditional(params, layer, batch_visible)
    pos = mean_stats(params, layer, batch_visible, h)
    neg = GradientSet(
        m=joint.mean_visible(),
        log_sigma=np.zeros(layer.n_visible),
        b=joint.mean_hidden(),
        W=joint.mean_outer(),
    )
    return GradientSet(
        m=pos.m - neg.m,
        log_sigma=pos.log_sigma - neg.log_sigma,
        b=pos.b - neg.b,
        W=pos.W - neg.W,
    )


class PersistentChains:
    """Fantasy particles that survive across minibatches, with their own rng."""

    def __init__(self, visible: np.ndarray, rng):
        self.visible = np.asarray(visible, dtype=float)
        self.rng = rng

    @property
    def count(self) -> int:
        return self.visible.shape[0]


def init_chains(params, layer, count: int, rng) -> PersistentChains:
    return PersistentChains(core.bias_sample(params, layer, rng, count), rng)


def pcd_step(params, layer, values, mask, chains: PersistentChains, cfg: TrainConfig, rng):
    """One PCD gradient: clamped positive phase, free persistent negative phase.

    Missing cells in the batch are initialized from the bias distributions and
    Gibbs-sampled with observed cells clamped. Returns (gradient, chains).
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.shape[0] == 0:
        raise ValueError("empty batch")
    if mask.all():
        v_pos = values
    else:
        init = core.bias_sample(params, layer, rng, values.shape[0])
        v0 = np.where(mask, values, init)
        v_pos, _ = core.gibbs_sweeps(params, layer, v0, mask, rng, cfg.mc_steps)
    h_pos = core.hidden_conditional(params, layer, v_pos)
    pos = mean_stats(params, layer, v_pos, h_pos)

    free = np.zeros_like(chains.visible, dtype=bool)
    chains.visible, _ = core.gibbs_sweeps(
        params, layer, chains.visible, free, chains.rng, cfg.mc_steps
    )
    h_neg = core.hidden_conditional(params, layer, chains.visible)
    neg = mean_stats(params, layer, chains.visible, h_neg)

    grad = GradientSet(
        m=pos.m - neg.m,
        log_sigma=pos.log_sigma - neg.log_sigma,
        b=pos.b - neg.b,
        W=pos.W - neg.W - cfg.weight_penalty * params.W,
    )
    grad.log_sigma[~core.gaussian_mask(layer)] = 0.0
    return grad, chains


def adversary_gradient(params, layer, values, mask, chains: PersistentChains, lam: float):
    """Adversarial contribution (already scaled by lambda) plus critic accuracy.

    A linear critic on mean hidden activations is refit from scratch each call;
    the gradient reweights the fantasy particles toward data-like critic
    scores. Exactly zero when lambda is 0.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    v_d = np.where(mask, values, params.m)  # location-impute holes for the critic
    h_d = core.hidden_conditional(params, layer, v_d)
    h_f = core.hidden_conditional(params, layer, chains.visible)

    mu_d, mu_f = h_d.mean(axis=0), h_f.mean(axis=0)
    pooled = 0.5 * (h_d.var(axis=0) + h_f.var(axis=0))
    w = (mu_d - mu_f) / (pooled + 1e-6)
    norm = float(np.sqrt((w**2).sum()))
    if norm > 0.0:
        w = w / norm
    s_d, s_f = h_d @ w, h_f @ w
    thr = 0.5 * (s_d.mean() + s_f.mean())
    accuracy = 0.5 * (float((s_d >= thr).mean()) + float((s_f < thr).mean()))

    if lam == 0.0:
        return zero_gradient(layer), accuracy
    # unit-variance critic scores keep the contribution on the scale of the
    # pseudolikelihood statistics
    c = s_f - s_f.mean()
    spread = float(c.std())
    if spread > 0.0:
        c = c / spread
    g = mean_stats(params, layer, chains.visible, h_f, weights=c)
    for f in PARAM_FIELDS:
        setattr(g, f, lam * getattr(g, f))
    g.log_sigma[~core.gaussian_mask(layer)] = 0.0
    return g, accuracy


def combine_gradients(g_pl: GradientSet, g_adv: GradientSet, lam: float) -> GradientSet:
    if lam == 0.0:
        return g_pl
    return GradientSet(
        m=(1.0 - lam) * g_pl.m + g_adv.m,
        log_sigma=(1.0 - lam) * g_pl.log_sigma + g_adv.log_sigma,
        b=(1.0 - lam) * g_pl.b + g_adv.b,
        W=(1.0 - lam) * g_pl.W + g_adv.W,
    )


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    recon_error: float
    critic_accuracy: float
    grad_norm: float


def write_training_log(log, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "recon_error", "critic_accuracy", "grad_norm"])
        for row in log:
            writer.writerow(
                [
                    row.epoch,
                    format(row.recon_error, ".10g"),
                    format(row.critic_accuracy, ".10g"),
                    format(row.grad_norm, ".10g"),
                ]
            )


def _reconstruction_error(params, layer, values, mask) -> float:
    """RMSE between observed cells and their one-step conditional means."""
    v = np.where(mask, values, params.m)
    h = core.hidden_conditional(params, layer, v)
    act = core.visible_activations(params, layer, h)
    kinds = layer.unit_kinds()
    mean = np.array(act)
    binary = kinds == UNIT_BINARY
    mean[..., binary] = core._sigmoid(act[..., binary])
    for start, width in layer.categorical_spans():
        logits = act[..., start : start + width]
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        mean[..., start : start + width] = e / e.sum(axis=-1, keepdims=True)
    err = (values - mean) ** 2
    denom = mask.sum()
    return float(np.sqrt(err[mask].sum() / denom)) if denom else 0.0


def _batches(order: np.ndarray, batch_size: int):
    n = order.size
    count = max(1, math.ceil(n / batch_size))
    for i in range(count):
        idx = order[i * batch_size : (i + 1) * batch_size]
        if idx.size < batch_size:  # wrap-fill so chains pair 1:1 with batch slots
            idx = np.concatenate([idx, order[: batch_size - idx.size]])
        yield idx


def impute_windows(imputer: core.CRBMModel, values, mask, rng, steps: int | None = None):
    """Fill the middle slot of lag-2 windows using a lag-1 imputation model.

    The middle visit is sampled from the product of the two lag-1 windows it
    belongs to, conditioned on the observed cells; only the middle slot is
    written back. ``values``/``mask`` are flattened lag-2 windows whose unit
    blocks must match the imputer's.
    """
    lay = imputer.layer
    if lay.lag != 1:
        raise ValueError("imputer must be a lag-1 model")
    n_long, n_bg = lay.n_long_units, lay.n_bg_units
    K = values.shape[0]
    steps = steps or IMPUTER_CONFIG.mc_steps
    traj = values[:, : 3 * n_long].reshape(K, 3, n_long)
    bg = values[:, 3 * n_long :]
    clamp_traj = mask[:, : 3 * n_long].reshape(K, 3, n_long)
    clamp_bg = mask[:, 3 * n_long :]
    if n_bg != bg.shape[1]:
        raise ValueError("window background width does not match the imputer")
    init = core.bias_sample(imputer.params, lay, rng, K)
    init_traj = init[:, : 2 * n_long].reshape(K, 2, n_long)
    traj = np.where(clamp_traj, traj, np.concatenate([init_traj, init_traj[:, :1]], axis=1))
    bg = np.where(clamp_bg, bg, init[:, 2 * n_long :])
    traj, bg = core.poe_gibbs(
        imputer.params, lay, traj, bg, clamp_traj, clamp_bg, (0, 1), rng, steps
    )
    out_v = values.copy()
    out_m = mask.copy()
    out_v[:, n_long : 2 * n_long] = traj[:, 1, :]
    out_m[:, n_long : 2 * n_long] = True
    return out_v, out_m


def train_crbm(
    enc: EncodedDataset,
    layer: core.LayerConfig,
    cfg: TrainConfig,
    imputer: core.CRBMModel | None = None,
):
    """Train one CRBM on all usable windows of ``enc``; returns (model, log).

    Lag-2 type-I windows are dropped; type-II windows are pre-imputed when an
    imputer is supplied (its encoding stats must equal the dataset's) and
    otherwise kept as holes for the clamped positive phase.
    """
    _check_layer(enc, layer)
    if layer.hidden_units != cfg.hidden_units:
        raise ValueError("layer.hidden_units != cfg.hidden_units")
    wins = encoded_windows(enc, layer.lag)
    keep = wins.kinds != "typeI"
    values, mask, kinds = wins.values[keep], wins.mask[keep], wins.kinds[keep]
    if values.shape[0] == 0:
        raise ValueError("no usable shingles after dropping type-I windows")

    ss = np.random.SeedSequence(cfg.seed)
    r_init, r_chain, r_train, r_impute = (np.random.default_rng(s) for s in ss.spawn(4))

    if imputer is not None:
        if imputer.stats.continuous != enc.stats.continuous:
            raise ValueError("imputer encoding stats differ from the dataset's")
        type2 = kinds == "typeII"
        if type2.any():
            iv, im = impute_windows(imputer, values[type2], mask[type2], r_impute)
            values = values.copy()
            mask = mask.copy()
            values[type2], mask[type2] = iv, im

    params = init_params(layer, cfg, values, mask, r_init)
    opt = init_optimizer(layer)
    chains = init_chains(params, layer, cfg.batch_size, r_chain)
    checkpoint = params.copy()
    probe = slice(0, min(512, values.shape[0]))
    log = []
    for epoch in range(cfg.epochs):
        order = r_train.permutation(values.shape[0])
        accs, norms = [], []
        try:
            for idx in _batches(order, cfg.batch_size):
                g_pl, chains = pcd_step(
                    params, layer, values[idx], mask[idx], chains, cfg, r_train
                )
                g_adv, acc = adversary_gradient(
                    params, layer, values[idx], mask[idx], chains, cfg.adversary_weight
                )
                grad = combine_gradients(g_pl, g_adv, cfg.adversary_weight)
                params, opt = adam_update(opt, params, grad, cfg.learning_rate)
                np.clip(params.log_sigma, math.log(core.SIGMA_FLOOR), None, out=params.log_sigma)
                accs.append(acc)
                norms.append(grad.norm())
        except TrainingDiverged as err:
            raise TrainingDiverged(f"epoch {epoch}: {err}", checkpoint=checkpoint) from None
        if not params.finite():
            raise TrainingDiverged(
                f"non-finite parameters after epoch {epoch}", checkpoint=checkpoint
            )
        checkpoint = params.copy()
        log.append(
            EpochLog(
                epoch,
                _reconstruction_error(params, layer, values[probe], mask[probe]),
                float(np.mean(accs)),
                float(np.mean(norms)),
            )
        )
    return core.CRBMModel(layer, params, enc.stats), tuple(log)


def train_imputer(enc: EncodedDataset, seed: int = 0, epochs: int | None = None):
    """Train the fixed-hyperparameter lag-1 imputation model on 3-month data."""
    if enc.cadence_months != 3:
        raise ValueError("imputer training data must have a 3-month cadence")
    cfg = replace(IMPUTER_CONFIG, seed=seed, epochs=IMPUTER_CONFIG.epochs if epochs is None else epochs)
    layer = layer_for(enc, 1, cfg.hidden_units)
    return train_crbm(enc, layer, cfg)


def impute_type_II(imputer: core.CRBMModel, shingle: Shingle, seed: int = 0) -> Shingle:
    """Fill a type-II shingle's missing middle visit; kind becomes 'complete'.

    Shingle vectors must align with the imputer's schema. Type-I shingles are
    rejected: they are never used for training.
    """
    if shingle.kind != "typeII":
        raise ValueError(f"impute_type_II requires a typeII shingle, got {shingle.kind!r}")
    lay = imputer.layer
    if shingle.cadence_months != lay.cadence_months:
        raise ValueError("shingle cadence does not match the imputer")
    schema = imputer.stats.schema
    long_specs = [s for s in schema if s.role == "longitudinal"]
    bg_specs = [s for s in schema if s.role == "background"]
    if len(long_specs) != len(shingle.windows[0]) or len(bg_specs) != len(shingle.background):
        raise ValueError("shingle width does not match the imputer schema")

    def enc_slot(specs, blocks, cells, width):
        v = np.zeros(width)
        m = np.zeros(width, dtype=bool)
        for spec, block, cell in zip(specs, blocks, cells):
            if cell is MISSING:
                continue
            sl = slice(block.start, block.start + block.width)
            v[sl] = encode_value(spec, imputer.stats, cell)
            m[sl] = True
        return v, m

    n_long, n_bg = lay.n_long_units, lay.n_bg_units
    slots = [enc_slot(long_specs, lay.long_blocks, w, n_long) for w in shingle.windows]
    bg_v, bg_m = enc_slot(bg_specs, lay.bg_blocks, shingle.background, n_bg)
    values = np.concatenate([s[0] for s in slots] + [bg_v])[None, :]
    mask = np.concatenate([s[1] for s in slots] + [bg_m])[None, :]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out_v, _ = impute_windows(imputer, values, mask, rng)
    middle_units = out_v[0, n_long : 2 * n_long]
    middle = decode_visit(long_specs, lay.long_blocks, imputer.stats, middle_units)
    windows = (shingle.windows[0], middle, shingle.windows[2])
    return replace(shingle, windows=windows, kind="complete")
