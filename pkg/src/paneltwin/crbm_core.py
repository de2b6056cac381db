"""Lag-L conditional RBM over encoded shingles: energy, conditionals, Gibbs.

The visible layer concatenates the longitudinal unit vector once per time
slot 0..L plus the background units; the hidden layer is binary. The joint
distribution is p(x, z) proportional to exp(-U(x, z)) with

    U(x, z) = sum_j a_j(x_j) - sum_{j,mu} W_{j,mu} (x_j / sigma_j^2)(z_mu / eps_mu^2)
              + sum_mu b_mu(z_mu),

where a_j(x) = (x - m_j)^2 / (2 sigma_j^2) for Gaussian units,
a_j(x) = -m_j x for binary (and categorical indicator) units, and
b_mu(z) = -b_mu z. Hidden scales eps_mu are fixed at 1. Conditionals are
closed-form per layer, which makes block Gibbs exact.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .panel_data import (
    UNIT_BINARY,
    UNIT_CATEGORICAL,
    UNIT_GAUSSIAN,
    EncodingStats,
    UnitBlock,
    build_blocks,
    schema_from_json,
    schema_to_json,
)

LAYOUT_VERSION = 1
SIGMA_FLOOR = 1e-3


class OracleScopeError(ValueError):
    """Model is outside what the enumeration oracle can handle."""


@dataclass(frozen=True)
class LayerConfig:
    """Shape of one CRBM: lag, per-slot unit blocks, hidden count, cadence."""

    lag: int
    long_blocks: tuple
    bg_blocks: tuple
    hidden_units: int
    cadence_months: int

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError(f"lag must be >= 1, got {self.lag}")
        if self.hidden_units < 1:
            raise ValueError(f"hidden_units must be >= 1, got {self.hidden_units}")

    @property
    def n_long_units(self) -> int:
        return sum(b.width for b in self.long_blocks)

    @property
    def n_bg_units(self) -> int:
        return sum(b.width for b in self.bg_blocks)

    @property
    def n_visible(self) -> int:
        return (self.lag + 1) * self.n_long_units + self.n_bg_units

    def slot_slice(self, slot) -> slice:
        """Flattened columns of time slot 0..lag, or 's' for background."""
        n = self.n_long_units
        if slot == "s":
            return slice((self.lag + 1) * n, self.n_visible)
        if not (0 <= slot <= self.lag):
            raise ValueError(f"slot must be 0..{self.lag} or 's', got {slot}")
        return slice(slot * n, (slot + 1) * n)

    def unit_kinds(self) -> np.ndarray:
        per_slot = np.concatenate([[b.kind] * b.width for b in self.long_blocks]) if self.long_blocks else np.array([], dtype=object)
        bg = np.concatenate([[b.kind] * b.width for b in self.bg_blocks]) if self.bg_blocks else np.array([], dtype=object)
        return np.concatenate([per_slot] * (self.lag + 1) + [bg])

    def categorical_spans(self) -> tuple:
        spans = []
        n = self.n_long_units
        for slot in range(self.lag + 1):
            for b in self.long_blocks:
                if b.kind == UNIT_CATEGORICAL:
                    spans.append((slot * n + b.start, b.width))
        off = (self.lag + 1) * n
        for b in self.bg_blocks:
            if b.kind == UNIT_CATEGORICAL:
                spans.append((off + b.start, b.width))
        return tuple(spans)


def build_layer(schema, lag: int, hidden_units: int, cadence_months: int) -> LayerConfig:
    """Layer over a schema subset: every longitudinal variable once per slot."""
    long_blocks = build_blocks([s for s in schema if s.role == "longitudinal"])
    bg_blocks = build_blocks([s for s in schema if s.role == "background"])
    return LayerConfig(lag, long_blocks, bg_blocks, hidden_units, cadence_months)


def _eq_arrays(a, b) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b))


@dataclass(eq=False)
class CRBMParams:
    """All trainable parameters; sigma is stored in log space."""

    m: np.ndarray  # visible locations, (n_visible,)
    log_sigma: np.ndarray  # Gaussian scales; zero (sigma=1) for other kinds
    b: np.ndarray  # hidden biases, (hidden_units,)
    eps: np.ndarray  # hidden scales, fixed at 1
    W: np.ndarray  # couplings, (n_visible, hidden_units)

    def __eq__(self, other):
        if not isinstance(other, CRBMParams):
            return NotImplemented
        return all(
            _eq_arrays(getattr(self, f), getattr(other, f))
            for f in ("m", "log_sigma", "b", "eps", "W")
        )

    def copy(self) -> "CRBMParams":
        return CRBMParams(
            self.m.copy(), self.log_sigma.copy(), self.b.copy(), self.eps.copy(), self.W.copy()
        )

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def finite(self) -> bool:
        return all(
            np.isfinite(getattr(self, f)).all() for f in ("m", "log_sigma", "b", "eps", "W")
        )


def zero_params(layer: LayerConfig) -> CRBMParams:
    n, M = layer.n_visible, layer.hidden_units
    return CRBMParams(
        m=np.zeros(n),
        log_sigma=np.zeros(n),
        b=np.zeros(M),
        eps=np.ones(M),
        W=np.zeros((n, M)),
    )


def gaussian_mask(layer: LayerConfig) -> np.ndarray:
    return layer.unit_kinds() == UNIT_GAUSSIAN


def _check_dims(params: CRBMParams, layer: LayerConfig):
    if params.W.shape != (layer.n_visible, layer.hidden_units):
        raise ValueError(
            f"W shape {params.W.shape} does not match layer ({layer.n_visible}, {layer.hidden_units})"
        )


def energy(params: CRBMParams, layer: LayerConfig, visible, hidden) -> np.ndarray:
    """U(x, z); broadcasts over leading axes of ``visible`` and ``hidden``."""
    visible = np.asarray(visible, dtype=float)
    hidden = np.asarray(hidden, dtype=float)
    _check_dims(params, layer)
    if not (np.isfinite(visible).all() and np.isfinite(hidden).all()):
        raise ValueError("non-finite state passed to energy")
    gauss = gaussian_mask(layer)
    sigma2 = np.exp(2.0 * params.log_sigma)
    a = np.where(
        gauss,
        (visible - params.m) ** 2 / (2.0 * sigma2),
        -params.m * visible,
    ).sum(axis=-1)
    coupling = ((visible / sigma2) @ params.W) * (hidden / params.eps**2)
    return a - coupling.sum(axis=-1) - (hidden * params.b).sum(axis=-1)


def hidden_conditional(params: CRBMParams, layer: LayerConfig, visible) -> np.ndarray:
    """p(z_mu = 1 | x) = logistic(b_mu + sum_j W_jmu x_j / sigma_j^2)."""
    visible = np.asarray(visible, dtype=float)
    _check_dims(params, layer)
    sigma2 = np.exp(2.0 * params.log_sigma)
    logits = params.b / params.eps**2 + (visible / sigma2) @ params.W / params.eps**2
    return _sigmoid(logits)


def visible_activations(params: CRBMParams, layer: LayerConfig, hidden) -> np.ndarray:
    """Per-unit activation m_j + sum_mu W_jmu z_mu / eps_mu^2 given hidden states."""
    hidden = np.asarray(hidden, dtype=float)
    return params.m + (hidden / params.eps**2) @ params.W.T


def _sigmoid(t):
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class BernoulliDist:
    p: float


@dataclass(frozen=True)
class NormalDist:
    mean: float
    scale: float


@dataclass(frozen=True)
class CategoricalDist:
    probs: tuple


def visible_conditional(params: CRBMParams, layer: LayerConfig, hidden, cell):
    """Sampling distribution of one visible cell given the hidden layer.

    ``cell`` is (slot, unit) with slot in 0..lag or 's' and unit the column
    inside that slot; for a categorical variable pass the first column of its
    indicator block.
    """
    slot, unit = cell
    base = layer.slot_slice(slot).start
    j = base + unit
    kinds = layer.unit_kinds()
    act = visible_activations(params, layer, hidden)
    if kinds[j] == UNIT_BINARY:
        return BernoulliDist(float(_sigmoid(np.atleast_1d(act[..., j]))[0]))
    if kinds[j] == UNIT_GAUSSIAN:
        return NormalDist(float(act[..., j]), float(np.exp(params.log_sigma[j])))
    for start, width in layer.categorical_spans():
        if start <= j < start + width:
            logits = act[..., start : start + width]
            z = logits - logits.max()
            p = np.exp(z)
            return CategoricalDist(tuple(p / p.sum()))
    raise ValueError(f"cell {cell} not found in any categorical span")


class GibbsState:
    """Mutable chain state: visible, hidden, clamp mask, and its rng stream."""

    def __init__(self, visible, hidden, clamp, rng):
        self.visible = np.asarray(visible, dtype=float).copy()
        self.hidden = np.asarray(hidden, dtype=float).copy()
        self.clamp = np.asarray(clamp, dtype=bool).copy()
        self.rng = rng

    def copy_with_rng(self, rng) -> "GibbsState":
        return GibbsState(self.visible, self.hidden, self.clamp, rng)


def sample_hidden(params, layer, visible, rng) -> np.ndarray:
    p = hidden_conditional(params, layer, visible)
    return (rng.random(p.shape) < p).astype(float)


def sample_visible(params, layer, hidden, rng, current=None, clamp=None) -> np.ndarray:
    """Draw the whole visible layer given hidden; clamped cells keep ``current``.

    The rng consumption is independent of the clamp pattern (full draws are
    made, then masked), so fixed streams give reproducible conditional draws.
    """
    act = visible_activations(params, layer, hidden)
    kinds = layer.unit_kinds()
    out = np.array(act, dtype=float)

    binary = kinds == UNIT_BINARY
    if binary.any():
        p = _sigmoid(act[..., binary])
        out[..., binary] = (rng.random(p.shape) < p).astype(float)

    gauss = kinds == UNIT_GAUSSIAN
    if gauss.any():
        sigma = np.exp(params.log_sigma[gauss])
        out[..., gauss] = act[..., gauss] + sigma * rng.standard_normal(act[..., gauss].shape)

    for start, width in layer.categorical_spans():
        logits = act[..., start : start + width]
        g = rng.gumbel(size=logits.shape)
        idx = np.argmax(logits + g, axis=-1)
        block = np.zeros_like(logits)
        np.put_along_axis(block, idx[..., None], 1.0, axis=-1)
        out[..., start : start + width] = block

    if clamp is not None:
        out = np.where(clamp, current, out)
    return out


def gibbs_sweeps(params, layer, visible, clamp, rng, k, hidden=None):
    """k alternating block updates on a batch of chains; returns (visible, hidden)."""
    v = np.array(visible, dtype=float)
    for _ in range(k):
        hidden = sample_hidden(params, layer, v, rng)
        v = sample_visible(params, layer, hidden, rng, current=v, clamp=clamp)
    return v, hidden


def gibbs_sample(params: CRBMParams, layer: LayerConfig, state: GibbsState, k: int) -> GibbsState:
    """Advance one chain by k block sweeps; clamped cells never change."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check_dims(params, layer)
    v, h = gibbs_sweeps(params, layer, state.visible[None, :], state.clamp[None, :], state.rng, k)
    state.visible = v[0]
    state.hidden = h[0]
    return state


def bias_sample(params, layer, rng, n: int) -> np.ndarray:
    """Draw n visible vectors from the per-unit bias distributions (W ignored)."""
    zeros = np.zeros((n, layer.hidden_units))
    return sample_visible(params, layer, zeros, rng)


# --- enumeration oracle -----------------------------------------------------


def _binary_states(n: int) -> np.ndarray:
    idx = np.arange(2**n)[:, None]
    return ((idx >> np.arange(n)[::-1]) & 1).astype(float)


@dataclass(frozen=True)
class EnumeratedJoint:
    """Exact joint over all (visible, hidden) states of a tiny binary model."""

    visible_states: np.ndarray  # (2^n, n)
    hidden_states: np.ndarray  # (2^M, M)
    joint: np.ndarray  # (2^n, 2^M), sums to 1
    unnormalized: np.ndarray  # exp(-U), same shape
    partition: float

    def visible_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def hidden_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def index_of_visible(self, x) -> int:
        bits = np.asarray(x, dtype=int)
        n = bits.shape[0]
        return int((bits * (1 << np.arange(n)[::-1])).sum())

    def prob(self, x, z) -> float:
        zi = int((np.asarray(z, dtype=int) * (1 << np.arange(len(z))[::-1])).sum())
        return float(self.joint[self.index_of_visible(x), zi])

    def unnormalized_visible(self) -> np.ndarray:
        return self.unnormalized.sum(axis=1)

    def mean_visible(self) -> np.ndarray:
        return self.visible_marginal() @ self.visible_states

    def mean_hidden(self) -> np.ndarray:
        return self.hidden_marginal() @ self.hidden_states

    def mean_outer(self) -> np.ndarray:
        """E[x z^T] under the joint."""
        return np.einsum("vh,vi,hj->ij", self.joint, self.visible_states, self.hidden_states)


def exact_enumerate(params: CRBMParams, layer: LayerConfig) -> EnumeratedJoint:
    """Exact joint for an all-binary model with <= 20 total units."""
    kinds = layer.unit_kinds()
    if not (kinds == UNIT_BINARY).all():
        raise OracleScopeError("enumeration oracle requires all-binary visible units")
    n, M = layer.n_visible, layer.hidden_units
    if n + M > 20:
        raise OracleScopeError(f"too many units for enumeration: {n} + {M} > 20")
    X = _binary_states(n)
    Z = _binary_states(M)
    U = -(X @ params.m)[:, None] - (Z @ params.b)[None, :] - (X @ params.W) @ Z.T
    w = np.exp(-U)
    part = w.sum()
    return EnumeratedJoint(X, Z, w / part, w, float(part))


def free_energy(params: CRBMParams, layer: LayerConfig, visible) -> np.ndarray:
    """F(x) = -log sum_z exp(-U(x, z)), closed form for binary hidden units."""
    visible = np.asarray(visible, dtype=float)
    _check_dims(params, layer)
    gauss = gaussian_mask(layer)
    sigma2 = np.exp(2.0 * params.log_sigma)
    a = np.where(
        gauss,
        (visible - params.m) ** 2 / (2.0 * sigma2),
        -params.m * visible,
    ).sum(axis=-1)
    logits = params.b / params.eps**2 + (visible / sigma2) @ params.W / params.eps**2
    return a - np.logaddexp(0.0, logits).sum(axis=-1)


# --- multi-window (trajectory) Gibbs -----------------------------------------


def poe_gibbs(params, layer, traj, bg, clamp_traj, clamp_bg, window_starts, rng, k):
    """Clamped block Gibbs over a trajectory covered by overlapping windows.

    ``traj`` is (B, S, n_long) longitudinal slots and ``bg`` (B, n_bg); each
    window starts at a slot in ``window_starts`` and spans ``lag + 1`` slots.
    Cells covered by several windows are sampled from the product of the
    windows' conditionals (sum of natural parameters; precision-weighted for
    Gaussian units). With a single window this is exactly the model's own
    conditional. Returns the updated (traj, bg); clamped cells never change.
    """
    L = layer.lag
    n_long, n_bg = layer.n_long_units, layer.n_bg_units
    B, S, _ = traj.shape
    for w in window_starts:
        if w < 0 or w + L >= S:
            raise ValueError(f"window at slot {w} does not fit a trajectory of {S} slots")

    kinds_long = layer.unit_kinds()[:n_long]
    kinds_bg = layer.unit_kinds()[layer.slot_slice("s")]
    sigma = np.exp(params.log_sigma)
    traj = np.array(traj, dtype=float)
    bg = np.array(bg, dtype=float)

    long_cat_spans = [
        (b.start, b.width) for b in layer.long_blocks if b.kind == UNIT_CATEGORICAL
    ]
    bg_cat_spans = [(b.start, b.width) for b in layer.bg_blocks if b.kind == UNIT_CATEGORICAL]

    def flatten(w):
        win = traj[:, w : w + L + 1, :].reshape(B, (L + 1) * n_long)
        return np.concatenate([win, bg], axis=1)

    for _ in range(k):
        acts = []
        for w in window_starts:
            z = sample_hidden(params, layer, flatten(w), rng)
            acts.append(visible_activations(params, layer, z))

        # accumulate natural parameters per trajectory cell
        nat_long = np.zeros((B, S, n_long))  # sum of logits / precision-weighted means
        prec_long = np.zeros((B, S, n_long))  # Gaussian precision sums
        cnt_long = np.zeros((S, n_long))
        nat_bg = np.zeros((B, n_bg))
        prec_bg = np.zeros((B, n_bg))
        cnt_bg = 0.0
        for act, w in zip(acts, window_starts):
            for i in range(L + 1):
                sl = layer.slot_slice(i)
                a = act[:, sl]
                s2 = sigma[sl] ** 2
                gauss = kinds_long == UNIT_GAUSSIAN
                nat_long[:, w + i, :] += np.where(gauss, a / s2, a)
                prec_long[:, w + i, :] += np.where(gauss, 1.0 / s2, 0.0)
                cnt_long[w + i, :] += 1.0
            sl = layer.slot_slice("s")
            a = act[:, sl]
            s2 = sigma[sl] ** 2
            gauss_bg = kinds_bg == UNIT_GAUSSIAN
            nat_bg += np.where(gauss_bg, a / s2, a)
            prec_bg += np.where(gauss_bg, 1.0 / s2, 0.0)
            cnt_bg += 1.0

        new_long = _sample_from_natural(
            nat_long, prec_long, cnt_long > 0, kinds_long, long_cat_spans, rng
        )
        traj = np.where(clamp_traj | (cnt_long == 0), traj, new_long)
        if n_bg:
            new_bg = _sample_from_natural(
                nat_bg, prec_bg, np.full(n_bg, cnt_bg > 0), kinds_bg, bg_cat_spans, rng
            )
            bg = np.where(clamp_bg, bg, new_bg)
    return traj, bg


def _sample_from_natural(nat, prec, covered, kinds, cat_spans, rng):
    """Sample cells from accumulated natural parameters (last axis = units)."""
    out = np.zeros_like(nat)
    binary = (kinds == UNIT_BINARY) & covered
    if binary.any():
        p = _sigmoid(nat[..., binary])
        out[..., binary] = (rng.random(p.shape) < p).astype(float)
    gauss = (kinds == UNIT_GAUSSIAN) & covered
    if gauss.any():
        prec_g = prec[..., gauss]
        mean = nat[..., gauss] / prec_g
        out[..., gauss] = mean + rng.standard_normal(mean.shape) / np.sqrt(prec_g)
    for start, width in cat_spans:
        if not covered[start]:
            continue
        logits = nat[..., start : start + width]
        g = rng.gumbel(size=logits.shape)
        idx = np.argmax(logits + g, axis=-1)
        block = np.zeros_like(logits)
        np.put_along_axis(block, idx[..., None], 1.0, axis=-1)
        out[..., start : start + width] = block
    return out


# --- model container --------------------------------------------------------


@dataclass(eq=False)
class CRBMModel:
    """A trained CRBM with everything needed to sample and decode it."""

    layer: LayerConfig
    params: CRBMParams
    stats: EncodingStats

    @property
    def schema(self) -> tuple:
        return self.stats.schema

    def __eq__(self, other):
        if not isinstance(other, CRBMModel):
            return NotImplemented
        return (
            self.layer == other.layer
            and self.params == other.params
            and self.stats.schema == other.stats.schema
            and self.stats.continuous == other.stats.continuous
        )


def _pack(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(obj) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


def _blocks_json(blocks) -> list:
    return [{"name": b.name, "kind": b.kind, "start": b.start, "width": b.width} for b in blocks]


def _blocks_from_json(raw) -> tuple:
    return tuple(UnitBlock(b["name"], b["kind"], b["start"], b["width"]) for b in raw)


def save_model(model: CRBMModel, path) -> None:
    doc = {
        "layout_version": LAYOUT_VERSION,
        "layer": {
            "lag": model.layer.lag,
            "hidden_units": model.layer.hidden_units,
            "cadence_months": model.layer.cadence_months,
            "long_blocks": _blocks_json(model.layer.long_blocks),
            "bg_blocks": _blocks_json(model.layer.bg_blocks),
        },
        "schema": json.loads(schema_to_json(model.stats.schema)),
        "stats": {"continuous": {k: list(v) for k, v in sorted(model.stats.continuous.items())}},
        "arrays": {
            "m": _pack(model.params.m),
            "log_sigma": _pack(model.params.log_sigma),
            "b": _pack(model.params.b),
            "eps": _pack(model.params.eps),
            "W": _pack(model.params.W),
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_model(path) -> CRBMModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("layout_version") != LAYOUT_VERSION:
        raise ValueError(f"unsupported model layout version {doc.get('layout_version')!r}")
    lay = doc["layer"]
    layer = LayerConfig(
        lag=lay["lag"],
        long_blocks=_blocks_from_json(lay["long_blocks"]),
        bg_blocks=_blocks_from_json(lay["bg_blocks"]),
        hidden_units=lay["hidden_units"],
        cadence_months=lay["cadence_months"],
    )
    schema = schema_from_json(json.dumps(doc["schema"]))
    stats = EncodingStats(schema, {k: tuple(v) for k, v in doc["stats"]["continuous"].items()})
    arrays = doc["arrays"]
    params = CRBMParams(
        m=_unpack(arrays["m"]),
        log_sigma=_unpack(arrays["log_sigma"]),
        b=_unpack(arrays["b"]),
        eps=_unpack(arrays["eps"]),
        W=_unpack(arrays["W"]),
    )
    return CRBMModel(layer, params, stats)
