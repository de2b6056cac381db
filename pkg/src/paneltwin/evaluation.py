"""Statistical evaluation of twin cohorts against held-out panel data:
composite endpoints, per-cell calibration, moment/correlation regressions,
a linear discriminator probe, endpoint progression curves, subject-level
fits, and marginal moment tests.

Conventions used throughout: the per-cell p-value is the twins' midpoint
empirical CDF evaluated at the observed value (so positive mean phi means the
data runs above the model); analyses cover follow-up visits, since baseline
cells are clamped to the data by construction.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .panel_data import MISSING, PanelArrays, PanelDataset, panel_numeric

CANONICAL_ENDPOINTS = ("ADAS-Cog11", "CDR-SB", "MMSE")
DEFAULT_ALPHA = 0.05


class EndpointError(ValueError):
    pass


@dataclass(frozen=True)
class CompositeEndpoint:
    """A sum-composite clinical score over component variables."""

    name: str
    components: tuple
    aggregation: str = "sum"

    def __post_init__(self):
        if self.name not in CANONICAL_ENDPOINTS:
            raise EndpointError(
                f"unknown endpoint name {self.name!r}; expected one of {CANONICAL_ENDPOINTS}"
            )
        if not self.components:
            raise EndpointError(f"endpoint {self.name!r} needs components")
        if self.aggregation != "sum":
            raise EndpointError("only sum aggregation is supported")


def _component_columns(schema, endpoint: CompositeEndpoint):
    long_specs = [s for s in schema if s.role == "longitudinal"]
    names = [s.name for s in long_specs]
    cols = []
    for c in endpoint.components:
        if c not in names:
            raise EndpointError(f"endpoint {endpoint.name!r}: component {c!r} not in schema")
        cols.append(names.index(c))
    return cols


def endpoint_scores(values: np.ndarray, schema, endpoint: CompositeEndpoint) -> np.ndarray:
    """Per-visit composite score; NaN wherever any component is missing."""
    cols = _component_columns(schema, endpoint)
    return values[..., cols].sum(axis=-1)


def composite_scores(record, schema, endpoint: CompositeEndpoint) -> tuple:
    """Per-visit score for one subject record; MISSING propagates."""
    cols = _component_columns(schema, endpoint)
    out = []
    for visit in record.visits:
        vals = [visit[j] for j in cols]
        if any(v is MISSING for v in vals):
            out.append(MISSING)
        else:
            out.append(float(sum(float(v) for v in vals)))
    return tuple(out)


# --- phi calibration ----------------------------------------------------------


def phi_statistic(twin_values, observed) -> float:
    """Inverse-normal of the midpoint ECDF rank of ``observed`` among twins.

    Ranks are clipped to [1/(2n), 1 - 1/(2n)] so the statistic stays finite.
    """
    tv = np.asarray(twin_values, dtype=float)
    n = tv.size
    if n < 2:
        raise ValueError("need at least 2 twin values")
    below = float((tv < observed).sum())
    ties = float((tv == observed).sum())
    p = (below + 0.5 * ties) / n
    p = min(max(p, 1.0 / (2 * n)), 1.0 - 1.0 / (2 * n))
    return float(sps.norm.ppf(p))


def _normal_ks_distance(mean: float, sd: float) -> float:
    """sup_x |CDF of N(mean, sd) - CDF of N(0, 1)|, computed on a dense grid."""
    sd = max(sd, 1e-9)
    lo = min(-8.0, mean - 8.0 * sd)
    hi = max(8.0, mean + 8.0 * sd)
    x = np.linspace(lo, hi, 20001)
    return float(np.abs(sps.norm.cdf((x - mean) / sd) - sps.norm.cdf(x)).max())


@dataclass(frozen=True)
class CalibrationCell:
    variable: str
    visit_month: int
    mean_phi: float
    sd_phi: float
    ks_p: float
    flagged: bool
    n_subjects: int


@dataclass
class CalibrationReport:
    cells: list
    notes: list  # (variable, visit_month, reason)
    threshold: float
    n_comparisons: int


def calibration_report(
    test_ds: PanelDataset, twinsets: dict, alpha: float = DEFAULT_ALPHA
) -> CalibrationReport:
    """Per (variable, follow-up visit) phi statistics with a Bonferroni-
    corrected one-sample KS test of N(mean phi, sd phi) against N(0, 1)."""
    data = panel_numeric(test_ds)
    long_specs = data.schema and [s for s in data.schema if s.role == "longitudinal"]
    T = data.values.shape[1]
    followups = list(range(1, T))
    n_comparisons = len(long_specs) * len(followups)
    threshold = alpha / n_comparisons
    cells, notes = [], []
    for j, spec in enumerate(long_specs):
        for t in followups:
            month = t * test_ds.cadence_months
            phis = []
            for i, sid in enumerate(data.subject_ids):
                obs = data.values[i, t, j]
                if np.isnan(obs):
                    continue
                tw = twinsets.get(sid)
                if tw is None or t >= tw.visit_count:
                    continue
                tv = tw.values[:, t, j]
                tv = tv[~np.isnan(tv)]
                if tv.size < 2:
                    continue
                phis.append(phi_statistic(tv, obs))
            if len(phis) < 5:
                notes.append((spec.name, month, f"only {len(phis)} subjects"))
                continue
            arr = np.asarray(phis)
            mean, sd = float(arr.mean()), float(arr.std(ddof=1))
            d = _normal_ks_distance(mean, sd)
            p = float(sps.kstwo.sf(d, len(phis)))
            cells.append(
                CalibrationCell(spec.name, month, mean, sd, p, p < threshold, len(phis))
            )
    return CalibrationReport(cells, notes, threshold, n_comparisons)


# --- robust / weighted regressions ---------------------------------------------


def weighted_median(values, weights) -> float:
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.size == 0:
        raise ValueError("empty sample")
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    cw = np.cumsum(w)
    half = 0.5 * cw[-1]
    k = int(np.searchsorted(cw, half, side="left"))
    if cw[k] == half and k + 1 < v.size:
        return float((v[k] + v[k + 1]) / 2)
    return float(v[k])


def theil_sen(x, y, weights=None):
    """Weighted Theil-Sen fit: slope is the weighted median of pairwise
    slopes (pair weight = product of point weights), intercept the weighted
    median of residuals."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need >= 2 points")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    i, j = np.triu_indices(n, k=1)
    dx = x[j] - x[i]
    keep = dx != 0.0
    if not keep.any():
        raise ValueError("all x values identical")
    slopes = (y[j] - y[i])[keep] / dx[keep]
    pair_w = (w[i] * w[j])[keep]
    slope = weighted_median(slopes, pair_w)
    intercept = weighted_median(y - slope * x, w)
    return slope, intercept


def weighted_ols(x, y, weights=None):
    """Weighted least squares line fit; returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    sw = w.sum()
    if x.size < 2 or sw <= 0:
        raise ValueError("need >= 2 weighted points")
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    if sxx == 0.0:
        raise ValueError("zero variance in x")
    slope = (w * (x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    syy = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - (w * resid**2).sum() / syy if syy > 0 else float("nan")
    return slope, intercept, r2


# --- moment report --------------------------------------------------------------


@dataclass(frozen=True)
class MomentPoint:
    label: str
    model: float
    data: float
    weight: float


@dataclass
class MomentFamily:
    name: str
    points: list
    slope: float
    intercept: float
    r2: float | None
    excluded: int


@dataclass
class MomentReport:
    families: dict  # name -> MomentFamily


def _numeric_columns(schema):
    long_specs = [s for s in schema if s.role == "longitudinal"]
    return [(j, s) for j, s in enumerate(long_specs) if s.domain != "categorical"]


def _pooled_corr(values, i, j, lag):
    """Pearson correlation of (x_t,i ; x_{t+lag},j) pooled over subjects and
    times; returns (corr, fraction_present) or None if degenerate."""
    T = values.shape[1]
    if lag >= T:
        return None
    a = values[:, : T - lag, i].ravel()
    b = values[:, lag:, j].ravel()
    m = ~(np.isnan(a) | np.isnan(b))
    n = int(m.sum())
    if n < 3:
        return None
    x, y = a[m], b[m]
    sx, sy = x.std(), y.std()
    if sx == 0.0 or sy == 0.0:
        return None
    corr = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    return corr, n / a.size


def moment_report(data: PanelArrays, twins: PanelArrays, max_lag: int = 3) -> MomentReport:
    """Means/sds per (variable, follow-up visit) fitted by weighted Theil-Sen;
    equal-time and lagged correlations fitted by weighted least squares.

    Point weights are the fraction of data present; zero-variance or
    undersized cells are excluded and counted. Categorical variables are left
    out of all families.
    """
    cols = _numeric_columns(data.schema)
    T = min(data.values.shape[1], twins.values.shape[1])
    families = {}

    for stat_name, fn in (("means", np.nanmean), ("sds", lambda a: np.nanstd(a, ddof=1))):
        points, excluded = [], 0
        for j, spec in cols:
            for t in range(1, T):
                dv = data.values[:, t, j]
                tv = twins.values[:, t, j]
                n_d, n_t = (~np.isnan(dv)).sum(), (~np.isnan(tv)).sum()
                if n_d < 2 or n_t < 2:
                    excluded += 1
                    continue
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    y, x = float(fn(dv)), float(fn(tv))
                points.append(
                    MomentPoint(
                        f"{spec.name}@{t * data.cadence_months}mo", x, y, n_d / dv.size
                    )
                )
        slope, intercept = theil_sen(
            [p.model for p in points], [p.data for p in points], [p.weight for p in points]
        )
        families[stat_name] = MomentFamily(stat_name, points, slope, intercept, None, excluded)

    for lag in range(0, max_lag + 1):
        points, excluded = [], 0
        if lag == 0:
            pairs = [(i, j) for a, (i, _) in enumerate(cols) for (j, _) in cols[a + 1 :]]
        else:
            pairs = [(i, j) for (i, _) in cols for (j, _) in cols]
        names = {j: s.name for j, s in cols}
        for i, j in pairs:
            rd = _pooled_corr(data.values[:, :T], i, j, lag)
            rt = _pooled_corr(twins.values[:, :T], i, j, lag)
            if rd is None or rt is None:
                excluded += 1
                continue
            points.append(
                MomentPoint(f"{names[i]}~{names[j]}|lag{lag}", rt[0], rd[0], rd[1])
            )
        name = f"corr_lag{lag}"
        if len(points) >= 2:
            try:
                slope, intercept, r2 = weighted_ols(
                    [p.model for p in points],
                    [p.data for p in points],
                    [p.weight for p in points],
                )
            except ValueError:
                warnings.warn(f"correlation family {name}: degenerate fit")
                slope = intercept = r2 = float("nan")
        else:
            warnings.warn(f"correlation family {name}: not enough valid points")
            slope = intercept = r2 = float("nan")
        families[name] = MomentFamily(name, points, slope, intercept, r2, excluded)
    return MomentReport(families)


# --- discriminator probe ---------------------------------------------------------


@dataclass(frozen=True)
class DiscriminatorRow:
    feature_set: str  # levels | differences
    visit_month: int
    accuracy: float
    ci95: float
    n_trials: int


@dataclass
class DiscriminatorReport:
    rows: list
    coefficients: dict  # feature name -> pooled coefficient samples (np.ndarray)


def _fold_indices(n, k, rng):
    order = rng.permutation(n)
    return np.array_split(order, k)


def _probe_features(data_vals, twin_vals):
    """Mean-impute data-side holes and copy the imputed value into the twin
    row, so a missing cell can never separate the classes."""
    X_d = data_vals.copy()
    X_t = twin_vals.copy()
    miss = np.isnan(X_d)
    col_mean = np.zeros(X_d.shape[1])
    for j in range(X_d.shape[1]):
        col = X_d[~miss[:, j], j]
        if col.size:
            col_mean[j] = col.mean()
    X_d = np.where(miss, col_mean, X_d)
    X_t = np.where(miss, X_d, X_t)
    X_t = np.where(np.isnan(X_t), X_d, X_t)  # cells absent on the twin side too
    return X_d, X_t


def discriminator_probe(
    test_ds: PanelDataset,
    twinsets: dict,
    seed: int = 0,
    n_trials: int | None = None,
    folds: int = 5,
) -> DiscriminatorReport:
    """Per-visit 5-fold CV accuracy of a ridge logistic regression separating
    subjects from their twins, for visit-level features and consecutive-visit
    differences, averaged over the twin trials."""
    from sklearn.linear_model import LogisticRegression

    data = panel_numeric(test_ds)
    long_specs = [s for s in data.schema if s.role == "longitudinal"]
    sids = data.subject_ids
    n = len(sids)
    if n // folds < 10:
        raise ValueError(f"need >= {10 * folds} subjects for {folds}-fold CV, got {n}")
    T = data.values.shape[1]
    counts = min(tw.n_twins for tw in twinsets.values())
    trials = counts if n_trials is None else min(n_trials, counts)
    twin_stack = np.stack([twinsets[s].values for s in sids])  # (n, n_twins, T, nv)

    acc = {("levels", t): [] for t in range(1, T)}
    acc.update({("differences", t): [] for t in range(1, T)})
    coef_pool = {s.name: [] for s in long_specs}
    ss = np.random.SeedSequence(seed)
    for trial, child in enumerate(ss.spawn(trials)):
        rng = np.random.default_rng(child)
        fold_sets = _fold_indices(n, folds, rng)
        tw = twin_stack[:, trial]
        for t in range(1, T):
            for feat_name in ("levels", "differences"):
                if feat_name == "levels":
                    X_d, X_t = _probe_features(data.values[:, t], tw[:, t])
                else:
                    d0, t0 = _probe_features(data.values[:, t - 1], tw[:, t - 1])
                    d1, t1 = _probe_features(data.values[:, t], tw[:, t])
                    X_d, X_t = d1 - d0, t1 - t0
                X = np.vstack([X_d, X_t])
                y = np.concatenate([np.ones(n), np.zeros(n)])
                mu, sd = X.mean(axis=0), X.std(axis=0)
                sd_safe = np.where(sd == 0.0, 1.0, sd)
                X = np.where(sd == 0.0, 0.0, (X - mu) / sd_safe)
                fold_acc = []
                for holdout in fold_sets:
                    test_rows = np.concatenate([holdout, holdout + n])
                    train_rows = np.setdiff1d(np.arange(2 * n), test_rows)
                    clf = LogisticRegression(C=1.0, max_iter=200)
                    clf.fit(X[train_rows], y[train_rows])
                    fold_acc.append(float(clf.score(X[test_rows], y[test_rows])))
                    if feat_name == "levels":
                        for name, c in zip((s.name for s in long_specs), clf.coef_[0]):
                            coef_pool[name].append(float(c))
                acc[(feat_name, t)].append(float(np.mean(fold_acc)))

    rows = []
    for (feat_name, t), values in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        arr = np.asarray(values)
        ci = 1.96 * arr.std(ddof=1) / np.sqrt(arr.size) if arr.size > 1 else 0.0
        rows.append(
            DiscriminatorRow(
                feat_name, t * test_ds.cadence_months, float(arr.mean()), float(ci), arr.size
            )
        )
    coefficients = {k: np.asarray(v) for k, v in coef_pool.items()}
    return DiscriminatorReport(rows, coefficients)


# --- endpoint progression ---------------------------------------------------------


@dataclass(frozen=True)
class ProgressionPoint:
    endpoint: str
    stratum: str
    visit_month: int
    data_mean: float | None
    data_ci95: float | None
    data_n: int
    model_mean: float
    model_ci95: float
    model_n: int


def endpoint_progression(
    test_ds: PanelDataset,
    twinsets: dict,
    endpoints,
    strata_endpoint: CompositeEndpoint | None = None,
    strata_edges=(),
) -> list:
    """Mean change-from-baseline curves, data vs model, per severity stratum.

    Strata are bins of the baseline value of ``strata_endpoint`` (default: the
    first endpoint); the model curve averages per-subject twin means.
    """
    data = panel_numeric(test_ds)
    T = data.values.shape[1]
    sids = data.subject_ids
    strata_endpoint = strata_endpoint or endpoints[0]
    base_scores = endpoint_scores(data.values, test_ds.schema, strata_endpoint)[:, 0]

    def strata_of(i):
        b = base_scores[i]
        if np.isnan(b):
            return None
        if not strata_edges:
            return "all"
        for k in range(len(strata_edges) - 1):
            if strata_edges[k] <= b < strata_edges[k + 1]:
                return f"{strata_endpoint.name} [{strata_edges[k]}, {strata_edges[k + 1]})"
        return None

    groups: dict = {}
    for i in range(len(sids)):
        s = strata_of(i)
        if s is not None:
            groups.setdefault(s, []).append(i)

    out = []
    for endpoint in endpoints:
        d_scores = endpoint_scores(data.values, test_ds.schema, endpoint)  # (n, T)
        twin_scores = {}
        for i, sid in enumerate(sids):
            tw = twinsets[sid]
            twin_scores[i] = endpoint_scores(tw.values, test_ds.schema, endpoint)
        for stratum, members in sorted(groups.items()):
            if not members:
                continue
            for t in range(T):
                month = t * test_ds.cadence_months
                d_delta = np.array(
                    [d_scores[i, t] - d_scores[i, 0] for i in members], dtype=float
                )
                d_delta = d_delta[~np.isnan(d_delta)]
                m_means = []
                for i in members:
                    ts = twin_scores[i]
                    if t >= ts.shape[1]:
                        continue
                    delta = ts[:, t] - ts[:, 0]
                    delta = delta[~np.isnan(delta)]
                    if delta.size:
                        m_means.append(float(delta.mean()))
                if not m_means:
                    continue
                m_arr = np.asarray(m_means)
                m_ci = (
                    1.96 * m_arr.std(ddof=1) / np.sqrt(m_arr.size) if m_arr.size > 1 else 0.0
                )
                if d_delta.size:
                    d_ci = (
                        1.96 * d_delta.std(ddof=1) / np.sqrt(d_delta.size)
                        if d_delta.size > 1
                        else 0.0
                    )
                    dm, dc = float(d_delta.mean()), float(d_ci)
                else:
                    dm, dc = None, None
                out.append(
                    ProgressionPoint(
                        endpoint.name,
                        stratum,
                        month,
                        dm,
                        dc,
                        int(d_delta.size),
                        float(m_arr.mean()),
                        float(m_ci),
                        int(m_arr.size),
                    )
                )
    return out


# --- subject-level fit ---------------------------------------------------------


@dataclass(frozen=True)
class SubjectFit:
    endpoint: str
    visit_month: int
    slope: float
    slope_se: float
    intercept: float
    intercept_se: float
    pearson_r: float
    n: int


def subject_level_fit(
    test_ds: PanelDataset, twinsets: dict, endpoint: CompositeEndpoint, visit: int
) -> SubjectFit:
    """Observed change-from-baseline regressed on the twin-mean prediction."""
    data = panel_numeric(test_ds)
    d_scores = endpoint_scores(data.values, test_ds.schema, endpoint)
    xs, ys = [], []
    for i, sid in enumerate(data.subject_ids):
        obs = d_scores[i, visit] - d_scores[i, 0]
        if np.isnan(obs):
            continue
        ts = endpoint_scores(twinsets[sid].values, test_ds.schema, endpoint)
        delta = ts[:, visit] - ts[:, 0]
        delta = delta[~np.isnan(delta)]
        if not delta.size:
            continue
        xs.append(float(delta.mean()))
        ys.append(float(obs))
    if len(xs) < 10:
        raise ValueError(f"need >= 10 subjects with observed {endpoint.name}, got {len(xs)}")
    x = np.asarray(xs)
    y = np.asarray(ys)
    if x.std() == 0.0:
        raise ValueError("degenerate regressor: twin predictions are constant")
    fit = sps.linregress(x, y)
    return SubjectFit(
        endpoint.name,
        visit * test_ds.cadence_months,
        float(fit.slope),
        float(fit.stderr),
        float(fit.intercept),
        float(fit.intercept_stderr),
        float(fit.rvalue),
        len(xs),
    )


# --- marginal moment tests --------------------------------------------------------


@dataclass(frozen=True)
class MarginalCell:
    variable: str
    visit_month: int
    n_data: int
    n_model: int
    data_mean: float
    model_mean: float
    t_p: float
    mean_flag: bool
    data_sd: float
    model_sd: float
    levene_p: float
    sd_flag: bool


def marginal_moment_tests(
    data: PanelArrays, twins: PanelArrays, alpha: float = DEFAULT_ALPHA
) -> list:
    """Two-sample t-test on means and Levene test on spreads per (variable,
    follow-up visit), Bonferroni-corrected over all tested cells."""
    cols = _numeric_columns(data.schema)
    T = min(data.values.shape[1], twins.values.shape[1])
    raw = []
    for j, spec in cols:
        for t in range(1, T):
            dv = data.values[:, t, j]
            tv = twins.values[:, t, j]
            dv, tv = dv[~np.isnan(dv)], tv[~np.isnan(tv)]
            if dv.size < 5 or tv.size < 5:
                continue
            if dv.std() == 0.0 and tv.std() == 0.0:
                t_p = 1.0 if dv.mean() == tv.mean() else 0.0
                lev_p = 1.0
            else:
                t_p = float(sps.ttest_ind(dv, tv, equal_var=True).pvalue)
                lev = sps.levene(dv, tv, center="mean")
                lev_p = float(lev.pvalue) if np.isfinite(lev.pvalue) else 1.0
            raw.append((spec, t, dv, tv, t_p, lev_p))
    if not raw:
        return []
    threshold = alpha / len(raw)
    out = []
    for spec, t, dv, tv, t_p, lev_p in raw:
        out.append(
            MarginalCell(
                spec.name,
                t * data.cadence_months,
                dv.size,
                tv.size,
                float(dv.mean()),
                float(tv.mean()),
                t_p,
                t_p < threshold,
                float(dv.std(ddof=1)),
                float(tv.std(ddof=1)),
                lev_p,
                lev_p < threshold,
            )
        )
    return out
