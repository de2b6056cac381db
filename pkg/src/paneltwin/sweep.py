"""Hyperparameter grid search with two-step minimax selection.

Every grid point is trained on the training split and scored on validation
with the model kind's metric set. Selection ranks candidates per metric
(competition ranking, rank 1 best), scores each by its worst rank, keeps the
best quarter, then repeats the minimax over performance metrics only. The
winner is retrained on train + validation.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import composite as comp
from . import crbm_core as core
from . import training as tr
from .defaults import MetricDef, selection_metric_defs
from .evaluation import CompositeEndpoint, endpoint_scores, moment_report
from .panel_data import PanelDataset, concat_datasets, panel_numeric, subset_by_group, view_at_cadence


@dataclass(frozen=True)
class GridSpec:
    """Named axes whose Cartesian product enumerates candidate configs."""

    axes: dict

    def __post_init__(self):
        if not self.axes:
            raise ValueError("grid needs at least one axis")
        for name, values in self.axes.items():
            if not len(values):
                raise ValueError(f"grid axis {name!r} is empty")
        known = {f.name for f in fields(tr.TrainConfig)}
        unknown = [n for n in self.axes if n not in known]
        if unknown:
            raise ValueError(f"unknown grid axes: {unknown}")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def points(self) -> list:
        names = list(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            out.append(dict(zip(names, combo)))
        return out


@dataclass
class MetricRow:
    index: int
    config: tr.TrainConfig
    values: dict  # metric name -> float
    status: str = "ok"  # ok | failed


@dataclass
class MetricTable:
    defs: tuple
    rows: list

    def ok_rows(self) -> list:
        return [r for r in self.rows if r.status == "ok"]


def _model_view(ds: PanelDataset, model_kind: str) -> PanelDataset:
    if model_kind == "3mo":
        return subset_by_group(ds, 3)
    return view_at_cadence(subset_by_group(ds, 6), 6)


def _subset_endpoint(endpoint: CompositeEndpoint, schema) -> CompositeEndpoint:
    names = {s.name for s in schema if s.role == "longitudinal"}
    missing = [c for c in endpoint.components if c not in names]
    if missing:
        raise ValueError(f"endpoint {endpoint.name!r}: components {missing} not in schema")
    return endpoint


def rms_progression(data_arr, twin_arr, schema, endpoint: CompositeEndpoint, visit: int) -> float:
    """Error of the cohort-mean change-from-baseline at one visit."""
    d = endpoint_scores(data_arr.values, schema, endpoint)
    m = endpoint_scores(twin_arr.values, schema, endpoint)
    dd = d[:, visit] - d[:, 0]
    md = m[:, visit] - m[:, 0]
    dd, md = dd[~np.isnan(dd)], md[~np.isnan(md)]
    if dd.size == 0 or md.size == 0:
        warnings.warn(f"{endpoint.name}: no observed progression at visit {visit}")
        return float("inf")
    return float(abs(md.mean() - dd.mean()))


def selection_metrics(
    model: core.CRBMModel,
    val_ds: PanelDataset,
    model_kind: str,
    endpoints: dict,
    seed: int = 0,
) -> dict:
    """Metric row for one candidate: correlation-family R^2 on a one-twin
    cohort plus endpoint-progression errors at 6/12/18 months."""
    if val_ds.n_subjects == 0:
        raise ValueError("validation set is empty")
    defs = selection_metric_defs(model_kind)
    sub = _model_view(val_ds, model_kind)
    cadence = sub.cadence_months
    T_months = (sub.visit_count - 1) * cadence
    twinsets = comp.component_twins(model, sub, 1, T_months, seed)
    data_arr = panel_numeric(sub)
    twin_arr = comp.twin_cohort(twinsets, sub)

    max_lag = 3 if model_kind == "3mo" else 2
    report = moment_report(data_arr, twin_arr, max_lag=max_lag)

    def r2_of(lag):
        fam = report.families[f"corr_lag{lag}"]
        r2 = fam.r2
        if r2 is None or not np.isfinite(r2):
            warnings.warn(f"undefined R2 for lag {lag}; scoring as worst")
            return float("-inf")
        return float(r2)

    values = {}
    for d in defs:
        if d.name == "R2 correlations":
            values[d.name] = r2_of(0)
        elif "autocorrelations" in d.name:
            months = int(d.name.split()[1].split("-")[0])
            values[d.name] = r2_of(months // cadence)
        else:
            # e.g. "RMS ADAS-Cog11 progression at 6 months"
            parts = d.name.split()
            ep_name = parts[1]
            months = int(parts[-2])
            endpoint = _subset_endpoint(endpoints[ep_name], sub.schema)
            values[d.name] = rms_progression(
                data_arr, twin_arr, sub.schema, endpoint, months // cadence
            )
    return values


def competition_ranks(values, higher_better: bool) -> list:
    """Rank 1 is best; ties share the minimum rank."""
    keyed = [(-v if higher_better else v) for v in values]
    order = sorted(range(len(keyed)), key=lambda i: keyed[i])
    ranks = [0] * len(keyed)
    for pos, i in enumerate(order):
        if pos > 0 and keyed[i] == keyed[order[pos - 1]]:
            ranks[i] = ranks[order[pos - 1]]
        else:
            ranks[i] = pos + 1
    return ranks


def _minimax_scores(rows, defs) -> list:
    per_metric = {}
    for d in defs:
        vals = [r.values[d.name] for r in rows]
        per_metric[d.name] = competition_ranks(vals, d.direction == "higher")
    return [max(per_metric[d.name][k] for d in defs) for k in range(len(rows))]


def minimax_select(table: MetricTable) -> MetricRow:
    """Two-step worst-rank selection; survivors of step 1 are the best
    ceil(n/4) scores, ties broken by row order."""
    rows = table.ok_rows()
    if not rows:
        raise ValueError("metric table has no scored rows")
    scores = _minimax_scores(rows, table.defs)
    keep = math.ceil(0.25 * len(rows))
    order = sorted(range(len(rows)), key=lambda k: (scores[k], rows[k].index))
    survivors = [rows[k] for k in order[:keep]]

    perf = tuple(d for d in table.defs if d.kind == "performance")
    scores2 = _minimax_scores(survivors, perf)
    best = min(range(len(survivors)), key=lambda k: (scores2[k], survivors[k].index))
    return survivors[best]


def run_sweep(
    grid: GridSpec,
    train_ds: PanelDataset,
    val_ds: PanelDataset,
    model_kind: str,
    endpoints: dict,
    seed: int = 0,
    imputer: core.CRBMModel | None = None,
):
    """Train every grid point, select by minimax, retrain on train + val.

    Returns (selected TrainConfig, retrained CRBMModel, MetricTable). Failed
    grid points are excluded from selection with a warning.
    """
    defs = selection_metric_defs(model_kind)
    lag = 2 if model_kind == "3mo" else 1
    sub_train = _model_view(train_ds, model_kind)
    enc_train = _encode_view(train_ds, model_kind)

    rows = []
    for idx, point in enumerate(grid.points()):
        row_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(idx,)).generate_state(1)[0])
        cfg = tr.TrainConfig(seed=row_seed, **point)
        try:
            layer = tr.layer_for(enc_train, lag, cfg.hidden_units)
            model, _ = tr.train_crbm(enc_train, layer, cfg, imputer=imputer)
            values = selection_metrics(model, val_ds, model_kind, endpoints, seed=row_seed)
            rows.append(MetricRow(idx, cfg, values))
        except Exception as err:  # noqa: BLE001 - a failed point must not sink the sweep
            warnings.warn(f"grid point {idx} failed: {err}")
            rows.append(MetricRow(idx, cfg, {}, status="failed"))
    table = MetricTable(defs, rows)
    if not table.ok_rows():
        raise RuntimeError("every grid point failed")

    selected = minimax_select(table)
    retrain_seed = int(
        np.random.SeedSequence(entropy=seed, spawn_key=(grid.size,)).generate_state(1)[0]
    )
    final_cfg = replace(selected.config, seed=retrain_seed)
    both = concat_datasets(train_ds, val_ds)
    enc_both = _encode_view(both, model_kind)
    layer = tr.layer_for(enc_both, lag, final_cfg.hidden_units)
    model, _ = tr.train_crbm(enc_both, layer, final_cfg, imputer=imputer)
    return final_cfg, model, table


def _encode_view(ds: PanelDataset, model_kind: str):
    from .panel_data import encode

    sub = subset_by_group(ds, 3 if model_kind == "3mo" else 6)
    view = sub if model_kind == "3mo" else view_at_cadence(sub, 6)
    return encode(view, sub)


# --- reporting -------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".10g")
    return str(x)


def write_metric_table(table: MetricTable, path) -> None:
    config_fields = [f.name for f in fields(tr.TrainConfig)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "status"] + config_fields + [d.name for d in table.defs])
        for r in table.rows:
            cfgs = [_fmt(getattr(r.config, f)) for f in config_fields]
            vals = [_fmt(r.values.get(d.name)) for d in table.defs]
            writer.writerow([r.index, r.status] + cfgs + vals)


def sweep_report(table: MetricTable, selected: MetricRow, out_dir, bins: int = 20) -> list:
    """Per-metric histogram CSVs with the selected model's value marked,
    plus one summary SVG."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = table.ok_rows()
    for d in table.defs:
        values = np.asarray([r.values[d.name] for r in rows], dtype=float)
        finite = values[np.isfinite(values)]
        slug = d.name.lower().replace(" ", "_").replace("-", "_")
        path = out_dir / f"sweep_metric_{slug}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "kind", "direction", "selected_value"])
            writer.writerow([d.name, d.kind, d.direction, _fmt(selected.values[d.name])])
            writer.writerow(["bin_left", "bin_right", "count", ""])
            if finite.size:
                edges = np.histogram_bin_edges(finite, bins=min(bins, max(1, finite.size)))
                counts, _ = np.histogram(finite, bins=edges)
                for k in range(counts.size):
                    writer.writerow([_fmt(float(edges[k])), _fmt(float(edges[k + 1])), int(counts[k]), ""])
        written.append(path)
    _plot_sweep(table, selected, out_dir / "sweep_distributions.svg")
    written.append(out_dir / "sweep_distributions.svg")
    return written


def _plot_sweep(table: MetricTable, selected: MetricRow, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = table.ok_rows()
    n = len(table.defs)
    ncol = min(3, n)
    nrow = math.ceil(n / ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3 * nrow), squeeze=False)
    for k, d in enumerate(table.defs):
        ax = axes[k // ncol][k % ncol]
        values = np.asarray([r.values[d.name] for r in rows], dtype=float)
        finite = values[np.isfinite(values)]
        if finite.size:
            ax.hist(finite, bins=min(20, max(1, finite.size)), color="0.7")
        sel = selected.values[d.name]
        if np.isfinite(sel):
            ax.axvline(sel, color="k", linestyle="--")
        arrow = "↑ better" if d.direction == "higher" else "↓ better"
        ax.set_title(f"{d.name} ({arrow})", fontsize=8)
    for k in range(n, nrow * ncol):
        axes[k // ncol][k % ncol].axis("off")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_sweep_manifest(grid: GridSpec, table: MetricTable, selected: MetricRow, seed, path) -> None:
    doc = {
        "seed": seed,
        "axes": {k: list(v) for k, v in grid.axes.items()},
        "selected_row": selected.index,
        "rows": [
            {"row": r.index, "status": r.status, "seed": r.config.seed}
            for r in table.rows
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
