"""CSV and SVG emission for every evaluation report.

File names are stable: calibration.csv/.svg, moments_<family>.csv,
moments_summary.csv, moments.svg, discriminator.csv,
discriminator_coefficients.csv, discriminator.svg, endpoints.csv/.svg,
subject_fit.csv, marginal_tests.csv.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".10g")
    return str(x)


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh)


def write_calibration(report, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "calibration.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(
            ["variable", "visit_month", "mean_phi", "sd_phi", "ks_p", "flagged", "n_subjects", "threshold"]
        )
        for c in report.cells:
            w.writerow(
                [c.variable, c.visit_month, _fmt(c.mean_phi), _fmt(c.sd_phi), _fmt(c.ks_p),
                 _fmt(c.flagged), c.n_subjects, _fmt(report.threshold)]
            )
        for variable, month, reason in report.notes:
            w.writerow([variable, month, "", "", "", "", "", f"excluded: {reason}"])
    svg = out_dir / "calibration.svg"
    _plot_calibration(report, svg)
    return [path, svg]


def _plot_calibration(report, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cells = report.cells
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(cells)), 4))
    for k, c in enumerate(cells):
        color = "red" if c.flagged else "0.2"
        ax.errorbar([k], [c.mean_phi], yerr=[c.sd_phi], fmt="o", color=color, markersize=3)
    ax.axhline(0.0, color="0.6", linewidth=0.8)
    ax.axhline(1.0, color="0.85", linewidth=0.6, linestyle=":")
    ax.axhline(-1.0, color="0.85", linewidth=0.6, linestyle=":")
    ax.set_xticks(range(len(cells)))
    ax.set_xticklabels([f"{c.variable}@{c.visit_month}" for c in cells], rotation=90, fontsize=5)
    ax.set_ylabel("phi mean +/- sd")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_moments(report, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fam in report.families.items():
        path = out_dir / f"moments_{name}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["label", "model_value", "data_value", "weight"])
            for p in fam.points:
                w.writerow([p.label, _fmt(p.model), _fmt(p.data), _fmt(p.weight)])
        written.append(path)
    path = out_dir / "moments_summary.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["family", "n_points", "slope", "intercept", "r2", "excluded"])
        for name, fam in report.families.items():
            w.writerow(
                [name, len(fam.points), _fmt(fam.slope), _fmt(fam.intercept),
                 _fmt(fam.r2), fam.excluded]
            )
    written.append(path)
    svg = out_dir / "moments.svg"
    _plot_moments(report, svg)
    written.append(svg)
    return written


def _plot_moments(report, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(report.families)
    ncol = 3
    nrow = math.ceil(len(names) / ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3.2 * nrow), squeeze=False)
    for k, name in enumerate(names):
        fam = report.families[name]
        ax = axes[k // ncol][k % ncol]
        if fam.points:
            x = np.array([p.model for p in fam.points])
            y = np.array([p.data for p in fam.points])
            wts = np.array([p.weight for p in fam.points])
            sc = ax.scatter(x, y, c=wts, cmap="viridis", s=12, vmin=0, vmax=1)
            fig.colorbar(sc, ax=ax, fraction=0.05)
            lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
            ax.plot([lo, hi], [lo, hi], color="0.8", linewidth=0.8)
            if np.isfinite(fam.slope):
                ax.plot([lo, hi], [fam.intercept + fam.slope * lo, fam.intercept + fam.slope * hi],
                        color="k", linewidth=0.8, linestyle="--")
        title = f"{name}: slope {fam.slope:.3g}, int {fam.intercept:.3g}"
        if fam.r2 is not None and np.isfinite(fam.r2):
            title += f", R2 {fam.r2:.3g}"
        ax.set_title(title, fontsize=8)
        ax.set_xlabel("model")
        ax.set_ylabel("data")
    for k in range(len(names), nrow * ncol):
        axes[k // ncol][k % ncol].axis("off")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_discriminator(report, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "discriminator.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["feature_set", "visit_month", "accuracy", "ci95", "n_trials"])
        for r in report.rows:
            w.writerow([r.feature_set, r.visit_month, _fmt(r.accuracy), _fmt(r.ci95), r.n_trials])
    coef_path = out_dir / "discriminator_coefficients.csv"
    fh, w = _writer(coef_path)
    with fh:
        w.writerow(["feature", "median", "q1", "q3", "whisker_lo", "whisker_hi", "n"])
        for name, values in report.coefficients.items():
            if values.size == 0:
                w.writerow([name, "", "", "", "", "", 0])
                continue
            q1, med, q3 = np.percentile(values, [25, 50, 75])
            w.writerow(
                [name, _fmt(med), _fmt(q1), _fmt(q3), _fmt(values.min()), _fmt(values.max()),
                 values.size]
            )
    svg = out_dir / "discriminator.svg"
    _plot_discriminator(report, svg)
    return [path, coef_path, svg]


def _plot_discriminator(report, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6))
    for feat, marker in (("levels", "o"), ("differences", "s")):
        rows = [r for r in report.rows if r.feature_set == feat]
        if not rows:
            continue
        months = [r.visit_month for r in rows]
        ax1.errorbar(months, [r.accuracy for r in rows], yerr=[r.ci95 for r in rows],
                     marker=marker, label=feat, capsize=3)
    ax1.axhline(0.5, color="0.6", linestyle=":")
    ax1.set_xlabel("visit month")
    ax1.set_ylabel("accuracy")
    ax1.legend()
    names = [n for n, v in report.coefficients.items() if v.size]
    if names:
        ax2.boxplot([report.coefficients[n] for n in names], tick_labels=names, showfliers=False)
        ax2.axhline(0.0, color="0.6", linewidth=0.8)
        ax2.tick_params(axis="x", labelrotation=90, labelsize=6)
        ax2.set_ylabel("coefficient")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_endpoints(points, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "endpoints.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(
            ["endpoint", "stratum", "visit_month", "data_mean", "data_ci95", "data_n",
             "model_mean", "model_ci95", "model_n"]
        )
        for p in points:
            w.writerow(
                [p.endpoint, p.stratum, p.visit_month, _fmt(p.data_mean), _fmt(p.data_ci95),
                 p.data_n, _fmt(p.model_mean), _fmt(p.model_ci95), p.model_n]
            )
    svg = out_dir / "endpoints.svg"
    _plot_endpoints(points, svg)
    return [path, svg]


def _plot_endpoints(points, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = sorted({(p.endpoint, p.stratum) for p in points})
    ncol = max(1, len({p.stratum for p in points}))
    nrow = math.ceil(len(panels) / ncol)
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3 * nrow), squeeze=False)
    for k, (endpoint, stratum) in enumerate(panels):
        ax = axes[k // ncol][k % ncol]
        rows = [p for p in points if p.endpoint == endpoint and p.stratum == stratum]
        months = [p.visit_month for p in rows]
        ax.errorbar(months, [p.model_mean for p in rows], yerr=[p.model_ci95 for p in rows],
                    marker="o", label="model", capsize=3)
        dd = [(p.visit_month, p.data_mean, p.data_ci95) for p in rows if p.data_mean is not None]
        if dd:
            ax.errorbar([d[0] for d in dd], [d[1] for d in dd], yerr=[d[2] for d in dd],
                        marker="s", label="data", capsize=3)
        ax.set_title(f"{endpoint} | {stratum}", fontsize=8)
        ax.set_xlabel("visit month")
        ax.set_ylabel("change from baseline")
        ax.legend(fontsize=7)
    for k in range(len(panels), nrow * ncol):
        axes[k // ncol][k % ncol].axis("off")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_subject_fits(fits, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "subject_fit.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(
            ["endpoint", "visit_month", "slope", "slope_se", "intercept", "intercept_se",
             "pearson_r", "n"]
        )
        for f in fits:
            w.writerow(
                [f.endpoint, f.visit_month, _fmt(f.slope), _fmt(f.slope_se), _fmt(f.intercept),
                 _fmt(f.intercept_se), _fmt(f.pearson_r), f.n]
            )
    return [path]


def write_marginals(cells, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "marginal_tests.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(
            ["variable", "visit_month", "n_data", "n_model", "data_mean", "model_mean", "t_p",
             "mean_flag", "data_sd", "model_sd", "levene_p", "sd_flag"]
        )
        for c in cells:
            w.writerow(
                [c.variable, c.visit_month, c.n_data, c.n_model, _fmt(c.data_mean),
                 _fmt(c.model_mean), _fmt(c.t_p), _fmt(c.mean_flag), _fmt(c.data_sd),
                 _fmt(c.model_sd), _fmt(c.levene_p), _fmt(c.sd_flag)]
            )
    return [path]
