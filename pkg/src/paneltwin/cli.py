"""Command-line pipeline: synth, split, train, sweep, twins, evaluate.

Exit codes: 0 success, 1 runtime failure (e.g. training divergence),
2 usage or validation error. Every run writes a manifest.json next to its
outputs; every stochastic command takes --seed and reruns byte-identically.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, composite as comp, crbm_core as core, defaults, evaluation as ev
from . import panel_data as pdata
from . import reports, sweep as sw, synthetic, training as tr

_CONFIG_FLAGS = [f.name for f in fields(tr.TrainConfig) if f.name != "seed"]


class UsageError(ValueError):
    pass


def _write_manifest(out_dir: Path, command: str, args: dict, outputs, started: float) -> None:
    doc = {
        "command": command,
        "tool_version": __version__,
        "model_layout_version": core.LAYOUT_VERSION,
        "resolved_config": {
            k: v for k, v in sorted(args.items())
            if isinstance(v, (str, int, float, bool, type(None)))
        },
        "outputs": [str(p) for p in outputs],
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _out_dir(path_text: str) -> Path:
    out = Path(path_text)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as err:
        raise UsageError(f"output directory {out} is not writable: {err}") from None
    return out


def _load_endpoints(path_text: str | None) -> dict:
    if path_text is None:
        return dict(defaults.CLINICAL_ENDPOINTS)
    raw = json.loads(Path(path_text).read_text(encoding="utf-8"))
    return {
        name: ev.CompositeEndpoint(name, tuple(components))
        for name, components in raw.items()
    }


def cmd_synth(args) -> int:
    started = time.time()
    if args.subjects < 1:
        raise UsageError("--subjects must be >= 1")
    if args.visits < 2:
        raise UsageError("--visits must be >= 2")
    out = _out_dir(args.out)
    cfg = synthetic.default_config(args.subjects, visit_count=args.visits, dropout=args.dropout)
    ds, gt = synthetic.generate_cohort(cfg, args.seed)
    pdata.save_panel(ds, out / "cohort.csv")
    pdata.save_schema(ds.schema, out / "schema.json")
    synthetic.save_ground_truth(gt, out / "ground_truth.json")
    (out / "endpoints.json").write_text(
        json.dumps(synthetic.endpoint_catalog(cfg), indent=2), encoding="utf-8"
    )
    outputs = ["cohort.csv", "schema.json", "ground_truth.json", "endpoints.json"]
    _write_manifest(out, "synth", vars(args), outputs, started)
    return 0


def cmd_split(args) -> int:
    started = time.time()
    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise UsageError("--ratios needs three comma-separated values")
    schema = pdata.load_schema(args.schema)
    ds = pdata.load_panel(args.data, schema)
    train, val, test = pdata.split_dataset(ds, ratios, args.seed)
    out = _out_dir(args.out)
    for name, part in (("train.csv", train), ("val.csv", val), ("test.csv", test)):
        pdata.save_panel(part, out / name)
    _write_manifest(out, "split", vars(args), ["train.csv", "val.csv", "test.csv"], started)
    return 0


def _resolve_train_config(args, kind: str) -> tr.TrainConfig:
    base = {
        "3mo": defaults.SELECTED_3MO,
        "6mo": defaults.SELECTED_6MO,
        "imputer": defaults.IMPUTER,
    }[kind]
    cfg = dict(asdict(base))
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        unknown = [k for k in file_cfg if k not in cfg]
        if unknown:
            raise UsageError(f"unknown config fields: {unknown}")
        cfg.update(file_cfg)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    cfg["seed"] = args.seed
    return tr.TrainConfig(**cfg)


def _encoded_for_kind(ds, kind: str):
    if kind in ("3mo", "imputer"):
        sub = pdata.subset_by_group(ds, 3)
        return pdata.encode(sub, sub)
    sub = pdata.subset_by_group(ds, 6)
    return pdata.encode(pdata.view_at_cadence(sub, 6), sub)


def cmd_train(args) -> int:
    started = time.time()
    kind = args.model_kind
    cfg = _resolve_train_config(args, kind)
    schema = pdata.load_schema(args.schema)
    ds = pdata.load_panel(args.data, schema)
    enc = _encoded_for_kind(ds, kind)
    imputer = core.load_model(args.imputer) if args.imputer else None
    if kind == "imputer":
        model, log = tr.train_imputer(enc, seed=cfg.seed, epochs=cfg.epochs)
    else:
        lag = 2 if kind == "3mo" else 1
        layer = tr.layer_for(enc, lag, cfg.hidden_units)
        model, log = tr.train_crbm(enc, layer, cfg, imputer=imputer)
    out = _out_dir(args.out)
    model_path = out / f"model_{kind}.crbm"
    core.save_model(model, model_path)
    tr.write_training_log(log, out / "training_log.csv")
    _write_manifest(out, "train", vars(args), [model_path.name, "training_log.csv"], started)
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    kind = args.model_kind
    schema = pdata.load_schema(args.schema)
    train_ds = pdata.load_panel(args.train, schema)
    val_ds = pdata.load_panel(args.val, schema)
    endpoints = _load_endpoints(args.endpoints)
    if args.grid:
        axes = {k: tuple(v) for k, v in json.loads(Path(args.grid).read_text(encoding="utf-8")).items()}
    else:
        axes = defaults.GRID_3MO if kind == "3mo" else defaults.GRID_6MO
    grid = sw.GridSpec(axes)
    imputer = core.load_model(args.imputer) if args.imputer else None
    cfg, model, table = sw.run_sweep(
        grid, train_ds, val_ds, kind, endpoints, seed=args.seed, imputer=imputer
    )
    out = _out_dir(args.out)
    model_path = out / f"model_{kind}.crbm"
    core.save_model(model, model_path)
    sw.write_metric_table(table, out / "metrics.csv")
    selected = next(r for r in table.ok_rows() if r.config.batch_size == cfg.batch_size
                    and r.config.learning_rate == cfg.learning_rate
                    and r.config.beta_std == cfg.beta_std
                    and r.config.adversary_weight == cfg.adversary_weight
                    and r.config.hidden_units == cfg.hidden_units)
    sw.save_sweep_manifest(grid, table, selected, args.seed, out / "sweep_manifest.json")
    sw.sweep_report(table, selected, out / "sweep_report")
    (out / "selected_config.json").write_text(
        json.dumps(asdict(cfg), indent=2), encoding="utf-8"
    )
    _write_manifest(
        out, "sweep", vars(args),
        [model_path.name, "metrics.csv", "sweep_manifest.json", "selected_config.json"],
        started,
    )
    return 0


def cmd_twins(args) -> int:
    started = time.time()
    schema = pdata.load_schema(args.schema)
    ds = pdata.load_panel(args.data, schema)
    m3 = core.load_model(args.model3)
    m6 = core.load_model(args.model6)
    model = comp.assemble_composite(m3, m6, schema)
    months = args.months if args.months is not None else (ds.visit_count - 1) * ds.cadence_months
    twinsets = comp.twins_for_dataset(model, ds, args.n, months, args.seed)
    out = _out_dir(args.out)
    comp.save_twinsets(twinsets, ds, out / "twins.csv")
    _write_manifest(out, "twins", vars(args), ["twins.csv"], started)
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    schema = pdata.load_schema(args.schema)
    ds = pdata.load_panel(args.data, schema)
    twinsets = comp.load_twinsets(args.twins, schema)
    missing = [r.subject_id for r in ds.subjects if r.subject_id not in twinsets]
    if missing:
        raise UsageError(f"twins file lacks subjects: {missing[:5]}")
    endpoints = _load_endpoints(args.endpoints)
    out = _out_dir(args.out)
    outputs = []

    calib = ev.calibration_report(ds, twinsets)
    outputs += reports.write_calibration(calib, out)

    data_arr = pdata.panel_numeric(ds)
    cohort = comp.twin_cohort(twinsets, ds, index=0)
    moments = ev.moment_report(data_arr, cohort)
    outputs += reports.write_moments(moments, out)

    probe = ev.discriminator_probe(ds, twinsets, seed=args.seed, n_trials=args.trials)
    outputs += reports.write_discriminator(probe, out)

    strata = tuple(float(x) for x in args.strata.split(",")) if args.strata else ()
    points = ev.endpoint_progression(
        ds, twinsets, tuple(endpoints.values()), strata_edges=strata
    )
    outputs += reports.write_endpoints(points, out)

    fits = []
    horizon = (ds.visit_count - 1) * ds.cadence_months
    for endpoint in endpoints.values():
        for month in (12, 18):
            if month > horizon or month % ds.cadence_months:
                continue
            try:
                fits.append(
                    ev.subject_level_fit(ds, twinsets, endpoint, month // ds.cadence_months)
                )
            except ValueError as err:
                print(f"subject-level fit skipped for {endpoint.name} at {month} months: {err}",
                      file=sys.stderr)
    outputs += reports.write_subject_fits(fits, out)

    cells = ev.marginal_moment_tests(data_arr, cohort)
    outputs += reports.write_marginals(cells, out)

    _write_manifest(out, "evaluate", vars(args), [Path(p).name for p in outputs], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paneltwin",
        description="Two-timescale CRBM panel models: synthesize, train, generate twins, evaluate.",
    )
    parser.add_argument(
        "--version", action="version",
        version=f"paneltwin {__version__} (model layout v{core.LAYOUT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort with ground truth")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--visits", type=int, default=7)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="stratified train/val/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--ratios", default=",".join(str(r) for r in defaults.SPLIT_RATIOS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train one CRBM component")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model-kind", choices=("3mo", "6mo", "imputer"), required=True)
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    for name in _CONFIG_FLAGS:
        flag = "--" + name.replace("_", "-")
        p.add_argument(flag, type=float if name in
                       ("learning_rate", "beta_std", "weight_penalty", "adversary_weight")
                       else int, default=None)
    p.add_argument("--imputer", help="imputer model container for type-II shingles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="grid search with minimax selection and retraining")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--model-kind", choices=("3mo", "6mo"), required=True)
    p.add_argument("--grid", help="JSON file of axis lists (default: the packaged grid)")
    p.add_argument("--endpoints", help="JSON endpoint catalog")
    p.add_argument("--imputer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("twins", help="generate digital twins for every subject")
    p.add_argument("--model3", required=True)
    p.add_argument("--model6", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--n", type=int, default=defaults.TWIN_COUNT)
    p.add_argument("--months", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_twins)

    p = sub.add_parser("evaluate", help="run the full evaluation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--twins", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--endpoints")
    p.add_argument("--strata", help="comma-separated baseline-severity bin edges")
    p.add_argument("--trials", type=int, default=None, help="twin trials for the discriminator")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (tr.TrainingDiverged, RuntimeError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 1
    except (UsageError, pdata.PanelError, FileNotFoundError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
