"""Panel data model: schemas, wide-form CSV loading, splits, shingles, encoding.

A panel dataset holds one record per subject: background variables measured
once, and longitudinal variables measured on a fixed visit grid (every
``cadence_months`` months). Any cell may be MISSING. Datasets are immutable
after construction; every operation here is a pure function of its inputs.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DOMAINS = ("binary", "ordinal", "categorical", "continuous")
ROLES = ("background", "longitudinal")


class PanelError(ValueError):
    """Base class for panel-data errors."""


class SchemaError(PanelError):
    """Structural problem: bad header, bad spec, no rows."""


class ValidationError(PanelError):
    """A cell value is not admissible under its variable spec."""


class EncodingError(PanelError):
    """A variable cannot be encoded (e.g. zero variance)."""


class _Missing:
    """Singleton marker for a missing cell, distinct from every value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __reduce__(self):
        return (_Missing, ())


MISSING = _Missing()


def is_missing(v) -> bool:
    return v is MISSING


@dataclass(frozen=True)
class VariableSpec:
    """Declaration of one modeled variable."""

    name: str
    domain: str
    role: str
    groups: frozenset = frozenset((3,))
    levels: tuple = ()
    vrange: tuple | None = None
    unit: str = ""

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise SchemaError(f"unknown domain {self.domain!r} for variable {self.name!r}")
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r} for variable {self.name!r}")
        groups = frozenset(self.groups)
        object.__setattr__(self, "groups", groups)
        if not groups or not groups <= {3, 6}:
            raise SchemaError(
                f"variable {self.name!r}: groups must be a nonempty subset of {{3, 6}}, got {set(self.groups)}"
            )
        if self.domain in ("ordinal", "categorical"):
            if len(self.levels) < 2:
                raise SchemaError(f"variable {self.name!r}: {self.domain} needs >= 2 levels")
            object.__setattr__(self, "levels", tuple(self.levels))
        if self.domain == "ordinal":
            try:
                as_float = [float(v) for v in self.levels]
            except (TypeError, ValueError):
                raise SchemaError(f"variable {self.name!r}: ordinal levels must be numeric") from None
            if sorted(as_float) != as_float:
                raise SchemaError(f"variable {self.name!r}: ordinal levels must be ascending")
        if self.domain == "continuous":
            if self.vrange is None or not (self.vrange[0] < self.vrange[1]):
                raise SchemaError(f"variable {self.name!r}: continuous needs range with min < max")
            object.__setattr__(self, "vrange", (float(self.vrange[0]), float(self.vrange[1])))

    def admits(self, value) -> bool:
        """True if ``value`` is admissible for this spec (MISSING is not a value)."""
        if value is MISSING:
            return False
        if self.domain == "binary":
            return value in (0, 1)
        if self.domain == "continuous":
            try:
                v = float(value)
            except (TypeError, ValueError):
                return False
            return self.vrange[0] <= v <= self.vrange[1]
        return value in self.levels


def schema_to_json(schema) -> str:
    out = []
    for s in schema:
        out.append(
            {
                "name": s.name,
                "domain": s.domain,
                "role": s.role,
                "groups": sorted(s.groups),
                "levels": list(s.levels),
                "range": list(s.vrange) if s.vrange else None,
                "unit": s.unit,
            }
        )
    return json.dumps(out, indent=2)


def schema_from_json(text: str) -> tuple:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"schema file is not valid JSON: {e}") from None
    if not isinstance(raw, list) or not raw:
        raise SchemaError("schema file must be a nonempty JSON array")
    specs = []
    for obj in raw:
        specs.append(
            VariableSpec(
                name=obj["name"],
                domain=obj["domain"],
                role=obj["role"],
                groups=frozenset(obj.get("groups", [3])),
                levels=tuple(obj.get("levels") or ()),
                vrange=tuple(obj["range"]) if obj.get("range") else None,
                unit=obj.get("unit", ""),
            )
        )
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate variable names in schema")
    return tuple(specs)


def load_schema(path) -> tuple:
    return schema_from_json(Path(path).read_text(encoding="utf-8"))


def save_schema(schema, path) -> None:
    Path(path).write_text(schema_to_json(schema), encoding="utf-8")


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: background values plus a full visit grid (holes = MISSING)."""

    subject_id: str
    study_id: str
    background: tuple
    visits: tuple  # visit_count tuples, each aligned with the longitudinal specs


@dataclass(frozen=True)
class PanelDataset:
    schema: tuple
    subjects: tuple
    cadence_months: int
    visit_count: int

    @property
    def background_specs(self) -> tuple:
        return tuple(s for s in self.schema if s.role == "background")

    @property
    def longitudinal_specs(self) -> tuple:
        return tuple(s for s in self.schema if s.role == "longitudinal")

    @property
    def visit_months(self) -> tuple:
        return tuple(t * self.cadence_months for t in range(self.visit_count))

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def subject(self, subject_id: str) -> SubjectRecord:
        for rec in self.subjects:
            if rec.subject_id == subject_id:
                return rec
        raise KeyError(subject_id)


@dataclass(frozen=True)
class Shingle:
    """A window of ``lag + 1`` consecutive visits plus the background vector."""

    background: tuple
    windows: tuple  # lag+1 visit tuples
    origin: tuple  # (subject_id, start slot at the window cadence)
    kind: str  # complete | typeI | typeII
    cadence_months: int

    @property
    def lag(self) -> int:
        return len(self.windows) - 1


def _parse_cell(text: str, spec: VariableSpec, where: str):
    if text == "":
        return MISSING
    if spec.domain == "binary":
        try:
            v = float(text)
        except ValueError:
            raise ValidationError(f"{where}: {text!r} is not a binary value") from None
        if v not in (0.0, 1.0):
            raise ValidationError(f"{where}: value {text!r} outside {{0, 1}}")
        return int(v)
    if spec.domain == "continuous":
        try:
            v = float(text)
        except ValueError:
            raise ValidationError(f"{where}: {text!r} is not numeric") from None
        if not (spec.vrange[0] <= v <= spec.vrange[1]):
            raise ValidationError(f"{where}: value {v!r} outside range {list(spec.vrange)}")
        return v
    # ordinal / categorical: match against declared levels
    for lvl in spec.levels:
        if text == str(lvl):
            return lvl
        try:
            if float(text) == float(lvl):
                return lvl
        except (TypeError, ValueError):
            pass
    raise ValidationError(f"{where}: value {text!r} not among levels {list(spec.levels)}")


def format_cell(v) -> str:
    if v is MISSING:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if f == int(f) and abs(f) < 1e15:
            return str(int(f))
        return format(f, ".12g")
    return str(v)


def load_panel(path, schema, cadence_months: int | None = None) -> PanelDataset:
    """Load a wide-form CSV (one row per subject-visit) against ``schema``.

    Header must be ``subject_id,study_id,visit_month,<var...>`` with exactly the
    schema's variable names. Empty fields are MISSING. Visits absent from a
    subject's rows become fully-MISSING slots on the common visit grid.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("no rows") from None
        rows = list(reader)
    if not rows:
        raise SchemaError("no rows")

    fixed = ["subject_id", "study_id", "visit_month"]
    if header[: len(fixed)] != fixed:
        raise SchemaError(f"header must start with {','.join(fixed)}, got {header[:3]}")
    byname = {s.name: s for s in schema}
    var_cols = header[len(fixed):]
    unknown = [c for c in var_cols if c not in byname]
    if unknown:
        raise SchemaError(f"unknown columns: {unknown}")
    absent = [n for n in byname if n not in var_cols]
    if absent:
        raise SchemaError(f"schema variables missing from header: {absent}")

    # subject_id -> (study, {month: {var: value}})
    order: list[str] = []
    studies: dict[str, str] = {}
    cells: dict[str, dict[int, dict[str, object]]] = {}
    months_seen: set[int] = set()
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
        sid, study, month_txt = row[0], row[1], row[2]
        try:
            month = int(float(month_txt))
        except ValueError:
            raise ValidationError(f"row {lineno}: bad visit_month {month_txt!r}") from None
        if month < 0:
            raise ValidationError(f"row {lineno}: negative visit_month {month}")
        if sid not in cells:
            order.append(sid)
            cells[sid] = {}
            studies[sid] = study
        elif studies[sid] != study:
            raise ValidationError(f"row {lineno}: subject {sid!r} has conflicting study labels")
        months_seen.add(month)
        visit = cells[sid].setdefault(month, {})
        for col, text in zip(var_cols, row[len(fixed):]):
            spec = byname[col]
            value = _parse_cell(text, spec, f"row {lineno}, column {col!r}")
            if col in visit and visit[col] is not MISSING and value is not MISSING and visit[col] != value:
                raise ValidationError(f"row {lineno}: conflicting values for {col!r} of subject {sid!r}")
            if value is not MISSING:
                visit[col] = value

    if cadence_months is None:
        positive = [m for m in months_seen if m > 0]
        cadence_months = math.gcd(*positive) if positive else 3
    bad = [m for m in months_seen if m % cadence_months]
    if bad:
        raise ValidationError(f"visit months {sorted(bad)} not on a {cadence_months}-month grid")
    visit_count = max(months_seen) // cadence_months + 1

    bg_specs = [s for s in schema if s.role == "background"]
    long_specs = [s for s in schema if s.role == "longitudinal"]
    subjects = []
    for sid in order:
        merged_bg: dict[str, object] = {}
        for month, visit in sorted(cells[sid].items()):
            for s in bg_specs:
                v = visit.get(s.name, MISSING)
                if v is MISSING:
                    continue
                if s.name in merged_bg and merged_bg[s.name] != v:
                    raise ValidationError(
                        f"subject {sid!r}: background variable {s.name!r} has conflicting values"
                    )
                merged_bg[s.name] = v
        background = tuple(merged_bg.get(s.name, MISSING) for s in bg_specs)
        visits = []
        for t in range(visit_count):
            visit = cells[sid].get(t * cadence_months, {})
            visits.append(tuple(visit.get(s.name, MISSING) for s in long_specs))
        subjects.append(SubjectRecord(sid, studies[sid], background, tuple(visits)))
    return PanelDataset(tuple(schema), tuple(subjects), cadence_months, visit_count)


def save_panel(ds: PanelDataset, path) -> None:
    """Write the standard wide-form CSV; background values go on the baseline row."""
    bg_specs = ds.background_specs
    long_specs = ds.longitudinal_specs
    header = ["subject_id", "study_id", "visit_month"] + [s.name for s in ds.schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in ds.subjects:
            bg = dict(zip((s.name for s in bg_specs), rec.background))
            for t in range(ds.visit_count):
                visit = dict(zip((s.name for s in long_specs), rec.visits[t]))
                row = [rec.subject_id, rec.study_id, str(t * ds.cadence_months)]
                for s in ds.schema:
                    if s.role == "background":
                        row.append(format_cell(bg[s.name]) if t == 0 else "")
                    else:
                        row.append(format_cell(visit[s.name]))
                writer.writerow(row)


def _largest_remainder(n: int, ratios) -> list[int]:
    exact = [r * n for r in ratios]
    base = [int(math.floor(e)) for e in exact]
    rem = n - sum(base)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rem]:
        base[i] += 1
    return base


def split_dataset(ds: PanelDataset, ratios, seed: int):
    """Stratified-by-study split into (train, val, test).

    Per-stratum sizes follow largest-remainder rounding of ratio * stratum size.
    Strata smaller than 3 (with three nonzero ratios) go whole to the
    largest-ratio split, with a warning.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")

    strata: dict[str, list[SubjectRecord]] = {}
    for rec in ds.subjects:
        strata.setdefault(rec.study_id, []).append(rec)

    rng = np.random.default_rng(seed)
    buckets: tuple[list, list, list] = ([], [], [])
    largest = max(range(3), key=lambda i: (ratios[i], -i))
    for study in sorted(strata):
        members = strata[study]
        if len(members) < 3:
            warnings.warn(
                f"stratum {study!r} has {len(members)} subject(s); assigning all to the largest-ratio split"
            )
            buckets[largest].extend(members)
            continue
        counts = _largest_remainder(len(members), ratios)
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        a, b = counts[0], counts[0] + counts[1]
        buckets[0].extend(shuffled[:a])
        buckets[1].extend(shuffled[a:b])
        buckets[2].extend(shuffled[b:])

    def mk(members):
        index = {rec.subject_id: i for i, rec in enumerate(ds.subjects)}
        ordered = tuple(sorted(members, key=lambda r: index[r.subject_id]))
        return PanelDataset(ds.schema, ordered, ds.cadence_months, ds.visit_count)

    return mk(buckets[0]), mk(buckets[1]), mk(buckets[2])


def concat_datasets(a: PanelDataset, b: PanelDataset) -> PanelDataset:
    if a.schema != b.schema or a.cadence_months != b.cadence_months or a.visit_count != b.visit_count:
        raise ValueError("datasets are not structurally compatible")
    seen = {r.subject_id for r in a.subjects}
    dup = [r.subject_id for r in b.subjects if r.subject_id in seen]
    if dup:
        raise ValueError(f"duplicate subjects across datasets: {dup[:5]}")
    return PanelDataset(a.schema, a.subjects + b.subjects, a.cadence_months, a.visit_count)


def subset_by_group(ds: PanelDataset, group: int) -> PanelDataset:
    """Restrict the schema (and all records) to variables belonging to ``group``."""
    if group not in (3, 6):
        raise ValueError(f"group must be 3 or 6, got {group}")
    keep_bg = [i for i, s in enumerate(ds.background_specs) if group in s.groups]
    keep_long = [i for i, s in enumerate(ds.longitudinal_specs) if group in s.groups]
    schema = tuple(s for s in ds.schema if group in s.groups)
    subjects = []
    for rec in ds.subjects:
        bg = tuple(rec.background[i] for i in keep_bg)
        visits = tuple(tuple(v[i] for i in keep_long) for v in rec.visits)
        subjects.append(SubjectRecord(rec.subject_id, rec.study_id, bg, visits))
    return PanelDataset(schema, tuple(subjects), ds.cadence_months, ds.visit_count)


def view_at_cadence(ds: PanelDataset, cadence_months: int) -> PanelDataset:
    """Re-grid the dataset to a coarser cadence by slot subsampling."""
    if cadence_months == ds.cadence_months:
        return ds
    if cadence_months % ds.cadence_months:
        raise ValueError(
            f"cannot view a {ds.cadence_months}-month dataset at {cadence_months}-month cadence"
        )
    step = cadence_months // ds.cadence_months
    count = (ds.visit_count - 1) // step + 1
    subjects = []
    for rec in ds.subjects:
        visits = tuple(rec.visits[t * step] for t in range(count))
        subjects.append(replace(rec, visits=visits))
    return PanelDataset(ds.schema, tuple(subjects), cadence_months, count)


def classify_window(windows, lag: int) -> str:
    """Type classification for lag-2 windows; other lags are 'complete'.

    A visit counts as missing only when every longitudinal variable at that
    slot is MISSING; partially observed visits leave the shingle complete
    (holes are handled downstream).
    """
    if lag != 2:
        return "complete"
    empty = [all(v is MISSING for v in w) for w in windows]
    if empty[0] and empty[2]:
        return "typeI"
    if empty[1] and not empty[0] and not empty[2]:
        return "typeII"
    return "complete"


def extract_shingles(ds: PanelDataset, lag: int, cadence_months: int | None = None) -> list:
    """All windows of ``lag + 1`` consecutive visits at the requested cadence.

    A subject with T visits at the model cadence yields max(0, T - lag)
    shingles; slots outside the subject's schedule are fully MISSING.
    """
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    cadence_months = cadence_months or ds.cadence_months
    view = view_at_cadence(ds, cadence_months)
    shingles = []
    for rec in view.subjects:
        for t in range(view.visit_count - lag):
            windows = rec.visits[t : t + lag + 1]
            shingles.append(
                Shingle(
                    background=rec.background,
                    windows=windows,
                    origin=(rec.subject_id, t),
                    kind=classify_window(windows, lag),
                    cadence_months=cadence_months,
                )
            )
    return shingles


# --- encoding -------------------------------------------------------------

UNIT_BINARY = "binary"
UNIT_GAUSSIAN = "gaussian"
UNIT_CATEGORICAL = "categorical"


@dataclass(frozen=True)
class UnitBlock:
    """Columns one variable occupies in the encoded unit space."""

    name: str
    kind: str
    start: int
    width: int


def _variable_units(spec: VariableSpec) -> tuple[str, int]:
    if spec.domain == "binary":
        return UNIT_BINARY, 1
    if spec.domain == "categorical":
        return UNIT_CATEGORICAL, len(spec.levels)
    return UNIT_GAUSSIAN, 1  # continuous and ordinal


def build_blocks(specs) -> tuple:
    blocks, at = [], 0
    for s in specs:
        kind, width = _variable_units(s)
        blocks.append(UnitBlock(s.name, kind, at, width))
        at += width
    return tuple(blocks)


@dataclass(frozen=True)
class EncodingStats:
    """Per-variable encode/decode parameters, fitted on the training split."""

    schema: tuple
    continuous: dict  # name -> (mean, scale)

    def for_variable(self, name):
        return self.continuous.get(name)


def fit_encoding_stats(stats_source: PanelDataset) -> EncodingStats:
    cont = {}
    bg_specs = stats_source.background_specs
    long_specs = stats_source.longitudinal_specs
    for role_specs, getter in (
        (bg_specs, lambda rec, i: [rec.background[i]]),
        (long_specs, lambda rec, i: [v[i] for v in rec.visits]),
    ):
        for i, spec in enumerate(role_specs):
            if spec.domain != "continuous":
                continue
            values = [
                float(v)
                for rec in stats_source.subjects
                for v in getter(rec, i)
                if v is not MISSING
            ]
            if len(values) < 2:
                raise EncodingError(f"variable {spec.name!r}: need >= 2 observed values to fit stats")
            arr = np.asarray(values)
            scale = float(arr.std(ddof=0))
            if scale == 0.0:
                raise EncodingError(f"variable {spec.name!r}: zero variance in stats source")
            cont[spec.name] = (float(arr.mean()), scale)
    return EncodingStats(tuple(stats_source.schema), cont)


def encode_value(spec: VariableSpec, stats: EncodingStats, value) -> np.ndarray:
    """Encode one admissible value into its unit column(s)."""
    kind, width = _variable_units(spec)
    if kind == UNIT_BINARY:
        return np.array([float(value)])
    if kind == UNIT_CATEGORICAL:
        out = np.zeros(width)
        out[spec.levels.index(value)] = 1.0
        return out
    if spec.domain == "ordinal":
        return np.array([float(spec.levels.index(value))])
    mean, scale = stats.continuous[spec.name]
    return np.array([(float(value) - mean) / scale])


def decode_value(spec: VariableSpec, stats: EncodingStats, units: np.ndarray):
    """Decode unit values back to an admissible domain value."""
    kind, _ = _variable_units(spec)
    if kind == UNIT_BINARY:
        return int(round(float(units[0])))
    if kind == UNIT_CATEGORICAL:
        return spec.levels[int(np.argmax(units))]
    if spec.domain == "ordinal":
        idx = int(round(float(units[0])))
        idx = min(max(idx, 0), len(spec.levels) - 1)
        return spec.levels[idx]
    mean, scale = stats.continuous[spec.name]
    v = float(units[0]) * scale + mean
    return min(max(v, spec.vrange[0]), spec.vrange[1])


@dataclass(frozen=True)
class EncodedDataset:
    """Unit-space view of a dataset plus the stats needed to decode it."""

    schema: tuple
    stats: EncodingStats
    bg_blocks: tuple
    long_blocks: tuple
    background: np.ndarray  # (n_subjects, n_bg_units)
    background_mask: np.ndarray  # True where present
    longitudinal: np.ndarray  # (n_subjects, visit_count, n_long_units)
    longitudinal_mask: np.ndarray
    subject_ids: tuple
    study_ids: tuple
    cadence_months: int

    @property
    def n_subjects(self) -> int:
        return self.background.shape[0]

    @property
    def visit_count(self) -> int:
        return self.longitudinal.shape[1]

    @property
    def n_bg_units(self) -> int:
        return self.background.shape[1]

    @property
    def n_long_units(self) -> int:
        return self.longitudinal.shape[2]


def encode(ds: PanelDataset, stats_source: PanelDataset | None = None) -> EncodedDataset:
    """Encode every cell; stats come from ``stats_source`` (default: ``ds``)."""
    stats = fit_encoding_stats(stats_source if stats_source is not None else ds)
    bg_specs = ds.background_specs
    long_specs = ds.longitudinal_specs
    bg_blocks = build_blocks(bg_specs)
    long_blocks = build_blocks(long_specs)
    n_bg = sum(b.width for b in bg_blocks)
    n_long = sum(b.width for b in long_blocks)
    n, T = ds.n_subjects, ds.visit_count

    background = np.zeros((n, n_bg))
    bg_mask = np.zeros((n, n_bg), dtype=bool)
    longitudinal = np.zeros((n, T, n_long))
    long_mask = np.zeros((n, T, n_long), dtype=bool)

    for si, rec in enumerate(ds.subjects):
        for spec, block, v in zip(bg_specs, bg_blocks, rec.background):
            if v is MISSING:
                continue
            background[si, block.start : block.start + block.width] = encode_value(spec, stats, v)
            bg_mask[si, block.start : block.start + block.width] = True
        for t, visit in enumerate(rec.visits):
            for spec, block, v in zip(long_specs, long_blocks, visit):
                if v is MISSING:
                    continue
                longitudinal[si, t, block.start : block.start + block.width] = encode_value(
                    spec, stats, v
                )
                long_mask[si, t, block.start : block.start + block.width] = True

    return EncodedDataset(
        schema=tuple(ds.schema),
        stats=stats,
        bg_blocks=bg_blocks,
        long_blocks=long_blocks,
        background=background,
        background_mask=bg_mask,
        longitudinal=longitudinal,
        longitudinal_mask=long_mask,
        subject_ids=tuple(r.subject_id for r in ds.subjects),
        study_ids=tuple(r.study_id for r in ds.subjects),
        cadence_months=ds.cadence_months,
    )


def decode_visit(long_specs, long_blocks, stats, units: np.ndarray, mask=None) -> tuple:
    """Decode one visit's unit vector back to domain values (mask=False -> MISSING)."""
    out = []
    for spec, block in zip(long_specs, long_blocks):
        sl = slice(block.start, block.start + block.width)
        if mask is not None and not mask[sl].all():
            out.append(MISSING)
        else:
            out.append(decode_value(spec, stats, units[sl]))
    return tuple(out)


# --- numeric array views ----------------------------------------------------
#
# Many analyses want plain float matrices. The numeric convention per domain:
# binary -> 0/1, ordinal -> its (numeric) level value, continuous -> the raw
# value, categorical -> the level index. NaN marks MISSING.


def numeric_value(spec: VariableSpec, value) -> float:
    if value is MISSING:
        return float("nan")
    if spec.domain == "categorical":
        return float(spec.levels.index(value))
    return float(value)


def numeric_to_cell(spec: VariableSpec, x: float):
    if isinstance(x, float) and math.isnan(x):
        return MISSING
    if spec.domain == "binary":
        return int(round(x))
    if spec.domain == "categorical":
        return spec.levels[int(round(x))]
    if spec.domain == "ordinal":
        lv = spec.levels
        for v in lv:
            if float(v) == x:
                return v
        idx = int(np.argmin([abs(float(v) - x) for v in lv]))
        return lv[idx]
    return float(x)


def decode_units_array(specs, blocks, stats, units: np.ndarray) -> np.ndarray:
    """Vectorized decode of unit columns to numeric domain values.

    ``units`` has unit columns on the last axis; the result has one column per
    variable under the numeric convention above.
    """
    out = np.empty(units.shape[:-1] + (len(specs),))
    for k, (spec, block) in enumerate(zip(specs, blocks)):
        sl = slice(block.start, block.start + block.width)
        u = units[..., sl]
        if spec.domain == "binary":
            out[..., k] = np.rint(u[..., 0])
        elif spec.domain == "categorical":
            out[..., k] = np.argmax(u, axis=-1)
        elif spec.domain == "ordinal":
            idx = np.clip(np.rint(u[..., 0]), 0, len(spec.levels) - 1).astype(int)
            out[..., k] = np.asarray([float(v) for v in spec.levels])[idx]
        else:
            mean, scale = stats.continuous[spec.name]
            out[..., k] = np.clip(u[..., 0] * scale + mean, spec.vrange[0], spec.vrange[1])
    return out


@dataclass(frozen=True)
class PanelArrays:
    """Float-matrix view of a dataset (NaN = missing)."""

    schema: tuple
    values: np.ndarray  # (n_subjects, visit_count, n_long_vars)
    background: np.ndarray  # (n_subjects, n_bg_vars)
    subject_ids: tuple
    study_ids: tuple
    cadence_months: int

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


def panel_numeric(ds: PanelDataset) -> PanelArrays:
    long_specs = ds.longitudinal_specs
    bg_specs = ds.background_specs
    n, T = ds.n_subjects, ds.visit_count
    values = np.full((n, T, len(long_specs)), np.nan)
    background = np.full((n, len(bg_specs)), np.nan)
    for i, rec in enumerate(ds.subjects):
        for j, (spec, v) in enumerate(zip(bg_specs, rec.background)):
            background[i, j] = numeric_value(spec, v)
        for t, visit in enumerate(rec.visits):
            for j, (spec, v) in enumerate(zip(long_specs, visit)):
                values[i, t, j] = numeric_value(spec, v)
    return PanelArrays(
        ds.schema,
        values,
        background,
        tuple(r.subject_id for r in ds.subjects),
        tuple(r.study_id for r in ds.subjects),
        ds.cadence_months,
    )
