"""Hierarchical two-timescale model: the 3-month CRBM generates its variables
first, then the 6-month CRBM completes the 6-month-only variables conditioned
on the shared values. Digital Subjects are unconditional samples; Digital
Twins clamp an actual subject's baseline.

Autoregressive generation slides a window one cadence step at a time: each
step initializes the free cells of the current window from the per-unit bias
distributions and runs a fixed number of clamped Gibbs sweeps before the new
visit is emitted. When a twin has fewer observed visits than the model lag,
the missing pre-baseline slots are imputed inside the first window and then
discarded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import crbm_core as core
from .panel_data import (
    MISSING,
    PanelArrays,
    PanelDataset,
    SubjectRecord,
    ValidationError,
    decode_units_array,
    encode_value,
    format_cell,
    numeric_to_cell,
    numeric_value,
    panel_numeric,
)

GEN_MC_STEPS = 25  # sweeps per emitted visit, matching the training Monte Carlo steps


class AssemblyError(ValueError):
    """The two component models do not fit the schema together."""


@dataclass(frozen=True)
class CompositeModel:
    m3: core.CRBMModel  # lag-2, 3-month cadence
    m6: core.CRBMModel  # lag-1, 6-month cadence
    schema: tuple
    shared: tuple  # variable names modeled by both components

    @property
    def has_6mo_only(self) -> bool:
        return any(s.groups == frozenset((6,)) for s in self.schema)


def _group_subset(schema, group: int) -> tuple:
    return tuple(s for s in schema if group in s.groups)


def assemble_composite(m3: core.CRBMModel, m6: core.CRBMModel, schema) -> CompositeModel:
    """Validate the component models against the schema and pair them up."""
    if m3.layer.cadence_months != 3 or m6.layer.cadence_months != 6:
        raise AssemblyError("expected a 3-month and a 6-month component model")
    for model, group in ((m3, 3), (m6, 6)):
        expected = _group_subset(schema, group)
        got = model.schema
        for spec in expected:
            match = next((g for g in got if g.name == spec.name), None)
            if match is None:
                raise AssemblyError(
                    f"{group}-month model is missing variable {spec.name!r}"
                )
            if match != spec:
                raise AssemblyError(
                    f"{group}-month model declares {spec.name!r} differently from the schema"
                )
        extra = [g.name for g in got if g.name not in {s.name for s in expected}]
        if extra:
            raise AssemblyError(f"{group}-month model has variables outside its group: {extra}")
        if tuple(g.name for g in got) != tuple(s.name for s in expected):
            raise AssemblyError(f"{group}-month model variable order differs from the schema")
    shared = tuple(s.name for s in schema if s.groups == frozenset((3, 6)))
    for name in shared:
        a = m3.stats.continuous.get(name)
        b = m6.stats.continuous.get(name)
        if a != b:
            raise AssemblyError(f"shared variable {name!r} has mismatched encoding stats")
    return CompositeModel(m3, m6, tuple(schema), shared)


def component_encodings(ds: PanelDataset, stats_source: PanelDataset | None = None):
    """Encoded training views for the two components with reconciled stats.

    Both models' encoding stats are fitted on the same native-cadence split so
    shared variables get identical stats, which assembly requires.
    """
    from .panel_data import encode, subset_by_group, view_at_cadence

    if ds.cadence_months != 3:
        raise ValueError("component training data must be at the 3-month cadence")
    src = stats_source if stats_source is not None else ds
    enc3 = encode(subset_by_group(ds, 3), subset_by_group(src, 3))
    enc6 = encode(view_at_cadence(subset_by_group(ds, 6), 6), subset_by_group(src, 6))
    return enc3, enc6


@dataclass
class TwinSet:
    """n sampled trajectories for one source subject, in numeric-array form."""

    source_subject_id: str
    study_id: str
    schema: tuple
    values: np.ndarray  # (n, visit_count, n_long_vars), NaN = missing
    background: np.ndarray  # (n, n_bg_vars)
    seed: int
    cadence_months: int = 3

    @property
    def n_twins(self) -> int:
        return self.values.shape[0]

    @property
    def visit_count(self) -> int:
        return self.values.shape[1]

    def record(self, i: int) -> SubjectRecord:
        long_specs = [s for s in self.schema if s.role == "longitudinal"]
        bg_specs = [s for s in self.schema if s.role == "background"]
        bg = tuple(numeric_to_cell(s, float(v)) for s, v in zip(bg_specs, self.background[i]))
        visits = tuple(
            tuple(numeric_to_cell(s, float(v)) for s, v in zip(long_specs, self.values[i, t]))
            for t in range(self.visit_count)
        )
        return SubjectRecord(
            f"{self.source_subject_id}__twin{i:03d}", self.study_id, bg, visits
        )


# --- encoded-space helpers ----------------------------------------------------


def _spec_positions(sub_specs, full_specs):
    index = {s.name: i for i, s in enumerate(full_specs)}
    return [index[s.name] for s in sub_specs]


def _encode_cells(specs, blocks, stats, cells):
    """One visit/background tuple -> (unit values, observed unit mask)."""
    width = sum(b.width for b in blocks)
    v = np.zeros(width)
    m = np.zeros(width, dtype=bool)
    for spec, block, cell in zip(specs, blocks, cells):
        if cell is MISSING:
            continue
        sl = slice(block.start, block.start + block.width)
        v[sl] = encode_value(spec, stats, cell)
        m[sl] = True
    return v, m


def _run_component(model: core.CRBMModel, traj, traj_clamp, bg, bg_clamp, n_context, ss, mc_steps):
    """Sequential window-by-window sampling of one component model.

    ``traj`` is (B, S, n_long) encoded with clamp=True cells fixed. With
    ``n_context`` observed leading slots the first window is placed so the new
    visit sits at the window's last slot (pre-baseline slots are imputed and
    discarded); with no context the whole first window is sampled jointly.
    Each emitted visit is frozen before the window slides. Every step consumes
    its own child rng stream, so a step's draws depend only on its window.
    """
    layer, params = model.layer, model.params
    L = layer.lag
    nl = layer.n_long_units
    B, S = traj.shape[0], traj.shape[1]
    V = 0 if n_context == 0 else max(0, L - n_context)
    total = max(V + S, L + 1)
    arr = np.zeros((B, total, nl))
    arrc = np.zeros((B, total, nl), dtype=bool)
    arr[:, V : V + S] = traj
    arrc[:, V : V + S] = traj_clamp
    bg = np.array(bg, dtype=float)
    bgc = np.array(bg_clamp, dtype=bool)

    n_steps = total - L
    children = ss.spawn(n_steps)
    for step, child in enumerate(children):
        rng = np.random.default_rng(child)
        w = step
        flat_v = np.concatenate([arr[:, w : w + L + 1].reshape(B, (L + 1) * nl), bg], axis=1)
        flat_c = np.concatenate([arrc[:, w : w + L + 1].reshape(B, (L + 1) * nl), bgc], axis=1)
        init = core.bias_sample(params, layer, rng, B)
        v0 = np.where(flat_c, flat_v, init)
        v, _ = core.gibbs_sweeps(params, layer, v0, flat_c, rng, mc_steps)
        win = v[:, : (L + 1) * nl].reshape(B, L + 1, nl)
        arr[:, w : w + L + 1] = np.where(arrc[:, w : w + L + 1], arr[:, w : w + L + 1], win)
        bg = np.where(bgc, bg, v[:, (L + 1) * nl :])
        if step == 0:
            arrc[:, : L + 1] = True
            bgc[:] = True
        else:
            arrc[:, w + L] = True
    return arr[:, V : V + S], bg


def _decode_component(model: core.CRBMModel, traj_units, bg_units):
    long_specs = [s for s in model.schema if s.role == "longitudinal"]
    bg_specs = [s for s in model.schema if s.role == "background"]
    vals = decode_units_array(long_specs, model.layer.long_blocks, model.stats, traj_units)
    bg = decode_units_array(bg_specs, model.layer.bg_blocks, model.stats, bg_units)
    return vals, bg


def _component_inputs(model: core.CRBMModel, schema, background, visits, n_slots, n_twins):
    """Encode the sub-model's view of a record's leading visits + background."""
    long_specs = [s for s in model.schema if s.role == "longitudinal"]
    bg_specs = [s for s in model.schema if s.role == "background"]
    full_long = [s for s in schema if s.role == "longitudinal"]
    full_bg = [s for s in schema if s.role == "background"]
    li = _spec_positions(long_specs, full_long)
    bi = _spec_positions(bg_specs, full_bg)

    nl = model.layer.n_long_units
    traj = np.zeros((n_twins, n_slots, nl))
    clamp = np.zeros((n_twins, n_slots, nl), dtype=bool)
    for t, visit in enumerate(visits):
        cells = tuple(visit[i] for i in li)
        v, m = _encode_cells(long_specs, model.layer.long_blocks, model.stats, cells)
        traj[:, t] = v
        clamp[:, t] = m
    bg_cells = tuple(background[i] for i in bi)
    bgv, bgm = _encode_cells(bg_specs, model.layer.bg_blocks, model.stats, bg_cells)
    bg = np.tile(bgv, (n_twins, 1))
    bgc = np.tile(bgm, (n_twins, 1))
    return traj, clamp, bg, bgc


def _transfer_shared(model3, model6, traj3_units, bg3_units, traj6, clamp6, bg6, clamp6_bg):
    """Clamp the 6-month model's shared cells to the 3-month pass output.

    Shared encodings are identical by the assembly contract, so unit values
    move across without re-encoding; 6-month slot u reads 3-month slot 2u.
    """
    l3 = {b.name: b for b in model3.layer.long_blocks}
    b3 = {b.name: b for b in model3.layer.bg_blocks}
    for blk in model6.layer.long_blocks:
        src = l3.get(blk.name)
        if src is None:
            continue
        S6 = traj6.shape[1]
        for u in range(S6):
            traj6[:, u, blk.start : blk.start + blk.width] = traj3_units[
                :, 2 * u, src.start : src.start + src.width
            ]
            clamp6[:, u, blk.start : blk.start + blk.width] = True
    for blk in model6.layer.bg_blocks:
        src = b3.get(blk.name)
        if src is None:
            continue
        bg6[:, blk.start : blk.start + blk.width] = bg3_units[
            :, src.start : src.start + src.width
        ]
        clamp6_bg[:, blk.start : blk.start + blk.width] = True


def _assemble_numeric(model: CompositeModel, n, T3, vals3, bg3, vals6, bg6):
    """Merge component outputs into full-schema numeric arrays."""
    full_long = [s for s in model.schema if s.role == "longitudinal"]
    full_bg = [s for s in model.schema if s.role == "background"]
    long3 = [s for s in model.m3.schema if s.role == "longitudinal"]
    bg3_specs = [s for s in model.m3.schema if s.role == "background"]
    long6 = [s for s in model.m6.schema if s.role == "longitudinal"]
    bg6_specs = [s for s in model.m6.schema if s.role == "background"]

    values = np.full((n, T3, len(full_long)), np.nan)
    background = np.full((n, len(full_bg)), np.nan)
    for j, spec in enumerate(full_long):
        if 3 in spec.groups:
            values[:, :, j] = vals3[:, :, long3.index(spec)]
        else:
            k = long6.index(spec)
            for u in range(vals6.shape[1]):
                if 2 * u < T3:
                    values[:, 2 * u, j] = vals6[:, u, k]
    for j, spec in enumerate(full_bg):
        if 3 in spec.groups:
            background[:, j] = bg3[:, bg3_specs.index(spec)]
        else:
            background[:, j] = bg6[:, bg6_specs.index(spec)]
    return values, background


def _overwrite_observed(model, values, background, record, n_context):
    """Copy the source's observed cells verbatim so clamping is exact."""
    full_long = [s for s in model.schema if s.role == "longitudinal"]
    full_bg = [s for s in model.schema if s.role == "background"]
    for t in range(min(n_context, values.shape[1], len(record.visits))):
        for j, spec in enumerate(full_long):
            v = record.visits[t][j]
            if v is not MISSING:
                values[:, t, j] = numeric_value(spec, v)
    for j, spec in enumerate(full_bg):
        v = record.background[j]
        if v is not MISSING:
            background[:, j] = numeric_value(spec, v)


def _validate_record(schema, record: SubjectRecord):
    bg_specs = [s for s in schema if s.role == "background"]
    long_specs = [s for s in schema if s.role == "longitudinal"]
    if len(record.background) != len(bg_specs):
        raise ValidationError("record background width does not match the schema")
    for spec, v in zip(bg_specs, record.background):
        if v is not MISSING and not spec.admits(v):
            raise ValidationError(f"background {spec.name!r}: inadmissible value {v!r}")
    for t, visit in enumerate(record.visits):
        if len(visit) != len(long_specs):
            raise ValidationError(f"visit {t} width does not match the schema")
        for spec, v in zip(long_specs, visit):
            if v is not MISSING and not spec.admits(v):
                raise ValidationError(f"visit {t}, {spec.name!r}: inadmissible value {v!r}")


def _sample(model: CompositeModel, record, n_context3, n, T_months, ss):
    """Shared core of subject and twin generation."""
    T3 = T_months // 3 + 1
    T6 = T_months // 6 + 1
    ss3, ss6 = ss.spawn(2)

    m3 = model.m3
    visits = record.visits[:n_context3] if record is not None else ()
    background = record.background if record is not None else tuple(
        MISSING for s in model.schema if s.role == "background"
    )
    traj3, clamp3, bg3, bgc3 = _component_inputs(m3, model.schema, background, visits, T3, n)
    traj3_units, bg3_units = _run_component(
        m3, traj3, clamp3, bg3, bgc3, n_context3, ss3, GEN_MC_STEPS
    )
    vals3, bg3_num = _decode_component(m3, traj3_units, bg3_units)

    m6 = model.m6
    long6 = [s for s in m6.schema if s.role == "longitudinal"]
    six_only = [s for s in m6.schema if s.groups == frozenset((6,))]
    if six_only:
        visits6 = tuple(record.visits[t * 2] for t in range(min(T6, (n_context3 + 1) // 2))) if record is not None else ()
        traj6, clamp6, bg6, bgc6 = _component_inputs(
            m6, model.schema, background, visits6, T6, n
        )
        _transfer_shared(m3, m6, traj3_units, bg3_units, traj6, clamp6, bg6, bgc6)
        n_context6 = 1 if record is not None else 0
        traj6_units, bg6_units = _run_component(
            m6, traj6, clamp6, bg6, bgc6, n_context6, ss6, GEN_MC_STEPS
        )
        vals6, bg6_num = _decode_component(m6, traj6_units, bg6_units)
    else:
        vals6 = np.zeros((n, T6, len(long6)))
        bg6_num = np.zeros((n, len([s for s in m6.schema if s.role == "background"])))
        if long6:
            units6 = np.zeros((n, T6, m6.layer.n_long_units))
            clamp6 = np.zeros_like(units6, dtype=bool)
            bgu = np.zeros((n, m6.layer.n_bg_units))
            bgc = np.zeros_like(bgu, dtype=bool)
            _transfer_shared(m3, m6, traj3_units, bg3_units, units6, clamp6, bgu, bgc)
            vals6, bg6_num = _decode_component(m6, units6, bgu)

    values, bg_num = _assemble_numeric(model, n, T3, vals3, bg3_num, vals6, bg6_num)
    if record is not None:
        _overwrite_observed(model, values, bg_num, record, n_context3)
    return values, bg_num


def generate_digital_subject(model: CompositeModel, T_months: int, seed) -> SubjectRecord:
    """Sample one complete clinical record unconditionally."""
    if T_months % 6:
        raise ValueError("T_months must be a multiple of 6")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    values, bg = _sample(model, None, 0, 1, T_months, ss)
    tw = TwinSet("digital_subject", "MODEL", model.schema, values, bg, 0)
    rec = tw.record(0)
    return SubjectRecord(f"DS{ss.entropy}", "MODEL", rec.background, rec.visits)


def generate_digital_twins(
    model: CompositeModel, baseline: SubjectRecord, n: int, T_months: int, seed
) -> TwinSet:
    """Sample n trajectories clamped to a subject's baseline data.

    Missing baseline cells are imputed once per twin and then held fixed; up
    to ``lag`` observed visits are used as conditioning context.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if T_months % 3:
        raise ValueError("T_months must be a multiple of 3")
    _validate_record(model.schema, baseline)
    if not baseline.visits:
        raise ValidationError("baseline record needs at least the t=0 visit")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n_context = min(len(baseline.visits), model.m3.layer.lag)
    values, bg = _sample(model, baseline, n_context, n, T_months, ss)
    base_seed = ss.entropy if isinstance(ss.entropy, int) else 0
    return TwinSet(
        baseline.subject_id, baseline.study_id, model.schema, values, bg, int(base_seed)
    )


def component_twins(model: core.CRBMModel, ds: PanelDataset, n: int, T_months: int, seed: int):
    """Baseline-conditioned trajectories from a single component model.

    ``ds`` must already be the model's own view (schema subset at the model
    cadence). Used to score sweep candidates before any composite exists.
    """
    if ds.cadence_months != model.layer.cadence_months:
        raise ValueError("dataset cadence does not match the model")
    if T_months % ds.cadence_months:
        raise ValueError("T_months must be a multiple of the model cadence")
    n_slots = T_months // ds.cadence_months + 1
    out = {}
    for i, rec in enumerate(ds.subjects):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        traj, clamp, bg, bgc = _component_inputs(
            model, model.schema, rec.background, rec.visits[:1], n_slots, n
        )
        units, bg_units = _run_component(model, traj, clamp, bg, bgc, 1, ss, GEN_MC_STEPS)
        vals, bg_num = _decode_component(model, units, bg_units)
        full_long = [s for s in model.schema if s.role == "longitudinal"]
        full_bg = [s for s in model.schema if s.role == "background"]
        for j, spec in enumerate(full_long):
            v = rec.visits[0][j]
            if v is not MISSING:
                vals[:, 0, j] = numeric_value(spec, v)
        for j, spec in enumerate(full_bg):
            v = rec.background[j]
            if v is not MISSING:
                bg_num[:, j] = numeric_value(spec, v)
        out[rec.subject_id] = TwinSet(
            rec.subject_id, rec.study_id, model.schema, vals, bg_num, seed,
            cadence_months=ds.cadence_months,
        )
    return out


def conditional_sample(model: CompositeModel, record: SubjectRecord, seed) -> SubjectRecord:
    """Fill every fillable MISSING cell of a record by clamped Gibbs.

    3-month-group cells are completed first (all windows jointly, product of
    overlapping windows), then 6-month-only cells conditioned on the shared
    values. Observed cells are returned untouched. 6-month-only cells at odd
    3-month slots are outside the model's support and stay MISSING.
    """
    values, bg = conditional_sample_batch(model, record, 1, seed)
    return _record_from_numeric(model.schema, record, values[0], bg[0])


def conditional_sample_batch(model: CompositeModel, record: SubjectRecord, n: int, seed):
    """n independent completions of the same record, as numeric arrays."""
    _validate_record(model.schema, record)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    ss3, ss6 = ss.spawn(2)
    T3 = len(record.visits)

    m3 = model.m3
    traj3, clamp3, bg3, bgc3 = _component_inputs(
        m3, model.schema, record.background, record.visits, T3, n
    )
    if clamp3.all() and bgc3.all():
        traj3_units, bg3_units = traj3, bg3
    else:
        rng3 = np.random.default_rng(ss3)
        L3 = m3.layer.lag
        total3 = max(T3, L3 + 1)
        if total3 > T3:
            pad = np.zeros((n, total3 - T3, traj3.shape[2]))
            traj3 = np.concatenate([traj3, pad], axis=1)
            clamp3 = np.concatenate([clamp3, np.zeros(pad.shape, dtype=bool)], axis=1)
        init = core.bias_sample(m3.params, m3.layer, rng3, n)
        init_slot = init[:, : m3.layer.n_long_units]
        traj3 = np.where(clamp3, traj3, init_slot[:, None, :])
        bg3 = np.where(bgc3, bg3, init[:, (L3 + 1) * m3.layer.n_long_units :])
        windows = tuple(range(total3 - L3))
        traj3_units, bg3_units = core.poe_gibbs(
            m3.params, m3.layer, traj3, bg3, clamp3, bgc3, windows, rng3, GEN_MC_STEPS
        )
        traj3_units = traj3_units[:, :T3]
    vals3, bg3_num = _decode_component(m3, traj3_units, bg3_units)

    m6 = model.m6
    T6 = (T3 - 1) // 2 + 1
    six_only = [s for s in m6.schema if s.groups == frozenset((6,))]
    long6 = [s for s in m6.schema if s.role == "longitudinal"]
    if six_only:
        visits6 = tuple(record.visits[2 * u] for u in range(T6))
        traj6, clamp6, bg6, bgc6 = _component_inputs(
            m6, model.schema, record.background, visits6, T6, n
        )
        _transfer_shared(m3, m6, traj3_units, bg3_units, traj6, clamp6, bg6, bgc6)
        if clamp6.all() and bgc6.all():
            traj6_units, bg6_units = traj6, bg6
        else:
            rng6 = np.random.default_rng(ss6)
            L6 = m6.layer.lag
            total6 = max(T6, L6 + 1)
            if total6 > T6:
                pad = np.zeros((n, total6 - T6, traj6.shape[2]))
                traj6 = np.concatenate([traj6, pad], axis=1)
                clamp6 = np.concatenate([clamp6, np.zeros(pad.shape, dtype=bool)], axis=1)
            init = core.bias_sample(m6.params, m6.layer, rng6, n)
            init_slot = init[:, : m6.layer.n_long_units]
            traj6 = np.where(clamp6, traj6, init_slot[:, None, :])
            bg6 = np.where(bgc6, bg6, init[:, (L6 + 1) * m6.layer.n_long_units :])
            windows = tuple(range(total6 - L6))
            traj6_units, bg6_units = core.poe_gibbs(
                m6.params, m6.layer, traj6, bg6, clamp6, bgc6, windows, rng6, GEN_MC_STEPS
            )
            traj6_units = traj6_units[:, :T6]
        vals6, bg6_num = _decode_component(m6, traj6_units, bg6_units)
    else:
        vals6 = np.zeros((n, T6, len(long6)))
        bg6_num = np.zeros((n, len([s for s in m6.schema if s.role == "background"])))

    T_months = (T3 - 1) * 3
    values, bg_num = _assemble_numeric(model, n, T3, vals3, bg3_num, vals6, bg6_num)
    _overwrite_observed(model, values, bg_num, record, T3)
    return values, bg_num


def _record_from_numeric(schema, source: SubjectRecord, values, background) -> SubjectRecord:
    full_long = [s for s in schema if s.role == "longitudinal"]
    full_bg = [s for s in schema if s.role == "background"]
    bg = []
    for j, spec in enumerate(full_bg):
        orig = source.background[j]
        bg.append(orig if orig is not MISSING else numeric_to_cell(spec, float(background[j])))
    visits = []
    for t in range(len(source.visits)):
        row = []
        for j, spec in enumerate(full_long):
            orig = source.visits[t][j]
            if orig is not MISSING:
                row.append(orig)
            else:
                x = float(values[t, j])
                missing_slot = spec.groups == frozenset((6,)) and t % 2 == 1
                row.append(MISSING if missing_slot or np.isnan(x) else numeric_to_cell(spec, x))
        visits.append(tuple(row))
    return SubjectRecord(source.subject_id, source.study_id, tuple(bg), tuple(visits))


def twins_for_dataset(model: CompositeModel, ds: PanelDataset, n: int, T_months: int, seed: int):
    """One TwinSet per subject; per-subject rng streams are index-keyed so the
    result does not depend on iteration order."""
    out = {}
    for i, rec in enumerate(ds.subjects):
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        tw = generate_digital_twins(model, rec, n, T_months, ss)
        tw.seed = seed
        out[rec.subject_id] = tw
    return out


def twin_cohort(twinsets: dict, ds: PanelDataset, index: int = 0) -> PanelArrays:
    """One twin per subject (the ``index``-th), aligned with ``ds`` order."""
    base = panel_numeric(ds)
    values = np.stack([twinsets[sid].values[index] for sid in base.subject_ids])
    bg = np.stack([twinsets[sid].background[index] for sid in base.subject_ids])
    T = min(values.shape[1], base.values.shape[1])
    return PanelArrays(
        ds.schema, values[:, :T], bg, base.subject_ids, base.study_ids, ds.cadence_months
    )


# --- twin CSV interchange ------------------------------------------------------


def save_twinsets(twinsets: dict, ds: PanelDataset, path) -> None:
    """TwinSet export: panel CSV layout plus twin_index,source_subject_id,seed."""
    long_specs = [s for s in ds.schema if s.role == "longitudinal"]
    bg_specs = [s for s in ds.schema if s.role == "background"]
    header = (
        ["subject_id", "study_id", "visit_month"]
        + [s.name for s in ds.schema]
        + ["twin_index", "source_subject_id", "seed"]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in ds.subjects:
            tw = twinsets[rec.subject_id]
            for i in range(tw.n_twins):
                twin = tw.record(i)
                bg = dict(zip((s.name for s in bg_specs), twin.background))
                for t in range(tw.visit_count):
                    visit = dict(zip((s.name for s in long_specs), twin.visits[t]))
                    row = [twin.subject_id, twin.study_id, str(t * tw.cadence_months)]
                    for s in ds.schema:
                        if s.role == "background":
                            row.append(format_cell(bg[s.name]) if t == 0 else "")
                        else:
                            row.append(format_cell(visit[s.name]))
                    row += [str(i), rec.subject_id, str(tw.seed)]
                    writer.writerow(row)


def load_twinsets(path, schema) -> dict:
    """Inverse of :func:`save_twinsets`; returns source_subject_id -> TwinSet."""
    import csv as _csv

    long_specs = [s for s in schema if s.role == "longitudinal"]
    bg_specs = [s for s in schema if s.role == "background"]
    by_source: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        for row in reader:
            src = row["source_subject_id"]
            i = int(row["twin_index"])
            t = int(row["visit_month"]) // 3
            entry = by_source.setdefault(
                src, {"study": row["study_id"], "seed": int(row["seed"]), "cells": {}}
            )
            vis = entry["cells"].setdefault((i, t), {})
            for name, text in row.items():
                if name in ("subject_id", "study_id", "visit_month", "twin_index", "source_subject_id", "seed"):
                    continue
                if text != "":
                    vis[name] = text
    from .panel_data import _parse_cell

    out = {}
    for src, entry in by_source.items():
        idxs = sorted({i for (i, _) in entry["cells"]})
        T = max(t for (_, t) in entry["cells"]) + 1
        values = np.full((len(idxs), T, len(long_specs)), np.nan)
        background = np.full((len(idxs), len(bg_specs)), np.nan)
        for (i, t), cells in entry["cells"].items():
            k = idxs.index(i)
            for j, spec in enumerate(long_specs):
                if spec.name in cells:
                    v = _parse_cell(cells[spec.name], spec, f"twin {src}/{i}")
                    values[k, t, j] = numeric_value(spec, v)
            if t == 0:
                for j, spec in enumerate(bg_specs):
                    if spec.name in cells:
                        v = _parse_cell(cells[spec.name], spec, f"twin {src}/{i}")
                        background[k, j] = numeric_value(spec, v)
        out[src] = TwinSet(src, entry["study"], tuple(schema), values, background, entry["seed"])
    return out
