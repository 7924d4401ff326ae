"""Run configuration and the single- and two-phase drivers.

A run is described by a flat ``key = value`` text file (:class:`SimConfig`).
Drivers return a :class:`RunRecord` and write every artefact under the
configured output directory.
"""
from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .downscale import Downscaler, fine_flux_field
from .fem import BoundaryConditions
from .field import PermeabilityField, default_geometry, gen_channel_field, load_field, write_values
from .mesh import CoarseGrid, FineGrid, control_volumes
from .metrics import CSV_HEADER, ErrorReport, NormCache, relative_errors, saturation_error
from .msbasis import build_coarse_space, build_coarse_spaces
from .saddle import coarse_system, conservation_residual, solve_fine_fv, solve_galerkin, solve_kkt
from .transport import (FluidProps, SaturationState, advance_saturation, cell_mobility, cfl_dt,
                        water_balance_defect)

MODES = ("fine-fv", "gmsfem-fv", "galerkin-unconstrained")
CONSERVATION_TOL = 1e-9
BALANCE_TOL = 1e-10


@dataclass
class SimConfig:
    nx: int = 100
    ny: int = 100
    NX: int = 10
    NY: int = 10
    field: str = "synthetic"          # "synthetic" or a path in the field file format
    seed: int = 0
    background: float = 1.0
    contrast: float = 1e4
    n_channels: int = 3
    n_inclusions: int = 8
    L: int = 4                        # eigenfunctions per interior coarse node
    levels: str = "1,2,4,6,8,10"      # enrichment sweep for the pressure driver
    p_left: float = 1.0
    p_right: float = 0.0
    mu_w: float = 1.0
    mu_o: float = 5.0
    s_inflow: float = 1.0
    dt: float = 1e-4
    steps_per_solve: int = 100
    T: float = 0.9
    output_times: str = ""            # empty: 0.3, 0.6, 0.9 of T
    mode: str = "gmsfem-fv"
    outdir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        if self.steps_per_solve < 1:
            raise ValueError("steps_per_solve must be >= 1")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.NX < 1 or self.NY < 1 or self.nx % self.NX or self.ny % self.NY:
            raise ValueError("fine cell counts must be multiples of the coarse ones")
        self.level_list()
        self.snapshot_times()

    # -- derived values --------------------------------------------------------

    def level_list(self) -> list[int]:
        try:
            lv = [int(s) for s in str(self.levels).split(",") if s.strip()]
        except ValueError:
            raise ValueError(f"bad levels {self.levels!r}") from None
        if not lv or min(lv) < 1:
            raise ValueError("levels must be positive integers")
        return lv

    def snapshot_times(self) -> list[float]:
        if not str(self.output_times).strip():
            return [f * self.T for f in (1 / 3, 2 / 3, 1.0)]
        times = [float(s) for s in str(self.output_times).split(",") if s.strip()]
        if any(t <= 0 or t > self.T * (1 + 1e-12) for t in times):
            raise ValueError("output times must lie in (0, T]")
        return sorted(times)

    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.dt - 1e-9))

    def props(self) -> FluidProps:
        return FluidProps(self.mu_w, self.mu_o)

    def bc(self) -> BoundaryConditions:
        return BoundaryConditions.left_right(self.p_left, self.p_right)

    # -- text form ---------------------------------------------------------------

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, **overrides) -> "SimConfig":
        types = {f.name: f.type for f in fields(cls)}
        vals: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            vals[key] = val
        vals.update({k: v for k, v in overrides.items() if v is not None})
        for key in list(vals):
            if key not in types:
                raise ValueError(f"unknown key {key!r}")
            vals[key] = _convert(types[key], vals[key], key)
        return cls(**vals)

    @classmethod
    def load(cls, path, **overrides) -> "SimConfig":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_text(p.read_text(), **overrides)


def _convert(tname, val, key):
    if not isinstance(val, str):
        return val
    try:
        if tname in ("int", int):
            return int(val)
        if tname in ("float", float):
            return float(val)
    except ValueError:
        raise ValueError(f"bad value {val!r} for {key}") from None
    return val


# -- records -----------------------------------------------------------------

@dataclass
class RunRecord:
    config: SimConfig
    kind: str
    reports: list = field(default_factory=list)        # (label, ErrorReport)
    timings: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)      # time -> saturation
    solutions: dict = field(default_factory=dict)      # label -> pressure
    counters: dict = field(default_factory=dict)
    failed: bool = False

    def flag(self, msg: str) -> None:
        self.failed = True
        self.notes.append("FAILED: " + msg)

    def to_text(self) -> str:
        out = [f"# {self.kind} run record", "[config]", self.config.to_text().rstrip(), "[status]",
               f"failed = {self.failed}"]
        if self.counters:
            out.append("[counters]")
            out += [f"{k} = {v}" for k, v in self.counters.items()]
        out.append("[timings_s]")
        out += [f"{k} = {v:.6f}" for k, v in self.timings.items()]
        out.append("[residuals]")
        out += [f"{k} = {float(v)!r}" for k, v in self.residuals.items()]
        for label, rep in self.reports:
            out.append(f"[report {label}]")
            out.append(rep.to_text().rstrip())
        if self.notes:
            out.append("[notes]")
            out += self.notes
        return "\n".join(out) + "\n"


@contextmanager
def _timed(timings: dict, key: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        timings[key] = timings.get(key, 0.0) + time.perf_counter() - t0


def make_grids(cfg: SimConfig) -> tuple[FineGrid, CoarseGrid]:
    fg = FineGrid(cfg.nx, cfg.ny)
    return fg, CoarseGrid(fg, cfg.NX, cfg.NY)


def make_field(cfg: SimConfig, fg: FineGrid) -> PermeabilityField:
    if cfg.field == "synthetic":
        geo = default_geometry(cfg.seed, cfg.n_channels, cfg.n_inclusions)
        return gen_channel_field(fg, cfg.background, cfg.contrast, geometry=geo)
    return load_field(cfg.field, fg)


def _outdir(cfg: SimConfig, write: bool) -> Path | None:
    if not write:
        return None
    d = Path(cfg.outdir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- single phase ------------------------------------------------------------

def run_single_phase(cfg: SimConfig, levels=None, write: bool = True) -> RunRecord:
    """Fine reference plus one coarse solve per enrichment level, with error reports."""
    rec = RunRecord(cfg, "single-phase")
    out = _outdir(cfg, write)
    fg, cg = make_grids(cfg)
    bc = cfg.bc()
    T = rec.timings
    with _timed(T, "assembly"):
        k = make_field(cfg, fg)
        norms = NormCache(fg, k)
    with _timed(T, "solve"):
        ref = solve_fine_fv(fg, k, None, None, bc)
    rec.solutions["fine"] = ref.p
    rec.residuals["fine_fv_balance"] = ref.diagnostics["constraint_residual_max"]
    if out:
        write_values(out / "pressure_fine.txt", ref.p)

    if cfg.mode == "fine-fv":
        rec.notes.append("mode fine-fv: enrichment settings ignored")
        rep = ErrorReport(0.0, 0.0, n_c=ref.diagnostics["reported_size"], dim=fg.n_nodes,
                          n_constraints=fg.n_nodes)
        rec.reports.append(("fine", rep))
    else:
        levels = cfg.level_list() if levels is None else list(levels)
        volumes = control_volumes(cg)
        downscaler = Downscaler(cg, bc, volumes) if cfg.mode == "gmsfem-fv" else None
        with _timed(T, "basis"):
            spaces = build_coarse_spaces(cg, k, levels)
        for L in levels:
            space = spaces[L]
            with _timed(T, "assembly"):
                sys, kept = coarse_system(space, k, None, None, bc, volumes)
            with _timed(T, "solve"):
                sol = solve_kkt(sys) if cfg.mode == "gmsfem-fv" else solve_galerkin(sys)
            res = conservation_residual(sol.p, fg, k, None, volumes, None, bc)
            cres = float(np.abs(res).max(initial=0.0))
            rec.residuals[f"coarse_conservation_L{L}"] = cres
            if downscaler is not None:
                with _timed(T, "downscale"):
                    flux = downscaler(sol.p, k)
                fres = flux.diagnostics["max_fine_conservation_residual"]
                rec.residuals[f"fine_conservation_L{L}"] = fres
                if cres > CONSERVATION_TOL or fres > CONSERVATION_TOL:
                    rec.flag(f"conservation residual above {CONSERVATION_TOL:g} at L={L}")
                if out:
                    flux.dump(out / f"flux_L{L}.txt")
            rep = relative_errors(fg, ref.p, sol.p, k, n_c=sys.reported_size, dim=space.dim,
                                  n_constraints=sys.reported_constraints, cache=norms)
            rec.reports.append((f"L={L}", rep))
            rec.solutions[f"L={L}"] = sol.p
            if out:
                write_values(out / f"pressure_L{L}.txt", sol.p)
    if out:
        rows = [CSV_HEADER] + [rep.csv_row() for _, rep in rec.reports]
        (out / "errors.csv").write_text("\n".join(rows) + "\n")
        (out / "record.txt").write_text(rec.to_text())
    return rec


# -- two phase ---------------------------------------------------------------

class _PressureStep:
    """Pressure solve plus conservative fine flux for a given saturation."""

    def __init__(self, cfg: SimConfig, fg, cg, k, L: int, rec: RunRecord):
        self.cfg, self.fg, self.cg, self.k = cfg, fg, cg, k
        self.bc = cfg.bc()
        self.props = cfg.props()
        self.rec = rec
        if cfg.mode == "galerkin-unconstrained":
            raise ValueError("galerkin-unconstrained fluxes are not conservative and cannot drive "
                             "the transport step; use fine-fv or gmsfem-fv")
        if cfg.mode == "gmsfem-fv":
            with _timed(rec.timings, "basis"):
                # built from k alone and reused for every pressure solve
                self.space = build_coarse_space(cg, k, L)
                self.volumes = control_volumes(cg)
                self.downscaler = Downscaler(cg, self.bc, self.volumes)
            rec.counters["dimV0"] = self.space.dim
        else:
            rec.notes.append("mode fine-fv: enrichment settings ignored")

    def __call__(self, S: np.ndarray):
        T = self.rec.timings
        fg, k = self.fg, self.k
        with _timed(T, "assembly"):
            mob = cell_mobility(fg, S, self.props)
        if self.cfg.mode == "fine-fv":
            with _timed(T, "solve"):
                sol = solve_fine_fv(fg, k, mob, None, self.bc)
            flux = fine_flux_field(fg, sol.p, k, mob, None, self.bc)
            self.rec.counters["N_c"] = sol.diagnostics["reported_size"]
            return flux
        with _timed(T, "assembly"):
            sys, _ = coarse_system(self.space, k, mob, None, self.bc, self.volumes)
        with _timed(T, "solve"):
            sol = solve_kkt(sys)
        with _timed(T, "downscale"):
            flux = self.downscaler(sol.p, k, mob)
        self.rec.counters["N_c"] = sys.reported_size
        r = self.rec.residuals
        r["coarse_conservation_max"] = max(r.get("coarse_conservation_max", 0.0),
                                           sol.diagnostics["constraint_residual_max"])
        r["fine_conservation_max"] = max(r.get("fine_conservation_max", 0.0),
                                         flux.diagnostics["max_fine_conservation_residual"])
        return flux


def _time_tag(t: float) -> str:
    return f"{t:.6f}".rstrip("0").rstrip(".")


def run_two_phase(cfg: SimConfig, L: int | None = None, reference: RunRecord | None = None,
                  write: bool = True, S0=None) -> RunRecord:
    """Operator splitting: pressure solve, fine fluxes, then explicit transport steps.

    Saturation snapshots are kept at the configured output times. When a
    ``reference`` run is given, saturation errors against its snapshots are
    reported.
    """
    L = cfg.L if L is None else L
    rec = RunRecord(cfg, "two-phase")
    out = _outdir(cfg, write)
    fg, cg = make_grids(cfg)
    props = cfg.props()
    with _timed(rec.timings, "assembly"):
        k = make_field(cfg, fg)
    pressure = _PressureStep(cfg, fg, cg, k, L, rec)

    n_steps = cfg.n_steps()
    snap_steps = {int(round(t / cfg.dt)): t for t in cfg.snapshot_times()}
    S_init = np.zeros(fg.n_nodes) if S0 is None else np.broadcast_to(np.asarray(S0, float), (fg.n_nodes,)).copy()
    state = SaturationState(S_init, 0.0, 0)
    s_lo, s_hi = float(state.S.min()), float(state.S.max())
    worst_balance = 0.0
    min_dt_max = float("inf")
    solves = 0
    flux = dt_max = None
    for step in range(n_steps):
        if step % cfg.steps_per_solve == 0:
            flux = pressure(state.S)
            solves += 1
            dt_max = cfl_dt(flux, props)
            min_dt_max = min(min_dt_max, dt_max)
        with _timed(rec.timings, "transport"):
            new = advance_saturation(state, flux, None, cfg.dt, props, cfg.s_inflow, dt_max=dt_max)
            worst_balance = max(worst_balance, abs(water_balance_defect(
                state, new, flux, None, cfg.dt, props, cfg.s_inflow)))
        # maximum principle relative to the previous state and the inflow value
        lo_bound = min(float(state.S.min()), cfg.s_inflow) - 1e-12
        hi_bound = max(float(state.S.max()), cfg.s_inflow) + 1e-12
        if new.S.min() < lo_bound or new.S.max() > hi_bound:
            rec.flag(f"maximum principle violated at step {new.step}")
        state = new
        s_lo, s_hi = min(s_lo, float(state.S.min())), max(s_hi, float(state.S.max()))
        if state.step in snap_steps:
            t = snap_steps[state.step]
            rec.snapshots[t] = state.S.copy()
            if out:
                write_values(out / f"saturation_t{_time_tag(t)}.txt", state.S)

    rec.counters.update({"pressure_solves": solves, "transport_steps": n_steps,
                         "final_time": state.t, "L": L if cfg.mode != "fine-fv" else "n/a"})
    rec.residuals.update({"water_balance_max": worst_balance, "S_min": s_lo, "S_max": s_hi,
                          "cfl_dt_min": min_dt_max})
    if worst_balance > BALANCE_TOL:
        rec.flag(f"water balance defect {worst_balance:.3e} above {BALANCE_TOL:g}")
    for key in ("coarse_conservation_max", "fine_conservation_max"):
        if rec.residuals.get(key, 0.0) > CONSERVATION_TOL:
            rec.flag(f"{key} above {CONSERVATION_TOL:g}")

    if reference is not None:
        rep = ErrorReport(float("nan"), float("nan"), n_c=rec.counters.get("N_c"),
                          dim=rec.counters.get("dimV0"))
        for t, S in rec.snapshots.items():
            rep.saturation_pct[t] = saturation_error(reference.snapshots[t], S)
        rec.reports.append((f"L={L}", rep))
    if out:
        (out / "record.txt").write_text(rec.to_text())
    return rec


def max_saturation_error(rec: RunRecord) -> float:
    return max(max(rep.saturation_pct.values()) for _, rep in rec.reports if rep.saturation_pct)


def sweep_two_phase(cfg: SimConfig, levels=None, write: bool = True):
    """Fine reference plus a coarse run per level; returns ``(reference, {L: record})``.

    Writes ``sweep.csv`` with the saturation error at every snapshot time.
    """
    from dataclasses import replace

    levels = cfg.level_list() if levels is None else list(levels)
    base = Path(cfg.outdir)
    ref_cfg = replace(cfg, mode="fine-fv", outdir=str(base / "fine"))
    ref = run_two_phase(ref_cfg, write=write)
    runs = {}
    for L in levels:
        c = replace(cfg, mode="gmsfem-fv", outdir=str(base / f"L{L}"))
        runs[L] = run_two_phase(c, L=L, reference=ref, write=write)
    if write:
        times = cfg.snapshot_times()
        head = "L,N_c,dimV0,max_sat_pct," + ",".join(f"sat_pct_t{_time_tag(t)}" for t in times)
        rows = [head]
        for L, r in runs.items():
            rep = r.reports[0][1]
            rows.append(",".join([str(L), str(rep.n_c), str(rep.dim), repr(max_saturation_error(r))]
                                 + [repr(rep.saturation_pct[t]) for t in times]))
        base.mkdir(parents=True, exist_ok=True)
        (base / "sweep.csv").write_text("\n".join(rows) + "\n")
    return ref, runs
