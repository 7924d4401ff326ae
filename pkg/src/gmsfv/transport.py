"""Two-phase constitutive laws and the explicit upwind saturation update.

Saturation lives on fine dual volumes (one value per fine node). Porosity
is one and there is no capillarity or gravity. Water enters through inflow
boundary pieces at a prescribed saturation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .downscale import FluxField
from .fem import incidence, node_source
from .mesh import FineGrid

OVERSHOOT_TOL = 1e-12


class CflError(ValueError):
    """Time step exceeds the explicit stability limit."""


@dataclass(frozen=True)
class FluidProps:
    mu_w: float = 1.0
    mu_o: float = 5.0
    n_w: float = 2.0          # relative permeability exponents
    n_o: float = 2.0

    def __post_init__(self):
        if not (self.mu_w > 0 and self.mu_o > 0):
            raise ValueError("viscosities must be positive")
        if not (self.n_w >= 1 and self.n_o >= 1):
            raise ValueError("relative permeability exponents must be >= 1")

    def krw(self, S):
        return S ** self.n_w

    def kro(self, S):
        return (1.0 - S) ** self.n_o


def _check_range(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if np.any(~np.isfinite(S)) or np.any(S < 0) or np.any(S > 1):
        raise ValueError("saturation out of range [0, 1]")
    return S


def total_mobility(S, props: FluidProps = FluidProps()):
    """``k_rw(S)/mu_w + k_ro(S)/mu_o``."""
    S = _check_range(S)
    return props.krw(S) / props.mu_w + props.kro(S) / props.mu_o


def fractional_flow(S, props: FluidProps = FluidProps()):
    """Water fraction of the total flux, ``(k_rw/mu_w) / lambda``."""
    S = _check_range(S)
    return (props.krw(S) / props.mu_w) / total_mobility(S, props)


@lru_cache(maxsize=32)
def max_dfdS(props: FluidProps = FluidProps()) -> float:
    """Largest slope of the fractional flow curve."""
    S = np.linspace(0.0, 1.0, 2001)
    d = _dfdS(S, props)
    m = int(np.argmax(d))
    lo, hi = S[max(m - 1, 0)], S[min(m + 1, S.size - 1)]
    res = minimize_scalar(lambda s: -_dfdS(s, props), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(max(d[m], -res.fun))


def _dfdS(S, props: FluidProps):
    S = np.asarray(S, dtype=float)
    lw = props.krw(S) / props.mu_w
    lo = props.kro(S) / props.mu_o
    dlw = props.n_w * S ** (props.n_w - 1) / props.mu_w
    dlo = -props.n_o * (1.0 - S) ** (props.n_o - 1) / props.mu_o
    return (dlw * lo - lw * dlo) / (lw + lo) ** 2


@dataclass
class SaturationState:
    S: np.ndarray      # per fine dual volume
    t: float = 0.0
    step: int = 0

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=float)
        if np.any(self.S < 0) or np.any(self.S > 1):
            raise ValueError("saturation out of range [0, 1]")


def cell_mobility(fg: FineGrid, S: np.ndarray, props: FluidProps = FluidProps()) -> np.ndarray:
    """Total mobility per fine cell from the mean saturation of its four corners."""
    return total_mobility(np.asarray(S)[fg.cell_nodes].mean(axis=1), props)


def volume_outflow(flux: FluxField) -> np.ndarray:
    """Sum of outgoing fluxes of every fine dual volume."""
    fg = flux.grid
    F = flux.seg_flux
    sn = fg.segment_nodes
    out = np.bincount(sn[:, 0], weights=np.maximum(F, 0.0), minlength=fg.n_nodes)
    out += np.bincount(sn[:, 1], weights=np.maximum(-F, 0.0), minlength=fg.n_nodes)
    return out + np.maximum(flux.boundary, 0.0)


def cfl_dt(flux: FluxField, props: FluidProps = FluidProps()) -> float:
    """Largest stable time step, ``min meas(V) / (outflow(V) * max f')``; ``inf`` for no flow."""
    meas = flux.grid.node_measure
    if np.any(meas <= 0):
        raise ValueError("zero-measure control volume")
    out = volume_outflow(flux)
    active = out > 0
    if not active.any():
        return float("inf")
    return float(np.min(meas[active] / out[active]) / max_dfdS(props))


def water_fluxes(flux: FluxField, S: np.ndarray, props: FluidProps, s_inflow: float = 1.0):
    """Upwinded water flux per segment and water outflow per boundary node."""
    fg = flux.grid
    sn = fg.segment_nodes
    F = flux.seg_flux
    fS = fractional_flow(S, props)
    up = np.where(F >= 0, sn[:, 0], sn[:, 1])
    fw_seg = F * fS[up]
    b = flux.boundary
    f_in = float(fractional_flow(s_inflow, props))
    fw_bnd = np.where(b >= 0, b * fS, b * f_in)
    return fw_seg, fw_bnd


def advance_saturation(state: SaturationState, flux: FluxField, q_w, dt: float,
                       props: FluidProps = FluidProps(), s_inflow: float = 1.0,
                       dt_max: float | None = None) -> SaturationState:
    """One donor-cell step: ``S <- S - dt/|V| (sum of upwinded water fluxes - int q_w)``.

    ``q_w`` is a per-cell water source (or ``None``); ``dt_max`` may be passed
    to skip recomputing the stability limit when the flux is unchanged.
    """
    fg = flux.grid
    if dt <= 0:
        raise ValueError("time step must be positive")
    limit = cfl_dt(flux, props) if dt_max is None else dt_max
    if dt > limit * (1.0 + 1e-12):
        raise CflError(f"time step {dt:.6g} exceeds the stability limit {limit:.6g} "
                       f"at step {state.step} (t={state.t:.6g}); reduce dt below {limit:.6g}")
    meas = fg.node_measure
    fw_seg, fw_bnd = water_fluxes(flux, state.S, props, s_inflow)
    net = incidence(fg) @ fw_seg + fw_bnd
    if q_w is not None:
        net = net - node_source(fg, q_w)
    S = state.S - dt / meas * net
    lo, hi = S.min(), S.max()
    if lo < -OVERSHOOT_TOL or hi > 1.0 + OVERSHOOT_TOL:
        bad = int(np.argmin(S)) if lo < -OVERSHOOT_TOL else int(np.argmax(S))
        raise ValueError(f"saturation overshoot {S[bad]!r} at node {bad}, step {state.step + 1}")
    np.clip(S, 0.0, 1.0, out=S)
    return SaturationState(S, state.t + dt, state.step + 1)


def water_balance_defect(before: SaturationState, after: SaturationState, flux: FluxField,
                         q_w, dt: float, props: FluidProps = FluidProps(), s_inflow: float = 1.0) -> float:
    """``sum |V| dS - dt (inflow - outflow + int q_w)`` for one step (zero up to round-off)."""
    fg = flux.grid
    meas = fg.node_measure
    _, fw_bnd = water_fluxes(flux, before.S, props, s_inflow)
    src = node_source(fg, q_w).sum() if q_w is not None else 0.0
    stored = float(np.sum(meas * (after.S - before.S)))
    return stored - dt * (-float(fw_bnd.sum()) + float(src))
