"""Error norms and reports comparing coarse solutions with fine references."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import assemble_stiffness, assemble_weighted_mass
from .mesh import FineGrid

CSV_HEADER = "N_c,dimV0,Mc,L2k_pct,H1k_pct"


def _vector(fg: FineGrid, v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != fg.n_nodes:
        raise ValueError(f"size mismatch: expected {fg.n_nodes} nodal values, got {v.size}")
    return v


def energy_norm(fg: FineGrid, v, k, A=None) -> float:
    """``(int k |grad v|^2)^(1/2)`` for the bilinear interpolant of ``v``."""
    v = _vector(fg, v)
    # constants lie in the kernel; removing the mean avoids cancellation
    v = v - v.mean()
    A = assemble_stiffness(fg, k) if A is None else A
    return float(np.sqrt(max(v @ (A @ v), 0.0)))


def weighted_l2_norm(fg: FineGrid, v, k, M=None) -> float:
    """``(int k v^2)^(1/2)`` for the bilinear interpolant of ``v``."""
    v = _vector(fg, v)
    M = assemble_weighted_mass(fg, k) if M is None else M
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


@dataclass
class ErrorReport:
    l2k_pct: float
    h1k_pct: float
    n_c: int | None = None
    dim: int | None = None
    n_constraints: int | None = None
    saturation_pct: dict = field(default_factory=dict)   # time -> percent

    def csv_row(self) -> str:
        def fmt(x):
            return "" if x is None else repr(x)
        return ",".join([fmt(self.n_c), fmt(self.dim), fmt(self.n_constraints),
                         repr(self.l2k_pct), repr(self.h1k_pct)])

    def to_text(self) -> str:
        lines = [f"N_c={self.n_c}", f"dimV0={self.dim}", f"Mc={self.n_constraints}",
                 f"L2k_pct={self.l2k_pct!r}", f"H1k_pct={self.h1k_pct!r}"]
        lines += [f"saturation_pct[t={t!r}]={e!r}" for t, e in sorted(self.saturation_pct.items())]
        return "\n".join(lines) + "\n"


class NormCache:
    """Stiffness and weighted mass for one ``k``, reused across comparisons."""

    def __init__(self, fg: FineGrid, k):
        self.grid = fg
        self.A = assemble_stiffness(fg, k)
        self.M = assemble_weighted_mass(fg, k)


def relative_errors(fg: FineGrid, p_ref, p_c, k, n_c=None, dim=None, n_constraints=None,
                    cache: NormCache | None = None) -> ErrorReport:
    """Relative ``L^2_k`` and ``H^1_k`` errors in percent.

    The energy error needs a reference with a non-zero gradient; a constant
    reference raises like any other zero denominator.
    """
    p_ref, p_c = _vector(fg, p_ref), _vector(fg, p_c)
    c = cache if cache is not None else NormCache(fg, k)
    d = p_ref - p_c
    den_l2 = weighted_l2_norm(fg, p_ref, k, c.M)
    den_h1 = energy_norm(fg, p_ref, k, c.A)
    if den_l2 == 0 or den_h1 == 0:
        raise ZeroDivisionError("reference solution has zero norm")
    return ErrorReport(
        l2k_pct=100.0 * weighted_l2_norm(fg, d, k, c.M) / den_l2,
        h1k_pct=100.0 * energy_norm(fg, d, k, c.A) / den_h1,
        n_c=n_c, dim=dim, n_constraints=n_constraints,
    )


def saturation_error(S_ref, S_c) -> float:
    """Plain relative ``L^2`` error over dual volumes, in percent."""
    S_ref, S_c = np.asarray(S_ref, float), np.asarray(S_c, float)
    if S_ref.shape != S_c.shape:
        raise ValueError("size mismatch")
    den = np.linalg.norm(S_ref)
    if den == 0:
        raise ZeroDivisionError("reference saturation is identically zero")
    return float(100.0 * np.linalg.norm(S_ref - S_c) / den)
