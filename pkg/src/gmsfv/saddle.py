"""Constrained Ritz solve: energy minimisation over the coarse space subject to
control-volume flux constraints, via a saddle-point (KKT) system.

Also provides the classical fine-scale vertex-centred finite volume solve
used as the reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (BoundaryConditions, assemble_constraints, assemble_load, assemble_stiffness,
                  fine_flux_matrix, node_source)
from .field import SourceField
from .mesh import FineGrid, control_volumes
from .msbasis import CoarseSpace


class ConstraintRankError(np.linalg.LinAlgError):
    def __init__(self, msg, rows=()):
        super().__init__(msg)
        self.rows = list(rows)


@dataclass
class KktSystem:
    A0: sp.csr_matrix
    Ac: sp.csr_matrix
    b0: np.ndarray
    bbar0: np.ndarray
    R: sp.csc_matrix           # free basis columns
    lift: np.ndarray           # fine-node Dirichlet lift
    reported_dim: int | None = None
    reported_constraints: int | None = None

    @property
    def n_unknowns(self) -> int:
        return self.A0.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.Ac.shape[0]

    @property
    def size(self) -> int:
        return self.n_unknowns + self.n_constraints

    @property
    def reported_size(self) -> int:
        """System size in the counting convention that includes Dirichlet dofs and rows."""
        d = self.n_unknowns if self.reported_dim is None else self.reported_dim
        m = self.n_constraints if self.reported_constraints is None else self.reported_constraints
        return d + m

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.A0, self.Ac.T], [self.Ac, None]], format="csc")


@dataclass
class PressureSolution:
    p: np.ndarray
    coeffs: np.ndarray | None = None
    multipliers: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def project(A, b, Abar, bbar, R, lift) -> KktSystem:
    """Galerkin projection onto ``span(R)`` with a Dirichlet lift."""
    R = sp.csc_matrix(R)
    A0 = (R.T @ A @ R).tocsr()
    A0 = 0.5 * (A0 + A0.T)
    b0 = R.T @ (b - A @ lift)
    Ac = (Abar @ R).tocsr()
    bbar0 = bbar - Abar @ lift
    return KktSystem(A0, Ac, np.asarray(b0).ravel(), np.asarray(bbar0).ravel(), R, lift)


def check_constraint_rank(Ac, tol: float = 1e-12, max_dense: int = 4_000_000) -> None:
    """Raise :class:`ConstraintRankError` if ``Ac`` lacks full row rank.

    Uses column-pivoted QR of ``Ac^T``; skipped for matrices too large to
    densify (the factorisation in :func:`solve_kkt` still catches singularity).
    """
    m, n = Ac.shape
    if m == 0 or m * n > max_dense:
        return
    if m > n:
        raise ConstraintRankError(f"{m} constraints exceed {n} unknowns", range(n, m))
    dense = Ac.toarray() if sp.issparse(Ac) else np.asarray(Ac)
    _, Rq, piv = sla.qr(dense.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rq))
    bad = d <= tol * max(np.abs(dense).max(), 1e-300)
    if bad.any():
        raise ConstraintRankError(
            f"constraint matrix is rank deficient (rank {int((~bad).sum())} < {m})",
            sorted(int(r) for r in piv[bad]),
        )


def solve_kkt(sys: KktSystem, check_rank: bool = True, refine: int = 1) -> PressureSolution:
    """Solve ``[[A0, Ac^T], [Ac, 0]] [u; lam] = [b0; bbar0]``."""
    if check_rank:
        check_constraint_rank(sys.Ac)
    n, m = sys.n_unknowns, sys.n_constraints
    K = sys.matrix()
    rhs = np.concatenate([sys.b0, sys.bbar0])
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular KKT factorisation: {exc}") from exc
    x = lu.solve(rhs)
    for _ in range(refine):
        x += lu.solve(rhs - K @ x)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("KKT solve produced non-finite values")
    u, lam = x[:n], x[n:]
    stat = sys.A0 @ u + sys.Ac.T @ lam - sys.b0
    cres = sys.Ac @ u - sys.bbar0
    p = sys.R @ u + sys.lift
    diag = {
        "stationarity_residual": float(np.linalg.norm(stat)),
        "stationarity_scale": float(np.linalg.norm(sys.b0)),
        "constraint_residual_max": float(np.abs(cres).max(initial=0.0)),
        "n_unknowns": n,
        "n_constraints": m,
        "reported_size": sys.reported_size,
    }
    return PressureSolution(p, u, lam, diag)


def solve_galerkin(sys: KktSystem) -> PressureSolution:
    """Unconstrained Ritz-Galerkin solve on the same space (constraints ignored)."""
    u = spla.spsolve(sys.A0.tocsc(), sys.b0)
    u = np.atleast_1d(u)
    p = sys.R @ u + sys.lift
    cres = sys.Ac @ u - sys.bbar0
    return PressureSolution(p, u, None, {
        "constraint_residual_max": float(np.abs(cres).max(initial=0.0)),
        "n_unknowns": sys.n_unknowns,
        "n_constraints": 0,
    })


# -- assembling the coarse problem -----------------------------------------

def free_dofs_and_lift(space: CoarseSpace, bc: BoundaryConditions) -> tuple[np.ndarray, np.ndarray]:
    """Columns whose node is not on the Dirichlet boundary, and the lift.

    The lift interpolates the Dirichlet data at coarse nodes with the
    partition-of-unity functions of Dirichlet coarse nodes.
    """
    cg = space.coarse
    fg = cg.fine
    dmask_f = bc.dirichlet_mask(fg)
    dvals_f = bc.dirichlet_values(fg)
    node_f = cg.fine_node(np.arange(cg.n_nodes))
    dnodes = np.flatnonzero(dmask_f[node_f])
    lift = space.pou.chi[:, dnodes] @ dvals_f[node_f[dnodes]]
    free = np.flatnonzero(~dmask_f[node_f[space.dof_node]])
    return free, np.asarray(lift).ravel()


def coarse_system(space: CoarseSpace, k, mobility, sources: SourceField | None,
                  bc: BoundaryConditions, volumes=None) -> tuple[KktSystem, np.ndarray]:
    """Assemble and project the constrained problem on ``space``.

    Constraints are imposed on the coarse dual volumes (or ``volumes`` when
    given). Returns the system and the indices of the retained volumes.
    """
    cg = space.coarse
    fg = cg.fine
    if volumes is None:
        volumes = control_volumes(cg)
    A = assemble_stiffness(fg, k, mobility)
    b = assemble_load(fg, sources, bc)
    Abar, bbar, kept = assemble_constraints(fg, k, mobility, volumes, sources, bc)
    free, lift = free_dofs_and_lift(space, bc)
    sys = project(A, b, Abar, bbar, space.R[:, free], lift)
    sys.reported_dim = space.dim
    sys.reported_constraints = len(volumes)
    return sys, kept


def energy(p: np.ndarray, A, b) -> float:
    """``J(v) = 1/2 a(v, v) - F(v) + <g_N, v>`` in matrix form."""
    return float(0.5 * p @ (A @ p) - b @ p)


# -- classical fine finite volumes -------------------------------------------

def solve_fine_fv(fg: FineGrid, k, mobility, sources: SourceField | None,
                  bc: BoundaryConditions) -> PressureSolution:
    """Vertex-centred FV: one balance per non-Dirichlet fine dual volume."""
    G = fine_flux_matrix(fg, k, mobility).tocsr()
    dmask = bc.dirichlet_mask(fg)
    pd = bc.dirichlet_values(fg)
    free = np.flatnonzero(~dmask)
    rhs = -bc.neumann_outflow(fg)
    if sources is not None:
        rhs = rhs + node_source(fg, sources.q)
    Gff = G[free][:, free].tocsc()
    r = rhs[free] - G[free] @ pd
    if free.size == fg.n_nodes:
        raise np.linalg.LinAlgError("pure Neumann problem: pin a pressure with a Dirichlet side")
    try:
        pf = spla.splu(Gff).solve(r)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular finite volume system: {exc}") from exc
    p = pd.copy()
    p[free] = pf
    res = G[free] @ p - rhs[free]
    return PressureSolution(p, None, None, {
        "constraint_residual_max": float(np.abs(res).max(initial=0.0)),
        "n_unknowns": int(free.size),
        "reported_size": 2 * fg.n_nodes,
    })


def conservation_residual(p: np.ndarray, fg: FineGrid, k, mobility, volumes, sources,
                          bc: BoundaryConditions) -> np.ndarray:
    """Flux balance residual of ``p`` on every retained volume."""
    Abar, bbar, _ = assemble_constraints(fg, k, mobility, volumes, sources, bc)
    return Abar @ p - bbar
