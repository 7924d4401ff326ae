"""Fine-scale conservative fluxes from a coarse conservative pressure.

Every coarse control volume gets an independent fine finite-volume problem.
Normal fluxes on its boundary are taken from the coarse pressure. Those are
the quantities the coarse constraints balance, so each local Neumann problem
is compatible. Segments on a coarse-volume interface therefore carry a single
value shared by both neighbours.

Segment fluxes are stored once per dual segment, oriented from the first to
the second node of the segment (``FineGrid.segment_nodes``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (BoundaryConditions, _segment_stencil, incidence, node_source,
                  segment_coefficients, segment_fluxes)
from .field import SourceField
from .mesh import CoarseGrid, ControlVolume, FineGrid, control_volumes

COMPAT_TOL = 1e-9
LOCAL_COMPAT_TOL = 1e-8

# edge-adjacent local nodes within a cell (0:(0,0) 1:(1,0) 2:(1,1) 3:(0,1))
_EDGE_NEIGHBOURS = ((1, 3), (0, 2), (1, 3), (0, 2))


class IncompatibleFluxError(ValueError):
    """Boundary data of a local Neumann problem do not balance its sources."""


@dataclass
class FluxField:
    """Normal fluxes on fine dual segments plus outflow through the domain boundary.

    ``seg_flux[s]`` is the flux across segment ``s`` from its first node's
    volume into its second node's volume; ``boundary[n]`` is the outflow of
    fine volume ``n`` across the domain boundary.
    """

    grid: FineGrid
    seg_flux: np.ndarray
    boundary: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.seg_flux = np.asarray(self.seg_flux, dtype=float)
        self.boundary = np.asarray(self.boundary, dtype=float)
        if self.seg_flux.shape != (self.grid.n_segments,) or self.boundary.shape != (self.grid.n_nodes,):
            raise ValueError("flux arrays do not match the grid")
        if not (np.all(np.isfinite(self.seg_flux)) and np.all(np.isfinite(self.boundary))):
            raise ValueError("non-finite flux")

    def net_outflow(self) -> np.ndarray:
        """Net outflow of every fine dual volume."""
        return incidence(self.grid) @ self.seg_flux + self.boundary

    def conservation_residual(self, sources: SourceField | None = None) -> np.ndarray:
        r = self.net_outflow()
        if sources is not None:
            r = r - node_source(self.grid, sources.q)
        return r

    def dump(self, path) -> None:
        """Text dump: one ``index from to flux`` line per segment, then boundary outflows."""
        fg = self.grid
        sn = fg.segment_nodes
        lines = [
            f"# nx={fg.nx} ny={fg.ny} segments={fg.n_segments} nodes={fg.n_nodes}",
            "# segment index = 4*cell + kind; flux positive from node 'from' to node 'to'",
            "# columns: index from to flux",
        ]
        lines += [f"{s} {sn[s, 0]} {sn[s, 1]} {float(self.seg_flux[s])!r}" for s in range(fg.n_segments)]
        lines.append("# boundary outflow per node: node flux")
        lines += [f"{n} {float(self.boundary[n])!r}" for n in np.flatnonzero(fg.boundary_mask)]
        Path(path).write_text("\n".join(lines) + "\n")


def load_flux(path, fg: FineGrid) -> FluxField:
    seg = np.zeros(fg.n_segments)
    bnd = np.zeros(fg.n_nodes)
    in_boundary = False
    for line in Path(path).read_text().splitlines():
        if line.startswith("# boundary"):
            in_boundary = True
            continue
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if in_boundary:
            bnd[int(tok[0])] = float(tok[1])
        else:
            seg[int(tok[0])] = float(tok[3])
    return FluxField(fg, seg, bnd)


def coarse_boundary_flux(p_fv: np.ndarray, V: ControlVolume, fg: FineGrid, k, mobility=None):
    """Outward flux of ``-mobility*k*grad p_fv`` across each interior segment of ``dV``.

    Returns ``(segment indices, outward fluxes)``; the sum equals ``flux_row @ p_fv``.
    """
    idx = np.array([s.index for s in V.segments], dtype=int)
    sign = np.array([s.sign for s in V.segments], dtype=float)
    if idx.size == 0:
        return idx, np.zeros(0)
    f = segment_fluxes(fg, p_fv, k, mobility)
    return idx, sign * f[idx]


def fine_flux_field(fg: FineGrid, p: np.ndarray, k, mobility, sources: SourceField | None,
                    bc: BoundaryConditions) -> FluxField:
    """Flux field of a fine-grid pressure; Dirichlet outflows close each volume's balance."""
    seg = segment_fluxes(fg, p, k, mobility)
    bnd = bc.neumann_outflow(fg)
    dmask = bc.dirichlet_mask(fg)
    rhs = node_source(fg, sources.q) if sources is not None else np.zeros(fg.n_nodes)
    interior = incidence(fg) @ seg
    bnd[dmask] = rhs[dmask] - interior[dmask] - bnd[dmask]
    return FluxField(fg, seg, bnd)


@dataclass
class _LocalProblem:
    volume: int
    nodes: np.ndarray          # global fine nodes, sorted
    int_segs: np.ndarray       # segments with both nodes in the volume
    int_from: np.ndarray       # local indices
    int_to: np.ndarray
    eff_nodes: np.ndarray      # (n_int, 4) local node standing in for each cell node
    cell_nodes: np.ndarray     # (n_int, 4) global cell nodes
    partners: np.ndarray       # (n_int, 4) global node each cell node is measured from
    bnd_segs: np.ndarray       # segments crossing the volume boundary
    bnd_local: np.ndarray      # local node on the inner side
    bnd_sign: np.ndarray       # +1 if the stored orientation points outward
    dirichlet: np.ndarray      # local indices of Dirichlet fine nodes
    constrained: bool          # compatibility is guaranteed (volume not on a Dirichlet node)


def _prepare(fg: FineGrid, dmask: np.ndarray, n: int, V: ControlVolume) -> _LocalProblem:
    nodes = np.sort(V.fine_nodes(fg))
    inside = np.zeros(fg.n_nodes, dtype=bool)
    inside[nodes] = True
    loc = np.full(fg.n_nodes, -1, dtype=int)
    loc[nodes] = np.arange(nodes.size)

    # candidate segments: those of cells touching the volume
    ci0, ci1 = max(V.i_range[0] - 1, 0), min(V.i_range[1], fg.nx - 1)
    cj0, cj1 = max(V.j_range[0] - 1, 0), min(V.j_range[1], fg.ny - 1)
    ci, cj = np.meshgrid(np.arange(ci0, ci1 + 1), np.arange(cj0, cj1 + 1))
    cells = fg.cell(ci.ravel(), cj.ravel())
    segs = (4 * cells[:, None] + np.arange(4)).ravel()
    sn = fg.segment_nodes[segs]
    a_in, b_in = inside[sn[:, 0]], inside[sn[:, 1]]
    int_segs = segs[a_in & b_in]
    cross = a_in ^ b_in
    bnd_segs = segs[cross]
    bnd_sign = np.where(a_in[cross], 1.0, -1.0)
    bnd_local = loc[np.where(a_in[cross], sn[cross, 0], sn[cross, 1])]

    cn = fg.cell_nodes[int_segs // 4]                  # (n_int, 4)
    partners = cn.copy()
    for r in range(cn.shape[0]):
        row_in = inside[cn[r]]
        if row_in.all():
            continue
        for a in np.flatnonzero(~row_in):
            cand = [b for b in _EDGE_NEIGHBOURS[a] if row_in[b]]
            if not cand:                               # diagonal to the only inner node
                cand = list(np.flatnonzero(row_in))
            partners[r, a] = cn[r, cand[0]]
    isn = fg.segment_nodes[int_segs]
    dl = np.flatnonzero(dmask[nodes])
    return _LocalProblem(
        volume=n, nodes=nodes, int_segs=int_segs,
        int_from=loc[isn[:, 0]], int_to=loc[isn[:, 1]],
        eff_nodes=loc[partners], cell_nodes=cn, partners=partners,
        bnd_segs=bnd_segs, bnd_local=bnd_local, bnd_sign=bnd_sign,
        dirichlet=dl, constrained=not dmask[V.center],
    )


class Downscaler:
    """Precomputed local problems for a fixed tiling of the domain by control volumes.

    The geometry is independent of ``k`` and the mobility, so one instance
    serves every pressure solve of a time-dependent run.
    """

    def __init__(self, cg: CoarseGrid | FineGrid, bc: BoundaryConditions, volumes=None):
        fg = cg.fine if isinstance(cg, CoarseGrid) else cg
        self.grid = fg
        self.bc = bc
        self.volumes = control_volumes(cg) if volumes is None else volumes
        self.dirichlet_mask = bc.dirichlet_mask(fg)
        self.dirichlet_values = bc.dirichlet_values(fg)
        self.locals = [_prepare(fg, self.dirichlet_mask, n, V) for n, V in enumerate(self.volumes)]
        covered = np.zeros(fg.n_nodes, dtype=int)
        for lp in self.locals:
            covered[lp.nodes] += 1
        if not np.all(covered == 1):
            raise ValueError("control volumes must tile the fine nodes exactly once")

    # -- solving -------------------------------------------------------------

    def __call__(self, p_fv: np.ndarray, k, mobility=None, sources: SourceField | None = None,
                 check: bool = True) -> FluxField:
        fg = self.grid
        p_fv = np.asarray(p_fv, dtype=float)
        coef = segment_coefficients(fg, k, mobility)
        coarse_seg = segment_fluxes(fg, p_fv, k, mobility)
        q_node = node_source(fg, sources.q) if sources is not None else np.zeros(fg.n_nodes)
        neu = self.bc.neumann_outflow(fg)
        st = _segment_stencil(fg.hx, fg.hy)

        seg = np.zeros(fg.n_segments)
        bnd = neu.copy()
        worst_compat = 0.0
        for lp in self.locals:
            # prescribed coarse data on crossing segments
            seg[lp.bnd_segs] = coarse_seg[lp.bnd_segs]
            f_int, dflux, compat = _solve_local(lp, p_fv, coef, st, coarse_seg, q_node, neu,
                                                self.dirichlet_values, check)
            seg[lp.int_segs] = f_int
            if lp.dirichlet.size:
                bnd[lp.nodes[lp.dirichlet]] = dflux
            worst_compat = max(worst_compat, compat)
        out = FluxField(fg, seg, bnd)
        res = out.net_outflow() - q_node
        out.diagnostics = {
            "max_fine_conservation_residual": float(np.abs(res).max()),
            "max_compatibility_residual": worst_compat,
            "n_local_problems": len(self.locals),
        }
        return out

def _solve(K, rhs, volume: int) -> np.ndarray:
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular local problem on volume {volume}: {exc}") from exc
    x = lu.solve(rhs)
    x += lu.solve(rhs - K @ x)
    return x


def _solve_local(lp: _LocalProblem, p_fv, coef, st, coarse_seg, q_node, neu, pD, check):
    n_loc = lp.nodes.size
    n_int = lp.int_segs.size
    # data side of each local balance
    rhs = q_node[lp.nodes] - neu[lp.nodes]
    np.subtract.at(rhs, lp.bnd_local, lp.bnd_sign * coarse_seg[lp.bnd_segs])

    W = st[lp.int_segs % 4] * coef[lp.int_segs, None]                    # (n_int, 4)
    offset = np.einsum("sa,sa->s", W, p_fv[lp.cell_nodes] - p_fv[lp.partners])
    rows = np.repeat(np.arange(n_int), 4)
    S = sp.csr_matrix((W.ravel(), (rows, lp.eff_nodes.ravel())), shape=(n_int, n_loc))
    D = sp.csr_matrix((np.concatenate([np.ones(n_int), -np.ones(n_int)]),
                       (np.concatenate([lp.int_from, lp.int_to]),
                        np.tile(np.arange(n_int), 2))), shape=(n_loc, n_int))
    G = (D @ S).tocsr()
    rhs = rhs - D @ offset

    compat = 0.0
    if lp.dirichlet.size == 0:
        scale = max(1.0, float(np.abs(q_node[lp.nodes]).sum() + np.abs(neu[lp.nodes]).sum()
                               + np.abs(coarse_seg[lp.bnd_segs]).sum()))
        compat = abs(float(rhs.sum())) / scale
        tol = COMPAT_TOL if lp.constrained else LOCAL_COMPAT_TOL
        if check and compat > tol:
            raise IncompatibleFluxError(
                f"control volume {lp.volume}: boundary fluxes miss the enclosed source by "
                f"{compat:.3e} (relative), tolerance {tol:.0e}; the coarse pressure does not "
                "satisfy the conservation constraints")
        # pure Neumann: border with the zero-mean condition
        ones = np.ones((n_loc, 1))
        K = sp.bmat([[G, sp.csr_matrix(ones)], [sp.csr_matrix(ones.T), None]], format="csc")
        u = _solve(K, np.concatenate([rhs, [0.0]]), lp.volume)[:n_loc]
        dflux = np.zeros(0)
    else:
        free = np.setdiff1d(np.arange(n_loc), lp.dirichlet)
        u = np.empty(n_loc)
        u[lp.dirichlet] = pD[lp.nodes[lp.dirichlet]]
        if free.size:
            Gf = G[free]
            r = rhs[free] - Gf[:, lp.dirichlet] @ u[lp.dirichlet]
            u[free] = _solve(Gf[:, free].tocsc(), r, lp.volume)
        # Dirichlet outflow closes the balance of those fine volumes
        dflux = (rhs - G @ u)[lp.dirichlet]
    f_int = S @ u + offset
    if lp.dirichlet.size:
        dflux = dflux + neu[lp.nodes[lp.dirichlet]]
    return f_int, dflux, compat


def local_neumann_solve(p_fv: np.ndarray, V: ControlVolume, fg: FineGrid, k, mobility=None,
                        sources: SourceField | None = None, bc: BoundaryConditions | None = None,
                        check: bool = True):
    """Solve the fine FV problem inside one coarse volume with coarse boundary fluxes.

    Returns ``(segments, fluxes)`` for the segments interior to ``V``.
    """
    bc = BoundaryConditions() if bc is None else bc
    lp = _prepare(fg, bc.dirichlet_mask(fg), 0, V)
    coef = segment_coefficients(fg, k, mobility)
    coarse_seg = segment_fluxes(fg, p_fv, k, mobility)
    q_node = node_source(fg, sources.q) if sources is not None else np.zeros(fg.n_nodes)
    f_int, _, _ = _solve_local(lp, np.asarray(p_fv, float), coef, _segment_stencil(fg.hx, fg.hy),
                               coarse_seg, q_node, bc.neumann_outflow(fg), bc.dirichlet_values(fg),
                               check)
    return lp.int_segs, f_int


def downscale_all(p_fv: np.ndarray, cg: CoarseGrid, k, mobility=None,
                  sources: SourceField | None = None, bc: BoundaryConditions | None = None,
                  check: bool = True) -> FluxField:
    """Stitch local solves over every coarse volume into one fine flux field."""
    bc = BoundaryConditions() if bc is None else bc
    return Downscaler(cg, bc)(p_fv, k, mobility, sources, check)
