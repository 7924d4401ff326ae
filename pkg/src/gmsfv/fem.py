"""Fine-scale assembly with bilinear quadrilateral elements.

Stiffness and mass matrices, load vectors, boundary data, and the flux
functionals over dual control volumes that serve as mass-conservation
constraints.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .field import SourceField, cellwise
from .mesh import SIDES, ControlVolume, FineGrid

GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def shape_values(xi, eta) -> np.ndarray:
    """Bilinear shape functions on the reference square [0, 1]^2, shape (..., 4)."""
    xi, eta = np.asarray(xi, dtype=float), np.asarray(eta, dtype=float)
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def shape_gradients(xi, eta, hx: float, hy: float) -> np.ndarray:
    """Physical gradients of the four shape functions, shape (..., 4, 2)."""
    xi, eta = np.asarray(xi, dtype=float), np.asarray(eta, dtype=float)
    dx = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1) / hx
    dy = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1) / hy
    return np.stack([dx, dy], axis=-1)


def gauss_points():
    xi, eta = np.meshgrid(GAUSS_1D, GAUSS_1D)
    return xi.ravel(), eta.ravel(), np.full(4, 0.25)


@lru_cache(maxsize=16)
def element_matrices(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-coefficient element stiffness and mass on an ``hx`` x ``hy`` cell (2x2 Gauss).

    Cached; the returned arrays are read-only.
    """
    xi, eta, w = gauss_points()
    G = shape_gradients(xi, eta, hx, hy)
    N = shape_values(xi, eta)
    area = hx * hy
    K = np.einsum("q,qai,qbi->ab", w, G, G) * area
    M = np.einsum("q,qa,qb->ab", w, N, N) * area
    K.flags.writeable = False
    M.flags.writeable = False
    return K, M


@lru_cache(maxsize=16)
def grid_cell_nodes(mx: int, my: int) -> np.ndarray:
    """Cell connectivity for an ``mx`` x ``my`` sub-grid with its own row-major numbering (read-only)."""
    i, j = np.meshgrid(np.arange(mx), np.arange(my))
    n00 = (j * (mx + 1) + i).ravel()
    c = np.stack([n00, n00 + 1, n00 + mx + 2, n00 + mx + 1], axis=1)
    c.flags.writeable = False
    return c


def assemble_cells(cell_nodes: np.ndarray, elem: np.ndarray, coef: np.ndarray,
                   n: int) -> sp.csr_matrix:
    rows = np.repeat(cell_nodes, 4, axis=1).ravel()
    cols = np.tile(cell_nodes, (1, 4)).ravel()
    vals = (coef[:, None] * elem.ravel()[None, :]).ravel()
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    A.eliminate_zeros()
    return A


def assemble_stiffness(fg: FineGrid, k, mobility=None) -> sp.csr_matrix:
    """Global stiffness of ``a(u, v) = int mobility * k grad u . grad v``, no BCs applied."""
    coef = cellwise(fg, k)
    if mobility is not None:
        coef = coef * cellwise(fg, mobility)
    if np.any(coef < 0):
        raise ValueError("stiffness coefficient must be non-negative")
    K, _ = element_matrices(fg.hx, fg.hy)
    return assemble_cells(fg.cell_nodes, K, coef, fg.n_nodes)


def assemble_weighted_mass(fg: FineGrid, weight) -> sp.csr_matrix:
    w = cellwise(fg, weight)
    if np.any(w <= 0):
        raise ValueError("mass weight must be positive")
    _, M = element_matrices(fg.hx, fg.hy)
    return assemble_cells(fg.cell_nodes, M, w, fg.n_nodes)


# -- boundary conditions ----------------------------------------------------

@dataclass
class BoundaryConditions:
    """Dirichlet pressures and Neumann outward fluxes, per side of the square.

    ``dirichlet[side]`` is a constant or one value per node along the side;
    ``neumann[side]`` is a constant or one value per fine edge along the side.
    Sides listed in neither are no-flow. Corner nodes touching a Dirichlet
    side are Dirichlet nodes.
    """

    dirichlet: dict = field(default_factory=dict)
    neumann: dict = field(default_factory=dict)

    def __post_init__(self):
        for side in (*self.dirichlet, *self.neumann):
            if side not in SIDES:
                raise ValueError(f"unknown side {side!r}")
        both = set(self.dirichlet) & set(self.neumann)
        if both:
            raise ValueError(f"sides {sorted(both)} are both Dirichlet and Neumann")

    @classmethod
    def left_right(cls, p_left: float = 1.0, p_right: float = 0.0) -> "BoundaryConditions":
        """Pressure drop from left to right, no flow on top and bottom."""
        return cls(dirichlet={"left": p_left, "right": p_right})

    def dirichlet_mask(self, fg: FineGrid) -> np.ndarray:
        mask = np.zeros(fg.n_nodes, dtype=bool)
        for side in self.dirichlet:
            mask[fg.side_nodes(side)] = True
        return mask

    def dirichlet_values(self, fg: FineGrid) -> np.ndarray:
        vals = np.zeros(fg.n_nodes)
        for side in ("bottom", "top", "left", "right"):
            if side in self.dirichlet:
                nodes = fg.side_nodes(side)
                vals[nodes] = np.broadcast_to(np.asarray(self.dirichlet[side], dtype=float), nodes.shape)
        return vals

    def edge_flux(self, fg: FineGrid, side: str) -> np.ndarray:
        n_edges = fg.ny if side in ("left", "right") else fg.nx
        g = self.neumann.get(side, 0.0)
        if side in self.dirichlet:
            g = 0.0
        return np.broadcast_to(np.asarray(g, dtype=float), (n_edges,)).astype(float)

    def neumann_outflow(self, fg: FineGrid) -> np.ndarray:
        """Per node, ``int g_N`` over the Neumann part of its dual-volume boundary."""
        out = np.zeros(fg.n_nodes)
        for side in SIDES:
            if side in self.dirichlet:
                continue
            g = self.edge_flux(fg, side) * (0.5 * fg.side_edge_length(side))
            nodes = fg.side_nodes(side)
            np.add.at(out, nodes[:-1], g)
            np.add.at(out, nodes[1:], g)
        return out


def assemble_load(fg: FineGrid, sources: SourceField | None, bc: BoundaryConditions) -> np.ndarray:
    """``int q phi_j - int_{Gamma_N} g_N phi_j`` for every fine node."""
    b = -bc.neumann_outflow(fg)
    if sources is not None:
        # int_cell phi_j = hx*hy/4 for each of the cell's nodes
        contrib = np.repeat(sources.q * (0.25 * fg.hx * fg.hy), 4)
        b += np.bincount(fg.cell_nodes.ravel(), weights=contrib, minlength=fg.n_nodes)
    return b


def node_source(fg: FineGrid, q) -> np.ndarray:
    """``int_{V_n} q`` over every fine dual volume for a cell-wise ``q``."""
    q = cellwise(fg, q)
    contrib = np.repeat(q * (0.25 * fg.hx * fg.hy), 4)
    return np.bincount(fg.cell_nodes.ravel(), weights=contrib, minlength=fg.n_nodes)


# -- flux functionals -------------------------------------------------------

def _segment_stencil(hx: float, hy: float) -> np.ndarray:
    """(4 kinds, 4 local nodes) unit-coefficient flux weights, midpoint rule.

    Row ``kind`` gives ``-int grad v . n`` over that segment in its
    reference orientation when ``v`` has nodal values on the cell.
    """
    a, b = 0.75, 0.25
    cx = 0.5 * hy / hx
    cy = 0.5 * hx / hy
    return np.array([
        [a * cx, -a * cx, -b * cx, b * cx],     # lower vertical, +x
        [b * cx, -b * cx, -a * cx, a * cx],     # upper vertical, +x
        [a * cy, b * cy, -b * cy, -a * cy],     # left horizontal, +y
        [b * cy, a * cy, -a * cy, -b * cy],     # right horizontal, +y
    ])


def segment_coefficients(fg: FineGrid, k, mobility=None) -> np.ndarray:
    coef = cellwise(fg, k)
    if mobility is not None:
        coef = coef * cellwise(fg, mobility)
    return np.repeat(coef, 4)


def segment_operator(fg: FineGrid, k=1.0, mobility=None) -> sp.csr_matrix:
    """Sparse (n_segments, n_nodes) map from nodal pressure to segment fluxes."""
    st = _segment_stencil(fg.hx, fg.hy)
    coef = segment_coefficients(fg, k, mobility)
    rows = np.repeat(np.arange(fg.n_segments), 4)
    cols = np.repeat(fg.cell_nodes, 4, axis=0).ravel()
    vals = (np.tile(st, (fg.n_cells, 1)) * coef[:, None]).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(fg.n_segments, fg.n_nodes))


def segment_fluxes(fg: FineGrid, p: np.ndarray, k=1.0, mobility=None) -> np.ndarray:
    """Flux of ``-mobility*k*grad p`` through every dual segment."""
    st = _segment_stencil(fg.hx, fg.hy)
    pc = np.asarray(p)[fg.cell_nodes]                # (n_cells, 4)
    f = pc @ st.T                                     # (n_cells, 4 kinds)
    return f.ravel() * segment_coefficients(fg, k, mobility)


@lru_cache(maxsize=8)
def incidence(fg: FineGrid) -> sp.csr_matrix:
    """(n_nodes, n_segments): +1 at the segment's source node, -1 at its target."""
    sn = fg.segment_nodes
    s = np.arange(fg.n_segments)
    rows = np.concatenate([sn[:, 0], sn[:, 1]])
    cols = np.concatenate([s, s])
    vals = np.concatenate([np.ones(fg.n_segments), -np.ones(fg.n_segments)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(fg.n_nodes, fg.n_segments))


def fine_flux_matrix(fg: FineGrid, k=1.0, mobility=None) -> sp.csr_matrix:
    """Net interior outflow of every fine dual volume as a function of nodal pressure."""
    return (incidence(fg) @ segment_operator(fg, k, mobility)).tocsr()


def flux_row(fg: FineGrid, k, mobility, V: ControlVolume) -> sp.csr_matrix:
    """Row ``rho`` with ``rho @ v = int_{dV} -mobility*k grad v . n``.

    Only interior segments count; pieces on the domain boundary belong to the
    boundary data. Built by evaluating shape-function gradients at each
    segment midpoint.
    """
    coef = cellwise(fg, k)
    if mobility is not None:
        coef = coef * cellwise(fg, mobility)
    row = np.zeros(fg.n_nodes)
    for seg in V.segments:
        ci, cj = fg.cell_ij(seg.cell)
        xi = seg.midpoint[0] / fg.hx - ci
        eta = seg.midpoint[1] / fg.hy - cj
        if not (0 <= xi <= 1 and 0 <= eta <= 1):
            raise ValueError(f"segment {seg} does not lie in its cell")
        g = shape_gradients(xi, eta, fg.hx, fg.hy)   # (4, 2)
        row[fg.cell_nodes[seg.cell]] -= coef[seg.cell] * seg.length * (g @ np.asarray(seg.normal))
    return sp.csr_matrix(row)


def aggregation(volumes: list[ControlVolume], fg: FineGrid) -> sp.csr_matrix:
    """(n_volumes, n_nodes) 0/1 matrix of fine nodes contained in each volume."""
    rows, cols = [], []
    for r, V in enumerate(volumes):
        nodes = V.fine_nodes(fg)
        rows.append(np.full(nodes.size, r))
        cols.append(nodes)
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(len(volumes), fg.n_nodes))


def retained_volumes(volumes: list[ControlVolume], fg: FineGrid, bc: BoundaryConditions) -> np.ndarray:
    """Indices of volumes whose owner node is not a Dirichlet node."""
    mask = bc.dirichlet_mask(fg)
    return np.array([n for n, V in enumerate(volumes)
                     if not mask[V.center]], dtype=int)


def assemble_constraints(fg: FineGrid, k, mobility, volumes: list[ControlVolume],
                         sources: SourceField | None, bc: BoundaryConditions):
    """Flux-constraint matrix and right-hand side over the retained volumes.

    Returns ``(Abar, bbar, kept)``: one row per volume not centred on a
    Dirichlet node, ``Abar @ p`` the net interior outflow and
    ``bbar = int_V q - int_{dV cap Gamma_N} g_N``.
    """
    kept = retained_volumes(volumes, fg, bc)
    P = aggregation([volumes[n] for n in kept], fg)
    Abar = (P @ fine_flux_matrix(fg, k, mobility)).tocsr()
    Abar.eliminate_zeros()
    rhs = -bc.neumann_outflow(fg)
    if sources is not None:
        rhs = rhs + node_source(fg, sources.q)
    bbar = P @ rhs
    return Abar, bbar, kept
