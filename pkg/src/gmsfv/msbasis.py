"""GMsFEM coarse space: multiscale partition of unity plus spectral enrichment.

Each coarse node ``i`` gets a k-harmonic partition-of-unity function
``chi_i`` and ``L_i`` eigenvectors ``psi_l`` of a local Neumann eigenproblem
on its neighborhood; the coarse basis is the set of products
``chi_i * psi_l`` sampled on fine nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import assemble_cells, element_matrices, gauss_points, grid_cell_nodes, shape_gradients
from .field import cellwise
from .mesh import CoarseGrid, FineGrid, Neighborhood, neighborhood


@dataclass
class PartitionOfUnity:
    coarse: CoarseGrid
    chi: sp.csc_matrix  # (n_fine_nodes, n_coarse_nodes)

    def column(self, i: int) -> np.ndarray:
        return self.chi[:, i].toarray().ravel()


def _local_grid_matrix(k_local: np.ndarray, mx: int, my: int, hx: float, hy: float,
                       which: str = "stiffness") -> sp.csr_matrix:
    K, M = element_matrices(hx, hy)
    elem = K if which == "stiffness" else M
    return assemble_cells(grid_cell_nodes(mx, my), elem, k_local, (mx + 1) * (my + 1))


def solve_pou(cg: CoarseGrid, k) -> PartitionOfUnity:
    """k-harmonic extension of bilinear hat traces, one coarse cell at a time."""
    fg = cg.fine
    kc = cellwise(fg, k)
    rx, ry = cg.rx, cg.ry
    a, b = np.meshgrid(np.arange(rx + 1) / rx, np.arange(ry + 1) / ry)
    a, b = a.ravel(), b.ravel()
    hats = np.stack([(1 - a) * (1 - b), a * (1 - b), a * b, (1 - a) * b], axis=1)
    bmask = (a == 0) | (a == 1) | (b == 0) | (b == 1)
    inner = np.flatnonzero(~bmask)
    outer = np.flatnonzero(bmask)

    rows, cols, vals = [], [], []
    for c in range(cg.n_cells):
        cells = cg.cell_fine_cells(c)
        nodes = cg.cell_fine_nodes(c)
        X = hats.copy()
        if inner.size:
            A = _local_grid_matrix(kc[cells], rx, ry, fg.hx, fg.hy).tocsc()
            Aii = A[inner][:, inner]
            rhs = -(A[inner][:, outer] @ hats[outer])
            X[inner] = sp.linalg.spsolve(Aii, rhs).reshape(inner.size, 4)
        I, J = (int(v) for v in cg.cell_ij(c))
        corners = cg.node(np.array([I, I + 1, I + 1, I]), np.array([J, J, J + 1, J + 1]))
        for q in range(4):
            rows.append(nodes)
            cols.append(np.full(nodes.size, corners[q]))
            vals.append(X[:, q])
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    # nodes on shared coarse edges are visited once per adjacent cell with
    # identical boundary data; keep a single copy
    key = rows.astype(np.int64) * cg.n_nodes + cols
    _, first = np.unique(key, return_index=True)
    chi = sp.csc_matrix((vals[first], (rows[first], cols[first])),
                        shape=(fg.n_nodes, cg.n_nodes))
    chi.eliminate_zeros()
    return PartitionOfUnity(cg, chi)


def ktilde(cg: CoarseGrid, k, pou: PartitionOfUnity) -> np.ndarray:
    """Per-cell ``k * sum_j H^2 |grad chi_j|^2`` with Gauss-point averaged gradients."""
    fg = cg.fine
    kc = cellwise(fg, k)
    xi, eta, w = gauss_points()
    G = shape_gradients(xi, eta, fg.hx, fg.hy)             # (q, 4, 2)
    chi = pou.chi.tocsr()
    owner = cg.fine_cell_owner
    I, J = cg.cell_ij(owner)
    total = np.zeros(fg.n_cells)
    for corner in ((0, 0), (1, 0), (1, 1), (0, 1)):
        j_node = cg.node(I + corner[0], J + corner[1])      # (n_cells,)
        vals = np.asarray(chi[fg.cell_nodes.ravel(), np.repeat(j_node, 4)]).reshape(-1, 4)
        grad = np.einsum("qad,ca->cqd", G, vals)            # (cells, q, 2)
        total += np.einsum("q,cqd,cqd->c", w, grad, grad)
    return kc * cg.Hx * cg.Hy * total


@dataclass
class SpectralBasis:
    node: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n_local_nodes, L), M-orthonormal


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    s[s == 0] = 1.0
    return vecs * s


def local_matrices(ngbh: Neighborhood, fg: FineGrid, k, kt) -> tuple[np.ndarray, np.ndarray]:
    """Dense Neumann stiffness (weight ``k``) and mass (weight ``kt``) on ``omega_i``."""
    mx, my = ngbh.shape
    kc = cellwise(fg, k)[ngbh.fine_cells]
    wc = cellwise(fg, kt)[ngbh.fine_cells]
    Ke, Me = element_matrices(fg.hx, fg.hy)
    cn = grid_cell_nodes(mx, my)
    n = (mx + 1) * (my + 1)
    idx = (np.repeat(cn, 4, axis=1).ravel(), np.tile(cn, (1, 4)).ravel())
    A = np.zeros((n, n))
    M = np.zeros((n, n))
    np.add.at(A, idx, (kc[:, None] * Ke.ravel()).ravel())
    np.add.at(M, idx, (wc[:, None] * Me.ravel()).ravel())
    return A, M


def local_eig(ngbh: Neighborhood, fg: FineGrid, k, kt, count: int) -> SpectralBasis:
    """``count`` smallest pairs of ``A psi = sigma M psi`` on the neighborhood."""
    n = ngbh.fine_nodes.size
    if count < 1:
        raise ValueError("need at least one eigenpair")
    if count > n:
        raise ValueError(f"requested {count} eigenpairs but omega_{ngbh.node} has {n} nodes")
    A, M = local_matrices(ngbh, fg, k, kt)
    vals, vecs = sla.eigh(A, M, subset_by_index=[0, count - 1])
    vecs = _fix_signs(vecs)
    return SpectralBasis(ngbh.node, vals, vecs)


@dataclass
class CoarseSpace:
    """Coarse basis ``R`` (fine nodes x coarse dofs) with its bookkeeping."""

    coarse: CoarseGrid
    pou: PartitionOfUnity
    R: sp.csc_matrix
    dof_node: np.ndarray      # coarse node owning each column
    dof_mode: np.ndarray      # eigenvector index (0-based) of each column
    spectra: list[SpectralBasis] = field(repr=False)
    ktilde: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.R.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.dof_node, minlength=self.coarse.n_nodes)

    def gram_rank(self, rtol: float = 1e-10) -> int:
        G = (self.R.T @ self.R).toarray()
        s = np.linalg.eigvalsh(G)
        return int(np.sum(s > rtol * s.max()))


def enrichment_counts(cg: CoarseGrid, L_interior: int) -> np.ndarray:
    """Interior coarse nodes get ``L_interior`` functions, boundary nodes one."""
    return np.where(cg.is_interior(np.arange(cg.n_nodes)), L_interior, 1)


def build_coarse_space(cg: CoarseGrid, k, L_interior: int, check_rank: bool = False) -> CoarseSpace:
    return build_coarse_spaces(cg, k, [L_interior], check_rank)[L_interior]


def build_coarse_spaces(cg: CoarseGrid, k, levels, check_rank: bool = False) -> dict[int, CoarseSpace]:
    """Spaces for several enrichment levels from one set of local eigensolves.

    The partition of unity and the spectra (up to the largest level) are
    computed once; each level keeps the leading eigenvectors per node.
    """
    levels = sorted(set(int(L) for L in levels))
    if not levels or levels[0] < 1:
        raise ValueError("L_interior must be >= 1")
    fg = cg.fine
    pou = solve_pou(cg, k)
    kt = ktilde(cg, k, pou)
    counts = enrichment_counts(cg, levels[-1])
    ngbhs = [neighborhood(cg, i) for i in range(cg.n_nodes)]
    spectra = [local_eig(ngbhs[i], fg, k, kt, int(counts[i])) for i in range(cg.n_nodes)]
    return {L: _assemble_space(cg, pou, kt, ngbhs, spectra, L, check_rank) for L in levels}


def _truncate(sb: SpectralBasis, count: int) -> SpectralBasis:
    return SpectralBasis(sb.node, sb.eigenvalues[:count], sb.eigenvectors[:, :count])


def _assemble_space(cg: CoarseGrid, pou: PartitionOfUnity, kt: np.ndarray, ngbhs: list,
                    spectra: list, L_interior: int, check_rank: bool) -> CoarseSpace:
    fg = cg.fine
    counts = enrichment_counts(cg, L_interior)
    chi = pou.chi.tocsc()
    rows, cols, vals, dnode, dmode, kept = [], [], [], [], [], []
    col = 0
    for i in range(cg.n_nodes):
        sb = _truncate(spectra[i], int(counts[i]))
        kept.append(sb)
        # nonzeros of chi_i, which lie inside omega_i
        lo, hi = chi.indptr[i], chi.indptr[i + 1]
        support, chi_i = chi.indices[lo:hi], chi.data[lo:hi]
        loc = ngbhs[i].local_index(support)
        for ell in range(sb.eigenvectors.shape[1]):
            rows.append(support)
            cols.append(np.full(support.size, col))
            vals.append(chi_i * sb.eigenvectors[loc, ell])
            dnode.append(i)
            dmode.append(ell)
            col += 1
    R = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(fg.n_nodes, col))
    space = CoarseSpace(cg, pou, R, np.array(dnode), np.array(dmode), kept, kt)
    if check_rank:
        rank = space.gram_rank()
        if rank < space.dim:
            raise np.linalg.LinAlgError(f"coarse basis is rank deficient: rank {rank} < dim {space.dim}")
    return space


def reported_dimension(cg: CoarseGrid, L_interior: int) -> int:
    return int(enrichment_counts(cg, L_interior).sum())


def save_basis(space: CoarseSpace, directory, columns=None) -> list:
    """Write selected basis columns in the field file format, one file each."""
    from pathlib import Path

    from .field import write_values

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cols = range(space.dim) if columns is None else columns
    paths = []
    for c in cols:
        path = d / f"basis_node{space.dof_node[c]}_mode{space.dof_mode[c] + 1}.txt"
        write_values(path, space.R[:, c].toarray().ravel())
        paths.append(path)
    return paths
