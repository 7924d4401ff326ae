import numpy as np
import pytest
import scipy.linalg as sla

from gmsfv.fem import assemble_stiffness
from gmsfv.field import Channel, gen_channel_field
from gmsfv.mesh import CoarseGrid, FineGrid, neighborhood
from gmsfv.msbasis import (build_coarse_space, build_coarse_spaces, enrichment_counts, ktilde, local_eig,
                           reported_dimension, save_basis, solve_pou)

from conftest import random_field


def _hat(cg, i):
    fg = cg.fine
    x, y = fg.node_coords
    I, J = cg.node_ij(i)
    return (np.maximum(0, 1 - np.abs(x - I * cg.Hx) / cg.Hx)
            * np.maximum(0, 1 - np.abs(y - J * cg.Hy) / cg.Hy))


def test_pou_reproduces_hats_for_unit_k():
    cg = CoarseGrid(FineGrid(12, 12), 3, 3)
    pou = solve_pou(cg, 1.0)
    for i in range(cg.n_nodes):
        assert np.abs(pou.column(i) - _hat(cg, i)).max() < 1e-10


def test_pou_properties_high_contrast(rng):
    cg = CoarseGrid(FineGrid(20, 20), 4, 4)
    k = random_field(cg.fine, rng, 1e4)
    chi = solve_pou(cg, k).chi.toarray()
    assert np.abs(chi.sum(axis=1) - 1).max() < 1e-10
    assert chi.min() >= -1e-10 and chi.max() <= 1 + 1e-10
    nodes = cg.fine_node(np.arange(cg.n_nodes))
    assert np.allclose(chi[nodes], np.eye(cg.n_nodes), atol=1e-12)


def test_pou_support_in_neighborhood(rng):
    cg = CoarseGrid(FineGrid(12, 12), 3, 3)
    chi = solve_pou(cg, random_field(cg.fine, rng)).chi
    for i in range(cg.n_nodes):
        support = set(chi[:, i].nonzero()[0].tolist())
        assert support <= set(neighborhood(cg, i).fine_nodes.tolist())


def test_pou_flat_along_channel():
    fg = FineGrid(20, 20)
    cg = CoarseGrid(fg, 2, 2)
    k = gen_channel_field(fg, 1.0, 1e4, geometry=[Channel(0.5, 0.1)])
    chan = k.values > 1
    i = int(cg.node(1, 1))
    chi = solve_pou(cg, k).column(i)
    hat = solve_pou(cg, 1.0).column(i)
    A_chan = assemble_stiffness(fg, np.where(chan, k.values, 0.0))
    A = assemble_stiffness(fg, k)
    # k-harmonic extension minimises the k-energy for the hat trace on every
    # coarse cell, and the channel part alone stays below the hat's
    assert chi @ A @ chi <= hat @ A @ hat
    assert chi @ A_chan @ chi <= hat @ A_chan @ hat


def test_ktilde_unit_k_closed_form():
    cg = CoarseGrid(FineGrid(8, 8), 2, 2)
    fg = cg.fine
    kt = ktilde(cg, 1.0, solve_pou(cg, 1.0))
    # for bilinear hats on a coarse cell, sum_j |grad chi_j|^2 at local (a, b)
    # equals ((1-b)^2 + b^2 + (1-a)^2 + a^2) * 2 / H^2 ... averaged over Gauss points
    g = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    xc, yc = fg.cell_centers
    for c in range(fg.n_cells):
        a0 = (xc[c] % cg.Hx - fg.hx / 2) / cg.Hx
        b0 = (yc[c] % cg.Hy - fg.hy / 2) / cg.Hy
        tot = 0.0
        for ga in g:
            for gb in g:
                a, b = a0 + ga * fg.hx / cg.Hx, b0 + gb * fg.hy / cg.Hy
                tot += 0.25 * 2 * ((1 - b) ** 2 + b ** 2 + (1 - a) ** 2 + a ** 2)
        assert kt[c] == pytest.approx(tot, rel=1e-10)


def test_ktilde_scales_with_k(rng):
    cg = CoarseGrid(FineGrid(12, 12), 3, 3)
    k = random_field(cg.fine, rng)
    kt = ktilde(cg, k, solve_pou(cg, k))
    kt2 = ktilde(cg, 7.0 * k, solve_pou(cg, 7.0 * k))
    assert np.all(kt >= 0)
    assert np.allclose(kt2, 7.0 * kt, rtol=1e-9)


def _dense_oracle(ngbh, fg, k, kt):
    """Element-by-element dense assembly written out independently."""
    mx, my = ngbh.shape
    n = (mx + 1) * (my + 1)
    A = np.zeros((n, n))
    M = np.zeros((n, n))
    hx, hy = fg.hx, fg.hy
    Ke = (hy / hx) * np.array([[2, -2, -1, 1], [-2, 2, 1, -1], [-1, 1, 2, -2], [1, -1, -2, 2]]) / 6 \
        + (hx / hy) * np.array([[2, 1, -1, -2], [1, 2, -2, -1], [-1, -2, 2, 1], [-2, -1, 1, 2]]) / 6
    Me = hx * hy * np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36
    for cj in range(my):
        for ci in range(mx):
            gc = ngbh.fine_cells[cj * mx + ci]
            loc = [cj * (mx + 1) + ci, cj * (mx + 1) + ci + 1,
                   (cj + 1) * (mx + 1) + ci + 1, (cj + 1) * (mx + 1) + ci]
            A[np.ix_(loc, loc)] += k[gc] * Ke
            M[np.ix_(loc, loc)] += kt[gc] * Me
    return sla.eigh(A, M, eigvals_only=True)


def test_eigs_match_dense_oracle(rng):
    cg = CoarseGrid(FineGrid(16, 16), 4, 4)
    fg = cg.fine
    k = random_field(fg, rng, 1e3)
    kt = ktilde(cg, k, solve_pou(cg, k))
    ngbh = neighborhood(cg, int(cg.node(2, 2)))
    sb = local_eig(ngbh, fg, k, kt, 6)
    ref = _dense_oracle(ngbh, fg, k, kt)[:6]
    assert np.all(np.abs(sb.eigenvalues[1:] - ref[1:]) <= 1e-8 * np.abs(ref[1:]))
    assert abs(sb.eigenvalues[0]) < 1e-10


def test_eigen_invariants(rng):
    cg = CoarseGrid(FineGrid(12, 12), 3, 3)
    fg = cg.fine
    k = random_field(fg, rng, 1e3)
    kt = ktilde(cg, k, solve_pou(cg, k))
    from gmsfv.msbasis import local_matrices
    for i in (0, int(cg.node(1, 0)), int(cg.node(1, 2))):
        ngbh = neighborhood(cg, i)
        sb = local_eig(ngbh, fg, k, kt, 5)
        assert np.all(np.diff(sb.eigenvalues) >= -1e-12)
        assert sb.eigenvalues[0] < 1e-10
        psi1 = sb.eigenvectors[:, 0]
        assert np.ptp(psi1) < 1e-8 * np.abs(psi1).max()
        _, M = local_matrices(ngbh, fg, k, kt)
        G = sb.eigenvectors.T @ M @ sb.eigenvectors
        assert np.abs(G - np.eye(5)).max() < 1e-8
        # sign convention: largest-magnitude entry positive
        idx = np.argmax(np.abs(sb.eigenvectors), axis=0)
        assert np.all(sb.eigenvectors[idx, np.arange(5)] > 0)


def test_two_channels_give_two_small_eigenvalues():
    fg = FineGrid(16, 16)
    cg = CoarseGrid(fg, 2, 2)
    # two channels crossing the whole neighborhood of the centre node
    k = gen_channel_field(fg, 1.0, 1e6, geometry=[Channel(0.3, 0.07), Channel(0.7, 0.07)])
    kt = ktilde(cg, k, solve_pou(cg, k))
    sb = local_eig(neighborhood(cg, int(cg.node(1, 1))), fg, k, kt, 3)
    s = sb.eigenvalues
    assert s[1] / s[2] <= 1e-3


def test_local_eig_rejects_too_many():
    cg = CoarseGrid(FineGrid(4, 4), 2, 2)
    ngbh = neighborhood(cg, 0)
    with pytest.raises(ValueError):
        local_eig(ngbh, cg.fine, 1.0, np.ones(16), ngbh.fine_nodes.size + 1)


@pytest.mark.parametrize("L, dim", [(1, 121), (2, 202), (4, 364), (6, 526), (8, 688), (10, 850)])
def test_dimension_formula(L, dim):
    cg = CoarseGrid(FineGrid(100, 100), 10, 10)
    assert reported_dimension(cg, L) == dim
    assert enrichment_counts(cg, L).sum() == dim


def test_space_columns_and_rank(tmp_path, rng):
    cg = CoarseGrid(FineGrid(12, 12), 3, 3)
    k = random_field(cg.fine, rng, 1e3)
    space = build_coarse_space(cg, k, 3, check_rank=True)
    assert space.dim == 16 + 4 * 2
    assert space.gram_rank() == space.dim
    for c in range(space.dim):
        support = set(space.R[:, c].nonzero()[0].tolist())
        assert support <= set(neighborhood(cg, int(space.dof_node[c])).fine_nodes.tolist())
    paths = save_basis(space, tmp_path, columns=[0, 5])
    assert all(p.exists() for p in paths)


def test_space_is_deterministic(rng):
    cg = CoarseGrid(FineGrid(12, 12), 3, 3)
    k = random_field(cg.fine, rng, 1e3)
    a = build_coarse_space(cg, k, 2).R.toarray()
    b = build_coarse_space(cg, k, 2).R.toarray()
    assert a.tobytes() == b.tobytes()


def test_shared_spectra_match_single_builds(rng):
    cg = CoarseGrid(FineGrid(16, 16), 4, 4)
    k = random_field(cg.fine, rng, 1e3)
    spaces = build_coarse_spaces(cg, k, [3, 1, 2])
    assert sorted(spaces) == [1, 2, 3]
    for L, space in spaces.items():
        alone = build_coarse_space(cg, k, L)
        assert space.dim == alone.dim
        assert np.array_equal(space.dof_node, alone.dof_node)
        assert abs(space.R - alone.R).max() < 1e-10
