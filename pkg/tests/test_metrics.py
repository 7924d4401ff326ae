import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from gmsfv.fem import assemble_load, assemble_stiffness
from gmsfv.mesh import FineGrid, control_volumes
from gmsfv.metrics import (CSV_HEADER, ErrorReport, NormCache, energy_norm, relative_errors,
                           saturation_error, weighted_l2_norm)
from gmsfv.msbasis import build_coarse_space
from gmsfv.saddle import coarse_system, solve_galerkin, solve_kkt

from conftest import random_field


def test_constant_has_zero_energy():
    fg = FineGrid(6, 4)
    k = np.linspace(1, 5, fg.n_cells)
    assert energy_norm(fg, np.full(fg.n_nodes, 3.0), k) == 0.0


def test_linear_function_norms():
    fg = FineGrid(8, 8)
    x, _ = fg.node_coords
    assert energy_norm(fg, x, np.ones(fg.n_cells)) == pytest.approx(1.0, rel=1e-13)
    # x is bilinear, so consistent mass integrates x^2 exactly
    assert weighted_l2_norm(fg, x, np.ones(fg.n_cells)) == pytest.approx(np.sqrt(1 / 3), rel=1e-13)


def _bilinear_quadrature(fg, v, k):
    """Independent 3x3 Gauss evaluation of the energy and weighted L2 integrals."""
    g, w = np.polynomial.legendre.leggauss(3)
    g, w = 0.5 * (g + 1), 0.5 * w
    e = l2 = 0.0
    V = v.reshape(fg.ny + 1, fg.nx + 1)
    for j in range(fg.ny):
        for i in range(fg.nx):
            v00, v10, v01, v11 = V[j, i], V[j, i + 1], V[j + 1, i], V[j + 1, i + 1]
            kc = k[fg.cell(i, j)]
            for a, wa in zip(g, w):
                for b, wb in zip(g, w):
                    val = v00 * (1 - a) * (1 - b) + v10 * a * (1 - b) + v01 * (1 - a) * b + v11 * a * b
                    dx = ((v10 - v00) * (1 - b) + (v11 - v01) * b) / fg.hx
                    dy = ((v01 - v00) * (1 - a) + (v11 - v10) * a) / fg.hy
                    wt = wa * wb * fg.hx * fg.hy * kc
                    e += wt * (dx * dx + dy * dy)
                    l2 += wt * val * val
    return np.sqrt(e), np.sqrt(l2)


def test_norms_match_quadrature_oracle(rng):
    fg = FineGrid(5, 7)
    k = random_field(fg, rng, 1e3)
    v = rng.normal(size=fg.n_nodes)
    e, l2 = _bilinear_quadrature(fg, v, k)
    assert energy_norm(fg, v, k) == pytest.approx(e, rel=1e-12)
    assert weighted_l2_norm(fg, v, k) == pytest.approx(l2, rel=1e-12)


def test_relative_errors_extremes(rng):
    fg = FineGrid(6, 6)
    k = random_field(fg, rng)
    x, y = fg.node_coords
    p = 1 - x + 0.3 * y ** 2
    same = relative_errors(fg, p, p, k)
    assert same.l2k_pct == 0.0 and same.h1k_pct == 0.0
    zero = relative_errors(fg, p, np.zeros_like(p), k)
    assert zero.l2k_pct == pytest.approx(100.0)
    assert zero.h1k_pct == pytest.approx(100.0)


def test_zero_reference_raises():
    fg = FineGrid(4, 4)
    with pytest.raises(ZeroDivisionError):
        relative_errors(fg, np.ones(fg.n_nodes), np.zeros(fg.n_nodes), np.ones(fg.n_cells))
    with pytest.raises(ZeroDivisionError):
        saturation_error(np.zeros(5), np.ones(5))


def test_size_mismatch():
    fg = FineGrid(4, 4)
    with pytest.raises(ValueError, match="size mismatch"):
        energy_norm(fg, np.ones(fg.n_nodes - 1), np.ones(fg.n_cells))
    with pytest.raises(ValueError, match="size mismatch"):
        saturation_error(np.ones(3), np.ones(4))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    fg = FineGrid(4, 3)
    k = random_field(fg, rng)
    cache = NormCache(fg, k)
    u, v = rng.normal(size=(2, fg.n_nodes))
    for norm, M in ((energy_norm, cache.A), (weighted_l2_norm, cache.M)):
        assert norm(fg, u + v, k, M) <= norm(fg, u, k, M) + norm(fg, v, k, M) + 1e-12


def test_galerkin_minimizes_energy_error(small_grids, small_field, bc_lr):
    # with the fine finite element solution as reference, the unconstrained
    # Galerkin solution is the energy projection and cannot be beaten
    fg, cg = small_grids
    k = small_field.values
    A = assemble_stiffness(fg, k).tocsr()
    b = assemble_load(fg, None, bc_lr)
    d = bc_lr.dirichlet_mask(fg)
    p_fe = bc_lr.dirichlet_values(fg)
    free = np.flatnonzero(~d)
    p_fe[free] = spla.spsolve(A[free][:, free].tocsc(), b[free] - A[free] @ p_fe)
    vols = control_volumes(cg)
    for L in (2, 3):
        sys, _ = coarse_system(build_coarse_space(cg, k, L), k, None, None, bc_lr, vols)
        e_gal = relative_errors(fg, p_fe, solve_galerkin(sys).p, k).h1k_pct
        e_kkt = relative_errors(fg, p_fe, solve_kkt(sys).p, k).h1k_pct
        assert e_gal <= e_kkt * (1 + 1e-10)


def test_report_formats():
    rep = ErrorReport(1.5, 2.25, n_c=323, dim=202, n_constraints=121, saturation_pct={0.3: 4.0})
    assert CSV_HEADER.count(",") == rep.csv_row().count(",")
    assert rep.csv_row() == "323,202,121,1.5,2.25"
    assert "saturation_pct[t=0.3]=4.0" in rep.to_text()


def test_saturation_error_value():
    assert saturation_error([3.0, 4.0], [3.0, 3.0]) == pytest.approx(20.0)
