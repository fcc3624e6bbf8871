import numpy as np
import pytest

from heatdpg.assembly import (
    assemble,
    data_oscillation,
    initial_mismatch,
    local_b,
    local_gram,
    local_load,
    oscillations,
    shape_class,
)
from heatdpg.discretization import build_dof_map
from heatdpg.mesh import EQUAL, PARABOLIC, new_uniform, refine
from heatdpg.problems import Problem, experiment1, experiment3, zero_problem
from oracle import dense_normal_system


def _problem(f=None, u0=None, **kw):
    return Problem(
        name="test",
        f=f or (lambda t, x: np.zeros_like(t)),
        u0=u0 or (lambda x: np.zeros_like(x)),
        f_is_zero=f is None,
        u0_is_zero=u0 is None,
        **kw,
    )


@pytest.mark.parametrize("shape", [(0.5, 0.5, True), (0.25, 0.5, False), (2**-20, 2**-10, True)])
def test_gram_symmetric_positive(shape):
    g = local_gram(shape)
    assert g.shape == ((22, 22) if shape[2] else (20, 20))
    assert np.allclose(g, g.T, rtol=0, atol=1e-12 * np.abs(g).max())
    k = shape_class(*shape)
    # the internal (scaled modal) factorization is what the solver relies on
    assert np.all(np.linalg.eigvalsh(k.scale[:, None] * k.G * k.scale[None, :]) > 0)


def test_gram_xi_block_is_facet_mass():
    g = local_gram((0.5, 0.25, True))
    assert np.allclose(g[20:, 20:], 0.25 * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]]))
    assert np.allclose(g[:20, 20:], 0.0)


def test_constant_state_has_zero_residual():
    # u = c, sigma = 0 with matching trace solves both first-order equations,
    # so only the initial rows (<uhat, xi> on the bottom) are nonzero
    mesh = new_uniform(2, 2)
    for c in range(mesh.n_cells):
        b, _ = local_b(mesh.cell(c))
        v = np.array([2.0, 0, 2.0, 2.0, 2.0, 2.0, 0, 0])
        r = b @ v
        assert np.allclose(r[:20], 0.0, atol=1e-13)
        if mesh.is_bottom[c]:
            assert np.allclose(r[20:], 2.0 * mesh.h_x[c] / 2)


def test_local_b_column_map():
    mesh = new_uniform(2, 2)
    dm = build_dof_map(mesh)
    b, cols = local_b(mesh.cell(0), dm)
    assert b.shape == (22, 8)
    assert cols[0] == [(0, 1.0)] and cols[1] == [(1, 1.0)]
    # corner (t0, x0) of the bottom-left cell sits on x = 0
    assert cols[2] == []
    assert all(j >= dm.n_field for j, _ in cols[6] + cols[7])


def test_local_load_sums():
    mesh = new_uniform(2, 2)
    prob = _problem(f=lambda t, x: np.ones_like(t), u0=lambda x: 3.0 * np.ones_like(x))
    cell = mesh.cell(0)
    f = local_load(cell, prob)
    # bicubic Lagrange functions sum to one; chi rows carry no load
    assert np.isclose(f[:16].sum(), mesh.area[0])
    assert np.allclose(f[16:20], 0.0)
    assert np.allclose(f[20:], 3.0 * mesh.h_x[0] / 2)
    with pytest.raises(TypeError):
        local_load((0.5, 0.5, True), prob)


def test_oscillation_oracle():
    mesh = new_uniform(2, 2)
    cell = mesh.cell(int(mesh.locate(0.25, 0.25)[0]))
    s, t = data_oscillation(cell, lambda t, x: t + x)
    # P f = 1/4 + x; osc_t = h_x h_t^3/12, osc_s = h_x^2 h_t h_x^3/12
    assert np.isclose(t, 0.5 * 0.5**3 / 12)
    assert np.isclose(s, 0.25 * 0.5 * 0.5**3 / 12)
    s0, t0 = oscillations(mesh, experiment3())
    assert np.all(s0 == 0) and np.all(t0 == 0)


def test_initial_mismatch_oracle():
    # u0 = x^2 against uhat = x on (0, 1): int (x^2 - x)^2 = 1/30
    val = initial_mismatch((0.0, 1.0), lambda x: x**2, (0.0, 1.0))
    assert np.isclose(val, 1 / 30)
    assert np.isclose(initial_mismatch((0.0, 1.0), lambda x: x**2, lambda x: x), 1 / 30)
    # discontinuous datum with a break inside the facet
    step = initial_mismatch((0.0, 1.0), lambda x: np.where(x < 0.5, -1.0, 1.0), (0.0, 0.0), u0_breaks=(0.5,))
    assert np.isclose(step, 1.0, rtol=1e-14)


def _meshes_without_hanging_nodes():
    yield new_uniform(1, 1)
    yield new_uniform(2, 2)
    yield new_uniform(4, 2)
    yield refine(new_uniform(1, 1), [0], PARABOLIC)
    yield refine(new_uniform(2, 2), range(4), EQUAL)


@pytest.mark.parametrize("mesh", list(_meshes_without_hanging_nodes()), ids=lambda m: f"{m.n_cells}cells")
@pytest.mark.parametrize("prob", [experiment1(), experiment3()], ids=["exp1", "exp3"])
def test_matches_dense_oracle(mesh, prob):
    dm = build_dof_map(mesh)
    sysm = assemble(mesh, dm, prob, mode="full")
    s_ref, rhs_ref = dense_normal_system(mesh, dm, prob)
    s = sysm.S.toarray()
    assert np.abs(s - s_ref).max() <= 1e-10 * np.abs(s_ref).max()
    assert np.abs(sysm.rhs - rhs_ref).max() <= 1e-10 * max(1.0, np.abs(rhs_ref).max())


def test_condensed_shapes_and_zero_problem():
    mesh = refine(new_uniform(2, 2), [0], EQUAL)
    dm = build_dof_map(mesh)
    full = assemble(mesh, dm, zero_problem())
    cond = assemble(mesh, dm, zero_problem(), mode="condensed")
    assert full.S.shape == (dm.n_total, dm.n_total)
    assert cond.S.shape == (dm.n_trace, dm.n_trace)
    assert np.all(full.rhs == 0) and np.all(cond.rhs == 0)
    with pytest.raises(ValueError):
        assemble(mesh, dm, zero_problem(), mode="other")


def test_local_system_matches_public_blocks():
    mesh = new_uniform(2, 2)
    dm = build_dof_map(mesh)
    sysm = assemble(mesh, dm, experiment1())
    loc = sysm.local(1)
    cell = mesh.cell(1)
    assert np.allclose(loc.G, local_gram(cell))
    assert np.allclose(loc.B, local_b(cell)[0])
    assert np.allclose(loc.F, local_load(cell, experiment1()))
    assert loc.col_map == local_b(cell, dm)[1]
