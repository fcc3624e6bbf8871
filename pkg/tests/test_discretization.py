import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import heatdpg.discretization as disc
from conftest import random_mesh
from heatdpg.discretization import (
    TensorBasis,
    build_dof_map,
    composite_rule_1d,
    gauss_1d,
    gauss_rule,
    graded_1d,
    graded_rule,
    lagrange_1d,
    legendre_1d,
)
from heatdpg.mesh import EQUAL, new_uniform, refine


@pytest.mark.parametrize("deg", [0, 1, 2, 3])
def test_lagrange_partition_of_unity_and_cardinality(deg):
    s = np.linspace(0, 1, 7)
    v, d = lagrange_1d(deg, s)
    assert np.allclose(v.sum(axis=1), 1.0)
    assert np.allclose(d.sum(axis=1), 0.0)
    if deg:
        nodes = np.linspace(0, 1, deg + 1)
        assert np.allclose(lagrange_1d(deg, nodes)[0], np.eye(deg + 1))


def test_lagrange_derivative_matches_finite_difference():
    s = np.array([0.3, 0.71])
    h = 1e-6
    _, d = lagrange_1d(3, s)
    fd = (lagrange_1d(3, s + h)[0] - lagrange_1d(3, s - h)[0]) / (2 * h)
    assert np.allclose(d, fd, atol=1e-7)


def test_legendre_orthonormal():
    q, w = gauss_1d(8)
    v, _ = legendre_1d(3, q)
    assert np.allclose(v.T @ (w[:, None] * v), np.eye(4), atol=1e-13)


@pytest.mark.parametrize("kind", ["lagrange", "legendre"])
def test_tensor_basis_reproduces_bicubic(kind):
    b = TensorBasis(3, 3, kind)
    assert b.dim == 16

    def f(t, x):
        return 1 + t - 2 * x**3 + t**3 * x**2

    coef = b.interpolate(f)
    t, x = np.array([0.13, 0.9]), np.array([0.42, 0.07])
    assert np.allclose(b(t, x) @ coef, f(t, x))
    gt, gx = b.grad(t, x)
    assert np.allclose(gt @ coef, 1 + 3 * t**2 * x**2)
    assert np.allclose(gx @ coef, -6 * x**2 + 2 * t**3 * x)


def test_tensor_basis_numbering():
    b = TensorBasis(1, 1)
    # function i_t*(deg_x+1)+i_x: index 1 is (t0, x1)
    assert np.allclose(b(np.array([0.0]), np.array([1.0])), [[0, 1, 0, 0]])


def test_test_space_dimensions():
    w, chi = disc.test_basis(1)
    assert (w.dim, chi.dim) == (16, 4)
    with pytest.raises(ValueError):
        disc.test_basis(2)


@pytest.mark.parametrize("n", [1, 3, 6])
def test_gauss_exact_degree(n):
    q, w = gauss_1d(n)
    for k in range(2 * n):
        assert np.isclose(w @ q**k, 1 / (k + 1), rtol=1e-13)


def test_graded_rule_integrates_singular_power():
    # the innermost layer is integrated with a plain Gauss rule, which caps
    # the accuracy for x^-1/2 near 2^-20 relative
    p, w = graded_1d(40, *gauss_1d(10))
    assert np.isclose(w.sum(), 1.0)
    assert np.isclose(w @ p**-0.5, 2.0, rtol=1e-7)
    p1, w1 = graded_1d(40, *gauss_1d(10), toward=1)
    assert np.isclose(w1 @ (1 - p1) ** -0.5, 2.0, rtol=1e-7)


def test_graded_rule_2d_edge():
    r = graded_rule("x0", 30, gauss_rule(4, 8))
    assert np.isclose(r.integrate(lambda t, x: t * x**-0.25), 0.5 * 4 / 3, rtol=1e-8)
    with pytest.raises(ValueError):
        graded_1d(0, *gauss_1d(2))


def test_composite_rule_interior_singularity():
    p, w = composite_rule_1d((0.25,), (0.5,))
    assert np.isclose(w.sum(), 1.0)
    exact = 2 * (0.5**0.75) / 0.75
    assert np.isclose(w @ np.abs(p - 0.5) ** -0.25, exact, rtol=1e-7)
    assert not np.any(p == 0.5)


def test_dofmap_uniform_counts():
    for nt, nx in [(1, 1), (2, 2), (4, 2), (4, 8)]:
        dm = build_dof_map(new_uniform(nt, nx))
        assert dm.ndof == (nt + 1) * (nx - 1) + (nx + 1) * nt
        assert dm.n_field == 2 * nt * nx
        assert not dm.hanging.any()


def test_dofmap_hanging_node_weights():
    m0 = new_uniform(2, 2)
    m = refine(m0, [int(m0.locate(0.25, 0.25)[0])], EQUAL)
    dm = build_dof_map(m)
    idx = {tuple(c): i for i, c in enumerate(dm.node_coords)}
    node = idx[(0.25, 0.5)]
    pa, pb, s = dm.hanging_parents[node]
    assert {tuple(dm.node_coords[pa]), tuple(dm.node_coords[pb])} == {(0.0, 0.5), (0.5, 0.5)}
    assert s == 0.5
    combo = dict(dm.constraints[node])
    assert combo == {int(dm.node_dof[pa]): 0.5, int(dm.node_dof[pb]): 0.5}
    assert dm.node_dof[node] == -1


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), rounds=st.integers(0, 4))
def test_corner_map_reproduces_bilinear_globals(seed, rounds):
    # node values set from a smooth function; hanging nodes must come out as
    # the linear interpolant of their parents, lateral nodes as zero
    mesh = random_mesh(seed, rounds)
    dm = build_dof_map(mesh)
    xy = dm.node_coords

    def g(t, x):
        return (1 + t) * x * (1 - x)

    vec = np.zeros(dm.n_trace)
    free = dm.node_dof >= 0
    vec[dm.node_dof[free]] = g(xy[free, 0], xy[free, 1])
    vals = dm.node_value_map() @ vec
    hang = dm.hanging
    # hanging values are interpolants of the parents along their facet
    for node, (pa, pb, s) in dm.hanging_parents.items():
        assert np.isclose(
            vals[node],
            (1 - s) * vals[pa] + s * vals[pb],
            atol=1e-14,
        )
    assert np.all(vals[dm.lateral & ~hang] == 0.0)
    corner_vals = (dm.corner_map @ vec).reshape(-1, 4)
    assert np.allclose(corner_vals, vals[dm.corner_nodes], atol=1e-14)
