"""Randomized invariants of the discretization on meshes with hanging nodes."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import random_mesh
from heatdpg.adaptivity import estimate, lift_residual, mark, pythagoras_check
from heatdpg.assembly import assemble, local_b, local_gram, shape_class
from heatdpg.discretization import TensorBasis, build_dof_map, gauss_1d
from heatdpg.problems import Problem, experiment1, experiment2, experiment3
from heatdpg.solver import galerkin_residual, solve

SETTINGS = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
meshes = st.builds(random_mesh, st.integers(0, 100_000), st.integers(0, 4))

_W, _C = TensorBasis(3, 3), TensorBasis(1, 1)


def _smooth_u0():
    return Problem(name="smooth", f=lambda t, x: np.cos(3 * t) * x, u0=lambda x: np.sin(np.pi * x) + x**3)


@SETTINGS
@given(mesh=meshes)
def test_gram_symmetric_positive(mesh):
    for c in {(mesh.lt[i], mesh.lx[i], mesh.is_bottom[i]): i for i in range(mesh.n_cells)}.values():
        shape = (mesh.h_t[c], mesh.h_x[c], bool(mesh.is_bottom[c]))
        g = local_gram(shape)
        assert np.abs(g - g.T).max() <= 1e-12 * np.abs(g).max()
        k = shape_class(*shape)
        gs = k.scale[:, None] * k.G * k.scale[None, :]
        assert np.linalg.eigvalsh(gs).min() > 0


@SETTINGS
@given(mesh=meshes, which=st.sampled_from([0, 1, 2]))
def test_galerkin_residual_vanishes(mesh, which):
    prob = (experiment1(), experiment2(), experiment3())[which]
    system = assemble(mesh, build_dof_map(mesh), prob)
    sol = solve(system)
    assert galerkin_residual(system, sol) <= 1e-8 * max(1.0, np.abs(system.rhs).max())


@SETTINGS
@given(mesh=meshes)
def test_full_and_condensed_agree(mesh):
    dm = build_dof_map(mesh)
    prob = experiment3()
    a = solve(assemble(mesh, dm, prob, "full")).x
    b = solve(assemble(mesh, dm, prob, "condensed")).x
    assert np.abs(a - b).max() <= 1e-9 * max(1.0, np.abs(a).max())


@SETTINGS
@given(mesh=meshes, data=st.data())
def test_skeleton_column_integration_by_parts(mesh, data):
    # the trace column of corner k is the boundary pairing of the bilinear
    # hat phi_k, which by the divergence theorem equals
    # int_K d_t(phi_k w) + d_x(phi_k chi)
    c = data.draw(st.integers(0, mesh.n_cells - 1))
    ht, hx = mesh.h_t[c], mesh.h_x[c]
    b, _ = local_b(mesh.cell(c))
    q, w = gauss_1d(6)
    tt, xx = np.meshgrid(q, q, indexing="ij")
    tt, xx, wq = tt.ravel(), xx.ravel(), np.outer(w, w).ravel()
    W, (Wt, Wx) = _W(tt, xx), _W.grad(tt, xx)
    C, (_, Cx) = _C(tt, xx), _C.grad(tt, xx)
    P, (Pt, Px) = _C(tt, xx), _C.grad(tt, xx)
    area = ht * hx
    for k in range(4):
        dw = (Pt[:, k, None] * W / ht + P[:, k, None] * Wt / ht)
        dc = (Px[:, k, None] * C / hx + P[:, k, None] * Cx / hx)
        col = area * np.concatenate([wq @ dw, wq @ dc])
        scale = max(np.abs(col).max(), np.abs(b[:20, 2 + k]).max())
        assert np.abs(b[:20, 2 + k] - col).max() <= 1e-12 * scale
    if mesh.is_bottom[c]:
        # <uhat, xi> on t = 0 only sees the two bottom corners
        m = hx * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        assert np.allclose(b[20:, 2:4], m, rtol=0, atol=1e-14)
        assert np.all(b[20:, 4:] == 0)


def _continuous_bilinear_w(dm, vec):
    """Bicubic nodal coefficients per cell of the conforming bilinear ``vec``."""
    cv = (dm.corner_map @ vec).reshape(-1, 4)
    nodes = _W.nodes
    phi = _C(nodes[:, 0], nodes[:, 1])
    return cv @ phi.T


@SETTINGS
@given(mesh=meshes, seed=st.integers(0, 1000))
def test_flux_pairing_telescopes(mesh, seed):
    # a continuous test function vanishing at x = 0, 1 pairs to zero with
    # every flux unknown: contributions of the two sides of a facet cancel
    dm = build_dof_map(mesh)
    rng = np.random.default_rng(seed)
    vec = np.zeros(dm.n_trace)
    vec[: dm.n_node_dofs] = rng.standard_normal(dm.n_node_dofs)
    wc = _continuous_bilinear_w(dm, vec)
    total = np.zeros(dm.n_trace)
    scale = 0.0
    for c in range(mesh.n_cells):
        b, _ = local_b(mesh.cell(c))
        for side in range(2):
            v = float(b[:16, 6 + side] @ wc[c])
            total[dm.side_flux[c, side]] += v
            scale = max(scale, abs(v))
    assert np.abs(total).max() <= 1e-12 * max(scale, 1e-300)


@SETTINGS
@given(mesh=meshes, seed=st.integers(0, 1000))
def test_skeleton_continuity(mesh, seed):
    dm = build_dof_map(mesh)
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dm.n_trace)
    cv = (dm.corner_map @ vec).reshape(-1, 4)

    def uhat(c, t, x):
        s = (t - mesh.t_lo[c]) / mesh.h_t[c]
        y = (x - mesh.x_lo[c]) / mesh.h_x[c]
        return (1 - s) * ((1 - y) * cv[c, 0] + y * cv[c, 1]) + s * ((1 - y) * cv[c, 2] + y * cv[c, 3])

    ref = np.array([0.1, 0.5, 0.8])
    eps = 2.0**-60
    for c in range(mesh.n_cells):
        t0, t1, x0, x1 = mesh.t_lo[c], mesh.t_hi[c], mesh.x_lo[c], mesh.x_hi[c]
        edges = [
            (t0 + (t1 - t0) * ref, np.full(3, x0), 0.0, -1.0),
            (t0 + (t1 - t0) * ref, np.full(3, x1), 0.0, 1.0),
            (np.full(3, t0), x0 + (x1 - x0) * ref, -1.0, 0.0),
            (np.full(3, t1), x0 + (x1 - x0) * ref, 1.0, 0.0),
        ]
        for t, x, nt, nx in edges:
            mine = uhat(c, t, x)
            if nx and (x[0] == 0.0 or x[0] == 1.0):
                assert np.abs(mine).max() <= 1e-12
                continue
            tn, xn = t + nt * eps, x + nx * eps
            if np.any((tn < 0) | (tn > 1)):
                continue
            other = np.asarray(mesh.locate(tn, xn))
            theirs = np.array([uhat(o, a, b) for o, a, b in zip(other, t, x)])
            assert np.abs(mine - theirs).max() <= 1e-12 * max(1.0, np.abs(vec).max())


@SETTINGS
@given(mesh=meshes, smooth=st.booleans())
def test_pythagoras_on_bottom_facets(mesh, smooth):
    prob = _smooth_u0() if smooth else experiment3()
    sol = solve(assemble(mesh, build_dof_map(mesh), prob))
    ind = estimate(mesh, sol, prob, check=False)
    cv = sol.corner_values
    for c in np.flatnonzero(mesh.is_bottom):
        eta, _ = lift_residual(c, sol)
        lhs, rhs = pythagoras_check((mesh.x_lo[c], mesh.x_hi[c]), prob.u0, cv[c, :2], eta[20:], prob.u0_breaks)
        assert abs(lhs - rhs) <= 1e-9 * max(lhs, 1e-300)
        assert np.isclose(lhs, ind.init2[c], rtol=1e-12, atol=0)


def independent_ndof(mesh):
    """Count free nodes and coarse space-normal facets from cell geometry only."""
    boxes = list(zip(mesh.t_lo, mesh.t_hi, mesh.x_lo, mesh.x_hi))
    points = {(t, x) for a, b, c, d in boxes for t in (a, b) for x in (c, d)}
    # a point is hanging if it sits strictly inside some cell side
    def hanging(p):
        t, x = p
        for a, b, c, d in boxes:
            if x in (c, d) and a < t < b:
                return True
            if t in (a, b) and c < x < d:
                return True
        return False

    nodes = sum(1 for p in points if 0.0 < p[1] < 1.0 and not hanging(p))
    sides = {(x, a, b) for a, b, c, d in boxes for x in (c, d)}
    coarse = [
        s for s in sides if not any(o != s and o[0] == s[0] and o[1] <= s[1] and s[2] <= o[2] for o in sides)
    ]
    return nodes + len(coarse)


@settings(max_examples=30, deadline=None)
@given(mesh=meshes)
def test_dimension_law(mesh):
    assert build_dof_map(mesh).ndof == independent_ndof(mesh)


@settings(max_examples=60, deadline=None)
@given(
    vals=st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=40),
    theta=st.floats(0.05, 1.0),
)
def test_doerfler_minimal(vals, theta):
    v = np.array(vals)
    m = mark(v, theta)
    total = v.sum()
    if total <= 0:
        assert m == set()
        return
    chosen = np.array(sorted(m))
    assert v[chosen].sum() >= theta * total * (1 - 1e-12)
    # no smaller set can reach the bulk: the best one drops the smallest member
    best_smaller = np.sort(v)[::-1][: len(m) - 1].sum()
    assert best_smaller < theta * total * (1 - 1e-12) or theta == 1.0
    # marked cells dominate the unmarked ones
    rest = np.setdiff1d(np.arange(v.size), chosen)
    if rest.size:
        assert v[chosen].min() >= v[rest].max()
