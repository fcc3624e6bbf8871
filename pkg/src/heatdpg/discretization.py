"""Reference bases, quadrature rules and the global trial dof map."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh

__all__ = [
    "DofMap",
    "QuadRule",
    "TensorBasis",
    "build_dof_map",
    "composite_rule_1d",
    "gauss_1d",
    "gauss_rule",
    "graded_1d",
    "graded_rule",
    "lagrange_1d",
    "legendre_1d",
    "test_basis",
]


# --------------------------------------------------------------------------
# bases
# --------------------------------------------------------------------------
@functools.lru_cache(maxsize=None)
def _lagrange_coeffs(degree: int) -> np.ndarray:
    nodes = np.linspace(0.0, 1.0, degree + 1) if degree else np.array([0.5])
    vander = np.vander(nodes, degree + 1, increasing=True)
    # column i holds the monomial coefficients of the i-th cardinal function
    return np.linalg.solve(vander, np.eye(degree + 1))


def lagrange_1d(degree: int, s) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the equispaced Lagrange basis on ``[0, 1]``.

    Returns two arrays of shape ``(len(s), degree + 1)``.
    """
    s = np.asarray(s, dtype=float)
    coef = _lagrange_coeffs(degree)
    powers = s[:, None] ** np.arange(degree + 1)
    vals = powers @ coef
    if degree == 0:
        return vals, np.zeros_like(vals)
    dpowers = np.arange(1, degree + 1) * s[:, None] ** np.arange(degree)
    ders = dpowers @ coef[1:]
    return vals, ders


def legendre_1d(degree: int, s) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the Legendre basis orthonormal on ``[0, 1]``."""
    s = np.asarray(s, dtype=float)
    leg = np.polynomial.legendre
    vals, ders = [], []
    for k in range(degree + 1):
        c = np.zeros(k + 1)
        c[k] = np.sqrt(2 * k + 1)
        vals.append(leg.legval(2 * s - 1, c))
        ders.append(2 * leg.legval(2 * s - 1, leg.legder(c)) if k else np.zeros_like(s))
    return np.stack(vals, axis=-1), np.stack(ders, axis=-1)


_KINDS = {"lagrange": lagrange_1d, "legendre": legendre_1d}


@dataclass(frozen=True)
class TensorBasis:
    """Tensor-product basis on the reference cell ``[0,1]^2``.

    Basis function ``i_t * (degree_x + 1) + i_x`` is the product of the
    ``i_t``-th time and ``i_x``-th space function.  ``kind="lagrange"`` uses
    cardinal functions of equispaced nodes; ``kind="legendre"`` uses
    orthonormal Legendre polynomials (used internally for conditioning).
    """

    degree_t: int
    degree_x: int
    kind: str = "lagrange"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def dim(self) -> int:
        return (self.degree_t + 1) * (self.degree_x + 1)

    @property
    def nodes(self) -> np.ndarray:
        tn = np.linspace(0, 1, self.degree_t + 1)
        xn = np.linspace(0, 1, self.degree_x + 1)
        return np.array([(a, b) for a in tn for b in xn])

    def _parts(self, t, x):
        fn = _KINDS[self.kind]
        vt, dt = fn(self.degree_t, t)
        vx, dx = fn(self.degree_x, x)
        return vt, dt, vx, dx

    def __call__(self, t, x) -> np.ndarray:
        vt, _, vx, _ = self._parts(np.atleast_1d(t), np.atleast_1d(x))
        return (vt[:, :, None] * vx[:, None, :]).reshape(vt.shape[0], -1)

    def grad(self, t, x) -> tuple[np.ndarray, np.ndarray]:
        """Reference derivatives ``(d/dt, d/dx)`` at the given points."""
        vt, dt, vx, dx = self._parts(np.atleast_1d(t), np.atleast_1d(x))
        n = vt.shape[0]
        return (
            (dt[:, :, None] * vx[:, None, :]).reshape(n, -1),
            (vt[:, :, None] * dx[:, None, :]).reshape(n, -1),
        )

    def interpolate(self, func) -> np.ndarray:
        """Interpolation coefficients of ``func(t, x)`` at the equispaced nodes."""
        nodes = self.nodes
        vals = np.asarray(func(nodes[:, 0], nodes[:, 1]), dtype=float)
        if self.kind == "lagrange":
            return vals
        return np.linalg.solve(self(nodes[:, 0], nodes[:, 1]), vals)


def test_basis(d: int = 1) -> tuple[TensorBasis, TensorBasis]:
    """Bases for the broken test functions ``(w, chi)``: bicubic and bilinear."""
    if d != 1:
        raise ValueError("only one space dimension is supported")
    return TensorBasis(3, 3), TensorBasis(1, 1)


test_basis.__test__ = False  # not a pytest test despite the name


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------
@functools.lru_cache(maxsize=None)
def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points on ``[0, 1]``."""
    if not 1 <= n <= 64:
        raise ValueError("number of Gauss points must lie in [1, 64]")
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def graded_1d(levels: int, nodes: np.ndarray, weights: np.ndarray, toward: int = 0):
    """Composite rule on ``[0, 1]`` with layers ``[2^-(k+1), 2^-k]`` toward 0
    (or toward 1 if ``toward=1``) plus the innermost layer ``[0, 2^-levels]``."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    pts, wts = [], []
    for k in range(levels):
        a, b = 2.0 ** -(k + 1), 2.0**-k
        pts.append(a + (b - a) * nodes)
        wts.append((b - a) * weights)
    h = 2.0**-levels
    pts.append(h * nodes)
    wts.append(h * weights)
    p, w = np.concatenate(pts[::-1]), np.concatenate(wts[::-1])
    if toward == 1:
        p, w = 1.0 - p[::-1], w[::-1]
    return p, w


@dataclass(frozen=True)
class QuadRule:
    """Tensor rule on ``[0,1]^2`` built from a time rule and a space rule."""

    t_nodes: np.ndarray
    t_weights: np.ndarray
    x_nodes: np.ndarray
    x_weights: np.ndarray

    @property
    def points(self) -> np.ndarray:
        tt, xx = np.meshgrid(self.t_nodes, self.x_nodes, indexing="ij")
        return np.stack([tt.ravel(), xx.ravel()], axis=1)

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.t_weights, self.x_weights).ravel()

    @property
    def shape(self) -> tuple[int, int]:
        return self.t_nodes.size, self.x_nodes.size

    def integrate(self, func) -> float:
        p = self.points
        return float(np.dot(self.weights, func(p[:, 0], p[:, 1])))


def gauss_rule(n_t: int, n_x: int) -> QuadRule:
    """Tensor Gauss-Legendre rule, exact for degrees ``(2 n_t - 1, 2 n_x - 1)``."""
    if not (1 <= n_t <= 32 and 1 <= n_x <= 32):
        raise ValueError("points per direction must lie in [1, 32]")
    return QuadRule(*gauss_1d(n_t), *gauss_1d(n_x))


_EDGES = {"t0": ("t", 0), "t1": ("t", 1), "x0": ("x", 0), "x1": ("x", 1)}


def graded_rule(singular_edge: str, levels: int, base: QuadRule) -> QuadRule:
    """Geometrically graded composite rule toward one edge of the reference cell.

    ``singular_edge`` is one of ``"t0", "t1", "x0", "x1"`` (the side
    ``t=0``, ``t=1``, ``x=0`` or ``x=1``).  The base rule's 1D factor in the
    graded direction is mapped onto each of the ``levels + 1`` layers.
    """
    if singular_edge not in _EDGES:
        raise ValueError(f"unknown edge {singular_edge!r}")
    axis, side = _EDGES[singular_edge]
    if axis == "t":
        p, w = graded_1d(levels, base.t_nodes, base.t_weights, side)
        return QuadRule(p, w, base.x_nodes, base.x_weights)
    p, w = graded_1d(levels, base.x_nodes, base.x_weights, side)
    return QuadRule(base.t_nodes, base.t_weights, p, w)


@functools.lru_cache(maxsize=4096)
def composite_rule_1d(
    breaks: tuple[float, ...] = (),
    singular: tuple[float, ...] = (),
    n_smooth: int = 4,
    n_singular: int = 10,
    levels: int = 40,
) -> tuple[np.ndarray, np.ndarray]:
    """1D rule on ``[0, 1]`` split at ``breaks`` and graded toward ``singular``.

    Both tuples hold reference coordinates in ``[0, 1]``.  A segment with a
    singular point at one end is graded toward it; a segment with singular
    points at both ends is halved first.
    """
    cuts = sorted({0.0, 1.0, *(b for b in breaks if 0.0 < b < 1.0), *(s for s in singular if 0.0 < s < 1.0)})
    sing = set(singular)
    pts, wts = [], []

    def put(a, b, grade_at):
        if grade_at is None:
            x, w = gauss_1d(n_smooth)
        else:
            x, w = graded_1d(levels, *gauss_1d(n_singular), toward=grade_at)
        pts.append(a + (b - a) * x)
        wts.append((b - a) * w)

    for a, b in zip(cuts[:-1], cuts[1:]):
        sa, sb = a in sing, b in sing
        if sa and sb:
            m = 0.5 * (a + b)
            put(a, m, 0)
            put(m, b, 1)
        elif sa:
            put(a, b, 0)
        elif sb:
            put(a, b, 1)
        else:
            put(a, b, None)
    p, w = np.concatenate(pts), np.concatenate(wts)
    p.setflags(write=False)
    w.setflags(write=False)
    return p, w


# --------------------------------------------------------------------------
# dof map
# --------------------------------------------------------------------------
@dataclass
class DofMap:
    """Global trial unknowns of one mesh.

    Field unknowns ``(u, sigma)`` of cell ``c`` are ``field_dofs[c]``.  Trace
    unknowns are numbered separately: node values first (``node_dof``, -1 for
    lateral-boundary and hanging nodes), then one flux per coarse space-normal
    facet.  ``corner_map`` expands the four corner values of every cell into
    trace unknowns with the hanging-node weights applied.
    """

    mesh: Mesh
    node_coords: np.ndarray
    corner_nodes: np.ndarray
    node_dof: np.ndarray
    constraints: dict[int, list[tuple[int, float]]]
    hanging_parents: dict[int, tuple[int, int, float]]
    flux_facets: np.ndarray
    side_flux: np.ndarray
    n_node_dofs: int
    n_flux_dofs: int
    corner_map: object = field(repr=False)

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    @property
    def field_dofs(self) -> np.ndarray:
        return np.arange(2 * self.n_cells).reshape(-1, 2)

    @property
    def n_trace(self) -> int:
        return self.n_node_dofs + self.n_flux_dofs

    @property
    def n_field(self) -> int:
        return 2 * self.n_cells

    @property
    def n_total(self) -> int:
        return self.n_field + self.n_trace

    @property
    def ndof(self) -> int:
        return self.n_trace

    @property
    def lateral(self) -> np.ndarray:
        x = self.node_coords[:, 1]
        return (x == 0.0) | (x == 1.0)

    @property
    def hanging(self) -> np.ndarray:
        mask = np.zeros(len(self.node_coords), dtype=bool)
        mask[list(self.hanging_parents)] = True
        return mask

    def node_value_map(self):
        """Sparse matrix mapping trace coefficients to values at all nodes."""
        import scipy.sparse as sp

        rows, cols, vals = [], [], []
        for node, dof in enumerate(self.node_dof):
            if dof >= 0:
                rows.append(node), cols.append(int(dof)), vals.append(1.0)
        for node, combo in self.constraints.items():
            for dof, w in combo:
                rows.append(node), cols.append(dof), vals.append(w)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(self.node_coords), self.n_trace))


def build_dof_map(mesh: Mesh) -> DofMap:
    """Number trace unknowns and resolve hanging-node constraints."""
    import scipy.sparse as sp

    n = mesh.n_cells
    t0, t1, x0, x1 = mesh.t_lo, mesh.t_hi, mesh.x_lo, mesh.x_hi
    # corner order matches the bilinear basis: (t0,x0), (t0,x1), (t1,x0), (t1,x1)
    ct = np.stack([t0, t0, t1, t1], axis=1)
    cx = np.stack([x0, x1, x0, x1], axis=1)
    coords, inverse = np.unique(np.stack([ct.ravel(), cx.ravel()], axis=1), axis=0, return_inverse=True)
    corner_nodes = inverse.reshape(n, 4)
    lookup = {(float(a), float(b)): i for i, (a, b) in enumerate(coords)}

    ss, ts = mesh.space_sides, mesh.time_sides
    # space sides: [0, n) left, [n, 2n) right; time sides: [0, n) bottom, [n, 2n) top
    left_c, right_c = ss.coarse_of[:n], ss.coarse_of[n:]
    bot_c, top_c = ts.coarse_of[:n], ts.coarse_of[n:]
    checks = (
        # corner, coarse facet, along-coordinate, is-space-facet
        (0, ss, left_c, t0), (0, ts, bot_c, x0),
        (1, ss, right_c, t0), (1, ts, bot_c, x1),
        (2, ss, left_c, t1), (2, ts, top_c, x0),
        (3, ss, right_c, t1), (3, ts, top_c, x1),
    )
    hanging_parents: dict[int, tuple[int, int, float]] = {}
    for corner, tab, cof, along in checks:
        lo, hi, line = tab.coarse_lo[cof], tab.coarse_hi[cof], tab.coarse_line[cof]
        inside = (lo < along) & (along < hi)
        for c in np.flatnonzero(inside):
            node = int(corner_nodes[c, corner])
            if node in hanging_parents:
                continue
            a, b, s = float(lo[c]), float(hi[c]), float(along[c])
            if tab is ss:
                pa, pb = lookup[(a, float(line[c]))], lookup[(b, float(line[c]))]
            else:
                pa, pb = lookup[(float(line[c]), a)], lookup[(float(line[c]), b)]
            hanging_parents[node] = (pa, pb, (s - a) / (b - a))

    xs = coords[:, 1]
    lateral = (xs == 0.0) | (xs == 1.0)
    free = ~lateral
    free[list(hanging_parents)] = False
    node_dof = np.full(len(coords), -1, dtype=np.int64)
    node_dof[free] = np.arange(int(free.sum()))
    n_node = int(free.sum())

    resolved: dict[int, dict[int, float]] = {}

    def resolve(node: int, depth: int = 0) -> dict[int, float]:
        if depth > 200:
            raise RuntimeError("unresolved hanging-node constraint cycle")
        if node_dof[node] >= 0:
            return {int(node_dof[node]): 1.0}
        if lateral[node]:
            return {}
        if node in resolved:
            return resolved[node]
        pa, pb, s = hanging_parents[node]
        out: dict[int, float] = {}
        for parent, w in ((pa, 1.0 - s), (pb, s)):
            for dof, v in resolve(parent, depth + 1).items():
                out[dof] = out.get(dof, 0.0) + w * v
        resolved[node] = out
        return out

    constraints = {node: sorted(resolve(node).items()) for node in hanging_parents}

    # flux unknowns: one per coarse space-normal facet
    n_flux = ss.coarse_line.size
    side_flux = np.stack([left_c, right_c], axis=1) + n_node

    rows, cols, vals = [], [], []
    flat_nodes = corner_nodes.ravel()
    direct = node_dof[flat_nodes] >= 0
    rows.append(np.flatnonzero(direct))
    cols.append(node_dof[flat_nodes[direct]])
    vals.append(np.ones(int(direct.sum())))
    for k in np.flatnonzero(~direct):
        combo = constraints.get(int(flat_nodes[k]))
        if combo:
            rows.append(np.full(len(combo), k))
            cols.append(np.array([d for d, _ in combo]))
            vals.append(np.array([w for _, w in combo]))
    corner_map = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(4 * n, n_node + n_flux),
    )
    return DofMap(
        mesh=mesh,
        node_coords=coords,
        corner_nodes=corner_nodes,
        node_dof=node_dof,
        constraints=constraints,
        hanging_parents=hanging_parents,
        flux_facets=np.arange(n_flux),
        side_flux=side_flux,
        n_node_dofs=n_node,
        n_flux_dofs=n_flux,
        corner_map=corner_map,
    )
