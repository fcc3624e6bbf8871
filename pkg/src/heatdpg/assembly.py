"""Local Gram, trial and load blocks and the global normal equations.

Local test unknowns are ordered ``w`` (16 bicubic functions), ``chi``
(4 bilinear functions) and, on cells touching ``t = 0``, the two affine
functions ``xi`` on the bottom side.  Local trial columns are

``[u, sigma, uhat(t0,x0), uhat(t0,x1), uhat(t1,x0), uhat(t1,x1), s_left, s_right]``

where ``s`` is the space-normal flux with global orientation ``nu_x = +1``.
All blocks depend on a cell only through ``(h_t, h_x, bottom)``, so they are
computed once per shape class and shared.

Internally ``w`` and ``chi`` are expanded in orthonormal Legendre products:
functions constant in ``t`` then have exactly zero time derivative, which keeps
the Gram matrix factorizable on cells with ``h_t << h_x``.  The public
``local_*`` functions convert to the nodal Lagrange basis.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .discretization import DofMap, TensorBasis, composite_rule_1d, gauss_1d
from .mesh import Cell, Mesh

__all__ = [
    "LocalSystem",
    "NormalSystem",
    "ShapeClass",
    "assemble",
    "cell_loads",
    "data_oscillation",
    "initial_mismatch",
    "local_b",
    "local_gram",
    "local_load",
    "oscillations",
]

N_W, N_CHI, N_XI = 16, 4, 2
N_TEST = N_W + N_CHI
N_TRIAL = 8
_XI_MASS = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
_BILINEAR = TensorBasis(1, 1)
_MODAL_W = TensorBasis(3, 3, "legendre")
_MODAL_C = TensorBasis(1, 1, "legendre")


@functools.lru_cache(maxsize=None)
def nodal_transform() -> np.ndarray:
    """``T`` with nodal test functions = modal functions @ ``T`` (20 x 20)."""
    t = np.zeros((N_TEST, N_TEST))
    for basis, sl in ((_MODAL_W, slice(0, N_W)), (_MODAL_C, slice(N_W, N_TEST))):
        nodes = basis.nodes
        t[sl, sl] = np.linalg.inv(basis(nodes[:, 0], nodes[:, 1]))
    t.setflags(write=False)
    return t


def _to_nodal(mat: np.ndarray, rows_only: bool = False) -> np.ndarray:
    """Convert test-side modal entries (leading axis) to the nodal basis."""
    t = nodal_transform()
    out = np.array(mat, dtype=float, copy=True)
    out[:N_TEST] = t.T @ mat[:N_TEST]
    if not rows_only:
        out[:, :N_TEST] = out[:, :N_TEST] @ t
    return out


# --------------------------------------------------------------------------
# reference tables
# --------------------------------------------------------------------------
@functools.lru_cache(maxsize=None)
def _reference_tables(n_quad: int = 4):
    wb, cb = _MODAL_W, _MODAL_C
    x1, w1 = gauss_1d(n_quad)
    tt, xx = np.meshgrid(x1, x1, indexing="ij")
    t, x = tt.ravel(), xx.ravel()
    wq = np.outer(w1, w1).ravel()
    tabs = {
        "wq": wq,
        "W": wb(t, x),
        "C": cb(t, x),
        "P": _BILINEAR(t, x),
    }
    tabs["Wt"], tabs["Wx"] = wb.grad(t, x)
    tabs["Ct"], tabs["Cx"] = cb.grad(t, x)
    tabs["Pt"], tabs["Px"] = _BILINEAR.grad(t, x)
    # w restricted to the sides x = 0 and x = 1, integrated in t
    tabs["W_left"] = w1 @ wb(x1, np.zeros_like(x1))
    tabs["W_right"] = w1 @ wb(x1, np.ones_like(x1))
    return tabs


def _test_fields(ht: float, hx: float, n_quad: int = 4):
    """Values of ``(V1, V2, A1, A2)`` for the 20 test functions at quadrature points.

    ``V`` is the test pair ``(w, chi)`` and ``A = A*(w, chi)``.
    """
    r = _reference_tables(n_quad)
    nq = r["wq"].size
    z_w, z_c = np.zeros((nq, N_W)), np.zeros((nq, N_CHI))
    v1 = np.hstack([r["W"], z_c])
    v2 = np.hstack([z_w, r["C"]])
    a1 = np.hstack([-r["Wt"] / ht, -r["Cx"] / hx])
    a2 = np.hstack([-r["Wx"] / hx, r["C"]])
    return v1, v2, a1, a2


@dataclass(frozen=True)
class ShapeClass:
    """Cached local matrices for one cell shape.

    ``chol`` is the Cholesky factor of the diagonally scaled Gram matrix
    ``D G D`` with ``D = scale``.
    """

    h_t: float
    h_x: float
    bottom: bool
    G: np.ndarray
    B: np.ndarray
    chol: tuple
    scale: np.ndarray
    GinvB: np.ndarray
    N: np.ndarray

    @property
    def n_test(self) -> int:
        return self.G.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply ``G^{-1}`` to the columns of ``rhs`` (shape ``(n_test, ...)``)."""
        d = self.scale.reshape((-1,) + (1,) * (rhs.ndim - 1))
        return d * sla.cho_solve(self.chol, d * rhs)


def _gram(ht: float, hx: float, bottom: bool) -> np.ndarray:
    v1, v2, a1, a2 = _test_fields(ht, hx)
    wq = _reference_tables()["wq"] * (ht * hx)
    g = sum((m * wq[:, None]).T @ m for m in (v1, v2, a1, a2))
    g = 0.5 * (g + g.T)
    if not bottom:
        return g
    out = np.zeros((N_TEST + N_XI, N_TEST + N_XI))
    out[:N_TEST, :N_TEST] = g
    out[N_TEST:, N_TEST:] = hx * _XI_MASS
    return out


def _trial(ht: float, hx: float, bottom: bool) -> np.ndarray:
    r = _reference_tables()
    v1, v2, a1, a2 = _test_fields(ht, hx)
    wq = r["wq"] * (ht * hx)
    nt = N_TEST + (N_XI if bottom else 0)
    b = np.zeros((nt, N_TRIAL))
    b[:N_TEST, 0] = wq @ a1
    b[:N_TEST, 1] = wq @ a2
    phi, phi_t, phi_x = r["P"], r["Pt"] / ht, r["Px"] / hx
    b[:N_TEST, 2:6] = (v1 * wq[:, None]).T @ phi_t + (v2 * wq[:, None]).T @ phi_x - (a1 * wq[:, None]).T @ phi
    b[:N_W, 6] = -ht * r["W_left"]
    b[:N_W, 7] = ht * r["W_right"]
    if bottom:
        # <uhat(0, .), xi>: only the two bottom corners are nonzero at t = 0
        b[N_TEST:, 2:4] = hx * _XI_MASS
    return b


@functools.lru_cache(maxsize=4096)
def shape_class(ht: float, hx: float, bottom: bool) -> ShapeClass:
    g = _gram(ht, hx, bottom)
    b = _trial(ht, hx, bottom)
    d = 1.0 / np.sqrt(np.diag(g))
    try:
        chol = sla.cho_factor(d[:, None] * g * d[None, :], lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - signals a quadrature bug
        raise np.linalg.LinAlgError(f"Gram factorization failed for cell shape {(ht, hx, bottom)}") from exc
    cls = ShapeClass(ht, hx, bottom, g, b, chol, d, np.empty(0), np.empty(0))
    ginv_b = cls.solve(b)
    # N = (L^-1 D B)^T (L^-1 D B) stays positive semidefinite in floating point
    c = sla.solve_triangular(chol[0], d[:, None] * b, lower=True)
    n = c.T @ c
    for arr in (g, b, ginv_b, n):
        arr.setflags(write=False)
    return ShapeClass(ht, hx, bottom, g, b, chol, d, ginv_b, n)


def _cell_shape(cell) -> tuple[float, float, bool]:
    if isinstance(cell, Cell):
        return (
            float(cell.t_hi) - float(cell.t_lo),
            float(cell.x_hi) - float(cell.x_lo),
            float(cell.t_lo) == 0.0,
        )
    ht, hx, bottom = cell
    return float(ht), float(hx), bool(bottom)


# --------------------------------------------------------------------------
# public local operations
# --------------------------------------------------------------------------
def local_gram(cell) -> np.ndarray:
    """Gram matrix of the test inner product on one cell.

    Parameters
    ----------
    cell : Cell or tuple
        A mesh cell, or a ``(h_t, h_x, bottom)`` triple.

    Returns
    -------
    ndarray
        ``20 x 20`` matrix, or ``22 x 22`` on cells touching ``t = 0``, in the
    nodal basis of :func:`~heatdpg.discretization.test_basis`.
    """
    return _to_nodal(shape_class(*_cell_shape(cell)).G)


def local_b(cell, dofmap: DofMap | None = None):
    """Trial block of the bilinear form and its global column map.

    Returns ``(B, col_map)``.  ``col_map[j]`` lists ``(global_dof, weight)``
    pairs for local column ``j`` in the numbering of the full system (field
    unknowns first, then trace unknowns); it is ``None`` without a dof map.
    Lateral-boundary node columns map to an empty list.
    """
    b = _to_nodal(shape_class(*_cell_shape(cell)).B, rows_only=True)
    if dofmap is None:
        return b, None
    c = cell.id if isinstance(cell, Cell) else int(cell)
    return b, _col_map(dofmap, c)


def _col_map(dofmap: DofMap, c: int) -> list[list[tuple[int, float]]]:
    nf = dofmap.n_field
    cols: list[list[tuple[int, float]]] = [[(2 * c, 1.0)], [(2 * c + 1, 1.0)]]
    cm = dofmap.corner_map
    for k in range(4):
        row = cm.getrow(4 * c + k)
        cols.append([(nf + int(j), float(v)) for j, v in zip(row.indices, row.data)])
    for side in range(2):
        cols.append([(nf + int(dofmap.side_flux[c, side]), 1.0)])
    return cols


def local_load(cell, problem) -> np.ndarray:
    """Load vector ``(int f w_i, 0, int u0 xi_j)`` of a single cell."""
    if not isinstance(cell, Cell):
        raise TypeError("local_load expects a Cell")
    t0, t1, x0, x1 = (float(v) for v in (cell.t_lo, cell.t_hi, cell.x_lo, cell.x_hi))
    lo = _CellBox(np.array([t0]), np.array([t1 - t0]), np.array([x0]), np.array([x1 - x0]))
    f = cell_loads(lo, problem)[0][: N_TEST + (N_XI if t0 == 0.0 else 0)]
    return _to_nodal(f, rows_only=True)


# --------------------------------------------------------------------------
# quadrature grouping for data terms
# --------------------------------------------------------------------------
@dataclass
class _CellBox:
    t_lo: np.ndarray
    h_t: np.ndarray
    x_lo: np.ndarray
    h_x: np.ndarray

    @classmethod
    def of(cls, mesh: Mesh) -> "_CellBox":
        return cls(mesh.t_lo, mesh.h_t, mesh.x_lo, mesh.h_x)

    def __len__(self):
        return self.t_lo.size


def _ref_positions(lo, h, lines, closed: bool) -> list[np.ndarray]:
    out = []
    for v in lines:
        r = (v - lo) / h
        ok = (r >= 0.0) & (r <= 1.0) if closed else (r > 0.0) & (r < 1.0)
        out.append(np.where(ok, r, np.nan))
    return out


def _keys(lo, h, breaks, singular) -> list[tuple]:
    """Per-cell ``(breaks, singular)`` reference tuples for one direction."""
    n = lo.size
    if not breaks and not singular:
        return [((), ())] * n
    br = _ref_positions(lo, h, breaks, closed=False)
    sg = _ref_positions(lo, h, singular, closed=True)
    br = np.stack(br, axis=1) if br else np.full((n, 0), np.nan)
    sg = np.stack(sg, axis=1) if sg else np.full((n, 0), np.nan)
    touched = np.flatnonzero(~np.isnan(br).all(axis=1) | ~np.isnan(sg).all(axis=1))
    keys: list[tuple] = [((), ())] * n
    for c in touched:
        keys[c] = (
            tuple(sorted(float(v) for v in br[c] if not np.isnan(v))),
            tuple(sorted(float(v) for v in sg[c] if not np.isnan(v))),
        )
    return keys


GRADED_LEVELS = 40
# one rule for every initial-datum integral, so that the initial-trace
# Pythagoras identity holds exactly in the discrete inner product
U0_POINTS = 6


def _graded_levels(h: float) -> int:
    """Grading depth toward a singular line for a cell of width ``h``.

    The innermost quadrature point must stay distinguishable from the line in
    double precision (points sit at ``line -+ h 2^-L s`` with ``s > 2^-7``).
    """
    return int(min(GRADED_LEVELS, max(1, np.floor(np.log2(h)) + 44)))


def _quad_groups(box: _CellBox, problem):
    """Yield ``(cells, (pt, wt), (px, wx))`` with shared reference rules."""
    n_s = getattr(problem, "quad_points", 4)
    kt = _keys(box.t_lo, box.h_t, tuple(problem.t_breaks), tuple(problem.t_singular))
    kx = _keys(box.x_lo, box.h_x, tuple(problem.x_breaks), tuple(problem.x_singular))
    groups: dict[tuple, list[int]] = {}
    for c, (a, b) in enumerate(zip(kt, kx)):
        lev_t = _graded_levels(box.h_t[c]) if a[1] else 0
        lev_x = _graded_levels(box.h_x[c]) if b[1] else 0
        groups.setdefault((a, b, lev_t, lev_x), []).append(c)
    for (ktc, kxc, lev_t, lev_x), cells in groups.items():
        rt = composite_rule_1d(ktc[0], ktc[1], n_smooth=n_s, levels=lev_t or GRADED_LEVELS)
        rx = composite_rule_1d(kxc[0], kxc[1], n_smooth=n_s, levels=lev_x or GRADED_LEVELS)
        yield np.asarray(cells), rt, rx


def _eval_f(problem, box: _CellBox, cells, rt, rx):
    t = box.t_lo[cells, None, None] + box.h_t[cells, None, None] * rt[0][None, :, None]
    x = box.x_lo[cells, None, None] + box.h_x[cells, None, None] * rx[0][None, None, :]
    t, x = np.broadcast_arrays(t, x)
    return np.asarray(problem.f(t, x), dtype=float).reshape(t.shape)


def _u0_rule(problem, x_lo, h_x):
    breaks = tuple(getattr(problem, "u0_breaks", ()))
    keys = _keys(x_lo, h_x, breaks, ())
    groups: dict[tuple, list[int]] = {}
    for c, key in enumerate(keys):
        groups.setdefault(key, []).append(c)
    for key, cells in groups.items():
        yield np.asarray(cells), composite_rule_1d(key[0], (), n_smooth=U0_POINTS)


def cell_loads(box, problem) -> np.ndarray:
    """Load vectors of all cells as an ``(n, 22)`` array in the modal basis.

    Rows ``20, 21`` are the initial-data entries and are zero off ``t = 0``.
    """
    if isinstance(box, Mesh):
        box = _CellBox.of(box)
    n = len(box)
    out = np.zeros((n, N_TEST + N_XI))
    wb = _MODAL_W
    if not getattr(problem, "f_is_zero", False):
        for cells, rt, rx in _quad_groups(box, problem):
            vals = _eval_f(problem, box, cells, rt, rx)
            wq = np.outer(rt[1], rx[1])
            tt, xx = np.meshgrid(rt[0], rx[0], indexing="ij")
            phi = wb(tt.ravel(), xx.ravel())
            area = box.h_t[cells] * box.h_x[cells]
            out[cells, :N_W] = area[:, None] * ((vals * wq).reshape(len(cells), -1) @ phi)
    bottom = np.flatnonzero(box.t_lo == 0.0)
    if bottom.size and not getattr(problem, "u0_is_zero", False):
        for sub, (px, wx) in _u0_rule(problem, box.x_lo[bottom], box.h_x[bottom]):
            cells = bottom[sub]
            x = box.x_lo[cells, None] + box.h_x[cells, None] * px[None, :]
            u0 = np.asarray(problem.u0(x), dtype=float).reshape(x.shape)
            xi = np.stack([1.0 - px, px], axis=1)
            out[cells, N_TEST:] = box.h_x[cells, None] * ((u0 * wx) @ xi)
    return out


def oscillations(box, problem) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell ``(osc_space, osc_time)`` of the load.

    ``osc_time = ||f - P f||^2`` with ``P`` the per-``x`` time average over the
    cell, ``osc_space = h_x^2 ||P f - mean f||^2``.  Both are tensor quadrature
    values; they stay finite for loads that are not square integrable.
    """
    if isinstance(box, Mesh):
        box = _CellBox.of(box)
    n = len(box)
    osc_s, osc_t = np.zeros(n), np.zeros(n)
    if getattr(problem, "f_is_zero", False):
        return osc_s, osc_t
    for cells, rt, rx in _quad_groups(box, problem):
        vals = _eval_f(problem, box, cells, rt, rx)
        wt, wx = rt[1], rx[1]
        avg = np.einsum("i,cij->cj", wt, vals)
        mean = avg @ wx
        area = box.h_t[cells] * box.h_x[cells]
        dev = vals - avg[:, None, :]
        osc_t[cells] = area * np.einsum("i,j,cij->c", wt, wx, dev * dev)
        osc_s[cells] = box.h_x[cells] ** 2 * area * (((avg - mean[:, None]) ** 2) @ wx)
    return osc_s, osc_t


def data_oscillation(cell: Cell, f, t_breaks=(), x_breaks=(), t_singular=(), x_singular=()) -> tuple[float, float]:
    """Oscillation terms ``(osc_space, osc_time)`` of ``f`` on one cell."""
    from types import SimpleNamespace

    prob = SimpleNamespace(
        f=f, t_breaks=t_breaks, x_breaks=x_breaks, t_singular=t_singular, x_singular=x_singular
    )
    t0, t1, x0, x1 = (float(v) for v in (cell.t_lo, cell.t_hi, cell.x_lo, cell.x_hi))
    box = _CellBox(np.array([t0]), np.array([t1 - t0]), np.array([x0]), np.array([x1 - x0]))
    s, t = oscillations(box, prob)
    return float(s[0]), float(t[0])


def initial_mismatch(bottom_facet, u0, uhat, u0_breaks=()) -> float:
    """``||u0 - uhat(0, .)||^2`` on one bottom facet.

    Parameters
    ----------
    bottom_facet : tuple of float
        The interval ``(x_lo, x_hi)``.
    u0 : callable
        Initial datum, vectorized in ``x``.
    uhat : callable or pair of float
        The discrete trace at ``t = 0``, either as a function of ``x`` or as
        its values at the two facet endpoints.
    """
    a, b = (float(v) for v in bottom_facet)
    h = b - a
    keys = _keys(np.array([a]), np.array([h]), tuple(u0_breaks), ())
    px, wx = composite_rule_1d(keys[0][0], (), n_smooth=U0_POINTS)
    x = a + h * px
    if callable(uhat):
        uh = np.asarray(uhat(x), dtype=float)
    else:
        ua, ub = uhat
        uh = ua * (1.0 - px) + ub * px
    diff = np.asarray(u0(x), dtype=float) - uh
    return float(h * np.dot(wx, diff * diff))


def initial_mismatches(mesh: Mesh, problem, corner_values: np.ndarray) -> np.ndarray:
    """Vectorized :func:`initial_mismatch` over all bottom cells.

    ``corner_values`` holds the four corner values of ``uhat`` per cell.
    """
    out = np.zeros(mesh.n_cells)
    bottom = np.flatnonzero(mesh.is_bottom)
    if not bottom.size:
        return out
    breaks = tuple(getattr(problem, "u0_breaks", ()))
    keys = _keys(mesh.x_lo[bottom], mesh.h_x[bottom], breaks, ())
    groups: dict[tuple, list[int]] = {}
    for c, key in enumerate(keys):
        groups.setdefault(key, []).append(c)
    for key, sub in groups.items():
        cells = bottom[np.asarray(sub)]
        px, wx = composite_rule_1d(key[0], (), n_smooth=U0_POINTS)
        x = mesh.x_lo[cells, None] + mesh.h_x[cells, None] * px[None, :]
        uh = corner_values[cells, 0, None] * (1.0 - px) + corner_values[cells, 1, None] * px
        diff = np.asarray(problem.u0(x), dtype=float).reshape(x.shape) - uh
        out[cells] = mesh.h_x[cells] * ((diff * diff) @ wx)
    return out


# --------------------------------------------------------------------------
# global system
# --------------------------------------------------------------------------
@dataclass
class LocalSystem:
    """Local matrices of one cell (see module docstring for orderings)."""

    G: np.ndarray
    B: np.ndarray
    F: np.ndarray
    col_map: list


@dataclass
class NormalSystem:
    """Normal equations ``S x = rhs`` of the discrete residual minimization.

    In ``"full"`` mode ``x`` holds the ``2 n`` field unknowns followed by the
    trace unknowns.  In ``"condensed"`` mode the field unknowns are
    eliminated per cell and ``x`` holds trace unknowns only.
    """

    mesh: Mesh
    dofmap: DofMap
    S: sp.csr_matrix
    rhs: np.ndarray
    mode: str
    classes: list[ShapeClass]
    class_of: np.ndarray
    loads: np.ndarray
    P: sp.csr_matrix
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def local(self, c: int) -> LocalSystem:
        """Local matrices of cell ``c`` in the nodal test basis."""
        k = self.classes[self.class_of[c]]
        return LocalSystem(
            _to_nodal(k.G),
            _to_nodal(k.B, rows_only=True),
            _to_nodal(self.loads[c, : k.n_test], rows_only=True),
            _col_map(self.dofmap, c),
        )

    def local_coefficients(self, x_full: np.ndarray) -> np.ndarray:
        """Local trial coefficients ``(n, 8)`` from a full global vector."""
        return (self.P @ x_full).reshape(-1, N_TRIAL)

    def local_residuals(self, x_full: np.ndarray) -> np.ndarray:
        """``F_K - B_K x_K`` for every cell, shape ``(n, 22)`` (zero padded)."""
        xl = self.local_coefficients(x_full)
        r = self.loads.copy()
        for j, k in enumerate(self.classes):
            cells = np.flatnonzero(self.class_of == j)
            r[cells, : k.n_test] -= xl[cells] @ k.B.T
        return r


def _shape_classes(mesh: Mesh):
    keys = np.stack([mesh.lt, mesh.lx, mesh.is_bottom.astype(np.int64)], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    classes = [shape_class(float(np.ldexp(1.0, -lt)), float(np.ldexp(1.0, -lx)), bool(b)) for lt, lx, b in uniq]
    return classes, inverse.ravel()


def prolongation(dofmap: DofMap) -> sp.csr_matrix:
    """Sparse map from global unknowns (field then trace) to local columns."""
    n = dofmap.n_cells
    nf = dofmap.n_field
    cm = dofmap.corner_map.tocoo()
    cell, corner = np.divmod(cm.row, 4)
    rows = [np.arange(n) * N_TRIAL, np.arange(n) * N_TRIAL + 1, cell * N_TRIAL + 2 + corner]
    cols = [2 * np.arange(n), 2 * np.arange(n) + 1, nf + cm.col]
    vals = [np.ones(n), np.ones(n), cm.data]
    for side in range(2):
        rows.append(np.arange(n) * N_TRIAL + 6 + side)
        cols.append(nf + dofmap.side_flux[:, side])
        vals.append(np.ones(n))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N_TRIAL * n, dofmap.n_total),
    )


def _block_diag(blocks: np.ndarray) -> sp.bsr_matrix:
    n, a, b = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(n), np.arange(n + 1)), shape=(n * a, n * b))


def assemble(mesh: Mesh, dofmap: DofMap, problem, mode: str = "full") -> NormalSystem:
    """Assemble the normal equations.

    Parameters
    ----------
    mode : {"full", "condensed"}
        ``"condensed"`` eliminates the cellwise constant fields ``(u, sigma)``
        and returns a trace-only system.
    """
    if mode not in ("full", "condensed"):
        raise ValueError(f"unknown assembly mode {mode!r}")
    n = mesh.n_cells
    classes, class_of = _shape_classes(mesh)
    loads = cell_loads(mesh, problem)
    n_blocks = np.empty((n, N_TRIAL, N_TRIAL))
    rhs_loc = np.empty((n, N_TRIAL))
    for j, k in enumerate(classes):
        cells = np.flatnonzero(class_of == j)
        n_blocks[cells] = k.N
        rhs_loc[cells] = loads[cells, : k.n_test] @ k.GinvB
    P = prolongation(dofmap)
    extras: dict = {}
    if mode == "full":
        S = (P.T @ _block_diag(n_blocks) @ P).tocsr()
        rhs = P.T @ rhs_loc.ravel()
    else:
        naa = n_blocks[:, :2, :2]
        nab = n_blocks[:, :2, 2:]
        inv_aa = np.linalg.inv(naa)
        schur = n_blocks[:, 2:, 2:] - np.einsum("cba,cbd,cde->cae", nab, inv_aa, nab)
        schur = 0.5 * (schur + schur.transpose(0, 2, 1))
        red = rhs_loc[:, 2:] - np.einsum("cba,cbd,cd->ca", nab, inv_aa, rhs_loc[:, :2])
        trace_rows = (np.arange(n)[:, None] * N_TRIAL + np.arange(2, N_TRIAL)).ravel()
        Pt = P[trace_rows][:, dofmap.n_field :].tocsr()
        S = (Pt.T @ _block_diag(schur) @ Pt).tocsr()
        rhs = Pt.T @ red.ravel()
        extras = {"inv_aa": inv_aa, "nab": nab, "rhs_a": rhs_loc[:, :2], "P_trace": Pt}
    S = (0.5 * (S + S.T)).tocsr()
    S.eliminate_zeros()
    return NormalSystem(mesh, dofmap, S, np.asarray(rhs), mode, classes, class_of, loads, P, extras)
