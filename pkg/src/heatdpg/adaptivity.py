"""Built-in error estimator, Doerfler marking and the refine-solve loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .assembly import N_TEST, U0_POINTS, NormalSystem, assemble, initial_mismatches, oscillations
from .discretization import build_dof_map, composite_rule_1d
from .mesh import EQUAL, PARABOLIC, Mesh, new_uniform, refine
from .solver import Solution, solve

__all__ = [
    "AdaptConfig",
    "Indicator",
    "RunRecord",
    "adapt_loop",
    "estimate",
    "lift_residual",
    "mark",
    "pythagoras_check",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Indicator:
    """Per-cell estimator contributions.

    ``res2`` is the full test-norm of the lifted residual, including the
    initial-trace part ``theta2`` on bottom cells.  The refinement indicator
    ``eta2`` uses the graph-norm part ``res2 - theta2`` because ``init2``
    already contains ``theta2`` (see :func:`pythagoras_check`).
    """

    res2: np.ndarray
    theta2: np.ndarray
    osc_space2: np.ndarray
    osc_time2: np.ndarray
    init2: np.ndarray
    regularized: bool = False

    @property
    def eta2(self) -> np.ndarray:
        return (self.res2 - self.theta2) + self.osc_space2 + self.osc_time2 + self.init2

    def total(self, name: str = "eta2") -> float:
        return float(np.sum(getattr(self, name)))

    @property
    def totals(self) -> dict:
        return {k: self.total(k) for k in ("eta2", "res2", "theta2", "osc_space2", "osc_time2", "init2")}


def _lift(system: NormalSystem, x: np.ndarray):
    r = system.local_residuals(x)
    eta = np.zeros_like(r)
    for j, k in enumerate(system.classes):
        cells = np.flatnonzero(system.class_of == j)
        if cells.size:
            eta[cells, : k.n_test] = k.solve(r[cells, : k.n_test].T).T
    return r, eta


def lift_residual(cell: int, solution: Solution, problem=None):
    """Residual lift ``eta_K = G_K^{-1}(F_K - B_K x_K)`` of one cell.

    Returns ``(eta_K, res2_K)`` with ``res2_K = eta_K^T G_K eta_K``; on bottom
    cells the last two entries of ``eta_K`` are the initial-trace part.
    ``problem`` is accepted for symmetry with :func:`estimate`; the load is
    taken from the assembled system.
    """
    system = solution.system
    k = system.classes[system.class_of[cell]]
    xl = system.local_coefficients(solution.x)[cell]
    r = system.loads[cell, : k.n_test] - k.B @ xl
    eta = k.solve(r)
    return eta, float(eta @ k.G @ eta)


def estimate(mesh: Mesh, solution: Solution, problem, check: bool = True) -> Indicator:
    """Evaluate all estimator contributions on every cell.

    With ``check=True`` the Pythagoras identity on the bottom facets is
    verified and a warning is logged on mismatch.
    """
    system = solution.system
    r, eta = _lift(system, solution.x)
    res2 = np.einsum("ci,ci->c", r, eta)
    theta2 = np.zeros(mesh.n_cells)
    bottom = np.flatnonzero(mesh.is_bottom)
    if bottom.size:
        th = eta[bottom, N_TEST:]
        m = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        theta2[bottom] = mesh.h_x[bottom] * np.einsum("ci,ij,cj->c", th, m, th)
    osc_s, osc_t = oscillations(mesh, problem)
    init2 = initial_mismatches(mesh, problem, solution.corner_values)
    ind = Indicator(
        np.maximum(res2, 0.0), theta2, osc_s, osc_t, init2, regularized=bool(getattr(problem, "regularized", False))
    )
    if check and bottom.size:
        lhs = init2[bottom]
        rhs = theta2[bottom] + _u0_projection_error(mesh, problem, bottom)
        scale = max(float(np.max(np.abs(lhs))), 1e-300)
        if np.max(np.abs(lhs - rhs)) > 1e-9 * scale:
            log.warning("initial-trace Pythagoras identity violated by %.3e", np.max(np.abs(lhs - rhs)))
    return ind


def _u0_projection_error(mesh: Mesh, problem, cells) -> np.ndarray:
    """``||u0 - P1 u0||^2`` on the bottom sides of ``cells``."""
    out = np.zeros(len(cells))
    if getattr(problem, "u0_is_zero", False):
        return out
    for i, c in enumerate(cells):
        out[i] = _p1_error((mesh.x_lo[c], mesh.x_hi[c]), problem.u0, tuple(getattr(problem, "u0_breaks", ())))
    return out


def _p1_error(facet, u0, breaks=()) -> float:
    a, b = (float(v) for v in facet)
    h = b - a
    ref = tuple((v - a) / h for v in breaks if a < v < b)
    px, wx = composite_rule_1d(ref, (), n_smooth=U0_POINTS)
    vals = np.asarray(u0(a + h * px), dtype=float)
    basis = np.stack([1.0 - px, px], axis=1)
    mass = h * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    coef = np.linalg.solve(mass, h * (basis.T @ (wx * vals)))
    diff = vals - basis @ coef
    return float(h * np.dot(wx, diff * diff))


def pythagoras_check(bottom_facet, u0, uhat, theta, u0_breaks=()) -> tuple[float, float]:
    """Both sides of ``||u0 - uhat||^2 = ||theta||^2 + ||u0 - P1 u0||^2``.

    Parameters
    ----------
    bottom_facet : tuple of float
        ``(x_lo, x_hi)``.
    uhat, theta : pair of float
        Endpoint values of the affine functions ``uhat(0, .)`` and ``theta``.

    Returns
    -------
    lhs, rhs : float
        The left side by quadrature; the right side from the lift
        coefficients plus a separate quadrature of the projection error.
    """
    from .assembly import initial_mismatch

    a, b = (float(v) for v in bottom_facet)
    lhs = initial_mismatch((a, b), u0, uhat, u0_breaks)
    th = np.asarray(theta, dtype=float)
    m = (b - a) * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    rhs = float(th @ m @ th) + _p1_error((a, b), u0, u0_breaks)
    return lhs, rhs


def mark(indicator, theta: float = 0.5) -> set[int]:
    """Doerfler marking.

    Returns the smallest prefix of cells, sorted by descending indicator with
    ties broken by cell id, whose sum reaches ``theta`` times the total.
    ``indicator`` is an :class:`Indicator` (its ``eta2`` is used) or an array.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    vals = np.asarray(indicator.eta2 if isinstance(indicator, Indicator) else indicator, dtype=float)
    total = float(vals.sum())
    if vals.size == 0 or total <= 0.0:
        return set()
    order = np.lexsort((np.arange(vals.size), -vals))
    csum = np.cumsum(vals[order])
    # relative slack so that e.g. theta * n equal values is hit exactly
    k = int(np.searchsorted(csum, theta * total * (1.0 - 1e-12), side="left")) + 1
    k = min(k, vals.size)
    if theta >= 1.0:
        k = int(np.count_nonzero(vals > 0))
    return {int(c) for c in order[:k]}


@dataclass
class AdaptConfig:
    """Settings of :func:`adapt_loop`."""

    scaling: str = EQUAL
    theta: float = 0.5
    uniform: bool = False
    ndof_max: int = 10_000
    residual_only_marking: bool = False
    initial: tuple = (2, 2)
    assembly_mode: str = "condensed"
    solver: str = "direct"
    max_iterations: int = 200

    def __post_init__(self):
        if self.scaling not in (EQUAL, PARABOLIC):
            raise ValueError(f"unknown scaling {self.scaling!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.ndof_max < 1:
            raise ValueError("ndof_max must be positive")


@dataclass
class RunRecord:
    """One row of a convergence history."""

    ndof: int
    eta2: float
    res2: float
    osc_space2: float
    osc_time2: float
    init2: float
    errU: Optional[float] = None
    errSigma: Optional[float] = None
    errUhat: Optional[float] = None
    errGamma0: Optional[float] = None
    seconds: float = 0.0
    theta2: float = 0.0
    n_cells: int = 0
    regularized: bool = False


def adapt_loop(
    problem,
    config: AdaptConfig | None = None,
    errors: Callable | None = None,
    callback: Callable | None = None,
    **kwargs,
) -> list[RunRecord]:
    """Solve, estimate, record, mark and refine until ``ndof > ndof_max``.

    Parameters
    ----------
    problem : Problem
    config : AdaptConfig, optional
        Keyword arguments override or replace it.
    errors : callable, optional
        ``errors(solution, problem) -> dict`` with squared error components.
    callback : callable, optional
        Called as ``callback(mesh, solution, indicator, record)`` per step.
    """
    if config is None:
        config = AdaptConfig(**kwargs)
    elif kwargs:
        config = AdaptConfig(**{**config.__dict__, **kwargs})
    mesh = new_uniform(*config.initial)
    records: list[RunRecord] = []
    for _ in range(config.max_iterations):
        start = time.perf_counter()
        dofmap = build_dof_map(mesh)
        system = assemble(mesh, dofmap, problem, mode=config.assembly_mode)
        sol = solve(system, method=config.solver)
        ind = estimate(mesh, sol, problem, check=False)
        tot = ind.totals
        rec = RunRecord(
            ndof=dofmap.ndof,
            eta2=tot["eta2"],
            res2=tot["res2"],
            osc_space2=tot["osc_space2"],
            osc_time2=tot["osc_time2"],
            init2=tot["init2"],
            theta2=tot["theta2"],
            n_cells=mesh.n_cells,
            regularized=ind.regularized,
        )
        if errors is not None and getattr(problem, "has_exact", False):
            for key, val in errors(sol, problem).items():
                setattr(rec, key, float(val))
        rec.seconds = time.perf_counter() - start
        records.append(rec)
        log.info("ndof=%d cells=%d eta2=%.4e res2=%.4e", rec.ndof, mesh.n_cells, rec.eta2, rec.res2)
        if callback is not None:
            callback(mesh, sol, ind, rec)
        if rec.ndof > config.ndof_max:
            break
        if config.uniform:
            marked = range(mesh.n_cells)
        else:
            marked = mark(ind.res2 if config.residual_only_marking else ind.eta2, config.theta)
            if not marked:
                break
        mesh = refine(mesh, marked, config.scaling)
    return records

