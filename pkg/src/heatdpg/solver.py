"""Solution of the normal equations and evaluation of the discrete fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import NormalSystem

__all__ = ["ConvergenceError", "Solution", "evaluate", "galerkin_residual", "solve"]

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Iterative solve did not reach the requested tolerance."""


@dataclass(frozen=True)
class Solution:
    """Discrete minimizer.

    Attributes
    ----------
    x : ndarray
        Full coefficient vector: ``2 n`` field unknowns ``(u, sigma)`` per
        cell, then node values of ``uhat``, then one flux per coarse
        space-normal facet.
    system : NormalSystem
        The assembled system (keeps the cached Gram factors per cell shape).
    """

    x: np.ndarray
    system: NormalSystem

    @property
    def mesh(self):
        return self.system.mesh

    @property
    def dofmap(self):
        return self.system.dofmap

    @property
    def field(self) -> np.ndarray:
        return self.x[: self.dofmap.n_field].reshape(-1, 2)

    @property
    def trace(self) -> np.ndarray:
        return self.x[self.dofmap.n_field :]

    @property
    def node_values(self) -> np.ndarray:
        """``uhat`` at every mesh node, including hanging and lateral ones."""
        return self.dofmap.node_value_map() @ self.trace

    @property
    def corner_values(self) -> np.ndarray:
        """``uhat`` at the four corners of every cell, shape ``(n, 4)``."""
        return (self.dofmap.corner_map @ self.trace).reshape(-1, 4)

    @property
    def fluxes(self) -> np.ndarray:
        return self.trace[self.dofmap.n_node_dofs :]

    def with_coefficients(self, x) -> "Solution":
        return Solution(np.asarray(x, dtype=float), self.system)


def _scaled(S: sp.spmatrix):
    d = np.asarray(S.diagonal())
    if np.any(d <= 0):
        raise np.linalg.LinAlgError("normal matrix has a non-positive diagonal entry")
    d = 1.0 / np.sqrt(d)
    D = sp.diags(d)
    return (D @ S @ D).tocsc(), d


def _solve_matrix(S, rhs, tol: float, method: str) -> np.ndarray:
    if not np.any(rhs):
        return np.zeros_like(rhs)
    As, d = _scaled(S)
    b = d * rhs
    if method == "direct":
        # SPD after scaling: symmetric mode without pivoting keeps the fill low
        lu = spla.splu(
            As, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
        )
        y = lu.solve(b)
    elif method == "cg":
        n = b.size
        maxiter = int(50 * np.sqrt(n)) + 10
        y, info = spla.cg(As, b, rtol=tol, atol=0.0, maxiter=maxiter)
        if info != 0:
            raise ConvergenceError(f"conjugate gradients stopped after {maxiter} iterations")
    else:
        raise ValueError(f"unknown solver method {method!r}")
    x = d * y
    res = np.linalg.norm(S @ x - rhs)
    if res > tol * np.linalg.norm(rhs) * 1e3:
        log.warning("normal system residual %.3e exceeds tolerance", res / np.linalg.norm(rhs))
    return x


def solve(system: NormalSystem, tol: float = 1e-10, method: str = "direct") -> Solution:
    """Solve ``S x = rhs``.

    Parameters
    ----------
    system : NormalSystem
    tol : float
        Relative residual tolerance (used as the stopping test for ``"cg"``).
    method : {"direct", "cg"}
        Sparse direct factorization or Jacobi-preconditioned conjugate
        gradients, both on the symmetrically diagonal-scaled matrix.

    Returns
    -------
    Solution
        Always carries the full coefficient vector; in condensed mode the
        field unknowns are recovered cellwise.
    """
    y = _solve_matrix(system.S, system.rhs, tol, method)
    if system.mode == "full":
        return Solution(y, system)
    ex = system.extras
    xt = (ex["P_trace"] @ y).reshape(-1, 6)
    rhs_a = ex["rhs_a"] - np.einsum("cab,cb->ca", ex["nab"], xt)
    field = np.einsum("cab,cb->ca", ex["inv_aa"], rhs_a)
    return Solution(np.concatenate([field.ravel(), y]), system)


def galerkin_residual(system: NormalSystem, solution) -> float:
    """Max-norm of ``sum_K P_K^T B_K^T G_K^{-1} (F_K - B_K x_K)``.

    Zero at the exact minimizer regardless of the assembly mode.
    """
    x = solution.x if isinstance(solution, Solution) else np.asarray(solution, dtype=float)
    r = system.local_residuals(x)
    z = np.zeros((system.mesh.n_cells, 8))
    for j, k in enumerate(system.classes):
        cells = np.flatnonzero(system.class_of == j)
        z[cells] = r[cells, : k.n_test] @ k.GinvB
    g = system.P.T @ z.ravel()
    return float(np.max(np.abs(g))) if g.size else 0.0


def evaluate(solution: Solution, t, x):
    """Evaluate ``(u_h, sigma_h, uhat_h)`` at points of the closed unit square.

    ``u_h`` and ``sigma_h`` are read from a containing cell; ``uhat_h`` is
    the constrained bilinear interpolant and hence continuous.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    scalar = t.ndim == 0 and x.ndim == 0
    t, x = np.broadcast_arrays(np.atleast_1d(t), np.atleast_1d(x))
    mesh = solution.mesh
    cells = np.asarray(mesh.locate(t.ravel(), x.ravel()))
    f = solution.field[cells]
    cv = solution.corner_values[cells]
    s = (t.ravel() - mesh.t_lo[cells]) / mesh.h_t[cells]
    y = (x.ravel() - mesh.x_lo[cells]) / mesh.h_x[cells]
    uh = (1 - s) * ((1 - y) * cv[:, 0] + y * cv[:, 1]) + s * ((1 - y) * cv[:, 2] + y * cv[:, 3])
    out = tuple(v.reshape(t.shape) for v in (f[:, 0], f[:, 1], uh))
    if scalar:
        return tuple(float(v[0]) for v in out)
    return out
