"""Model problems for the heat equation on ``(0,1) x (0,1)``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["Problem", "experiment1", "experiment2", "experiment3", "experiment4", "zero_problem"]


@dataclass(frozen=True)
class Problem:
    """Data of one heat-equation run.

    Attributes
    ----------
    f : callable
        Source term ``f(t, x)``, vectorized.
    u0 : callable
        Initial datum ``u0(x)``, vectorized.
    exact_u, exact_sigma : callable, optional
        Exact solution and ``sigma = -du/dx`` when known.
    t_breaks, x_breaks : tuple of float
        Lines where ``f`` jumps; cells are split there during quadrature.
    t_singular, x_singular : tuple of float
        Lines where ``f`` blows up; quadrature is graded toward them.
    u0_breaks : tuple of float
        Jump points of ``u0``.
    regularized : bool
        True when ``f`` is not square integrable, so the oscillation terms are
        finite only because of quadrature.
    """

    name: str
    f: Callable
    u0: Callable
    exact_u: Optional[Callable] = None
    exact_sigma: Optional[Callable] = None
    t_breaks: tuple = ()
    x_breaks: tuple = ()
    t_singular: tuple = ()
    x_singular: tuple = ()
    u0_breaks: tuple = ()
    f_is_zero: bool = False
    u0_is_zero: bool = False
    regularized: bool = False
    quad_points: int = 4
    params: dict = field(default_factory=dict)

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None


def _zeros_t_x(t, x):
    return np.zeros(np.broadcast(t, x).shape)


def _zeros_x(x):
    return np.zeros(np.shape(x))


def zero_problem() -> Problem:
    """``f = 0``, ``u0 = 0``; the exact solution vanishes."""
    return Problem(
        "zero", _zeros_t_x, _zeros_x, exact_u=_zeros_t_x, exact_sigma=_zeros_t_x, f_is_zero=True, u0_is_zero=True
    )


def experiment1() -> Problem:
    """Smooth solution ``u = t^2 x (1 - x)``."""

    def u(t, x):
        return t**2 * x * (1 - x)

    def sigma(t, x):
        return -(t**2) * (1 - 2 * x)

    def f(t, x):
        return 2 * t * x * (1 - x) + 2 * t**2

    return Problem("experiment1", f, _zeros_x, exact_u=u, exact_sigma=sigma, u0_is_zero=True)


def experiment2() -> Problem:
    """Checkerboard source ``(-1)^(floor(4t) + floor(4x))``."""

    def f(t, x):
        k = np.floor(4 * np.asarray(t)) + np.floor(4 * np.asarray(x))
        return np.where(k % 2 == 0, 1.0, -1.0)

    lines = (0.25, 0.5, 0.75)
    return Problem("experiment2", f, _zeros_x, t_breaks=lines, x_breaks=lines, u0_is_zero=True)


def experiment3() -> Problem:
    """No source; initial datum jumps from -1 to +1 at ``x = 1/2``."""

    def u0(x):
        return np.where(np.asarray(x) < 0.5, -1.0, 1.0)

    return Problem("experiment3", _zeros_t_x, u0, u0_breaks=(0.5,), f_is_zero=True)


ALPHA_RANGE = (-0.75, 0.0)


def experiment4(alpha: float, axis: str = "space") -> Problem:
    """Singular source ``|x - 1/2|^alpha`` (``axis="space"``) or ``|t - 1/2|^alpha``.

    Parameters
    ----------
    alpha : float
        Exponent in ``[-0.75, 0]``.
    axis : {"space", "time"}
    """
    alpha = float(alpha)
    if not ALPHA_RANGE[0] <= alpha <= ALPHA_RANGE[1]:
        raise ValueError(f"alpha must lie in [{ALPHA_RANGE[0]}, {ALPHA_RANGE[1]}], got {alpha}")
    if axis not in ("space", "time"):
        raise ValueError(f"axis must be 'space' or 'time', got {axis!r}")
    if axis == "space":

        def f(t, x):
            return np.broadcast_to(np.abs(np.asarray(x) - 0.5) ** alpha, np.broadcast(t, x).shape)

    else:

        def f(t, x):
            return np.broadcast_to(np.abs(np.asarray(t) - 0.5) ** alpha, np.broadcast(t, x).shape)

    sing = (0.5,) if alpha < 0 else ()
    return Problem(
        f"experiment4[{axis},{alpha:g}]",
        f,
        _zeros_x,
        t_singular=sing if axis == "time" else (),
        x_singular=sing if axis == "space" else (),
        u0_is_zero=True,
        regularized=alpha <= -0.5,
        quad_points=8 if alpha < 0 else 4,
        params={"alpha": alpha, "axis": axis},
    )
