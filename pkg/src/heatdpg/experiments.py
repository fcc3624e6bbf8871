"""Experiment registry, error metrics, rate regression and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import math
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .adaptivity import AdaptConfig, RunRecord, adapt_loop
from .discretization import gauss_1d
from .problems import Problem, experiment1, experiment2, experiment3, experiment4, zero_problem

__all__ = [
    "CSV_COLUMNS",
    "Problem",
    "RunRecord",
    "error_metrics",
    "experiment1",
    "experiment2",
    "experiment3",
    "experiment4",
    "get_problem",
    "rate_regression",
    "read_csv",
    "run",
    "write_csv",
    "zero_problem",
]

CSV_COLUMNS = (
    "ndof",
    "eta2",
    "res2",
    "osc_space2",
    "osc_time2",
    "init2",
    "errU",
    "errSigma",
    "errUhat",
    "errGamma0",
    "seconds",
    "theta2",
)


def get_problem(experiment: int, alpha: float = 0.0, axis: str = "space") -> Problem:
    """Problem of experiment number 1 to 4."""
    if experiment == 1:
        return experiment1()
    if experiment == 2:
        return experiment2()
    if experiment == 3:
        return experiment3()
    if experiment == 4:
        return experiment4(alpha, axis)
    raise ValueError(f"unknown experiment {experiment!r}")


def error_metrics(solution, exact: Problem | None = None, mesh=None, n_quad: int = 4) -> dict:
    """Squared errors of the discrete solution against a known exact solution.

    Returns a dict with ``errU = ||u - u_h||^2``, ``errSigma``,
    ``errUhat = ||u - uhat_h||^2`` (all over the space-time cylinder) and
    ``errGamma0 = ||u(0) - uhat_h(0)||^2`` over the initial line.

    Parameters
    ----------
    solution : Solution
    exact : Problem
        Supplies ``exact_u`` and ``exact_sigma``.
    mesh : Mesh, optional
        Defaults to the solution's mesh.
    """
    if exact is None or exact.exact_u is None:
        raise ValueError("error metrics need a problem with an exact solution")
    mesh = solution.mesh if mesh is None else mesh
    q, w = gauss_1d(n_quad)
    qt, qx = np.meshgrid(q, q, indexing="ij")
    qt, qx, wq = qt.ravel(), qx.ravel(), np.outer(w, w).ravel()
    t = mesh.t_lo[:, None] + mesh.h_t[:, None] * qt
    x = mesh.x_lo[:, None] + mesh.h_x[:, None] * qx
    area = mesh.area
    fld = solution.field
    cv = solution.corner_values
    uh = (1 - qt) * ((1 - qx) * cv[:, 0:1] + qx * cv[:, 1:2]) + qt * ((1 - qx) * cv[:, 2:3] + qx * cv[:, 3:4])
    u = exact.exact_u(t, x)
    s = exact.exact_sigma(t, x)

    def l2(d):
        return float(area @ ((d * d) @ wq))

    bottom = np.flatnonzero(mesh.is_bottom)
    xb = mesh.x_lo[bottom, None] + mesh.h_x[bottom, None] * q
    ub = (1 - q) * cv[bottom, 0:1] + q * cv[bottom, 1:2]
    d0 = exact.exact_u(np.zeros_like(xb), xb) - ub
    return {
        "errU": l2(u - fld[:, 0:1]),
        "errSigma": l2(s - fld[:, 1:2]),
        "errUhat": l2(u - uh),
        "errGamma0": float(mesh.h_x[bottom] @ ((d0 * d0) @ w)),
    }


Selector = Union[str, Callable[[RunRecord], float]]


def rate_regression(records: Sequence, quantity: Selector = "eta2", ndof: Sequence | None = None) -> float:
    """Convergence rate: minus the least-squares slope of ``log q`` over ``log ndof``.

    Parameters
    ----------
    records : sequence of RunRecord, or of float when ``ndof`` is given
    quantity : str or callable
        Attribute name or accessor applied to each record.
    ndof : sequence of int, optional
        Degrees of freedom, when ``records`` holds the raw values.
    """
    if ndof is None:
        get = (lambda r: getattr(r, quantity)) if isinstance(quantity, str) else quantity
        vals = np.array([get(r) for r in records], dtype=float)
        n = np.array([r.ndof for r in records], dtype=float)
    else:
        vals = np.asarray(records, dtype=float)
        n = np.asarray(ndof, dtype=float)
    if vals.size < 3:
        raise ValueError("rate regression needs at least three records")
    if np.any(~np.isfinite(vals)) or np.any(vals <= 0) or np.any(n <= 0):
        raise ValueError("rate regression needs positive values")
    slope = np.polyfit(np.log(n), np.log(vals), 1)[0]
    return float(-slope) + 0.0


def run(problem: Problem, config: AdaptConfig | None = None, **kwargs) -> list[RunRecord]:
    """Adaptive or uniform run with error metrics when the solution is known."""
    return adapt_loop(problem, config, errors=error_metrics if problem.has_exact else None, **kwargs)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------
def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(records: Iterable[RunRecord], path) -> Path:
    """Write one record per line; missing values become empty fields."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return path


def read_csv(path) -> list[RunRecord]:
    """Inverse of :func:`write_csv`."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for c in CSV_COLUMNS:
                raw = row.get(c, "")
                if raw == "" or raw is None:
                    vals[c] = None
                elif c == "ndof":
                    vals[c] = int(raw)
                else:
                    vals[c] = float(raw)
            if vals.get("theta2") is None:
                vals["theta2"] = 0.0
            if vals.get("seconds") is None:
                vals["seconds"] = 0.0
            out.append(RunRecord(**vals))
    return out


def records_equal(a: Sequence[RunRecord], b: Sequence[RunRecord]) -> bool:
    """Compare the CSV-visible fields of two histories exactly."""
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for c in CSV_COLUMNS:
            va, vb = getattr(ra, c), getattr(rb, c)
            if va is None or vb is None:
                if va is not vb:
                    return False
            elif not (va == vb or (isinstance(va, float) and math.isnan(va) and math.isnan(vb))):
                return False
    return True


def as_dicts(records: Iterable[RunRecord]) -> list[dict]:
    return [dataclasses.asdict(r) for r in records]
