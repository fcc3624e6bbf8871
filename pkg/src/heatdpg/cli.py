"""Command line driver: run one experiment, write CSV and SVG, print rates."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .adaptivity import AdaptConfig
from .experiments import CSV_COLUMNS, get_problem, rate_regression, run, write_csv
from .mesh import EQUAL

log = logging.getLogger("heatdpg")

_DEFAULTS = {
    "alpha": 0.0,
    "axis": "space",
    "scaling": EQUAL,
    "mode": "uniform",
    "theta": 0.5,
    "ndof_max": 20_000,
    "residual_only_marking": False,
    "out": ".",
    "mesh_dump": False,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="heatdpg",
        description="Space-time DPG runs for the heat equation on (0,1)^2.",
    )
    p.add_argument("--experiment", type=int, choices=(1, 2, 3, 4), help="experiment number (required)")
    p.add_argument("--alpha", type=float, help="exponent of the singular load (experiment 4)")
    p.add_argument("--axis", choices=("space", "time"), help="direction of the singularity (experiment 4)")
    p.add_argument("--scaling", choices=("equal", "parabolic"))
    p.add_argument("--mode", choices=("uniform", "adaptive"))
    p.add_argument("--theta", type=float, help="Doerfler bulk parameter")
    p.add_argument("--ndof-max", type=int, dest="ndof_max", help="stop once ndof exceeds this")
    p.add_argument(
        "--residual-only-marking",
        action="store_true",
        default=None,
        help="mark with the residual alone instead of the full indicator",
    )
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", type=Path, help="TOML file with default values for the flags")
    p.add_argument("--mesh-dump", action="store_true", default=None, help="also write the final mesh")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(path: Path) -> dict:
    """Read ``key = value`` settings; keys may use dashes or underscores."""
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with path.open("rb") as fh:
        raw = tomllib.load(fh)
    return {k.replace("-", "_"): v for k, v in raw.items()}


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    opts = dict(_DEFAULTS)
    if args.config is not None:
        cfg = load_config(args.config)
        unknown = set(cfg) - set(_DEFAULTS) - {"experiment"}
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(cfg)
    for key in list(_DEFAULTS) + ["experiment"]:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    return opts


def _tag(opts: dict) -> str:
    tag = f"exp{opts['experiment']}_{opts['scaling']}_{opts['mode']}"
    if opts["experiment"] == 4:
        tag += f"_{opts['axis']}_a{opts['alpha']:g}"
    return tag


def plot_history(records, path, title: str = "") -> Path:
    """Log-log convergence plot with reference slopes ``-1`` and ``-2/3``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    nd = [r.ndof for r in records]
    for name in ("eta2", "res2", "errU", "errSigma", "errUhat", "errGamma0"):
        vals = [getattr(r, name) for r in records]
        if all(v is not None and v > 0 for v in vals):
            ax.loglog(nd, vals, marker="o", ms=3, label=name)
    if len(nd) > 1:
        x0, x1 = nd[0], nd[-1]
        y0 = records[0].eta2 if records[0].eta2 > 0 else 1.0
        for rate, style in ((1.0, "-."), (2 / 3, "--")):
            ax.loglog([x0, x1], [y0, y0 * (x1 / x0) ** -rate], "k" + style, lw=0.8, label=f"ndof^-{rate:.3g}")
    ax.set_xlabel("ndof")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def plot_mesh(mesh, path) -> Path:
    """Draw the cells of a mesh (time horizontal, space vertical)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.collections import PolyCollection

    polys = [
        [(a, c), (b, c), (b, d), (a, d)]
        for a, b, c, d in zip(mesh.t_lo, mesh.t_hi, mesh.x_lo, mesh.x_hi)
    ]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_collection(PolyCollection(polys, facecolors="none", edgecolors="k", linewidths=0.2))
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_aspect("equal")
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        opts = resolve(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    if opts.get("experiment") is None:
        parser.error("--experiment is required")
    out = Path(opts["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        print(f"heatdpg: cannot write to {out}: {exc}", file=sys.stderr)
        return 2

    try:
        problem = get_problem(int(opts["experiment"]), float(opts["alpha"]), opts["axis"])
        config = AdaptConfig(
            scaling=opts["scaling"],
            theta=float(opts["theta"]),
            uniform=opts["mode"] == "uniform",
            ndof_max=int(opts["ndof_max"]),
            residual_only_marking=bool(opts["residual_only_marking"]),
        )
    except ValueError as exc:
        parser.error(str(exc))

    last = {}

    def keep(mesh, sol, ind, rec):
        last["mesh"] = mesh

    records = run(problem, config, callback=keep)
    tag = _tag(opts)
    csv_path = write_csv(records, out / f"{tag}.csv")
    svg_path = plot_history(records, out / f"{tag}.svg", title=tag)
    if opts["mesh_dump"]:
        (out / f"{tag}_mesh.txt").write_text(last["mesh"].dump() + "\n")
        plot_mesh(last["mesh"], out / f"{tag}_mesh.svg")

    print(f"wrote {csv_path} and {svg_path}")
    if problem.regularized:
        print("note: load is not square integrable; oscillation terms are quadrature values")
    if len(records) >= 3:
        for name in ("eta2", "res2") + CSV_COLUMNS[6:10]:
            vals = [getattr(r, name) for r in records]
            if all(v is not None and v > 0 and math.isfinite(v) for v in vals):
                print(f"rate {name:10s} {rate_regression(records, name):.3f}")
    else:
        print("fewer than three meshes; no rates")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
