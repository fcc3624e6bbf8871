"""Dyadic space-time rectangle meshes with hanging nodes.

Cells are products ``K = K_t x K_x`` of dyadic intervals of the unit square
``(0, 1) x (0, 1)`` (time first, space second).  A cell is stored by its
integer quadtree address ``(lt, it, lx, ix)`` so that

    K_t = [it / 2**lt, (it + 1) / 2**lt],   K_x = [ix / 2**lx, (ix + 1) / 2**lx].

All geometric tests (containment of facets, coarse facets, hanging nodes) are
exact: dyadic rationals with numerators below ``2**53`` are exactly
representable as binary floats, and the constructor refuses anything else.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EQUAL",
    "PARABOLIC",
    "SPACE_NORMAL",
    "TIME_NORMAL",
    "Cell",
    "DyadicCoord",
    "Facet",
    "Mesh",
    "MeshError",
    "new_uniform",
    "refine",
    "validate",
]

EQUAL = "equal"
PARABOLIC = "parabolic"
SPACE_NORMAL = "space"
TIME_NORMAL = "time"

_MAX_LEVEL = 62
_MAX_EXACT = 2**53


class MeshError(ValueError):
    """Raised for meshes that cannot be represented or refined exactly."""


@functools.total_ordering
@dataclass(frozen=True)
class DyadicCoord:
    """Exact dyadic rational ``numerator / 2**level``."""

    numerator: int
    level: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("level must be non-negative")
        num, lev = int(self.numerator), int(self.level)
        if num == 0:
            lev = 0
        while lev > 0 and num % 2 == 0:
            num //= 2
            lev -= 1
        object.__setattr__(self, "numerator", num)
        object.__setattr__(self, "level", lev)

    @classmethod
    def from_value(cls, value) -> "DyadicCoord":
        frac = Fraction(value)
        den = frac.denominator
        if den & (den - 1):
            raise ValueError(f"{value!r} is not a dyadic rational")
        return cls(frac.numerator, den.bit_length() - 1)

    def as_fraction(self) -> Fraction:
        return Fraction(self.numerator, 2**self.level)

    def midpoint(self, other: "DyadicCoord") -> "DyadicCoord":
        lev = max(self.level, other.level)
        a = self.numerator << (lev - self.level)
        b = other.numerator << (lev - other.level)
        return DyadicCoord(a + b, lev + 1)

    def __lt__(self, other):
        if not isinstance(other, DyadicCoord):
            return NotImplemented
        lev = max(self.level, other.level)
        return (self.numerator << (lev - self.level)) < (other.numerator << (lev - other.level))

    def __add__(self, other):
        lev = max(self.level, other.level)
        return DyadicCoord(
            (self.numerator << (lev - self.level)) + (other.numerator << (lev - other.level)), lev
        )

    def __sub__(self, other):
        lev = max(self.level, other.level)
        return DyadicCoord(
            (self.numerator << (lev - self.level)) - (other.numerator << (lev - other.level)), lev
        )

    def __float__(self):
        return self.numerator / 2**self.level

    def __str__(self):
        # numerator / 2**level == numerator * 5**level / 10**level, exactly
        value = Decimal(self.numerator * 5**self.level).scaleb(-self.level)
        text = format(value, "f")
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text


@dataclass(frozen=True)
class Cell:
    id: int
    t_lo: DyadicCoord
    t_hi: DyadicCoord
    x_lo: DyadicCoord
    x_hi: DyadicCoord
    level_t: int
    level_x: int
    active: bool = True


@dataclass(frozen=True)
class Facet:
    """A cell side.  ``orientation`` is ``"space"`` for sides on a line
    ``x = const`` (normal in x) and ``"time"`` for sides on ``t = const``."""

    id: int
    orientation: str
    position: DyadicCoord
    extent: tuple[DyadicCoord, DyadicCoord]
    side_neg: tuple[int, ...]
    side_pos: tuple[int, ...]
    coarse: bool


def _dyadic(num: int, lev: int) -> DyadicCoord:
    return DyadicCoord(int(num), int(lev))


def _is_pow2(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


@dataclass
class SideTable:
    """All cell sides of one orientation, grouped into coarse facets.

    Arrays are indexed by side; ``line`` is the constant coordinate, ``lo`` and
    ``hi`` the extent along the line.  ``positive`` is True when the owning
    cell lies on the positive side of the line.  ``coarse_of`` maps each side to
    the index (into ``coarse_line/lo/hi``) of the unique coarse facet
    containing it.
    """

    line: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    cell: np.ndarray
    positive: np.ndarray
    coarse_of: np.ndarray
    coarse_line: np.ndarray
    coarse_lo: np.ndarray
    coarse_hi: np.ndarray
    owner_neg: np.ndarray
    owner_pos: np.ndarray


def _side_table(line, lo, hi, cell, positive) -> SideTable:
    order = np.lexsort((-(hi - lo), lo, line))
    line, lo, hi = line[order], lo[order], hi[order]
    cell, positive = cell[order], positive[order]
    n = line.size
    is_max = np.zeros(n, dtype=bool)
    starts = np.flatnonzero(np.r_[True, line[1:] != line[:-1]])
    stops = np.r_[starts[1:], n]
    for a, b in zip(starts, stops):
        seg_hi = hi[a:b]
        prev = np.maximum.accumulate(np.r_[-1.0, seg_hi[:-1]])
        is_max[a:b] = lo[a:b] >= prev
    max_idx = np.flatnonzero(is_max)
    # nested-or-disjoint intervals: the containing coarse facet is the last
    # maximal entry at or before each side
    last = np.maximum.accumulate(np.where(is_max, np.arange(n), -1))
    coarse_of_sorted = np.searchsorted(max_idx, last)
    coarse_of = np.empty(n, dtype=np.int64)
    coarse_of[order] = coarse_of_sorted
    same = (lo == lo[max_idx][coarse_of_sorted]) & (hi == hi[max_idx][coarse_of_sorted])
    nc = max_idx.size
    owner_neg = np.full(nc, -1, dtype=np.int64)
    owner_pos = np.full(nc, -1, dtype=np.int64)
    sel = same & ~positive
    owner_neg[coarse_of_sorted[sel]] = cell[sel]
    sel = same & positive
    owner_pos[coarse_of_sorted[sel]] = cell[sel]
    inv = np.empty(n, dtype=np.int64)
    inv[order] = np.arange(n)
    return SideTable(
        line=line[inv],
        lo=lo[inv],
        hi=hi[inv],
        cell=cell[inv],
        positive=positive[inv],
        coarse_of=coarse_of,
        coarse_line=line[max_idx],
        coarse_lo=lo[max_idx],
        coarse_hi=hi[max_idx],
        owner_neg=owner_neg,
        owner_pos=owner_pos,
    )


class Mesh:
    """Immutable set of active dyadic cells tiling ``(0,1)^2``.

    Parameters
    ----------
    lt, it, lx, ix : array_like of int
        Quadtree addresses of the cells (time level/index, space level/index).
    generation : array_like of int, optional
        Number of refinements that produced each cell (used for 2:1 balance).
    parent : array_like of int, optional
        Index of the containing cell in the mesh this one was refined from.
    """

    def __init__(self, lt, it, lx, ix, generation=None, parent=None):
        self.lt = np.asarray(lt, dtype=np.int64).copy()
        self.it = np.asarray(it, dtype=np.int64).copy()
        self.lx = np.asarray(lx, dtype=np.int64).copy()
        self.ix = np.asarray(ix, dtype=np.int64).copy()
        n = self.lt.size
        if not (self.it.size == self.lx.size == self.ix.size == n):
            raise MeshError("cell address arrays differ in length")
        if n == 0:
            raise MeshError("empty mesh")
        if self.lt.min() < 0 or self.lx.min() < 0:
            raise MeshError("negative refinement level")
        if self.lt.max() > _MAX_LEVEL or self.lx.max() > _MAX_LEVEL:
            raise MeshError("refinement level exceeds 62")
        if np.any(self.it < 0) or np.any(self.ix < 0):
            raise MeshError("negative cell index")
        if np.any(self.it >= (np.int64(1) << self.lt)) or np.any(self.ix >= (np.int64(1) << self.lx)):
            raise MeshError("cell outside the unit square")
        if np.any(self.it + 1 > _MAX_EXACT) or np.any(self.ix + 1 > _MAX_EXACT):
            raise MeshError("cell coordinates not exactly representable")
        self.generation = (
            np.zeros(n, dtype=np.int64) if generation is None else np.asarray(generation, dtype=np.int64).copy()
        )
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64).copy()
        for arr in (self.lt, self.it, self.lx, self.ix, self.generation):
            arr.setflags(write=False)

    # -- geometry ---------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return int(self.lt.size)

    def __len__(self):
        return self.n_cells

    @functools.cached_property
    def h_t(self) -> np.ndarray:
        return np.ldexp(1.0, -self.lt)

    @functools.cached_property
    def h_x(self) -> np.ndarray:
        return np.ldexp(1.0, -self.lx)

    @functools.cached_property
    def t_lo(self) -> np.ndarray:
        return np.ldexp(self.it.astype(float), -self.lt)

    @functools.cached_property
    def t_hi(self) -> np.ndarray:
        return np.ldexp((self.it + 1).astype(float), -self.lt)

    @functools.cached_property
    def x_lo(self) -> np.ndarray:
        return np.ldexp(self.ix.astype(float), -self.lx)

    @functools.cached_property
    def x_hi(self) -> np.ndarray:
        return np.ldexp((self.ix + 1).astype(float), -self.lx)

    @property
    def area(self) -> np.ndarray:
        return self.h_t * self.h_x

    @functools.cached_property
    def is_bottom(self) -> np.ndarray:
        return self.it == 0

    def cell(self, i: int) -> Cell:
        lt, it, lx, ix = (int(a[i]) for a in (self.lt, self.it, self.lx, self.ix))
        return Cell(
            id=int(i),
            t_lo=_dyadic(it, lt),
            t_hi=_dyadic(it + 1, lt),
            x_lo=_dyadic(ix, lx),
            x_hi=_dyadic(ix + 1, lx),
            level_t=lt,
            level_x=lx,
        )

    @property
    def cells(self) -> list[Cell]:
        return [self.cell(i) for i in range(self.n_cells)]

    def locate(self, t, x) -> np.ndarray:
        """Index of a cell containing each point (closed cells, first match)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((t < 0) | (t > 1) | (x < 0) | (x > 1)):
            raise ValueError("point outside the space-time cylinder")
        out = np.empty(t.size, dtype=np.int64)
        chunk = max(1, 4_000_000 // self.n_cells)
        for a in range(0, t.size, chunk):
            tt, xx = t[a : a + chunk, None], x[a : a + chunk, None]
            inside = (self.t_lo <= tt) & (tt <= self.t_hi) & (self.x_lo <= xx) & (xx <= self.x_hi)
            out[a : a + chunk] = np.argmax(inside, axis=1)
        return out

    # -- sides and facets -------------------------------------------------
    @functools.cached_property
    def space_sides(self) -> SideTable:
        """Sides on lines ``x = const``; the first n entries are left sides."""
        n = self.n_cells
        cells = np.arange(n)
        return _side_table(
            np.r_[self.x_lo, self.x_hi],
            np.r_[self.t_lo, self.t_lo],
            np.r_[self.t_hi, self.t_hi],
            np.r_[cells, cells],
            np.r_[np.ones(n, bool), np.zeros(n, bool)],
        )

    @functools.cached_property
    def time_sides(self) -> SideTable:
        """Sides on lines ``t = const``; the first n entries are bottom sides."""
        n = self.n_cells
        cells = np.arange(n)
        return _side_table(
            np.r_[self.t_lo, self.t_hi],
            np.r_[self.x_lo, self.x_lo],
            np.r_[self.x_hi, self.x_hi],
            np.r_[cells, cells],
            np.r_[np.ones(n, bool), np.zeros(n, bool)],
        )

    @functools.cached_property
    def neighbor_pairs(self) -> np.ndarray:
        """Pairs ``(a, b)`` of cells sharing a side portion of positive length."""
        pairs = []
        for tab in (self.space_sides, self.time_sides):
            partner = np.where(tab.positive, tab.owner_neg[tab.coarse_of], tab.owner_pos[tab.coarse_of])
            ok = partner >= 0
            pairs.append(np.stack([tab.cell[ok], partner[ok]], axis=1))
        pairs = np.concatenate(pairs)
        pairs = np.concatenate([pairs, pairs[:, ::-1]])
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]
        return np.unique(pairs, axis=0)

    @functools.cached_property
    def facets(self) -> list[Facet]:
        """All distinct facets (coarse and fine) with adjacency lists."""
        out: list[Facet] = []
        for orient, tab, lev_line, lev_ext in (
            (SPACE_NORMAL, self.space_sides, self.lx, self.lt),
            (TIME_NORMAL, self.time_sides, self.lt, self.lx),
        ):
            members: dict[int, list[int]] = {}
            for s, c in enumerate(tab.coarse_of):
                members.setdefault(int(c), []).append(s)
            seen: dict[tuple[float, float, float], int] = {}
            groups: list[list[int]] = []
            for s in range(tab.line.size):
                key = (tab.line[s], tab.lo[s], tab.hi[s])
                if key in seen:
                    groups[seen[key]].append(s)
                else:
                    seen[key] = len(groups)
                    groups.append([s])
            for sides in groups:
                s0 = sides[0]
                c = int(tab.coarse_of[s0])
                coarse = tab.lo[s0] == tab.coarse_lo[c] and tab.hi[s0] == tab.coarse_hi[c]
                if coarse:
                    adj = members[c]
                else:
                    owner = tab.owner_neg[c] if tab.positive[s0] else tab.owner_pos[c]
                    adj = list(sides)
                neg = sorted({int(tab.cell[s]) for s in adj if not tab.positive[s]})
                pos = sorted({int(tab.cell[s]) for s in adj if tab.positive[s]})
                if not coarse and owner >= 0:
                    (pos if not tab.positive[s0] else neg).append(int(owner))
                cell0 = int(tab.cell[s0])
                line_num, line_lev = _line_address(self, orient, cell0, bool(tab.positive[s0]))
                e_lev = int(lev_ext[cell0])
                e_lo = _dyadic(*_extent_lo(self, orient, cell0))
                e_hi = e_lo + DyadicCoord(1, e_lev)
                out.append(
                    Facet(
                        id=len(out),
                        orientation=orient,
                        position=_dyadic(line_num, line_lev),
                        extent=(e_lo, e_hi),
                        side_neg=tuple(neg),
                        side_pos=tuple(pos),
                        coarse=bool(coarse),
                    )
                )
        return out

    @functools.cached_property
    def bottom_facets(self) -> np.ndarray:
        """Indices of the cells whose bottom side lies on ``t = 0``, sorted in x."""
        idx = np.flatnonzero(self.is_bottom)
        return idx[np.argsort(self.x_lo[idx])]

    # -- output -------------------------------------------------------------
    def dump(self) -> str:
        lines = []
        for i in range(self.n_cells):
            c = self.cell(i)
            lines.append(f"cell {i} t=[{c.t_lo},{c.t_hi}] x=[{c.x_lo},{c.x_hi}]")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"Mesh(n_cells={self.n_cells}, max_level_t={int(self.lt.max())}, max_level_x={int(self.lx.max())})"


def _line_address(mesh: Mesh, orient: str, cell: int, positive: bool) -> tuple[int, int]:
    if orient == SPACE_NORMAL:
        return int(mesh.ix[cell]) + (0 if positive else 1), int(mesh.lx[cell])
    return int(mesh.it[cell]) + (0 if positive else 1), int(mesh.lt[cell])


def _extent_lo(mesh: Mesh, orient: str, cell: int) -> tuple[int, int]:
    if orient == SPACE_NORMAL:
        return int(mesh.it[cell]), int(mesh.lt[cell])
    return int(mesh.ix[cell]), int(mesh.lx[cell])


def new_uniform(nt: int, nx: int) -> Mesh:
    """Uniform ``nt x nx`` grid of rectangles on the unit square."""
    if not (_is_pow2(nt) and _is_pow2(nx)):
        raise MeshError(f"cell counts must be powers of two, got ({nt}, {nx})")
    lt, lx = int(nt).bit_length() - 1, int(nx).bit_length() - 1
    it, ix = np.meshgrid(np.arange(nt), np.arange(nx), indexing="ij")
    n = nt * nx
    return Mesh(np.full(n, lt), it.ravel(), np.full(n, lx), ix.ravel())


def _closure(mesh: Mesh, flag: np.ndarray) -> np.ndarray:
    """Extend the refinement set until neighbours differ by at most one generation."""
    pairs = mesh.neighbor_pairs
    if pairs.size == 0:
        return flag
    a, b = pairs[:, 0], pairs[:, 1]
    gen = mesh.generation
    while True:
        need = flag[b] & ~flag[a] & (gen[b] >= gen[a] + 1)
        if not need.any():
            return flag
        flag[a[need]] = True


def refine(mesh: Mesh, marked: Iterable[int], mode: str = EQUAL, balance: bool = True) -> Mesh:
    """Refine the marked cells.

    ``mode="equal"`` bisects a cell in time and space (2 x 2 children);
    ``mode="parabolic"`` quadrisects in time and bisects in space (4 x 2
    children).  With ``balance`` (default) further cells are refined until
    face-neighbours differ by at most one refinement generation.
    """
    if mode not in (EQUAL, PARABOLIC):
        raise ValueError(f"unknown refinement mode {mode!r}")
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_cells):
        raise IndexError("marked cell id out of range")
    flag = np.zeros(mesh.n_cells, dtype=bool)
    flag[marked] = True
    if balance:
        flag = _closure(mesh, flag)
    st = 2 if mode == PARABOLIC else 1
    nt_child, nx_child = (4, 2) if mode == PARABOLIC else (2, 2)
    nchild = nt_child * nx_child
    counts = np.where(flag, nchild, 1)
    parent = np.repeat(np.arange(mesh.n_cells), counts)
    # position of each new cell within its parent's children
    offs = np.arange(parent.size) - np.repeat(np.cumsum(counts) - counts, counts)
    ref = flag[parent]
    dt = np.where(ref, offs // nx_child, 0)
    dx = np.where(ref, offs % nx_child, 0)
    lt = mesh.lt[parent] + np.where(ref, st, 0)
    lx = mesh.lx[parent] + np.where(ref, 1, 0)
    it = np.where(ref, mesh.it[parent] * nt_child + dt, mesh.it[parent])
    ix = np.where(ref, mesh.ix[parent] * 2 + dx, mesh.ix[parent])
    gen = mesh.generation[parent] + ref
    return Mesh(lt, it, lx, ix, generation=gen, parent=parent)


def _pairwise_overlaps(mesh: Mesh, limit: int = 20) -> list[tuple[int, int]]:
    found = []
    t0, t1, x0, x1 = mesh.t_lo, mesh.t_hi, mesh.x_lo, mesh.x_hi
    n = mesh.n_cells
    chunk = max(1, 2_000_000 // n)
    for a in range(0, n, chunk):
        sl = slice(a, min(n, a + chunk))
        ov = (
            (np.maximum(t0[sl, None], t0) < np.minimum(t1[sl, None], t1))
            & (np.maximum(x0[sl, None], x0) < np.minimum(x1[sl, None], x1))
        )
        ii, jj = np.nonzero(ov)
        ii = ii + a
        keep = ii < jj
        for i, j in zip(ii[keep], jj[keep]):
            found.append((int(i), int(j)))
            if len(found) >= limit:
                return found
    return found


def validate(mesh: Mesh) -> list[str]:
    """Check tiling, facet matching and coarse flags; return violations."""
    report: list[str] = []
    lmax = int(max(mesh.lt.max(), 0) + max(mesh.lx.max(), 0))
    total = sum(1 << (lmax - int(a) - int(b)) for a, b in zip(mesh.lt, mesh.lx))
    if total != 1 << lmax:
        report.append(f"cell areas sum to {Fraction(total, 1 << lmax)}, expected 1")
    for i, j in _pairwise_overlaps(mesh):
        report.append(f"cells {i} and {j} overlap")
    if report:
        return report

    facets = mesh.facets
    by_line: dict[tuple[str, DyadicCoord], list[Facet]] = {}
    for f in facets:
        by_line.setdefault((f.orientation, f.position), []).append(f)
    for (orient, pos), group in by_line.items():
        for f, g in itertools.combinations(group, 2):
            (a0, a1), (b0, b1) = f.extent, g.extent
            if max(a0, b0) < min(a1, b1):
                f_in_g = b0 <= a0 and a1 <= b1
                g_in_f = a0 <= b0 and b1 <= a1
                if not (f_in_g or g_in_f):
                    report.append(f"facets {f.id} and {g.id} on {orient} line {pos} overlap without nesting")
        for f in group:
            contained = any(
                g is not f and g.extent[0] <= f.extent[0] and f.extent[1] <= g.extent[1] and g.extent != f.extent
                for g in group
            )
            if f.coarse == contained:
                report.append(f"facet {f.id} coarse flag is {f.coarse}, expected {not contained}")
    return report
