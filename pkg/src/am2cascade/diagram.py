"""Operating-diagram scans over pairs of operating parameters.

Each cell is labelled by which families exist (with branch counts), which
are LES, which coexistence branches are Hopf candidates, and whether any
verdict or existence test sat on a boundary. Region boundaries are overlaid
as zero sets of the closed-form conditions.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import contourpy
import numpy as np

from .equilibria import (
    FAMILIES,
    MULTI_ROOT_FAMILIES,
    break_evens,
    enumerate_all,
    existing,
    solve_x12,
    upper_equilibria,
)
from .model import ModelParams, ParameterError
from .stability import LES, MARGINAL, classify, table_verdict

AXES = {"D": "D", "S1in": "s1_in", "S2in": "s2_in", "r": "r"}
ANCHORS = ("center", "upper")


class GridError(ValueError):
    """Invalid axis specification."""


@dataclass(frozen=True)
class Axis:
    """One scanned parameter, split into ``n`` equal cells on ``[lo, hi]``.

    ``anchor="center"`` samples cell midpoints. ``anchor="upper"`` samples
    the upper edge of each half-open cell ``(lo + i w, lo + (i+1) w]``, so
    the grid covers ``(lo, hi]`` and a 2x refinement shares every sample.
    """

    name: str
    lo: float
    hi: float
    n: int
    anchor: str = "center"

    def __post_init__(self):
        if self.name not in AXES:
            raise GridError(f"unknown axis {self.name!r}; expected one of {sorted(AXES)}")
        if not (isinstance(self.n, int) and self.n >= 2):
            raise GridError(f"axis {self.name}: need at least 2 cells, got {self.n!r}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise GridError(f"axis {self.name}: need finite lo < hi, got ({self.lo}, {self.hi})")
        if self.lo < 0:
            raise GridError(f"axis {self.name}: range must be nonnegative")
        if self.name == "r" and self.hi > 1:
            raise GridError("axis r: range must lie within [0, 1]")
        if self.anchor not in ANCHORS:
            raise GridError(f"anchor must be one of {ANCHORS}, got {self.anchor!r}")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n

    @property
    def values(self) -> np.ndarray:
        shift = 0.5 if self.anchor == "center" else 1.0
        return self.lo + (np.arange(self.n) + shift) * self.width

    def refined(self, factor: int = 2) -> Axis:
        return Axis(self.name, self.lo, self.hi, self.n * factor, self.anchor)


@dataclass(frozen=True)
class CellSignature:
    existing: tuple[str, ...]
    les: tuple[str, ...]
    hopf: tuple[str, ...]
    boundary: bool
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (self.existing, self.les, self.hopf, self.boundary, self.error is not None)


@dataclass
class RegionGrid:
    base: ModelParams
    axis1: Axis
    axis2: Axis
    cells: list[list[CellSignature]] = field(repr=False)

    def params_at(self, i: int, j: int) -> ModelParams:
        return cell_params(self.base, self.axis1, self.axis2, self.axis1.values[i], self.axis2.values[j])

    def signature(self, i: int, j: int) -> CellSignature:
        return self.cells[i][j]

    def errors(self) -> list[tuple[int, int, str]]:
        return [(i, j, c.error) for i, row in enumerate(self.cells) for j, c in enumerate(row) if c.error]

    def regions(self) -> Counter:
        return Counter(c.key for row in self.cells for c in row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", self.axis1.name, self.axis2.name, "existing", "les", "hopf", "boundary", "error"])
        v1, v2 = self.axis1.values, self.axis2.values
        for i, row in enumerate(self.cells):
            for j, c in enumerate(row):
                w.writerow([i, j, repr(float(v1[i])), repr(float(v2[j])), ";".join(c.existing),
                            ";".join(c.les), ";".join(c.hopf), int(c.boundary), c.error or ""])  # fmt: skip
        return buf.getvalue()


def cell_params(base: ModelParams, axis1: Axis, axis2: Axis, v1: float, v2: float) -> ModelParams:
    return base.replace(**{AXES[axis1.name]: float(v1), AXES[axis2.name]: float(v2)})


def _label_order(label: str) -> tuple[int, str]:
    return FAMILIES.index(re.split("[,x]", label)[0]), label


def cell_signature(p: ModelParams) -> CellSignature:
    """Signature of one parameter point; numerical failures become an error tag."""
    try:
        eqs = enumerate_all(p)
        be = break_evens(p)
        ex = existing(eqs)
        counts = Counter(e.family for e in ex)
        exist = tuple(
            sorted((f if n == 1 else f"{f}x{n}" for f, n in counts.items()), key=_label_order)
        )
        les, hopf = [], []
        boundary = any(e.marginal for e in eqs)
        error = None
        for e in ex:
            v = classify(p, e, be)
            if v.verdict == LES:
                les.append(e.label)
            if v.verdict == MARGINAL:
                boundary = True
            if v.hopf_candidate:
                hopf.append(e.label)
            if not v.agreement:
                error = f"verdict disagreement at {e.label}: {v.verdict} vs {v.table_verdict}"
        return CellSignature(
            exist,
            tuple(sorted(les, key=_label_order)),
            tuple(sorted(hopf, key=_label_order)),
            boundary,
            error,
        )
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        return CellSignature((), (), (), True, f"{type(exc).__name__}: {exc}")


def _scan_row(task) -> list[CellSignature]:
    base, axis1, axis2, v1 = task
    return [cell_signature(cell_params(base, axis1, axis2, v1, v2)) for v2 in axis2.values]


def scan(base: ModelParams, axis1: Axis, axis2: Axis, threads: int = 1) -> RegionGrid:
    """Evaluate every cell; rows are farmed out to ``threads`` processes.

    Parameters
    ----------
    base : ModelParams
        Values for every parameter not on an axis.
    axis1, axis2 : Axis
        Distinct axes among ``D``, ``S1in``, ``S2in``, ``r``.
    threads : int
        Worker processes; 1 runs inline.

    Returns
    -------
    RegionGrid
        ``cells[i][j]`` is the signature at ``(axis1.values[i], axis2.values[j])``.
    """
    if axis1.name == axis2.name:
        raise GridError(f"axes must be distinct, got {axis1.name!r} twice")
    # fail early on a base that cannot be shifted onto the grid
    try:
        cell_params(base, axis1, axis2, axis1.values[0], axis2.values[0])
        cell_params(base, axis1, axis2, axis1.values[-1], axis2.values[-1])
    except ParameterError as exc:
        raise GridError(str(exc)) from exc
    tasks = [(base, axis1, axis2, float(v1)) for v1 in axis1.values]
    if threads <= 1:
        rows = [_scan_row(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_scan_row, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return RegionGrid(base, axis1, axis2, rows)


# analytic boundaries ---------------------------------------------------------


@dataclass(frozen=True)
class BoundaryCurve:
    name: str
    points: np.ndarray  # (k, 2) in axis coordinates
    kind: str = "closed-form"  # or "traced" for loci without a closed form


CONDITIONS = (
    "S1in=lambda1^1",
    "S1in=lambda1^2",
    "S2in=lambda2^11",
    "S2in=lambda2^12",
    "S2in=lambda2^21",
    "S2in=lambda2^22",
    "S1in=F11",
    "S1in=F12",
    "S1in=F21",
    "S1in=F22",
    "phi1=0",
    "phi2=0",
)


def _finite_or_nan(v: float) -> float:
    return v if math.isfinite(v) else math.nan


def condition_values(p: ModelParams, be=None, x12=None) -> np.ndarray:
    """Signed distances to every closed-form boundary, in ``CONDITIONS``
    order; NaN where a condition is undefined (infinite break-even or no
    reactor-1 acidogens for the ``phi`` loci)."""
    be = be or break_evens(p)
    s1, s2 = p.s1_in, p.s2_in
    out = [s1 - be.l1(1), s1 - be.l1(2)]
    out += [s2 - be.l2(i, j) for i in (1, 2) for j in (1, 2)]
    out += [s1 - be.F(i, j) for i in (1, 2) for j in (1, 2)]
    if x12 is None:
        x12 = _x12_star(p, be)
    for j in (1, 2):
        out.append(s2 + p.alpha * p.k2 * x12 - be.l2(2, j) if x12 is not None else math.nan)
    return np.array([_finite_or_nan(v) for v in out])


def _x12_star(p: ModelParams, be) -> float | None:
    up = next(u for u in upper_equilibria(p, be) if u.family == "E10")
    return solve_x12(p, up) if up.exists else None


def boundary_curves(grid: RegionGrid, p: ModelParams | None = None, refine: int = 4) -> list[BoundaryCurve]:
    """Zero sets of the closed-form conditions over the grid's window.

    The conditions are sampled on a lattice ``refine`` times finer than the
    grid, spanning the full axis ranges, and contoured at zero.
    """
    names = {grid.axis1.name, grid.axis2.name}
    if not names & {"S1in", "S2in"}:
        raise GridError(
            f"boundary curves need S1in or S2in on an axis; got ({grid.axis1.name}, {grid.axis2.name})"
        )
    p = p or grid.base
    a1, a2 = grid.axis1, grid.axis2
    x = np.linspace(a1.lo, a1.hi, a1.n * refine + 1)
    y = np.linspace(a2.lo, a2.hi, a2.n * refine + 1)
    # lattice nodes on the lower edge may sit outside the parameter domain
    x = _clip_domain(a1.name, x)
    y = _clip_domain(a2.name, y)
    z = np.empty((len(CONDITIONS), len(y), len(x)))
    be_cache: dict = {}
    x12_cache: dict = {}
    for ix, vx in enumerate(x):
        for iy, vy in enumerate(y):
            q = cell_params(p, a1, a2, vx, vy)
            # F also reads S2in from the break-even table
            kb = (q.D, q.r, q.s2_in)
            if kb not in be_cache:
                be_cache[kb] = break_evens(q)
            be = be_cache[kb]
            kx = (q.D, q.r, q.s1_in)
            if kx not in x12_cache:
                x12_cache[kx] = _x12_star(q, be)
            z[:, iy, ix] = condition_values(q, be, x12_cache[kx])
    curves = []
    for k, name in enumerate(CONDITIONS):
        zk = np.ma.masked_invalid(z[k])
        if np.ma.getmaskarray(zk).all():
            continue
        gen = contourpy.contour_generator(x, y, zk)
        for line in gen.lines(0.0):
            if len(line) >= 2:
                curves.append(BoundaryCurve(name, np.asarray(line, dtype=float)))
    return curves


TRACED_FAMILIES = tuple(f for f in FAMILIES if f in MULTI_ROOT_FAMILIES)


def _traced_fields(p: ModelParams) -> np.ndarray:
    """Branch count and closed-form LES count of every multi-root family."""
    out = np.full(2 * len(TRACED_FAMILIES), np.nan)
    try:
        eqs = enumerate_all(p)
        be = break_evens(p)
    except (ArithmeticError, ValueError, RuntimeError):
        return out
    for k, fam in enumerate(TRACED_FAMILIES):
        branches = [e for e in eqs if e.family == fam and e.exists]
        out[2 * k] = len(branches)
        out[2 * k + 1] = sum(table_verdict(p, e, be) == LES for e in branches)
    return out


def _traced_row(task) -> np.ndarray:
    base, a1, a2, vx, ys = task
    return np.array([_traced_fields(cell_params(base, a1, a2, vx, vy)) for vy in ys])


def traced_curves(grid: RegionGrid, p: ModelParams | None = None, refine: int = 2, threads: int = 1) -> list[BoundaryCurve]:
    """Loci of the table conditions on ``g2' - f2'`` and ``Tr J33`` for the
    multi-root families. They have no closed form in the operating
    parameters, so the branch count and the LES count of each family are
    sampled on a lattice and contoured between integer levels."""
    p = p or grid.base
    a1, a2 = grid.axis1, grid.axis2
    x = _clip_domain(a1.name, np.linspace(a1.lo, a1.hi, a1.n * refine + 1))
    y = _clip_domain(a2.name, np.linspace(a2.lo, a2.hi, a2.n * refine + 1))
    tasks = [(p, a1, a2, float(vx), y) for vx in x]
    if threads <= 1:
        cols = [_traced_row(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cols = list(pool.map(_traced_row, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    z = np.stack(cols, axis=1)  # (ny, nx, fields)
    curves = []
    for k, fam in enumerate(TRACED_FAMILIES):
        for off, what in ((0, "branches"), (1, "LES branches")):
            zk = np.ma.masked_invalid(z[:, :, 2 * k + off])
            if np.ma.getmaskarray(zk).all() or zk.min() == zk.max():
                continue
            gen = contourpy.contour_generator(x, y, zk)
            for level in np.arange(zk.min(), zk.max()) + 0.5:
                for line in gen.lines(float(level)):
                    if len(line) >= 2:
                        curves.append(
                            BoundaryCurve(f"{what}({fam})={level:+.1f}", np.asarray(line, dtype=float), "traced")
                        )
    return curves


def _clip_domain(name: str, v: np.ndarray) -> np.ndarray:
    v = v.copy()
    if name in ("D", "r"):
        v[v <= 0] = 1e-9
    if name == "r":
        v[v >= 1] = 1 - 1e-9
    return v


@dataclass(frozen=True)
class Transition:
    cell_a: tuple[int, int]
    cell_b: tuple[int, int]
    distance: float  # to the nearest curve, in cell widths
    nearest: str | None


def transitions(grid: RegionGrid, curves: list[BoundaryCurve]) -> list[Transition]:
    """Every signature change between edge-adjacent cells, with the distance
    from the shared cell face midpoint to the nearest boundary curve."""
    w = np.array([grid.axis1.width, grid.axis2.width])
    v1, v2 = grid.axis1.values, grid.axis2.values
    segs_a, segs_b, seg_names = [], [], []
    for c in curves:
        pts = c.points / w
        segs_a.append(pts[:-1])
        segs_b.append(pts[1:])
        seg_names += [c.name] * (len(pts) - 1)
    A = np.concatenate(segs_a) if segs_a else np.empty((0, 2))
    B = np.concatenate(segs_b) if segs_b else np.empty((0, 2))
    out = []
    n1, n2 = grid.axis1.n, grid.axis2.n
    for i in range(n1):
        for j in range(n2):
            for di, dj in ((1, 0), (0, 1)):
                ii, jj = i + di, j + dj
                if ii >= n1 or jj >= n2:
                    continue
                if grid.cells[i][j].key == grid.cells[ii][jj].key:
                    continue
                mid = np.array([(v1[i] + v1[ii]) / 2, (v2[j] + v2[jj]) / 2]) / w
                d, k = _point_segments(mid, A, B)
                out.append(Transition((i, j), (ii, jj), d, seg_names[k] if k is not None else None))
    return out


def _point_segments(pt, A, B) -> tuple[float, int | None]:
    if len(A) == 0:
        return math.inf, None
    ab = B - A
    L2 = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", pt - A, ab) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    d = np.hypot(*(A + t[:, None] * ab - pt).T)
    k = int(np.argmin(d))
    return float(d[k]), k


def unexplained_transitions(grid: RegionGrid, curves: list[BoundaryCurve], tol_cells: float = 1.0) -> list[Transition]:
    return [t for t in transitions(grid, curves) if t.distance > tol_cells]


def shared_cell_mismatches(coarse: RegionGrid, fine: RegionGrid) -> list[tuple[int, int]]:
    """Coarse cells whose signature differs from the fine cell at the same
    sample point. Needs ``anchor="upper"`` and an integer refinement."""
    f1 = fine.axis1.n // coarse.axis1.n
    f2 = fine.axis2.n // coarse.axis2.n
    if coarse.axis1.anchor != "upper" or coarse.axis2.anchor != "upper":
        raise GridError("shared samples need upper-anchored axes")
    bad = []
    for i in range(coarse.axis1.n):
        for j in range(coarse.axis2.n):
            if coarse.cells[i][j].key != fine.cells[f1 * (i + 1) - 1][f2 * (j + 1) - 1].key:
                bad.append((i, j))
    return bad


# hopf overlay ----------------------------------------------------------------


def hopf_map(grid: RegionGrid) -> list[tuple[int, int]]:
    """Cells in which some coexistence branch is a Hopf candidate."""
    return [(i, j) for i, row in enumerate(grid.cells) for j, c in enumerate(row) if c.hopf]


def hopf_refinement_gaps(coarse: RegionGrid, fine: RegionGrid, tol_cells: float = 1.0) -> list[tuple[str, tuple[float, float]]]:
    """Hopf cells of either grid with no Hopf cell of the other grid within
    ``tol_cells`` coarse cell widths."""
    w = np.array([coarse.axis1.width, coarse.axis2.width])

    def points(g):
        return np.array([(g.axis1.values[i], g.axis2.values[j]) for i, j in hopf_map(g)]).reshape(-1, 2) / w

    pc, pf = points(coarse), points(fine)
    gaps = []
    for tag, src, dst in (("coarse", pc, pf), ("fine", pf, pc)):
        for pt in src:
            d = np.max(np.abs(dst - pt), axis=1).min() if len(dst) else math.inf
            if d > tol_cells:
                gaps.append((tag, tuple(float(v) for v in pt * w)))
    return gaps


# svg -------------------------------------------------------------------------


def _color(key: str) -> str:
    if not key:
        return "#f2f2f2"
    h = int(hashlib.sha256(key.encode()).hexdigest()[:8], 16)
    hue = h % 360
    sat = 45 + (h >> 9) % 30
    light = 55 + (h >> 17) % 20
    return f"hsl({hue},{sat}%,{light}%)"


def to_svg(grid: RegionGrid, curves: list[BoundaryCurve] | None = None, size: int = 480) -> str:
    """Raster coloured by LES set, boundary cells outlined, curves overlaid."""
    pad, legend_w = 50, 260
    a1, a2 = grid.axis1, grid.axis2
    cw, ch = size / a1.n, size / a2.n
    W, H = size + 2 * pad + legend_w, size + 2 * pad

    def px(v1, v2):
        return pad + (v1 - a1.lo) / (a1.hi - a1.lo) * size, pad + size - (v2 - a2.lo) / (a2.hi - a2.lo) * size

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    sets = {}
    for i, row in enumerate(grid.cells):
        for j, c in enumerate(row):
            key = ";".join(c.les)
            sets.setdefault(key, _color(key))
            x, y = pad + i * cw, pad + size - (j + 1) * ch
            fill = "#000000" if c.error else sets[key]
            stroke = ' stroke="#555555" stroke-width="0.6"' if c.boundary else ""
            out.append(f'<rect x="{x:.3f}" y="{y:.3f}" width="{cw:.3f}" height="{ch:.3f}" fill="{fill}"{stroke}/>')
            if c.hopf:
                cx, cy = x + cw / 2, y + ch / 2
                out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="{min(cw, ch) / 4:.3f}" fill="#d00000"/>')
    for c in curves or []:
        pts = " ".join("{:.3f},{:.3f}".format(*px(u, v)) for u, v in c.points)
        out.append(f'<polyline points="{pts}" fill="none" stroke="#111111" stroke-width="1"><title>{c.name}</title></polyline>')
    out.append(f'<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>')
    out.append(f'<text x="{pad + size / 2}" y="{H - 12}" text-anchor="middle" font-size="14">{a1.name}</text>')
    out.append(
        f'<text x="14" y="{pad + size / 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 14 {pad + size / 2})">{a2.name}</text>'
    )
    for v, anchor in ((a1.lo, "start"), (a1.hi, "end")):
        out.append(f'<text x="{px(v, a2.lo)[0]:.3f}" y="{pad + size + 16}" text-anchor="{anchor}" font-size="11">{v:g}</text>')
    for v in (a2.lo, a2.hi):
        out.append(f'<text x="{pad - 4}" y="{px(a1.lo, v)[1]:.3f}" text-anchor="end" font-size="11">{v:g}</text>')
    lx = pad + size + 20
    out.append(f'<text x="{lx}" y="{pad}" font-size="12" font-weight="bold">LES set</text>')
    for k, (key, col) in enumerate(sorted(sets.items())):
        y = pad + 16 + 18 * k
        out.append(f'<rect x="{lx}" y="{y - 10}" width="12" height="12" fill="{col}"/>')
        out.append(f'<text x="{lx + 18}" y="{y}" font-size="11">{_escape(key or "(none)")}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
