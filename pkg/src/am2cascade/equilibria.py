"""Steady states of the two-reactor cascade.

Reactor 1 is a plain AM2 chemostat, so its six steady states ``E00 .. E12``
have closed forms. Each of them is extended to the second reactor; the
extensions that involve biomass coming in from reactor 1 are implicit and
are found as roots of scalar equations ``f1(x) = g1(x)`` (unique root) and
``f2(x) = g2(x)`` (one or more roots).

Family labels read ``Eij^kl``: ``i``/``j`` say whether biomass 1 / biomass 2
is present in reactor 1 (``j`` also names the break-even branch), and
``k``/``l`` do the same for reactor 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .growth import INFINITE, BreakEven, bisect, lambda1, lambda2
from .model import ModelParams, SystemState, rhs

UPPER_FAMILIES = ("E00", "E10", "E01", "E02", "E11", "E12")

FAMILIES = (
    "E00^00", "E00^01", "E00^02", "E00^10", "E00^11", "E00^12",
    "E10^10", "E10^11", "E10^12",
    "E01^01", "E02^01", "E01^11", "E02^11",
    "E11^11", "E12^11",
)  # fmt: skip

# upper steady state with biomass that cannot be washed out of reactor 2
FORBIDDEN_FAMILIES = (
    "E10^00", "E10^01", "E10^02",
    "E01^00", "E02^00", "E01^10", "E02^10",
    "E11^00", "E12^00", "E11^10", "E12^10", "E11^01", "E12^01",
)  # fmt: skip

# families sitting on the decreasing branch of mu2 in at least one reactor
INHIBITED_FAMILIES = frozenset({"E00^02", "E00^12", "E10^12", "E02^01", "E02^11", "E12^11"})

# families whose X2 in reactor 2 solves f2 = g2
MULTI_ROOT_FAMILIES = frozenset({"E01^01", "E02^01", "E01^11", "E02^11", "E11^11", "E12^11"})

EXIST_TOL = 1e-12
SCAN_POINTS = 4096
TANGENCY_GAP = 1e-8


class LemmaViolation(ArithmeticError):
    """A bracket that must change sign does not (bad inputs or a bug)."""


# break-even table ----------------------------------------------------------


@dataclass(frozen=True)
class BreakEvens:
    """All break-even concentrations for one parameter set."""

    lam1: tuple[BreakEven, BreakEven]
    lam2: tuple[BreakEven, BreakEven]
    k1: float
    k2: float
    s2_in: float

    def l1(self, tier: int) -> float:
        return self.lam1[tier - 1].value

    def l2(self, tier: int, j: int) -> float:
        return self.lam2[tier - 1].values[j - 1]

    def F(self, tier: int, j: int) -> float:
        l1, l2 = self.l1(tier), self.l2(tier, j)
        if math.isinf(l1) or math.isinf(l2):
            return INFINITE
        return l1 + self.k1 / self.k2 * (l2 - self.s2_in)


def break_evens(p: ModelParams) -> BreakEvens:
    return BreakEvens(
        lam1=(
            lambda1(p.mu1, p.D, p.r, p.alpha, 1),
            lambda1(p.mu1, p.D, p.r, p.alpha, 2),
        ),
        lam2=(
            lambda2(p.mu2, p.D, p.r, p.alpha, 1),
            lambda2(p.mu2, p.D, p.r, p.alpha, 2),
        ),
        k1=p.k1,
        k2=p.k2,
        s2_in=p.s2_in,
    )


def aux_F(tier: int, j: int, p: ModelParams, be: BreakEvens | None = None) -> float:
    """``lambda1^tier + k1/k2 * (lambda2^{tier j} - S2in)``; infinite with any lambda."""
    return (be or break_evens(p)).F(tier, j)


def aux_phi(j: int, p: ModelParams, x12: float, be: BreakEvens | None = None) -> float:
    """``S2in + alpha k2 X1_2* - lambda2^{2j}``; ``-inf`` when the break-even is infinite."""
    l2 = (be or break_evens(p)).l2(2, j)
    if math.isinf(l2):
        return -INFINITE
    return p.s2_in + p.alpha * p.k2 * x12 - l2


def compare_gt(a: float, b: float, tol: float = EXIST_TOL) -> bool | None:
    """``a > b`` as True/False, or None when the two are within ``tol``."""
    if math.isinf(a) or math.isinf(b):
        return a > b if a != b else None
    if abs(a - b) <= tol * max(1.0, abs(a), abs(b)):
        return None
    return a > b


# auxiliary functions -------------------------------------------------------


@dataclass(frozen=True)
class AuxFunctions:
    """``f1, g1, f2, g2`` and their derivatives for one upper steady state.

    ``f2`` is ``mu2(base - alpha k3 x)`` where ``base`` collects the
    reactor-1 terms; it vanishes at ``d`` and peaks at ``x2m``.
    """

    f1: Callable[[float], float]
    g1: Callable[[float], float]
    f2: Callable[[float], float]
    g2: Callable[[float], float]
    df1: Callable[[float], float]
    dg1: Callable[[float], float]
    df2: Callable[[float], float]
    dg2: Callable[[float], float]
    x11: float
    x21: float
    x12: float
    base: float
    d: float
    x2m: float


def aux_functions(p: ModelParams, upper: tuple[float, float, float, float], x12: float) -> AuxFunctions:
    s11, x11, s21, x21 = upper
    a, D2 = p.alpha, p.D2
    ak1, ak3 = a * p.k1, a * p.k3
    mu1, mu2 = p.mu1, p.mu2
    base = s21 - a * p.k2 * (x11 - x12) + ak3 * x21
    s_m, _ = mu2.peak()

    def f1(x):
        return mu1(np.maximum(p.s1_in - ak1 * x, 0.0))

    def df1(x):
        return -ak1 * mu1.derivative(np.maximum(p.s1_in - ak1 * x, 0.0))

    def g1(x):
        return a * D2 * (x - x11) / x

    def dg1(x):
        return a * D2 * x11 / (x * x)

    def f2(x):
        return mu2(np.maximum(base - ak3 * x, 0.0))

    def df2(x):
        return -ak3 * mu2.derivative(np.maximum(base - ak3 * x, 0.0))

    def g2(x):
        return a * D2 * (x - x21) / x

    def dg2(x):
        return a * D2 * x21 / (x * x)

    return AuxFunctions(
        f1, g1, f2, g2, df1, dg1, df2, dg2,
        x11=x11, x21=x21, x12=x12, base=base,
        d=base / ak3, x2m=(base - s_m) / ak3,
    )  # fmt: skip


# upper subsystem -----------------------------------------------------------


@dataclass(frozen=True)
class UpperEquilibrium:
    family: str
    components: tuple[float, float, float, float] | None
    exists: bool
    marginal: bool = False
    reason: str | None = None
    stability: str | None = None


def _existence(conditions) -> tuple[bool, bool, str | None]:
    """Fold ``(text, a, b)`` strict conditions ``a > b`` into (exists, marginal, reason)."""
    marginal_reason = None
    for text, a, b in conditions:
        verdict = compare_gt(a, b)
        if verdict is False:
            return False, False, f"violated: {text}"
        if verdict is None and marginal_reason is None:
            marginal_reason = f"marginal: {text}"
    if marginal_reason is not None:
        return False, True, marginal_reason
    return True, False, None


def outside_interval(s: float, lo: float, hi: float, tol: float = EXIST_TOL) -> bool | None:
    """``s not in [lo, hi]`` (empty interval when the bounds are infinite)."""
    if math.isinf(lo):
        return True
    below = compare_gt(lo, s, tol)
    above = compare_gt(s, hi, tol)
    if below or above:
        return True
    if below is None or above is None:
        return None
    return False


def all_of(*flags: bool | None) -> bool | None:
    if any(f is False for f in flags):
        return False
    if any(f is None for f in flags):
        return None
    return True


def any_of(*flags: bool | None) -> bool | None:
    if any(f is True for f in flags):
        return True
    if any(f is None for f in flags):
        return None
    return False


def verdict_of(flag: bool | None) -> str:
    return {True: "LES", False: "Unstable", None: "Marginal"}[flag]


def upper_equilibria(p: ModelParams, be: BreakEvens | None = None) -> list[UpperEquilibrium]:
    """The six steady states of reactor 1 with existence and stability."""
    be = be or break_evens(p)
    a, k1, k2, k3 = p.alpha, p.k1, p.k2, p.k3
    s1, s2 = p.s1_in, p.s2_in
    l1 = be.l1(1)
    out = []

    stab = all_of(compare_gt(l1, s1), outside_interval(s2, be.l2(1, 1), be.l2(1, 2)))
    out.append(UpperEquilibrium("E00", (s1, 0.0, s2, 0.0), True, stability=verdict_of(stab)))

    exists, marginal, reason = _existence([("S1in > lambda1^1", s1, l1)])
    comps = None
    if math.isfinite(l1):
        s21 = s2 + k2 / k1 * (s1 - l1)
        comps = (l1, (s1 - l1) / (a * k1), s21, 0.0)
    stab = outside_interval(comps[2], be.l2(1, 1), be.l2(1, 2)) if comps else None
    out.append(_upper("E10", comps, exists, marginal, reason, stab))

    for j in (1, 2):
        l2 = be.l2(1, j)
        exists, marginal, reason = _existence([(f"S2in > lambda2^1{j}", s2, l2)])
        comps = (s1, 0.0, l2, (s2 - l2) / (a * k3)) if math.isfinite(l2) else None
        stab = compare_gt(l1, s1) if j == 1 else False
        out.append(_upper(f"E0{j}", comps, exists, marginal, reason, stab))

    for j in (1, 2):
        l2, F = be.l2(1, j), be.F(1, j)
        exists, marginal, reason = _existence(
            [("S1in > lambda1^1", s1, l1), (f"S1in > F1{j}", s1, F)]
        )
        comps = None
        if math.isfinite(l1) and math.isfinite(l2):
            comps = (l1, (s1 - l1) / (a * k1), l2, k2 * (s1 - F) / (a * k1 * k3))
        out.append(_upper(f"E1{j}", comps, exists, marginal, reason, j == 1))
    return out


def _upper(family, comps, exists, marginal, reason, stab):
    return UpperEquilibrium(
        family,
        comps if exists else None,
        exists,
        marginal,
        reason,
        verdict_of(stab) if exists else None,
    )


# root finders --------------------------------------------------------------


def solve_x12(p: ModelParams, upper: UpperEquilibrium | tuple) -> float:
    """Unique root of ``f1 = g1`` on ``(X1_1*, S1in/(alpha k1))``."""
    comps = upper.components if isinstance(upper, UpperEquilibrium) else tuple(upper)
    x11 = comps[1]
    hi = p.s1_in / (p.alpha * p.k1)
    if not 0 < x11 < hi:
        raise LemmaViolation(f"need 0 < X1_1* < S1in/(alpha k1), got X1_1*={x11!r}, bound={hi!r}")
    aux = aux_functions(p, comps, 0.0)
    F1 = lambda x: float(aux.f1(x)) - float(aux.g1(x))  # noqa: E731
    if not (F1(x11) > 0 > F1(hi)):
        raise LemmaViolation("f1 - g1 does not change sign on its bracket")
    return bisect(F1, x11, hi)


@dataclass(frozen=True)
class X22Roots:
    roots: tuple[float, ...]
    x2m: float
    d: float
    x21: float
    tangent: bool
    nongeneric: bool

    @property
    def count(self) -> int:
        return len(self.roots)


def solve_x22_all(p: ModelParams, upper: UpperEquilibrium | tuple, x12: float) -> X22Roots:
    """All roots of ``f2 = g2`` on ``(X2_1*, d)``, ascending.

    Past the peak abscissa ``x2m`` the difference ``f2 - g2`` is strictly
    decreasing, so at most one root lives there. Before it, roots are
    localized by a fixed sign scan and refined by bisection.
    """
    comps = upper.components if isinstance(upper, UpperEquilibrium) else tuple(upper)
    x11, x21 = comps[1], comps[3]
    if x21 <= 0:
        raise LemmaViolation("f2 = g2 is only posed for X2_1* > 0")
    if x12 < x11:
        raise LemmaViolation(f"need X1_1* <= X1_2*, got {x11!r} > {x12!r}")
    aux = aux_functions(p, comps, x12)
    d, x2m = aux.d, aux.x2m
    if not d > x21:
        raise LemmaViolation(f"empty root interval: X2_1*={x21!r}, d={d!r}")
    F2 = lambda x: float(aux.f2(x)) - float(aux.g2(x))  # noqa: E731

    roots: list[float] = []
    if x2m <= x21:
        roots.append(bisect(F2, x21, d))
    else:
        xs = np.linspace(x21, x2m, SCAN_POINTS)
        xs[0] = x21
        vals = aux.f2(xs) - aux.g2(xs)
        pos = vals > 0
        for k in np.flatnonzero(pos[:-1] != pos[1:]):
            roots.append(bisect(F2, float(xs[k]), float(xs[k + 1])))
        if F2(x2m) > 0:
            roots.append(bisect(F2, x2m, d))
    roots.sort()
    gaps = np.diff(roots) if len(roots) > 1 else np.array([])
    tangent = bool(np.any(gaps < TANGENCY_GAP))
    return X22Roots(tuple(roots), x2m, d, x21, tangent, len(roots) % 2 == 0)


# full enumeration ----------------------------------------------------------


@dataclass(frozen=True)
class Equilibrium:
    family: str
    branch: int
    state: SystemState | None
    exists: bool
    marginal: bool = False
    reason: str | None = None
    n_branches: int = 1
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def upper_family(self) -> str:
        return self.family[:3]

    @property
    def lower_code(self) -> str:
        return self.family[4:]

    @property
    def label(self) -> str:
        if self.family in MULTI_ROOT_FAMILIES and self.n_branches > 1:
            return f"{self.family},{self.branch}"
        return self.family


def _absent(family, reason, marginal=False, **diag) -> Equilibrium:
    return Equilibrium(family, 1, None, False, marginal, reason, 0, diag)


def enumerate_all(p: ModelParams) -> list[Equilibrium]:
    """Every steady-state family of the cascade, existing or not.

    Families whose root equation has several solutions yield one entry per
    branch, ordered by increasing ``X2_2``.
    """
    be = break_evens(p)
    uppers = {u.family: u for u in upper_equilibria(p, be)}
    a, k1, k2, k3 = p.alpha, p.k1, p.k2, p.k3
    s1, s2 = p.s1_in, p.s2_in
    l1_1, l1_2 = be.l1(1), be.l1(2)
    out: list[Equilibrium] = []

    # reactor 1 washed out: reactor 2 is a single AM2 chemostat
    u = uppers["E00"].components
    out.append(Equilibrium("E00^00", 1, SystemState(*u, s1, 0.0, s2, 0.0), True))
    for j in (1, 2):
        l2 = be.l2(2, j)
        cond = [(f"S2in > lambda2^2{j}", s2, l2)]
        out.append(_closed_form(f"E00^0{j}", cond, lambda l2=l2: (s1, 0.0, l2, (s2 - l2) / (a * k3)), u))
    x12_ww = (s1 - l1_2) / (a * k1)
    out.append(
        _closed_form(
            "E00^10",
            [("S1in > lambda1^2", s1, l1_2)],
            lambda: (l1_2, x12_ww, s2 + k2 / k1 * (s1 - l1_2), 0.0),
            u,
        )
    )
    for j in (1, 2):
        l2, F = be.l2(2, j), be.F(2, j)
        cond = [("S1in > lambda1^2", s1, l1_2), (f"S1in > F2{j}", s1, F)]
        out.append(
            _closed_form(
                f"E00^1{j}",
                cond,
                lambda l2=l2, F=F: (l1_2, x12_ww, l2, k2 * (s1 - F) / (a * k1 * k3)),
                u,
            )
        )

    # acidogens in reactor 1: X1_2 from f1 = g1
    up = uppers["E10"]
    x12_star = None
    if up.exists:
        x12_star = solve_x12(p, up)
        s12 = s1 - a * k1 * x12_star
        u = up.components
        diag = {"X1_2*": x12_star, "phi1": aux_phi(1, p, x12_star, be), "phi2": aux_phi(2, p, x12_star, be)}
        out.append(Equilibrium("E10^10", 1, SystemState(*u, s12, x12_star, s2 + a * k2 * x12_star, 0.0), True, diagnostics=diag))
        for j in (1, 2):
            phi = diag[f"phi{j}"]
            exists, marginal, reason = _existence([(f"phi{j} > 0", phi, 0.0)])
            if exists:
                state = SystemState(*u, s12, x12_star, be.l2(2, j), phi / (a * k3))
                out.append(Equilibrium(f"E10^1{j}", 1, state, True, diagnostics=dict(diag)))
            else:
                out.append(_absent(f"E10^1{j}", reason, marginal, **diag))
    else:
        for fam in ("E10^10", "E10^11", "E10^12"):
            out.append(_absent(fam, up.reason, up.marginal))

    # methanogens only in reactor 1
    for j in (1, 2):
        up = uppers[f"E0{j}"]
        out.extend(_star_family(p, f"E0{j}^01", up, [], 0.0, lambda x22: (s1, 0.0)))
        cond = [("S1in > lambda1^2", s1, l1_2)]
        out.extend(_star_family(p, f"E0{j}^11", up, cond, x12_ww, lambda x22: (l1_2, x12_ww)))

    # both populations in reactor 1
    for j in (1, 2):
        up = uppers[f"E1{j}"]
        if up.exists and x12_star is None:
            x12_star = solve_x12(p, up)
        x12 = x12_star if x12_star is not None else 0.0
        out.extend(
            _star_family(p, f"E1{j}^11", up, [], x12, lambda x22, x12=x12: (s1 - a * k1 * x12, x12))
        )
    return out


def _closed_form(family, conditions, components, upper) -> Equilibrium:
    exists, marginal, reason = _existence(conditions)
    if not exists:
        return _absent(family, reason, marginal)
    return Equilibrium(family, 1, SystemState(*upper, *components()), True)


def _star_family(p, family, up, extra_conditions, x12, first_pair) -> list[Equilibrium]:
    """Branches of a family whose X2_2 solves ``f2 = g2``."""
    if not up.exists:
        return [_absent(family, up.reason, up.marginal)]
    exists, marginal, reason = _existence(extra_conditions)
    if not exists:
        return [_absent(family, reason, marginal)]
    sol = solve_x22_all(p, up, x12)
    aux = aux_functions(p, up.components, x12)
    diag = {
        "X1_2*": x12,
        "x2m": sol.x2m,
        "d": sol.d,
        "X2_2 roots": list(sol.roots),
        "tangent": sol.tangent,
        "nongeneric": sol.nongeneric,
    }
    out = []
    for l, x22 in enumerate(sol.roots, start=1):
        s12, x12_ = first_pair(x22)
        state = SystemState(*up.components, s12, x12_, aux.base - p.alpha * p.k3 * x22, x22)
        out.append(
            Equilibrium(
                family,
                l,
                state,
                True,
                marginal=sol.tangent,
                reason="tangent roots" if sol.tangent else None,
                n_branches=sol.count,
                diagnostics=dict(diag, F2=float(aux.f2(x22) - aux.g2(x22))),
            )
        )
    return out


def existing(eqs: list[Equilibrium]) -> list[Equilibrium]:
    return [e for e in eqs if e.exists]


def residual(p: ModelParams, e: Equilibrium) -> float:
    """Max-norm of the vector field at an existing equilibrium."""
    if not e.exists or e.state is None:
        raise ValueError(f"{e.label} does not exist; no residual to evaluate")
    return float(np.max(np.abs(rhs(p, e.state))))
