"""Growth-rate laws for the acidogenic (monotone) and methanogenic (unimodal)
populations, and their break-even concentrations.

The canonical instances are Monod for ``mu1`` and Haldane for ``mu2``. Any
subclass of :class:`GrowthLaw` that provides ``__call__`` and ``derivative``
can be used instead; the generic fall-backs (golden-section peak search,
bisection inversion) then apply and :func:`validate_hypotheses` can be used
to check the shape requirements numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MONOTONE = "monotone"
UNIMODAL = "unimodal"

INFINITE = math.inf

ROOT_TOL = 1e-12
BRACKET_CAP = 1e6


class DomainError(ValueError):
    """A growth law was evaluated at a negative concentration."""


class WrongKindError(TypeError):
    """An operation requires the other kind of growth law."""


def _check_conc(s):
    if isinstance(s, float | int):
        if s < 0:
            raise DomainError(f"concentration must be nonnegative, got {s!r}")
        return s
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("concentration must be nonnegative")
    return s


class GrowthLaw:
    """Base class: a specific growth rate as a function of one substrate."""

    kind: str = MONOTONE

    def __call__(self, s):
        raise NotImplementedError

    def derivative(self, s):
        raise NotImplementedError

    @property
    def params(self) -> dict[str, float]:
        return {}

    def supremum(self) -> float:
        """Limit of the rate at infinite concentration (monotone laws)."""
        if self.kind != MONOTONE:
            raise WrongKindError("supremum is defined for monotone laws")
        # crude but law-agnostic; subclasses with a closed form override this
        s = 1.0
        for _ in range(200):
            s *= 2.0
        return float(self(s))

    def peak(self) -> tuple[float, float]:
        if self.kind != UNIMODAL:
            raise WrongKindError("peak is defined for unimodal laws")
        return golden_section_peak(self)

    def levels(self, level: float) -> tuple[float, ...]:
        """Concentrations where the rate equals ``level`` (sorted).

        Empty tuple when the level is never reached. A unimodal law touched
        exactly at its peak returns the peak twice.
        """
        return bisect_levels(self, level)


@dataclass(frozen=True)
class Monod(GrowthLaw):
    """``m * s / (K + s)``."""

    m: float
    K: float
    kind: str = field(default=MONOTONE, init=False, repr=False)

    def __post_init__(self):
        _require_positive(m=self.m, K=self.K)

    @property
    def params(self) -> dict[str, float]:
        return {"m": self.m, "K": self.K}

    def __call__(self, s):
        s = _check_conc(s)
        return self.m * s / (self.K + s)

    def derivative(self, s):
        s = _check_conc(s)
        return self.m * self.K / (self.K + s) ** 2

    def supremum(self) -> float:
        return self.m

    def levels(self, level: float) -> tuple[float, ...]:
        if level <= 0:
            return (0.0,) if level == 0 else ()
        if level >= self.m:
            return ()
        return (level * self.K / (self.m - level),)


@dataclass(frozen=True)
class Haldane(GrowthLaw):
    """``m * s / (K + s + s**2 / KI)``, peaking at ``sqrt(K * KI)``."""

    m: float
    K: float
    KI: float
    kind: str = field(default=UNIMODAL, init=False, repr=False)

    def __post_init__(self):
        _require_positive(m=self.m, K=self.K, KI=self.KI)

    @property
    def params(self) -> dict[str, float]:
        return {"m": self.m, "K": self.K, "KI": self.KI}

    def __call__(self, s):
        s = _check_conc(s)
        return self.m * s / (self.K + s + s * s / self.KI)

    def derivative(self, s):
        s = _check_conc(s)
        den = self.K + s + s * s / self.KI
        return self.m * (self.K - s * s / self.KI) / (den * den)

    def peak(self) -> tuple[float, float]:
        s_m = math.sqrt(self.K * self.KI)
        return s_m, self.m / (1.0 + 2.0 * math.sqrt(self.K / self.KI))

    def levels(self, level: float) -> tuple[float, ...]:
        if level <= 0:
            return (0.0,) if level == 0 else ()
        s_m, top = self.peak()
        if level > top:
            # rounding in the peak value must not turn a tangency into a miss
            if level <= top * (1.0 + 4.0 * np.finfo(float).eps):
                return (s_m, s_m)
            return ()
        # (level/KI) s^2 + (level - m) s + level*K = 0
        a = level / self.KI
        b = level - self.m
        c = level * self.K
        disc = b * b - 4.0 * a * c
        if disc <= 0.0:
            return (s_m, s_m)
        q = -0.5 * (b - math.sqrt(disc))  # b < 0 here, so no cancellation
        lo, hi = c / q, q / a
        return (lo, hi) if lo <= hi else (hi, lo)


def _require_positive(**values: float) -> None:
    for name, v in values.items():
        if not (isinstance(v, int | float) and math.isfinite(v) and v > 0):
            raise ValueError(f"growth parameter {name} must be a positive finite number, got {v!r}")


def golden_section_peak(law: GrowthLaw, hi: float | None = None, tol: float = 1e-13) -> tuple[float, float]:
    """Maximizer of a unimodal law by golden-section search."""
    if law.kind != UNIMODAL:
        raise WrongKindError("peak is defined for unimodal laws")
    if hi is None:
        hi = 1.0
        while law(2.0 * hi) > law(hi) and hi < 1e12:
            hi *= 2.0
        hi *= 2.0
    a, b = 0.0, hi
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = law(c), law(d)
    while b - a > tol * max(1.0, abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = law(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = law(d)
    s = 0.5 * (a + b)
    return s, float(law(s))


def bisect(fun, a: float, b: float, tol: float = ROOT_TOL, max_iter: int = 200) -> float:
    """Root of ``fun`` in ``[a, b]`` where ``fun(a)`` and ``fun(b)`` differ in sign.

    Iterates until the residual is below ``tol`` or the bracket cannot be
    split further in floating point, and returns the endpoint with the
    smaller residual.
    """
    fa, fb = fun(a), fun(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if (fa > 0) == (fb > 0):
        raise ValueError(f"no sign change on [{a!r}, {b!r}]")
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        if m <= min(a, b) or m >= max(a, b):
            break
        fm = fun(m)
        if fm == 0.0:
            return m
        if (fm > 0) == (fa > 0):
            a, fa = m, fm
        else:
            b, fb = m, fm
        if abs(fa) <= tol * 1e-3 or abs(fb) <= tol * 1e-3:
            break
    return a if abs(fa) <= abs(fb) else b


def bisect_levels(law: GrowthLaw, level: float) -> tuple[float, ...]:
    """Law-agnostic inversion by bracketing and bisection."""
    if level < 0:
        return ()
    if level == 0:
        return (0.0,)
    g = lambda s: float(law(s)) - level  # noqa: E731
    if law.kind == MONOTONE:
        if level >= law.supremum():
            return ()
        hi, cap = 1.0, BRACKET_CAP * 1.0
        while g(hi) < 0:
            hi *= 2.0
            if hi > cap * 1e6:
                return ()
        return (bisect(g, 0.0, hi),)
    s_m, top = law.peak()
    if level > top:
        return ()
    if level == top:
        return (s_m, s_m)
    lo_root = bisect(g, 0.0, s_m)
    hi, cap = 2.0 * s_m, BRACKET_CAP * s_m
    while g(hi) > 0:
        hi *= 2.0
        if hi > cap:
            raise ArithmeticError("upper break-even bracket exceeded the expansion cap")
    return (lo_root, bisect(g, s_m, hi))


# break-even concentrations -------------------------------------------------


@dataclass(frozen=True)
class BreakEven:
    """Break-even concentration(s) for reactor ``tier`` (1 or 2).

    ``values`` holds one entry for the monotone law and two ordered entries
    for the unimodal law; entries are ``INFINITE`` when the removal rate is
    never matched.
    """

    tier: int
    values: tuple[float, ...]
    tangent: bool = False

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values)

    @property
    def value(self) -> float:
        return self.values[0]

    @property
    def low(self) -> float:
        return self.values[0]

    @property
    def high(self) -> float:
        return self.values[-1]


def removal_rate(D: float, r: float, alpha: float, tier: int) -> float:
    """``alpha * D_i`` with ``D_1 = D/r`` and ``D_2 = D/(1-r)``."""
    _check_operating(D, r, alpha, tier)
    return alpha * D / (r if tier == 1 else 1.0 - r)


def _check_operating(D, r, alpha, tier):
    if not D > 0:
        raise ValueError(f"D must be positive, got {D!r}")
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r!r}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if tier not in (1, 2):
        raise ValueError(f"tier must be 1 or 2, got {tier!r}")


def lambda1(law: GrowthLaw, D: float, r: float, alpha: float, tier: int) -> BreakEven:
    """Solution of ``mu1(S) = alpha * D_tier``; infinite once the rate exceeds sup mu1."""
    if law.kind != MONOTONE:
        raise WrongKindError("lambda1 needs a monotone law")
    roots = law.levels(removal_rate(D, r, alpha, tier))
    return BreakEven(tier, (roots[0],) if roots else (INFINITE,))


def lambda2(law: GrowthLaw, D: float, r: float, alpha: float, tier: int) -> BreakEven:
    """Both solutions of ``mu2(S) = alpha * D_tier`` around the peak."""
    if law.kind != UNIMODAL:
        raise WrongKindError("lambda2 needs a unimodal law")
    roots = law.levels(removal_rate(D, r, alpha, tier))
    if not roots:
        return BreakEven(tier, (INFINITE, INFINITE))
    return BreakEven(tier, (roots[0], roots[1]), tangent=roots[0] == roots[1])


def eval_mu(law: GrowthLaw, s: float) -> float:
    return float(law(s))


def mu2_peak(law: GrowthLaw) -> tuple[float, float]:
    return law.peak()


# hypothesis checks ---------------------------------------------------------


@dataclass
class HypothesisReport:
    kind: str
    violations: list[str]
    slope_sign_changes: list[float]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_hypotheses(law: GrowthLaw, grid) -> HypothesisReport:
    """Check the monotone or unimodal shape of ``law`` on a sample grid.

    Violations are reported, not raised.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a nonempty 1-D array")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] <= 0:
        raise ValueError("grid must hold positive concentrations")
    violations: list[str] = []
    if law(0.0) != 0.0:
        violations.append(f"rate at zero is {float(law(0.0))!r}, expected 0")
    values = np.asarray(law(grid), dtype=float)
    if np.any(values < 0):
        violations.append("negative rate on the grid")
    slope = np.diff(values)
    sign = np.sign(slope)
    nz = sign != 0
    changes = []
    s_nz, g_nz = sign[nz], grid[:-1][nz]
    for k in range(len(s_nz) - 1):
        if s_nz[k] != s_nz[k + 1]:
            changes.append(float(g_nz[k + 1]))
    if law.kind == MONOTONE:
        if np.any(slope <= 0):
            bad = grid[:-1][slope <= 0]
            violations.append(f"rate not increasing near s={bad[0]:.6g}")
        try:
            sup = law.supremum()
        except Exception as exc:  # user laws may not know their limit
            violations.append(f"supremum unavailable: {exc}")
        else:
            if np.any(values >= sup):
                violations.append("rate reaches its supremum at finite concentration")
    else:
        if len(changes) != 1:
            violations.append(f"expected one slope sign change, found {len(changes)}")
        elif s_nz[0] < 0:
            violations.append("rate decreases before increasing")
    return HypothesisReport(law.kind, violations, changes)
