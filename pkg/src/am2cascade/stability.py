"""Local stability of the cascade's steady states.

The Jacobian is lower block triangular with four 2x2 diagonal blocks, so its
spectrum is the union of four quadratics ``l**2 - tr*l + det``. Each
equilibrium gets two verdicts: one from those eigenvalues, and one from the
closed-form existence/stability table written in terms of break-even
concentrations and of the auxiliary functions ``f2``/``g2``. They must agree
away from boundaries.
"""

from __future__ import annotations

import cmath
import math
from fractions import Fraction
from dataclasses import dataclass

import numpy as np

from .equilibria import (
    INHIBITED_FAMILIES,
    BreakEvens,
    Equilibrium,
    all_of,
    any_of,
    aux_functions,
    break_evens,
    compare_gt,
    outside_interval,
    verdict_of,
)
from .model import JACOBIAN_PATTERN, ModelParams, jacobian

EPS_MARGIN = 1e-8

BLOCKS = (("J1_top", 0), ("J1_bottom", 2), ("J3_1", 4), ("J3_3", 6))

LES, UNSTABLE, MARGINAL = "LES", "Unstable", "Marginal"

HOPF_FAMILIES = frozenset({"E01^11", "E11^11"})


class StructuralError(ValueError):
    """The matrix does not have the block-triangular sparsity of the model Jacobian."""


class StabilityDisagreement(RuntimeError):
    """Eigenvalue and closed-form verdicts differ away from any boundary."""


@dataclass(frozen=True)
class Block:
    name: str
    trace: float
    det: float
    eigenvalues: tuple[complex, complex]


def quadratic_roots(trace: float, det: float) -> tuple[complex, complex]:
    """Roots of ``l**2 - trace*l + det``, larger real part first."""
    disc = trace * trace - 4.0 * det
    if disc >= 0:
        sq = math.sqrt(disc)
        q = 0.5 * (trace + math.copysign(sq, trace))
        if q == 0.0:
            return complex(0.0), complex(0.0)
        r1, r2 = q, det / q
        return (complex(r1), complex(r2)) if r1 >= r2 else (complex(r2), complex(r1))
    im = 0.5 * math.sqrt(-disc)
    return complex(0.5 * trace, im), complex(0.5 * trace, -im)


def check_structure(J: np.ndarray) -> None:
    J = np.asarray(J)
    if J.shape != (8, 8):
        raise StructuralError(f"expected an 8x8 matrix, got shape {J.shape}")
    bad = np.argwhere((J != 0) & ~JACOBIAN_PATTERN)
    if bad.size:
        i, j = bad[0]
        raise StructuralError(f"entry ({i}, {j}) lies outside the block-triangular pattern")


def block_eigenvalues(J: np.ndarray) -> list[Block]:
    """The four diagonal 2x2 blocks with their trace, determinant and eigenvalues."""
    check_structure(J)
    blocks = []
    for name, k in BLOCKS:
        b = J[k : k + 2, k : k + 2]
        tr = float(b[0, 0] + b[1, 1])
        det = float(b[0, 0] * b[1, 1] - b[0, 1] * b[1, 0])
        blocks.append(Block(name, tr, det, quadratic_roots(tr, det)))
    return blocks


def eigenvalues_of(blocks: list[Block]) -> np.ndarray:
    return np.array([ev for b in blocks for ev in b.eigenvalues])


# independent spectral oracles ----------------------------------------------


def charpoly(A: np.ndarray) -> np.ndarray:
    """Monic characteristic polynomial coefficients, highest degree first.

    Faddeev-LeVerrier recursion in exact rational arithmetic on the float
    entries; the float recursion loses too many digits on stiff blocks.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    a = [[Fraction(float(v)) for v in row] for row in A]
    c = [Fraction(1)]
    M = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        AM = _matmul(a, M)
        M = [[AM[i][j] + (c[-1] if i == j else 0) for j in range(n)] for i in range(n)]
        AM = _matmul(a, M)
        c.append(-sum(AM[i][i] for i in range(n)) / k)
    return np.array([float(v) for v in c])


def _matmul(a, b):
    n = len(a)
    cols = [[b[k][j] for k in range(n)] for j in range(n)]
    return [[sum((x * y for x, y in zip(row, col) if x and y), Fraction(0)) for col in cols] for row in a]


def block_charpoly(blocks: list[Block]) -> tuple[np.ndarray, np.ndarray]:
    """Product of the block quadratics, and the same product with absolute
    coefficients (the natural rounding scale for each coefficient)."""
    poly, scale = np.array([1.0]), np.array([1.0])
    for b in blocks:
        poly = np.convolve(poly, [1.0, -b.trace, b.det])
        scale = np.convolve(scale, [1.0, abs(b.trace), abs(b.det)])
    return poly, scale


def charpoly_mismatch(J: np.ndarray) -> float:
    """Largest coefficient gap between the full and block characteristic
    polynomials, relative to the coefficient scale."""
    blocks = block_eigenvalues(J)
    poly, scale = block_charpoly(blocks)
    full = charpoly(J)
    return float(np.max(np.abs(full - poly) / np.maximum(scale, 1e-300)))


def singular_residuals(J: np.ndarray) -> np.ndarray:
    """Smallest singular value of ``J - l I`` for each block eigenvalue,
    relative to ``max(1, ||J||)``; zero for exact eigenvalues."""
    J = np.asarray(J, dtype=float)
    norm = max(1.0, float(np.linalg.norm(J, 2)))
    out = []
    for lam in eigenvalues_of(block_eigenvalues(J)):
        s = np.linalg.svd(J - lam * np.eye(8), compute_uv=False)
        out.append(s[-1] / norm)
    return np.array(out)


# verdicts ------------------------------------------------------------------


def numeric_verdict(eigs, eps: float = EPS_MARGIN) -> str:
    re = np.real(np.asarray(eigs))
    if np.max(re) > eps:
        return UNSTABLE
    if np.all(re < -eps):
        return LES
    return MARGINAL


def is_hopf_candidate(det: float, trace: float, eps: float = EPS_MARGIN) -> bool:
    return det > eps and trace >= -eps


@dataclass(frozen=True)
class J33Closed:
    """``det``/``trace`` of the X2-block of reactor 2 from ``f2'`` and ``g2'``."""

    det: float
    trace: float
    dg2: float
    df2: float


def j33_closed_form(p: ModelParams, e: Equilibrium) -> J33Closed:
    st = e.state
    aux = aux_functions(p, tuple(st[:4]), st.x12)
    x = st.x22
    dg2, df2 = float(aux.dg2(x)), float(aux.df2(x))
    return J33Closed(
        det=p.D2 * x * (dg2 - df2),
        trace=-p.D2 - x * (dg2 - df2 / p.alpha),
        dg2=dg2,
        df2=df2,
    )


def j31_closed_form(p: ModelParams, e: Equilibrium) -> tuple[float, float]:
    """``(det, trace)`` of the X1-block of reactor 2 from ``f1'`` and ``g1'``."""
    st = e.state
    aux = aux_functions(p, tuple(st[:4]), st.x12)
    x = st.x12
    dg1, df1 = float(aux.dg1(x)), float(aux.df1(x))
    return p.D2 * x * (dg1 - df1), -p.D2 - x * (dg1 - df1 / p.alpha)


def _sign_lt0(v: float, eps: float = EPS_MARGIN) -> bool | None:
    if abs(v) <= eps:
        return None
    return v < 0


def table_verdict(p: ModelParams, e: Equilibrium, be: BreakEvens | None = None) -> str:
    """Verdict from the closed-form conditions, without any eigenvalues."""
    if e.family in INHIBITED_FAMILIES:
        return UNSTABLE
    be = be or break_evens(p)
    s1, s2 = p.s1_in, p.s2_in
    l1_1, l1_2 = be.l1(1), be.l1(2)
    I1 = (be.l2(1, 1), be.l2(1, 2))
    I2 = (be.l2(2, 1), be.l2(2, 2))
    below1 = compare_gt(l1_1, s1)
    below2 = compare_gt(l1_2, s1)
    fam = e.family
    if fam == "E00^00":
        # union of the two bad intervals; both contain the peak of mu2
        flag = all_of(below1, below2, outside_interval(s2, *I1), outside_interval(s2, *I2))
    elif fam == "E00^01":
        flag = all_of(below1, below2, outside_interval(s2, *I1))
    elif fam == "E00^10":
        shifted = s2 + p.k2 / p.k1 * (s1 - l1_2)
        flag = all_of(below1, outside_interval(s2, *I1), outside_interval(shifted, *I2))
    elif fam == "E00^11":
        flag = all_of(below1, outside_interval(s2, *I1))
    elif fam in ("E10^10", "E10^11"):
        shifted = s2 + p.k2 / p.k1 * (s1 - l1_1)
        flag = outside_interval(shifted, *I1)
        if fam == "E10^10":
            x12 = e.state.x12
            phi1 = s2 + p.alpha * p.k2 * x12 - I2[0] if math.isfinite(I2[0]) else -math.inf
            phi2 = s2 + p.alpha * p.k2 * x12 - I2[1] if math.isfinite(I2[1]) else -math.inf
            flag = all_of(flag, any_of(compare_gt(0.0, phi1), compare_gt(phi2, 0.0)))
    elif fam == "E01^01":
        flag = all_of(below1, below2)
    elif fam in ("E01^11", "E11^11"):
        j33 = j33_closed_form(p, e)
        flag = all_of(_sign_lt0(-j33.det), _sign_lt0(j33.trace))
        if fam == "E01^11":
            flag = all_of(below1, flag)
    else:
        raise ValueError(f"unknown family {fam!r}")
    return verdict_of(flag)


@dataclass(frozen=True)
class StabilityVerdict:
    label: str
    verdict: str
    table_verdict: str
    agreement: bool
    blocks: tuple[Block, ...]
    max_real: float
    hopf_candidate: bool

    def block(self, name: str) -> Block:
        return next(b for b in self.blocks if b.name == name)


def classify(
    p: ModelParams,
    e: Equilibrium,
    be: BreakEvens | None = None,
    strict: bool = False,
    eps: float = EPS_MARGIN,
) -> StabilityVerdict:
    """Numerical and closed-form stability of an existing equilibrium.

    With ``strict=True`` a decisive disagreement raises
    :class:`StabilityDisagreement`.
    """
    if not e.exists or e.state is None:
        raise ValueError(f"{e.label} does not exist")
    blocks = block_eigenvalues(jacobian(p, e.state))
    eigs = eigenvalues_of(blocks)
    num = numeric_verdict(eigs, eps)
    tab = table_verdict(p, e, be)
    agree = num == tab or MARGINAL in (num, tab)
    if strict and not agree:
        raise StabilityDisagreement(f"{e.label}: eigenvalues say {num}, closed form says {tab}")
    j33 = blocks[3]
    hopf = e.family in HOPF_FAMILIES and is_hopf_candidate(j33.det, j33.trace, eps)
    return StabilityVerdict(
        e.label, num, tab, agree, tuple(blocks), float(np.max(np.real(eigs))), hopf
    )


def hopf_candidate(p: ModelParams, e: Equilibrium, eps: float = EPS_MARGIN) -> bool:
    """Positive determinant and nonnegative trace on the X2-block of reactor 2."""
    if e.family not in HOPF_FAMILIES:
        raise ValueError(f"Hopf candidates are only tracked for {sorted(HOPF_FAMILIES)}")
    j33 = block_eigenvalues(jacobian(p, e.state))[3]
    return is_hopf_candidate(j33.det, j33.trace, eps)


@dataclass(frozen=True)
class BranchVerdict:
    branch: int
    rule_verdict: str
    verdict: str
    hopf_candidate: bool


def ordered_branch_stability(
    p: ModelParams, family: str, branches: list[Equilibrium], strict: bool = True
) -> list[BranchVerdict]:
    """Branch-index rule for the coexistence families, checked against :func:`classify`.

    With ``k`` ordered roots: the last one is stable, even-indexed ones are
    saddles, and odd-indexed ones before the peak of ``f2`` are stable iff
    the X2-block trace is negative.
    """
    if family not in HOPF_FAMILIES:
        raise ValueError(f"branch ordering applies to {sorted(HOPF_FAMILIES)}, not {family!r}")
    branches = sorted((e for e in branches if e.exists and e.family == family), key=lambda e: e.branch)
    if not branches:
        return []
    be = break_evens(p)
    upper_ok = compare_gt(be.l1(1), p.s1_in) if family == "E01^11" else True
    k = len(branches)
    out = []
    for e in branches:
        v = classify(p, e, be)
        # the last root need not pass x2m when alpha*D2 exceeds the peak of
        # mu2; it then behaves like the other odd pre-peak roots
        past_peak = e.state.x22 > e.diagnostics.get("x2m", -math.inf)
        if k % 2 == 0:
            rule = None
        elif e.branch == k and past_peak:
            rule = True
        elif e.branch % 2 == 0:
            rule = False
        else:
            rule = _sign_lt0(v.block("J3_3").trace)
        rule_v = verdict_of(all_of(upper_ok, rule))
        if strict and MARGINAL not in (rule_v, v.verdict) and rule_v != v.verdict:
            raise StabilityDisagreement(
                f"{e.label}: branch rule gives {rule_v}, eigenvalues give {v.verdict}"
            )
        out.append(BranchVerdict(e.branch, rule_v, v.verdict, v.hopf_candidate))
    return out


def most_unstable_direction(p: ModelParams, e: Equilibrium) -> tuple[complex, np.ndarray]:
    """Eigenvalue with the largest real part and a real unit direction for it."""
    J = jacobian(p, e.state)
    eigs = eigenvalues_of(block_eigenvalues(J))
    lam = eigs[np.argmax(np.real(eigs))]
    # null vector of J - lam I from the SVD
    _, _, vh = np.linalg.svd(J - lam * np.eye(8))
    v = np.conj(vh[-1])
    if abs(lam.imag) > 0:
        k = int(np.argmax(np.abs(v)))
        v = v * cmath.exp(-1j * cmath.phase(v[k]))
    v = np.real(v)
    return complex(lam), v / np.linalg.norm(v)
