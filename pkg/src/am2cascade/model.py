"""Two AM2 chemostats in series with distinct removal rates.

State ordering throughout the package::

    (S1_1, X1_1, S2_1, X2_1, S1_2, X1_2, S2_2, X2_2)

where ``Si_j`` is substrate ``i`` and ``Xi_j`` biomass ``i`` in reactor
``j``. Reactor 1 holds the volume fraction ``r`` and reactor 2 the rest, so
the dilution rates are ``D1 = D/r`` and ``D2 = D/(1-r)``; biomass is removed
at ``alpha * Dj``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .growth import MONOTONE, UNIMODAL, GrowthLaw, Haldane, Monod

STATE_NAMES = ("S1_1", "X1_1", "S2_1", "X2_1", "S1_2", "X1_2", "S2_2", "X2_2")


class ParameterError(ValueError):
    """Model parameters outside their admissible domain."""


class SystemState(NamedTuple):
    s11: float
    x11: float
    s21: float
    x21: float
    s12: float
    x12: float
    s22: float
    x22: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


@dataclass(frozen=True)
class ModelParams:
    mu1: GrowthLaw
    mu2: GrowthLaw
    k1: float
    k2: float
    k3: float
    alpha: float
    D: float
    r: float
    s1_in: float
    s2_in: float

    def __post_init__(self):
        if self.mu1.kind != MONOTONE:
            raise ParameterError("mu1 must be a monotone growth law")
        if self.mu2.kind != UNIMODAL:
            raise ParameterError("mu2 must be a unimodal growth law")
        for name in ("k1", "k2", "k3", "alpha", "D", "r", "s1_in", "s2_in"):
            v = getattr(self, name)
            if not (isinstance(v, int | float) and math.isfinite(v)):
                raise ParameterError(f"{name} must be a finite number, got {v!r}")
        if not self.k2 > 0:
            raise ParameterError(f"k2 must be positive, got {self.k2!r}")
        if not self.k1 > self.k2:
            raise ParameterError(f"k1 must exceed k2 (k1={self.k1!r}, k2={self.k2!r})")
        if not self.k3 > 0:
            raise ParameterError(f"k3 must be positive, got {self.k3!r}")
        if not 0 < self.alpha < 1:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not self.D > 0:
            raise ParameterError(f"D must be positive, got {self.D!r}")
        if not 0 < self.r < 1:
            raise ParameterError(f"r must lie in (0, 1), got {self.r!r}")
        if self.s1_in < 0 or self.s2_in < 0:
            raise ParameterError("input concentrations must be nonnegative")

    @property
    def r1(self) -> float:
        return self.r

    @property
    def r2(self) -> float:
        return 1.0 - self.r

    @property
    def D1(self) -> float:
        return self.D / self.r

    @property
    def D2(self) -> float:
        return self.D / (1.0 - self.r)

    def replace(self, **changes) -> ModelParams:
        return dataclasses.replace(self, **changes)


def reference_params(**changes) -> ModelParams:
    """The hand-checkable fixture used across tests and examples."""
    p = ModelParams(
        mu1=Monod(m=1.0, K=1.0),
        mu2=Haldane(m=1.0, K=1.0, KI=4.0),
        k1=2.0,
        k2=1.0,
        k3=1.0,
        alpha=0.5,
        D=0.4,
        r=0.5,
        s1_in=3.0,
        s2_in=2.0,
    )
    return p.replace(**changes) if changes else p


def dilution_rates(p: ModelParams) -> tuple[float, float]:
    return p.D1, p.D2


def washout_state(p: ModelParams) -> SystemState:
    return SystemState(p.s1_in, 0.0, p.s2_in, 0.0, p.s1_in, 0.0, p.s2_in, 0.0)


def rhs(p: ModelParams, x) -> np.ndarray:
    """Right-hand side of the eight-dimensional system."""
    s11, x11, s21, x21, s12, x12, s22, x22 = (float(v) for v in x)
    D1, D2, a = p.D1, p.D2, p.alpha
    m11 = p.mu1(s11)
    m21 = p.mu2(s21)
    m12 = p.mu1(s12)
    m22 = p.mu2(s22)
    return np.array(
        [
            D1 * (p.s1_in - s11) - p.k1 * m11 * x11,
            (m11 - a * D1) * x11,
            D1 * (p.s2_in - s21) + p.k2 * m11 * x11 - p.k3 * m21 * x21,
            (m21 - a * D1) * x21,
            D2 * (s11 - s12) - p.k1 * m12 * x12,
            a * D2 * (x11 - x12) + m12 * x12,
            D2 * (s21 - s22) + p.k2 * m12 * x12 - p.k3 * m22 * x22,
            a * D2 * (x21 - x22) + m22 * x22,
        ]
    )


# Structural nonzeros of the Jacobian: reactor 1 does not see reactor 2, and
# within each reactor the biomass-2 pair does not feed back on the biomass-1 pair.
JACOBIAN_PATTERN = np.zeros((8, 8), dtype=bool)
for _i, _j in [
    (0, 0), (0, 1),
    (1, 0), (1, 1),
    (2, 0), (2, 1), (2, 2), (2, 3),
    (3, 2), (3, 3),
    (4, 0), (4, 4), (4, 5),
    (5, 1), (5, 4), (5, 5),
    (6, 2), (6, 4), (6, 5), (6, 6), (6, 7),
    (7, 3), (7, 6), (7, 7),
]:  # fmt: skip
    JACOBIAN_PATTERN[_i, _j] = True
del _i, _j


def jacobian(p: ModelParams, x) -> np.ndarray:
    """Analytic Jacobian of :func:`rhs`."""
    s11, x11, s21, x21, s12, x12, s22, x22 = (float(v) for v in x)
    D1, D2, a = p.D1, p.D2, p.alpha
    k1, k2, k3 = p.k1, p.k2, p.k3
    m11, dm11 = p.mu1(s11), p.mu1.derivative(s11)
    m21, dm21 = p.mu2(s21), p.mu2.derivative(s21)
    m12, dm12 = p.mu1(s12), p.mu1.derivative(s12)
    m22, dm22 = p.mu2(s22), p.mu2.derivative(s22)

    J = np.zeros((8, 8))
    J[0, 0] = -D1 - k1 * dm11 * x11
    J[0, 1] = -k1 * m11
    J[1, 0] = dm11 * x11
    J[1, 1] = m11 - a * D1
    J[2, 0] = k2 * dm11 * x11
    J[2, 1] = k2 * m11
    J[2, 2] = -D1 - k3 * dm21 * x21
    J[2, 3] = -k3 * m21
    J[3, 2] = dm21 * x21
    J[3, 3] = m21 - a * D1

    J[4, 0] = D2
    J[4, 4] = -D2 - k1 * dm12 * x12
    J[4, 5] = -k1 * m12
    J[5, 1] = a * D2
    J[5, 4] = dm12 * x12
    J[5, 5] = m12 - a * D2
    J[6, 2] = D2
    J[6, 4] = k2 * dm12 * x12
    J[6, 5] = k2 * m12
    J[6, 6] = -D2 - k3 * dm22 * x22
    J[6, 7] = -k3 * m22
    J[7, 3] = a * D2
    J[7, 6] = dm22 * x22
    J[7, 7] = m22 - a * D2
    return J


def finite_difference_jacobian(p: ModelParams, x, rel_step: float = 1e-3) -> np.ndarray:
    """Fourth-order central differences of :func:`rhs`.

    The wide stencil keeps rounding error far below the truncation error on
    entries such as ``mu1(S) - alpha D1`` that nearly cancel. Substrate
    columns whose stencil would leave the orthant use the fourth-order
    forward stencil; the growth laws are undefined below zero.
    """
    x = np.asarray(x, dtype=float)
    J = np.empty((8, 8))
    for j in range(8):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros(8)
        e[j] = h
        if j % 2 == 0 and x[j] - 2 * h < 0:
            f = [rhs(p, x + k * e) for k in range(5)]
            d = [fk - f[0] for fk in f[1:]]
            J[:, j] = (48 * d[0] - 36 * d[1] + 16 * d[2] - 3 * d[3]) / (12 * h)
        else:
            # differences first, so rows that ignore x[j] come out exactly zero
            d1 = rhs(p, x + e) - rhs(p, x - e)
            d2 = rhs(p, x + 2 * e) - rhs(p, x - 2 * e)
            J[:, j] = (8 * d1 - d2) / (12 * h)
    return J


def relative_entry_error(A: np.ndarray, B: np.ndarray) -> float:
    """Largest ``|A - B| / |A|`` over entries; entries of ``A`` below
    ``1e-12`` times its largest magnitude are measured against that scale."""
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    floor = 1e-12 * max(float(np.max(np.abs(A))), 1e-300)
    return float(np.max(np.abs(A - B) / np.maximum(np.abs(A), floor)))


class OmegaValues(NamedTuple):
    z1: float
    z2: float
    bound1: float
    bound2: float


def omega_functionals(p: ModelParams, x) -> OmegaValues:
    """Weighted mass totals of each reactor and the bounds defining the
    invariant region: ``Zj <= (S1in + S2in) / alpha**j``."""
    s11, x11, s21, x21, s12, x12, s22, x22 = (float(v) for v in x)
    w = p.k1 - p.k2
    z1 = s11 + w * x11 + s21 + p.k3 * x21
    z2 = s12 + w * x12 + s22 + p.k3 * x22
    total = p.s1_in + p.s2_in
    return OmegaValues(z1, z2, total / p.alpha, total / p.alpha**2)


def in_omega(p: ModelParams, x, rtol: float = 0.0) -> bool:
    om = omega_functionals(p, x)
    return (
        bool(np.all(np.asarray(x, dtype=float) >= 0))
        and om.z1 <= om.bound1 * (1 + rtol)
        and om.z2 <= om.bound2 * (1 + rtol)
    )
