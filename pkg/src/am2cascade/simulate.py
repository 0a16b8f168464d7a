"""Time integration of the cascade with invariant monitoring.

The integrator is the Dormand-Prince 5(4) pair with a PI step controller and
the standard quartic dense output. Coefficients are taken from
``scipy.integrate.RK45``; the stepping loop is compiled with numba because
long horizons at small ``D`` need a few hundred thousand steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.integrate import RK45

from .equilibria import Equilibrium
from .growth import GrowthLaw, Haldane, Monod
from .model import ModelParams, SystemState, omega_functionals

# tableau, shared with the reference implementation in scipy
_A = np.ascontiguousarray(RK45.A, dtype=float)
_B = np.ascontiguousarray(RK45.B, dtype=float)
_C = np.ascontiguousarray(RK45.C, dtype=float)
_E = np.ascontiguousarray(RK45.E, dtype=float)
_P = np.ascontiguousarray(RK45.P, dtype=float)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
PI_BETA = 0.04
PI_EXPO = 0.2 - 0.75 * PI_BETA
MAX_STEPS = 20_000_000

# kernel status codes
_OK, _UNDERFLOW, _TOO_MANY, _NONFINITE = 0, 1, 2, 3

_MONOD_MONOD, _MONOD_HALDANE = 0, 1


class StiffnessError(RuntimeError):
    """Step size underflow or step budget exhausted. ``trajectory`` holds the
    samples reached before the failure."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class StepStats:
    accepted: int
    rejected: int
    evaluations: int
    last_error: float
    min_step: float
    max_step: float


@dataclass
class Trajectory:
    """Samples of an integration run.

    ``min_state`` is the componentwise minimum over every accepted step, not
    just the samples, so undershoots between samples are not missed.
    """

    t: np.ndarray
    y: np.ndarray
    stats: StepStats
    min_state: np.ndarray
    rtol: float
    atol: float
    complete: bool = True

    @property
    def final(self) -> SystemState:
        return SystemState(*self.y[-1])

    def states(self) -> list[SystemState]:
        return [SystemState(*row) for row in self.y]

    def to_csv(self, path) -> None:
        header = "t,S1_1,X1_1,S2_1,X2_1,S1_2,X1_2,S2_2,X2_2"
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for ti, row in zip(self.t, self.y):
                fh.write(",".join(repr(float(v)) for v in (ti, *row)) + "\n")


@dataclass
class Violation:
    kind: str
    t: float
    value: float
    limit: float
    component: str = ""


@dataclass
class ConvergenceReport:
    target: str | None
    distance: float
    nearest: str | None
    approaching: bool
    violations: list[Violation] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "nearest": self.nearest,
            "distance": self.distance,
            "approaching": self.approaching,
            "violations": [v.__dict__ for v in self.violations],
        }


# compiled kernel -------------------------------------------------------------


@numba.njit(cache=True)
def _rhs_nb(theta, x, out):
    D1, D2, a, k1, k2, k3, s1in, s2in, m1, K1, m2, K2, KI2, kind = theta
    s11 = max(x[0], 0.0)
    s21 = max(x[2], 0.0)
    s12 = max(x[4], 0.0)
    s22 = max(x[6], 0.0)
    mu11 = m1 * s11 / (K1 + s11)
    mu12 = m1 * s12 / (K1 + s12)
    if kind == _MONOD_HALDANE:
        mu21 = m2 * s21 / (K2 + s21 + s21 * s21 / KI2)
        mu22 = m2 * s22 / (K2 + s22 + s22 * s22 / KI2)
    else:
        mu21 = m2 * s21 / (K2 + s21)
        mu22 = m2 * s22 / (K2 + s22)
    out[0] = D1 * (s1in - x[0]) - k1 * mu11 * x[1]
    out[1] = (mu11 - a * D1) * x[1]
    out[2] = D1 * (s2in - x[2]) + k2 * mu11 * x[1] - k3 * mu21 * x[3]
    out[3] = (mu21 - a * D1) * x[3]
    out[4] = D2 * (x[0] - x[4]) - k1 * mu12 * x[5]
    out[5] = a * D2 * (x[1] - x[5]) + mu12 * x[5]
    out[6] = D2 * (x[2] - x[6]) + k2 * mu12 * x[5] - k3 * mu22 * x[7]
    out[7] = a * D2 * (x[3] - x[7]) + mu22 * x[7]


@numba.njit(cache=True)
def _err_norm(err, y, y_new, rtol, atol):
    acc = 0.0
    for i in range(y.shape[0]):
        sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
        acc += (err[i] / sc) ** 2
    return math.sqrt(acc / y.shape[0])


@numba.njit(cache=True)
def _dopri(rhs, theta, y0, t_eval, rtol, atol, h0, max_steps, A, B, C, E, P,
           safety, fac_min, fac_max, beta, expo):  # fmt: skip
    n = y0.shape[0]
    n_out = t_eval.shape[0]
    t_end = t_eval[n_out - 1]
    out = np.empty((n_out, n))
    K = np.empty((7, n))
    y = y0.copy()
    y_new = np.empty(n)
    ytmp = np.empty(n)
    err = np.empty(n)
    fbuf = np.empty(n)
    ymin = y0.copy()
    # stats: accepted, rejected, evals, last_err, hmin, hmax
    stats = np.zeros(6)
    stats[4] = np.inf

    k = 0
    while k < n_out and t_eval[k] <= 0.0:
        out[k] = y
        k += 1

    rhs(theta, y, fbuf)
    K[0] = fbuf
    stats[2] = 1
    t = 0.0
    h = h0
    if h <= 0.0:
        # Hairer's starting step heuristic
        d0 = 0.0
        d1 = 0.0
        for i in range(n):
            sc = atol + rtol * abs(y[i])
            d0 += (y[i] / sc) ** 2
            d1 += (K[0, i] / sc) ** 2
        d0 = math.sqrt(d0 / n)
        d1 = math.sqrt(d1 / n)
        h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h = min(h, t_end)
    err_old = 1e-4
    rejected_last = False
    status = _OK
    steps = 0

    while k < n_out:
        if steps >= max_steps:
            status = _TOO_MANY
            break
        h_floor = 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0)
        if h < h_floor:
            status = _UNDERFLOW
            break
        if t + h > t_end:
            h = t_end - t
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += A[s, j] * K[j, i]
                ytmp[i] = y[i] + h * acc
            rhs(theta, ytmp, fbuf)
            K[s] = fbuf
        for i in range(n):
            acc = 0.0
            for j in range(6):
                acc += B[j] * K[j, i]
            y_new[i] = y[i] + h * acc
        rhs(theta, y_new, fbuf)
        K[6] = fbuf
        stats[2] += 6
        for i in range(n):
            acc = 0.0
            for j in range(7):
                acc += E[j] * K[j, i]
            err[i] = h * acc
        en = _err_norm(err, y, y_new, rtol, atol)
        steps += 1
        if not math.isfinite(en):
            h *= fac_min
            stats[1] += 1
            rejected_last = True
            if not math.isfinite(y_new[0]) and h < h_floor:
                status = _NONFINITE
                break
            continue
        if en <= 1.0:
            t_new = t + h
            if t_end - t_new < 1e-12 * max(t_end, 1.0):
                t_new = t_end
            # dense output for every requested time inside the step
            while k < n_out and t_eval[k] <= t_new:
                th = (t_eval[k] - t) / h
                for i in range(n):
                    q = 0.0
                    thp = th
                    for m in range(4):
                        acc = 0.0
                        for j in range(7):
                            acc += K[j, i] * P[j, m]
                        q += acc * thp
                        thp *= th
                    out[k, i] = y[i] + h * q
                k += 1
            stats[0] += 1
            stats[3] = en
            stats[4] = min(stats[4], h)
            stats[5] = max(stats[5], h)
            t = t_new
            for i in range(n):
                y[i] = y_new[i]
                if y[i] < ymin[i]:
                    ymin[i] = y[i]
            K[0] = K[6]
            en = max(en, 1e-10)
            fac = safety * en ** (-expo) * err_old**beta
            fac = min(1.0 if rejected_last else fac_max, max(fac_min, fac))
            h *= fac
            err_old = en
            rejected_last = False
        else:
            fac = max(fac_min, safety * en ** (-expo))
            h *= fac
            stats[1] += 1
            rejected_last = True
    return out, k, stats, ymin, status


def _theta(p: ModelParams) -> np.ndarray | None:
    """Packed parameters for the compiled path, or None when a growth law
    has no compiled form."""
    m1, m2 = p.mu1, p.mu2
    if type(m1) is not Monod:
        return None
    if type(m2) is Haldane:
        kind, KI = _MONOD_HALDANE, m2.KI
    elif type(m2) is Monod:
        kind, KI = _MONOD_MONOD, 1.0
    else:
        return None
    return np.array([p.D1, p.D2, p.alpha, p.k1, p.k2, p.k3, p.s1_in, p.s2_in,
                     m1.m, m1.K, m2.m, m2.K, KI, kind], dtype=float)  # fmt: skip


def _python_rhs(p: ModelParams):
    """Generic right-hand side with the same undershoot clamp."""

    def mu(law: GrowthLaw, s):
        return law(max(s, 0.0))

    def f(theta, x, out):
        s11, x11, s21, x21, s12, x12, s22, x22 = x
        D1, D2, a = p.D1, p.D2, p.alpha
        m11, m21, m12, m22 = mu(p.mu1, s11), mu(p.mu2, s21), mu(p.mu1, s12), mu(p.mu2, s22)
        out[:] = (
            D1 * (p.s1_in - s11) - p.k1 * m11 * x11,
            (m11 - a * D1) * x11,
            D1 * (p.s2_in - s21) + p.k2 * m11 * x11 - p.k3 * m21 * x21,
            (m21 - a * D1) * x21,
            D2 * (s11 - s12) - p.k1 * m12 * x12,
            a * D2 * (x11 - x12) + m12 * x12,
            D2 * (s21 - s22) + p.k2 * m12 * x12 - p.k3 * m22 * x22,
            a * D2 * (x21 - x22) + m22 * x22,
        )

    return f


def _check_inputs(x0, t_end, rtol, atol):
    if not (t_end > 0 and math.isfinite(t_end)):
        raise ValueError(f"t_end must be positive and finite, got {t_end!r}")
    for name, tol in (("rtol", rtol), ("atol", atol)):
        if not 0 < tol <= 1e-2:
            raise ValueError(f"{name} must lie in (0, 1e-2], got {tol!r}")
    if x0.shape != (8,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be eight finite numbers")
    if np.any(x0 < 0):
        raise ValueError("x0 must be nonnegative")


def integrate(
    p: ModelParams,
    x0,
    t_end: float,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    t_eval=None,
    n_samples: int = 1001,
    h0: float = 0.0,
    max_steps: int = MAX_STEPS,
) -> Trajectory:
    """Integrate from ``x0`` over ``[0, t_end]``.

    Parameters
    ----------
    p : ModelParams
    x0 : array_like of 8 nonnegative floats
    t_end : float
    rtol, atol : float
        Local error tolerances, each in (0, 1e-2].
    t_eval : array_like, optional
        Increasing sample times in ``[0, t_end]``. Defaults to
        ``n_samples`` equally spaced points.

    Returns
    -------
    Trajectory

    Raises
    ------
    StiffnessError
        On step size underflow or when ``max_steps`` is exhausted; the
        partial trajectory is attached.
    """
    x0 = np.asarray(x0, dtype=float)
    _check_inputs(x0, t_end, rtol, atol)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, max(int(n_samples), 2))
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.ndim != 1 or t_eval.size == 0 or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")
    if t_eval[0] < 0 or t_eval[-1] > t_end * (1 + 1e-12):
        raise ValueError("t_eval must lie within [0, t_end]")
    t_eval = t_eval.copy()
    t_eval[-1] = min(t_eval[-1], t_end)

    theta = _theta(p)
    args = (x0, t_eval, float(rtol), float(atol), float(h0), int(max_steps),
            _A, _B, _C, _E, _P, SAFETY, FAC_MIN, FAC_MAX, PI_BETA, PI_EXPO)  # fmt: skip
    if theta is not None:
        out, k, st, ymin, status = _dopri(_rhs_nb, theta, *args)
    else:
        # same algorithm, interpreted, for growth laws without a compiled form
        out, k, st, ymin, status = _dopri.py_func(_python_rhs(p), None, *args)

    stats = StepStats(int(st[0]), int(st[1]), int(st[2]), float(st[3]), float(st[4]), float(st[5]))
    traj = Trajectory(t_eval[:k].copy(), out[:k].copy(), stats, ymin, rtol, atol, complete=status == _OK)
    if status != _OK:
        reason = {
            _UNDERFLOW: "step size underflow",
            _TOO_MANY: f"step budget of {max_steps} exhausted",
            _NONFINITE: "non-finite state",
        }[status]
        t_reached = float(traj.t[-1]) if k else 0.0
        raise StiffnessError(f"{reason} after t={t_reached:.6g} of {t_end:.6g}", traj)
    return traj


# monitors --------------------------------------------------------------------


def gronwall_envelopes(p: ModelParams, z0: tuple[float, float], t) -> tuple[np.ndarray, np.ndarray]:
    """Upper envelopes for the weighted totals ``Z1``, ``Z2``.

    ``Z1' <= a1 (b1 - Z1)`` with ``a1 = alpha D1`` and ``Z2' <= D2 Z1 - a2 Z2``
    with ``a2 = alpha D2``; the second envelope integrates the first.
    """
    t = np.asarray(t, dtype=float)
    total = p.s1_in + p.s2_in
    b1 = total / p.alpha
    a1, a2 = p.alpha * p.D1, p.alpha * p.D2
    c1 = z0[0] - b1
    e1 = b1 + c1 * np.exp(-a1 * t)
    decay2 = np.exp(-a2 * t)
    if abs(a2 - a1) > 1e-12 * max(a1, a2):
        cross = p.D2 * c1 * (np.exp(-a1 * t) - decay2) / (a2 - a1)
    else:
        cross = p.D2 * c1 * t * decay2
    e2 = z0[1] * decay2 + (b1 / p.alpha) * (1.0 - decay2) + cross
    return e1, e2


def monitor_invariants(traj: Trajectory, p: ModelParams, rel_tol: float = 1e-6) -> list[Violation]:
    """Nonnegativity, the mass bounds and the Gronwall envelopes along ``traj``.

    A component below ``-10 atol``, a total ``Zj`` above
    ``max(Zj(0), Mj)`` (``M1 = bound1``, ``M2 = max(Z1(0), bound1)/alpha``)
    or above its envelope by more than ``rel_tol`` relative is reported.
    """
    from .model import STATE_NAMES

    out: list[Violation] = []
    floor = -10.0 * traj.atol
    y, t = traj.y, traj.t
    if y.size == 0:
        return out
    neg = np.argwhere(y < floor)
    seen = set()
    for i, j in neg:
        if j not in seen:
            seen.add(j)
            out.append(Violation("nonnegativity", float(t[i]), float(y[i, j]), floor, STATE_NAMES[j]))
    for j in np.flatnonzero(traj.min_state < floor):
        if j not in seen:
            out.append(Violation("nonnegativity", math.nan, float(traj.min_state[j]), floor, STATE_NAMES[j]))

    w = p.k1 - p.k2
    z1 = y[:, 0] + w * y[:, 1] + y[:, 2] + p.k3 * y[:, 3]
    z2 = y[:, 4] + w * y[:, 5] + y[:, 6] + p.k3 * y[:, 7]
    om = omega_functionals(p, y[0])
    m1 = max(om.z1, om.bound1)
    m2 = max(om.z2, m1 / p.alpha)
    e1, e2 = gronwall_envelopes(p, (z1[0], z2[0]), t)
    checks = (
        ("omega_bound_1", z1, np.full_like(z1, m1)),
        ("omega_bound_2", z2, np.full_like(z2, m2)),
        ("gronwall_1", z1, e1),
        ("gronwall_2", z2, e2),
    )
    for kind, z, lim in checks:
        excess = z - lim * (1 + rel_tol) - 10.0 * traj.atol
        bad = np.flatnonzero(excess > 0)
        if bad.size:
            i = int(bad[np.argmax(excess[bad])])
            out.append(Violation(kind, float(t[i]), float(z[i]), float(lim[i])))
    return out


def _distance(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def attribute_convergence(
    traj: Trajectory,
    eqs: list[Equilibrium],
    tol: float = 1e-6,
    p: ModelParams | None = None,
) -> ConvergenceReport:
    """Nearest existing equilibrium to the final state, attributed as the
    target when within ``tol`` (max norm) and approached over the tail.

    The tail is the last 10% of samples, cut into five windows; it counts as
    approaching when the window maxima of the distance never increase beyond
    a small noise floor. Oscillatory approach still passes, growth does not.
    """
    violations = monitor_invariants(traj, p) if p is not None else []
    cands = [e for e in eqs if e.exists and e.state is not None]
    if not cands or traj.y.size == 0:
        return ConvergenceReport(None, math.inf, None, False, violations)
    final = traj.y[-1]
    dists = [_distance(final, e.state) for e in cands]
    best = int(np.argmin(dists))
    e = cands[best]
    d = dists[best]
    state = np.asarray(e.state, dtype=float)
    n = len(traj.t)
    tail = np.max(np.abs(traj.y[n - max(n // 10, 5) :] - state), axis=1) if n >= 5 else np.array([d])
    windows = [w.max() for w in np.array_split(tail, min(5, len(tail)))]
    floor = 1e-3 * tol + 10.0 * traj.atol
    approaching = all(b <= a + floor for a, b in zip(windows, windows[1:]))
    target = e.label if (d <= tol and approaching) else None
    return ConvergenceReport(target, d, e.label, approaching, violations)
