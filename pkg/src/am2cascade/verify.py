"""Seeded property suites behind ``am2cascade verify``.

Each suite draws its own parameters from ``default_rng([seed, k])`` so that
suites can be run alone without changing each other's draws.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .equilibria import (
    INHIBITED_FAMILIES,
    LemmaViolation,
    aux_functions,
    enumerate_all,
    existing,
    residual,
    upper_equilibria,
)
from .model import (
    JACOBIAN_PATTERN,
    ModelParams,
    finite_difference_jacobian,
    jacobian,
    relative_entry_error,
)
from .sampling import operating_draw, state_in_omega
from .simulate import StiffnessError, integrate, monitor_invariants
from .stability import (
    HOPF_FAMILIES,
    UNSTABLE,
    StabilityDisagreement,
    block_charpoly,
    block_eigenvalues,
    charpoly,
    classify,
    eigenvalues_of,
    j31_closed_form,
    j33_closed_form,
    ordered_branch_stability,
)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
FD_TOL = 1e-6
ORACLE_TOL = 1e-8
IDENTITY_TOL = 1e-8
LEMMA_SCAN = 10_000
MAX_FAILURES = 10

SUITES = ("residuals", "jacobian_fd", "eigen_oracle", "stability_agreement", "lemma_roots", "invariants")


@dataclass
class PropertyResult:
    name: str
    passed: bool
    checked: int
    worst: float = 0.0
    failures: list[str] = field(default_factory=list)
    warning: str | None = None

    def fail(self, msg: str) -> None:
        self.passed = False
        if len(self.failures) < MAX_FAILURES:
            self.failures.append(msg)

    def as_dict(self) -> dict:
        d = asdict(self)
        if not math.isfinite(d["worst"]):
            d["worst"] = repr(d["worst"])
        return d


def _rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, k])


def _draws(seed: int, k: int, n: int) -> list[ModelParams]:
    rng = _rng(seed, k)
    return [operating_draw(rng) for _ in range(n)]


# lemma checks ----------------------------------------------------------------


def x12_sign_changes(p: ModelParams, n: int = LEMMA_SCAN) -> int | None:
    """Sign changes of ``f1 - g1`` over ``n`` interior points of
    ``(X1_1*, S1in/(alpha k1))``; None when the acidogens wash out of reactor 1."""
    up = next(u for u in upper_equilibria(p) if u.family == "E10")
    if not up.exists:
        return None
    aux = aux_functions(p, up.components, 0.0)
    lo, hi = up.components[1], p.s1_in / (p.alpha * p.k1)
    xs = np.linspace(lo, hi, n + 2)[1:-1]
    v = aux.f1(xs) - aux.g1(xs)
    s = np.sign(v[v != 0])
    return int(np.count_nonzero(s[1:] != s[:-1]))


@dataclass(frozen=True)
class X22RootReport:
    family: str
    roots: tuple[float, ...]
    x21: float
    x2m: float
    d: float
    tangent: bool
    odd_or_tangent: bool
    ordered: bool  # X2_1* < roots < d, ascending, at most one root past x2m
    last_past_x2m: bool  # the literal chain puts the last root past x2m
    removal_above_peak: bool  # alpha*D2 exceeds the peak of mu2

    @property
    def chain(self) -> bool:
        return self.ordered and (self.last_past_x2m or self.x2m <= self.x21)


def x22_root_reports(p: ModelParams, eqs=None) -> list[X22RootReport]:
    eqs = eqs if eqs is not None else enumerate_all(p)
    peak = p.mu2.peak()[1]
    out = []
    for e in eqs:
        if not e.exists or e.branch != 1 or "x2m" not in e.diagnostics:
            continue
        dg = e.diagnostics
        roots = tuple(dg["X2_2 roots"])
        x21, x2m, d = e.state.x21, dg["x2m"], dg["d"]
        inside = all(x21 < r < d for r in roots) and all(a < b for a, b in zip(roots, roots[1:]))
        ordered = inside and sum(r > x2m for r in roots) <= 1
        out.append(
            X22RootReport(
                e.family,
                roots,
                x21,
                x2m,
                d,
                dg["tangent"],
                len(roots) % 2 == 1 or dg["tangent"],
                ordered,
                roots[-1] > x2m,
                p.alpha * p.D2 > peak,
            )
        )
    return out


# suites ----------------------------------------------------------------------


def suite_residuals(seed: int, draws: int, **_) -> PropertyResult:
    res = PropertyResult("residuals", True, 0)
    for n, p in enumerate(_draws(seed, 0, draws)):
        for e in existing(enumerate_all(p)):
            r = residual(p, e)
            res.checked += 1
            res.worst = max(res.worst, r)
            if not r <= RESIDUAL_TOL:
                res.fail(f"draw {n} {e.label}: |rhs|_inf = {r:.3e}")
    return res


def suite_jacobian_fd(seed: int, states: int, jacobian_fn=jacobian, **_) -> PropertyResult:
    res = PropertyResult("jacobian_fd", True, 0)
    rng = _rng(seed, 1)
    for n in range(states):
        p = operating_draw(rng)
        x = state_in_omega(rng, p, scale=rng.uniform(0.0, 2.0))
        Ja = jacobian_fn(p, x)
        Jf = finite_difference_jacobian(p, x)
        res.checked += 1
        if np.any((Ja != 0) & ~JACOBIAN_PATTERN) or np.any((Jf != 0) & ~JACOBIAN_PATTERN):
            res.fail(f"state {n}: nonzero entry outside the block-triangular pattern")
        err = relative_entry_error(Ja, Jf)
        res.worst = max(res.worst, err)
        if not err <= FD_TOL:
            i, j = np.unravel_index(np.argmax(np.abs(Ja - Jf)), Ja.shape)
            res.fail(f"state {n}: relative entry error {err:.3e} (largest gap at a{i + 1}{j + 1})")
    return res


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def suite_eigen_oracle(seed: int, draws: int, jacobian_fn=jacobian, **_) -> PropertyResult:
    """Block eigenvalues against the full characteristic polynomial, and the
    reactor-2 block determinants/traces against their closed forms."""
    res = PropertyResult("eigen_oracle", True, 0)
    for n, p in enumerate(_draws(seed, 2, draws)):
        for e in existing(enumerate_all(p)):
            J = jacobian_fn(p, e.state)
            try:
                blocks = block_eigenvalues(J)
            except ValueError as exc:
                res.fail(f"draw {n} {e.label}: {exc}")
                continue
            res.checked += 1
            poly, scale = block_charpoly(blocks)
            full = charpoly(J)
            mism = float(np.max(np.abs(full - poly) / scale))
            # each block eigenvalue must annihilate the full polynomial
            ev = eigenvalues_of(blocks)
            mag = np.abs(ev)[:, None] ** np.arange(8, -1, -1)[None, :]
            vals = np.abs(np.polyval(full, ev)) / np.maximum(mag @ np.abs(full), 1e-300)
            mism = max(mism, float(np.max(vals)))
            res.worst = max(res.worst, mism)
            if not mism <= ORACLE_TOL:
                res.fail(f"draw {n} {e.label}: characteristic polynomial mismatch {mism:.3e}")
            checks = []
            if e.state.x12 > 0:
                det1, tr1 = j31_closed_form(p, e)
                checks += [("det J31", blocks[2].det, det1), ("tr J31", blocks[2].trace, tr1)]
            if e.state.x22 > 0:
                c = j33_closed_form(p, e)
                checks += [("det J33", blocks[3].det, c.det), ("tr J33", blocks[3].trace, c.trace)]
            for what, got, want in checks:
                r = _rel(got, want)
                res.worst = max(res.worst, r)
                if not r <= IDENTITY_TOL:
                    res.fail(f"draw {n} {e.label}: {what} block {got:.12g} vs closed form {want:.12g}")
    return res


def suite_stability_agreement(seed: int, draws: int, **_) -> PropertyResult:
    res = PropertyResult("stability_agreement", True, 0)
    for n, p in enumerate(_draws(seed, 3, draws)):
        eqs = enumerate_all(p)
        for e in existing(eqs):
            v = classify(p, e)
            res.checked += 1
            if not v.agreement:
                res.fail(f"draw {n} {e.label}: eigenvalues {v.verdict}, closed form {v.table_verdict}")
            if e.family in INHIBITED_FAMILIES and v.verdict != UNSTABLE:
                res.fail(f"draw {n} {e.label}: inhibited-branch family is {v.verdict}")
        for fam in sorted(HOPF_FAMILIES):
            try:
                ordered_branch_stability(p, fam, eqs, strict=True)
            except StabilityDisagreement as exc:
                res.fail(f"draw {n}: {exc}")
    return res


def suite_lemma_roots(seed: int, draws: int, **_) -> PropertyResult:
    """Unique root of ``f1 = g1``; for ``f2 = g2`` an odd (or tangent) root
    count, ordered roots with at most one past ``x2m``, and the last root
    past ``x2m`` whenever ``alpha*D2`` is below the peak of ``mu2``."""
    res = PropertyResult("lemma_roots", True, 0)
    for n, p in enumerate(_draws(seed, 4, draws)):
        try:
            k = x12_sign_changes(p)
            eqs = enumerate_all(p)
        except LemmaViolation as exc:
            res.fail(f"draw {n}: {exc}")
            continue
        if k is not None:
            res.checked += 1
            if k != 1:
                res.fail(f"draw {n}: f1 - g1 changes sign {k} times")
        for r in x22_root_reports(p, eqs):
            res.checked += 1
            if not r.odd_or_tangent:
                res.fail(f"draw {n} {r.family}: {len(r.roots)} roots without tangency")
            if not r.ordered:
                res.fail(f"draw {n} {r.family}: roots {r.roots} out of order (x2m={r.x2m:.6g})")
            if r.x2m > r.x21 and not r.last_past_x2m and not r.removal_above_peak:
                res.fail(f"draw {n} {r.family}: last root {r.roots[-1]:.6g} not past x2m={r.x2m:.6g}")
    return res


def suite_invariants(seed: int, trajectories: int, **_) -> PropertyResult:
    res = PropertyResult("invariants", True, 0)
    rng = _rng(seed, 5)
    for n in range(trajectories):
        p = operating_draw(rng)
        # half the starts lie outside the invariant region
        x0 = state_in_omega(rng, p, scale=1.0 if n % 2 == 0 else rng.uniform(1.0, 3.0))
        try:
            traj = integrate(p, x0, 200.0 / p.D, rtol=1e-8, atol=1e-10, n_samples=2001)
        except StiffnessError as exc:
            res.fail(f"trajectory {n}: {exc}")
            continue
        res.checked += 1
        for v in monitor_invariants(traj, p):
            res.fail(f"trajectory {n}: {v.kind} {v.component} at t={v.t:.6g}: {v.value:.6g} vs {v.limit:.6g}")
    return res


_SUITE_FUNCS = {
    "residuals": suite_residuals,
    "jacobian_fd": suite_jacobian_fd,
    "eigen_oracle": suite_eigen_oracle,
    "stability_agreement": suite_stability_agreement,
    "lemma_roots": suite_lemma_roots,
    "invariants": suite_invariants,
}


def _run_one(task) -> PropertyResult:
    name, kwargs = task
    return _SUITE_FUNCS[name](**kwargs)


def run_suites(
    seed: int = 0,
    draws: int = 100,
    states: int = 100,
    trajectories: int = 5,
    names=None,
    jacobian_fn=jacobian,
    threads: int = 1,
) -> list[PropertyResult]:
    """Run the named suites (all by default); suites run in parallel when
    ``threads > 1``."""
    names = list(names) if names else list(SUITES)
    unknown = [n for n in names if n not in _SUITE_FUNCS]
    if unknown:
        raise ValueError(f"unknown properties {unknown}; available: {list(SUITES)}")
    kw = dict(seed=seed, draws=draws, states=states, trajectories=trajectories)
    if jacobian_fn is not jacobian:
        kw["jacobian_fn"] = jacobian_fn
    tasks = [(n, kw) for n in names]
    if threads > 1 and jacobian_fn is jacobian:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    for r in results:
        if r.checked == 0:
            r.warning = "no cases checked; vacuous pass"
            log.warning("%s: no cases checked; vacuous pass", r.name)
    return results


def mutated_jacobian(entry=(6, 7), factor: float = -1.0):
    """A Jacobian with one entry scaled, for mutation checks of the oracles."""

    def jac(p, x):
        J = jacobian(p, x)
        J[entry] *= factor
        return J

    return jac

