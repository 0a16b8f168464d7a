import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from am2cascade.equilibria import enumerate_all, existing
from am2cascade.growth import GrowthLaw, UNIMODAL
from am2cascade.model import omega_functionals, washout_state
from am2cascade.sampling import operating_draw, state_in_omega
from am2cascade.simulate import (
    StiffnessError,
    Trajectory,
    attribute_convergence,
    gronwall_envelopes,
    integrate,
    monitor_invariants,
)
from am2cascade.stability import LES, UNSTABLE, classify, most_unstable_direction
from oracles import oracle_rhs


def reference_solution(p, x0, t_end, t_eval):
    sol = solve_ivp(lambda t, y: oracle_rhs(p, y), (0, t_end), x0, method="DOP853",
                    rtol=1e-13, atol=1e-14, t_eval=t_eval)  # fmt: skip
    assert sol.success
    return sol.y.T


def test_washout_is_constant(p0):
    x0 = washout_state(p0).as_array()
    tr = integrate(p0, x0, 50.0, n_samples=11)
    assert np.all(tr.y == x0)
    assert attribute_convergence(tr, enumerate_all(p0)).target == "E00^00"


def test_matches_high_order_reference(p0, rng):
    for _ in range(3):
        p = operating_draw(rng)
        x0 = state_in_omega(rng, p)
        t = np.linspace(0, 20.0 / p.D, 21)
        tr = integrate(p, x0, t[-1], rtol=1e-10, atol=1e-12, t_eval=t)
        ref = reference_solution(p, x0, t[-1], t)
        scale = max(1.0, float(np.max(np.abs(ref))))
        assert np.max(np.abs(tr.y - ref)) <= 1e-7 * scale


def test_tolerance_halving_converges(p0, rng):
    x0 = state_in_omega(rng, p0)
    T = 50.0
    ref = reference_solution(p0, x0, T, [T])[-1]
    errs = []
    for tol in (1e-6, 5e-7):
        tr = integrate(p0, x0, T, rtol=tol, atol=tol * 1e-2, n_samples=2)
        errs.append(np.max(np.abs(tr.y[-1] - ref)))
    a = integrate(p0, x0, T, rtol=1e-6, atol=1e-8, n_samples=2).y[-1]
    b = integrate(p0, x0, T, rtol=5e-7, atol=5e-9, n_samples=2).y[-1]
    assert np.max(np.abs(a - b)) <= 10 * errs[0] + 1e-12
    assert errs[1] <= errs[0] * 1.5


def test_nonnegative_from_random_starts(p0, rng):
    for _ in range(5):
        x0 = state_in_omega(rng, p0)
        tr = integrate(p0, x0, 200.0 / p0.D)
        assert np.all(tr.y >= -10 * tr.atol)
        assert np.all(tr.min_state >= -10 * tr.atol)
        assert monitor_invariants(tr, p0) == []


def test_corrupted_trajectory_flags_one_violation(p0, rng):
    tr = integrate(p0, state_in_omega(rng, p0), 10.0, n_samples=11)
    y = tr.y.copy()
    y[5, 1] = -1e-3
    bad = Trajectory(tr.t, y, tr.stats, np.minimum(tr.min_state, y.min(axis=0)), tr.rtol, tr.atol)
    v = [x for x in monitor_invariants(bad, p0) if x.kind == "nonnegativity"]
    assert len(v) == 1 and v[0].component == "X1_1"


def test_total_above_bound_decays_along_envelope(p0, rng):
    x0 = state_in_omega(rng, p0, scale=3.0)
    x0[0] += 20.0  # push Z1 above its bound
    om = omega_functionals(p0, x0)
    assert om.z1 > om.bound1
    tr = integrate(p0, x0, 40.0, n_samples=401)
    z1 = np.array([omega_functionals(p0, y).z1 for y in tr.y])
    e1, _ = gronwall_envelopes(p0, (om.z1, om.z2), tr.t)
    assert np.all(z1 <= e1 * (1 + 1e-6) + 1e-9)
    # independent envelope: Z1' <= alpha D1 (b1 - Z1)
    b1 = om.bound1
    assert e1 == pytest.approx(b1 + (om.z1 - b1) * np.exp(-p0.alpha * p0.D1 * tr.t))
    assert z1[-1] < z1[0]
    assert monitor_invariants(tr, p0) == []


def test_perturbed_les_is_attributed(p0, rng):
    eqs = enumerate_all(p0)
    les = [e for e in existing(eqs) if classify(p0, e).verdict == LES]
    assert les
    for e in les:
        x0 = np.maximum(e.state.as_array() + 1e-4 * rng.uniform(-1, 1, 8), 0)
        tr = integrate(p0, x0, 200.0 / p0.D)
        assert attribute_convergence(tr, eqs, p=p0).target == e.label


def test_perturbed_unstable_leaves(p0):
    eqs = enumerate_all(p0)
    e = next(e for e in existing(eqs) if e.label == "E00^00")
    assert classify(p0, e).verdict == UNSTABLE
    _, v = most_unstable_direction(p0, e)
    k = 1 + 2 * int(np.argmax(np.abs(v[1::2])))
    v = v if v[k] > 0 else -v
    tr = integrate(p0, np.maximum(e.state.as_array() + 1e-6 * v, 0.0), 200.0 / p0.D)
    assert attribute_convergence(tr, eqs).target != "E00^00"


def test_empty_equilibrium_list(p0):
    tr = integrate(p0, washout_state(p0).as_array(), 1.0, n_samples=3)
    rep = attribute_convergence(tr, [])
    assert rep.target is None and rep.nearest is None and math.isinf(rep.distance)


def test_step_budget_exhaustion_keeps_partial_trajectory(p0, rng):
    with pytest.raises(StiffnessError) as info:
        integrate(p0, state_in_omega(rng, p0), 1000.0, max_steps=50)
    tr = info.value.trajectory
    assert not tr.complete
    assert 0 < len(tr.t) < 1001
    assert "budget" in str(info.value)


@pytest.mark.parametrize(
    "kwargs",
    [{"t_end": -1.0}, {"t_end": 1.0, "rtol": 0.5}, {"t_end": 1.0, "atol": 0.0}, {"t_end": 1.0, "t_eval": [0.0, 2.0]}],
)
def test_bad_inputs_rejected(p0, kwargs):
    with pytest.raises(ValueError):
        integrate(p0, washout_state(p0).as_array(), **kwargs)


def test_negative_start_rejected(p0):
    x0 = washout_state(p0).as_array()
    x0[1] = -1.0
    with pytest.raises(ValueError):
        integrate(p0, x0, 1.0)


class _SlowHaldane(GrowthLaw):
    """Haldane written by hand, so no compiled right-hand side exists."""

    kind = UNIMODAL

    def __call__(self, s):
        return s / (1.0 + s + s * s / 4.0)

    def derivative(self, s):
        return (1.0 - s * s / 4.0) / (1.0 + s + s * s / 4.0) ** 2


def test_interpreted_fallback_matches_compiled(p0, rng):
    x0 = state_in_omega(rng, p0)
    a = integrate(p0, x0, 5.0, n_samples=6)
    b = integrate(p0.replace(mu2=_SlowHaldane()), x0, 5.0, n_samples=6)
    np.testing.assert_allclose(a.y, b.y, rtol=1e-12, atol=1e-14)


def test_csv_roundtrip(p0, tmp_path):
    tr = integrate(p0, washout_state(p0).as_array(), 1.0, n_samples=3)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "t,S1_1,X1_1,S2_1,X2_1,S1_2,X1_2,S2_2,X2_2"
    assert len(rows) == 4
    assert np.loadtxt(path, delimiter=",", skiprows=1) == pytest.approx(np.column_stack([tr.t, tr.y]))
