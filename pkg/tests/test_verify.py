import json

import numpy as np
import pytest

from am2cascade import cli
from am2cascade.config import default_document
from am2cascade.model import reference_params
from am2cascade.verify import (
    SUITES,
    x12_sign_changes,
    x22_root_reports,
    mutated_jacobian,
    run_suites,
    suite_eigen_oracle,
    suite_jacobian_fd,
)


def test_default_seed_all_pass():
    results = run_suites(seed=0, draws=40, states=40, trajectories=2)
    assert [r.name for r in results] == list(SUITES)
    for r in results:
        assert r.passed, (r.name, r.failures)
        assert r.checked > 0 and r.warning is None


def test_sign_flip_in_a78_caught_by_eigen_oracle():
    res = suite_eigen_oracle(seed=0, draws=30, jacobian_fn=mutated_jacobian((6, 7), -1.0))
    assert not res.passed
    assert any("closed form" in f or "polynomial" in f for f in res.failures)


def test_sign_flip_caught_by_finite_differences():
    res = suite_jacobian_fd(seed=0, states=10, jacobian_fn=mutated_jacobian((6, 7), -1.0))
    assert not res.passed


def test_zero_draws_warn():
    results = run_suites(seed=0, draws=0, states=0, trajectories=0)
    assert all(r.passed and r.checked == 0 and "vacuous" in r.warning for r in results)


def test_unknown_suite_rejected():
    with pytest.raises(ValueError, match="unknown properties"):
        run_suites(names=["nope"])


def test_unknown_suite_via_cli_exits_2(tmp_path):
    doc = default_document()
    doc["verify"] = {"properties": ["nope"]}
    path = tmp_path / "v.json"
    path.write_text(json.dumps(doc))
    assert cli.main(["verify", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_selected_suite_only():
    (r,) = run_suites(seed=1, draws=5, names=["residuals"])
    assert r.name == "residuals" and r.passed


def test_reference_lemma_checks():
    p = reference_params()
    assert x12_sign_changes(p) == 1
    reps = x22_root_reports(p)
    assert reps
    for r in reps:
        assert r.odd_or_tangent and r.chain


def test_x12_scan_none_without_acidogens():
    # S1in below lambda1^1 = 2/3: E10 absent
    assert x12_sign_changes(reference_params(s1_in=0.5)) is None


def test_results_serialize():
    (r,) = run_suites(seed=0, draws=3, names=["stability_agreement"])
    doc = r.as_dict()
    assert json.loads(json.dumps(doc))["name"] == "stability_agreement"
    assert np.isfinite(doc["worst"])
