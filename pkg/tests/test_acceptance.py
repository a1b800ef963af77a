"""Acceptance gate: one pass/fail test per built-in criterion.

The whole registry runs once per session; each criterion then gets its own
test so failures surface individually with the measured detail string.
The fault-injection tests flip a sign deep in the solver kernels and
require the affected criterion to fail, guarding the gate itself against
going vacuous.
"""

import pytest

import odeslab.solvers
from odeslab.acceptance import (
    CRITERIA,
    check_oracle_equivalence,
    check_theorem1,
    run_criteria,
)

EXPECTED_CRITERIA = {
    "theorem1",
    "theorem2",
    "theorem3",
    "theorem4",
    "oracle_equivalence",
    "structural",
    "grid_rule",
    "determinism",
}


@pytest.fixture(scope="module")
def results():
    out = {r.name: r for r in run_criteria()}
    for r in out.values():
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name} ({r.runtime:.2f}s): {r.detail}")
    return out


def test_registry_covers_expected_criteria():
    assert set(CRITERIA) == EXPECTED_CRITERIA


@pytest.mark.parametrize("name", sorted(EXPECTED_CRITERIA))
def test_criterion(name, results):
    r = results[name]
    print(f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.runtime:.2f}s): {r.detail}")
    assert r.passed, f"{r.name}: {r.detail}"


def test_criteria_stay_within_budgets(results):
    for name, (_, budget) in CRITERIA.items():
        assert results[name].runtime <= budget, (name, results[name].runtime, budget)


def test_run_criteria_only_selects_one():
    out = run_criteria(only="grid_rule")
    assert [r.name for r in out] == ["grid_rule"]
    assert out[0].passed


def test_gate_detects_broken_phi_kernel(monkeypatch):
    # flipping the sign of the first phi integral corrupts every rule of
    # order >= 2; the order criterion must fail and name a culprit
    real_phi = odeslab.solvers.phi

    def flipped(k, x):
        v = real_phi(k, x)
        return -v if k == 1 else v

    monkeypatch.setattr(odeslab.solvers, "phi", flipped)
    ok, detail = check_theorem1()
    assert not ok
    assert "odesolver-2" in detail or "unipc" in detail


def test_gate_detects_broken_kappa_recursion(monkeypatch):
    import odeslab.oracle

    real = odeslab.oracle._ddim_kappa_factor

    def skewed(gamma, lam_prev, lam_next, a_prev, a_next):
        return real(gamma, lam_prev, lam_next, a_prev, a_next) * (1.0 + 1e-6)

    monkeypatch.setattr(odeslab.oracle, "_ddim_kappa_factor", skewed)
    ok, detail = check_oracle_equivalence()
    assert not ok
    assert "kappa recursions" in detail and "need <= 1e-10" in detail
