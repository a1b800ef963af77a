"""Oracle tests: scalar Gaussian coefficients and the refined reference flow.

Frozen constants derived at 50-digit precision from
kappa*(lam0 -> lam) = (alpha/alpha0) * sqrt((gamma^2 + e^{-2 lam}) / (gamma^2 + e^{-2 lam0}))
on the VE schedule (alpha = 1) with gamma = 1.
"""

import math

import numpy as np
import pytest

from odeslab import (
    IsotropicGaussianModel,
    GaussianMixtureModel,
    NumericalError,
    SamplerSpec,
    build_grid,
    exact_substep,
    gaussian_ddim_kappa,
    gaussian_kappa_star,
    gaussian_kappa_star_trace,
    gaussian_solver2_kappa,
    reference_final_states,
    reference_trajectory,
    run_sampler,
    ve_schedule,
)

KAPPA_STAR_0_TO_01 = 0.9536065103274992476864
KAPPA_STAR_0_TO_02 = 0.9138709006297441192053
DDIM_KAPPA_0_TO_01 = 0.9524187090179797865821
SOLVER2_KAPPA_0_TO_02 = 0.9127256666099376938421


def _grid(M, lam_hi):
    return build_grid(ve_schedule(), "uniform-lambda", M, 1.0, math.exp(-lam_hi))


def test_kappa_star_frozen():
    assert gaussian_kappa_star(1.0, 0.0, 0.1, 1.0, 1.0) == pytest.approx(
        KAPPA_STAR_0_TO_01, rel=1e-15
    )
    assert gaussian_kappa_star(1.0, 0.0, 0.2, 1.0, 1.0) == pytest.approx(
        KAPPA_STAR_0_TO_02, rel=1e-15
    )


def test_kappa_star_composes():
    rng = np.random.default_rng(31)
    for _ in range(100):
        l0, dl1, dl2 = rng.uniform(-1, 1), rng.uniform(0.01, 1), rng.uniform(0.01, 1)
        g = float(rng.uniform(0.2, 3.0))
        whole = gaussian_kappa_star(g, l0, l0 + dl1 + dl2, 1.0, 1.0)
        split = gaussian_kappa_star(g, l0, l0 + dl1, 1.0, 1.0) * gaussian_kappa_star(
            g, l0 + dl1, l0 + dl1 + dl2, 1.0, 1.0
        )
        assert whole == pytest.approx(split, rel=1e-14)


def test_kappa_traces_frozen():
    tr_exact = gaussian_kappa_star_trace(1.0, _grid(2, 0.2))
    assert tr_exact.kappas[0] == 1.0
    assert tr_exact.kappas[-1] == pytest.approx(KAPPA_STAR_0_TO_02, rel=1e-13)

    tr_ddim = gaussian_ddim_kappa(1.0, _grid(1, 0.1))
    assert tr_ddim.kappas.tolist()[0] == 1.0
    assert tr_ddim.kappas[-1] == pytest.approx(DDIM_KAPPA_0_TO_01, rel=1e-13)

    tr_s2 = gaussian_solver2_kappa(1.0, _grid(2, 0.2))
    assert tr_s2.kappas[-1] == pytest.approx(SOLVER2_KAPPA_0_TO_02, rel=1e-13)


@pytest.mark.parametrize("M", [5, 16])
def test_kappa_recursions_match_vector_samplers(M):
    # the scalar recursions must reproduce the vector iterates at every node
    model = IsotropicGaussianModel(ve_schedule(), gamma=1.3, dim=3)
    grid = build_grid(ve_schedule(), "uniform-lambda", M, 8.0, 5e-3)
    x0 = np.array([1.0, -0.5, 2.0])
    for spec, trace_fn in (
        (SamplerSpec(rule="ddim"), gaussian_ddim_kappa),
        (SamplerSpec(rule="odesolver-p", p=2), gaussian_solver2_kappa),
    ):
        traj = run_sampler(spec, grid, model, x0)
        trace = trace_fn(1.3, grid)
        predicted = trace.kappas[:, None] * x0[None, :]
        worst = np.max(np.abs(traj.states - predicted) / np.maximum(np.abs(predicted), 1e-30))
        assert worst < 1e-12, (spec.label(), worst)


def test_reference_bypass_equals_kappa_star():
    model = IsotropicGaussianModel(ve_schedule(), gamma=0.9, dim=2)
    grid = build_grid(ve_schedule(), "uniform-lambda", 6, 5.0, 1e-2)
    x0 = np.array([0.4, -1.2])
    ref = reference_trajectory(model, grid, x0)
    trace = gaussian_kappa_star_trace(0.9, grid)
    assert ref.achieved_tolerance == 0.0
    assert np.allclose(ref.states, trace.kappas[:, None] * x0[None, :], rtol=1e-15, atol=0)


def test_runge_kutta_reference_matches_gaussian_closed_form():
    # disable the bypass so the refined integrator is exercised end to end
    model = IsotropicGaussianModel(ve_schedule(), gamma=1.0, dim=2)
    grid = build_grid(ve_schedule(), "uniform-lambda", 8, 5.0, 1e-2)
    x0 = np.array([1.0, -0.7])
    ref = reference_trajectory(model, grid, x0, use_gaussian_bypass=False)
    trace = gaussian_kappa_star_trace(1.0, grid)
    worst = np.max(np.abs(ref.states - trace.kappas[:, None] * x0[None, :]))
    assert worst < 1e-10
    assert 0.0 < ref.achieved_tolerance <= 1e-10


def test_reference_final_states_batch():
    model = IsotropicGaussianModel(ve_schedule(), gamma=1.0, dim=2)
    x0 = np.arange(6.0).reshape(3, 2)
    finals, achieved = reference_final_states(model, 5.0, 1e-2, x0)
    assert finals.shape == (3, 2)
    assert achieved == 0.0
    k = gaussian_kappa_star(
        1.0, float(ve_schedule().lambda_of_t(5.0)), float(ve_schedule().lambda_of_t(1e-2)), 1.0, 1.0
    )
    assert np.allclose(finals, k * x0, rtol=1e-15)


def test_exact_substep_gaussian_and_mixture():
    sch = ve_schedule()
    gau = IsotropicGaussianModel(sch, gamma=1.0, dim=1)
    grid = build_grid(sch, "uniform-lambda", 4, 2.0, 0.1)
    x = np.array([0.8])
    out = exact_substep(gau, x, 2, grid)
    k = gaussian_kappa_star(1.0, grid.lambdas[1], grid.lambdas[2], grid.alphas[1], grid.alphas[2])
    assert float(out[0]) == pytest.approx(float(k * x[0]), rel=1e-15)

    mix = GaussianMixtureModel(sch, weights=[1.0], means=[[0.0]], scales=[1.0])
    out_mix = exact_substep(mix, x, 2, grid)
    # the single-component mixture is the same distribution, so the flows agree
    assert float(out_mix[0]) == pytest.approx(float(out[0]), rel=1e-9)
    with pytest.raises(ValueError):
        exact_substep(gau, x, 9, grid)


def test_numerical_error_is_runtime_error():
    assert issubclass(NumericalError, RuntimeError)
