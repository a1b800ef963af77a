"""Solver step and trajectory tests.

Frozen scalar values were derived independently at 50-digit precision from
the closed forms on the VE schedule with a unit Gaussian target and the
two-step uniform half-log-SNR grid lambda = 0, 0.1, 0.2.
"""

import math

import numpy as np
import pytest

from odeslab import (
    IsotropicGaussianModel,
    GaussianMixtureModel,
    PolyLambdaModel,
    SamplerSpec,
    build_grid,
    ddim_step,
    forward_value_ideal_step,
    forward_value_step,
    ode_solver_2_step,
    ode_solver_3_step,
    ode_solver_p_step,
    phi,
    run_sampler,
    unipc_step,
    ve_schedule,
    vp_linear_schedule,
)

FROZEN = {
    "phi1_at_1": 0.264241117657115356809,       # 1 - 2/e
    "phi2_at_half": 0.02877535593394137328765,
    "ddim_factor_0_to_01": 0.9524187090179797865821,
    "solver2_two_step_product": 0.9127256666099376938421,
    "fv_ideal_factor_0_to_01": 0.9547957929938395453626,
    "fv_gain_0_to_01": 0.09516258196404042683575,
}


def _grid_lambda(n_steps, lam_hi):
    # VE times t = e^{-lambda}; lambda runs 0 .. lam_hi in equal increments
    return build_grid(ve_schedule(), "uniform-lambda", n_steps, 1.0, math.exp(-lam_hi))


def _unit_gaussian(dim=1):
    return IsotropicGaussianModel(ve_schedule(), gamma=1.0, dim=dim)


# --- phi integrals ----------------------------------------------------------------


def test_phi_frozen_values():
    assert phi(1, 1.0) == pytest.approx(FROZEN["phi1_at_1"], rel=1e-15)
    assert phi(2, 0.5) == pytest.approx(FROZEN["phi2_at_half"], rel=1e-14)
    assert phi(0, 0.0) == 0.0


def test_phi_recurrence():
    # phi_k(x) = k*phi_{k-1}(x) - x^k e^{-x}
    for x in (0.1, 1.0, 3.0):
        for k in range(1, 7):
            want = k * phi(k - 1, x) - x**k * math.exp(-x)
            assert phi(k, x) == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_phi_limits_and_domain():
    for k in range(5):
        assert phi(k, math.inf) == float(math.factorial(k))
    assert phi(3, 50.0) == pytest.approx(6.0, rel=1e-12)
    with pytest.raises(ValueError):
        phi(0, -0.5)


def test_phi_against_quadrature():
    from scipy.integrate import quad

    rng = np.random.default_rng(21)
    for _ in range(20):
        k = int(rng.integers(0, 5))
        x = float(rng.uniform(0.01, 6.0))
        val, _ = quad(lambda u: math.exp(-u) * u**k, 0.0, x)
        assert phi(k, x) == pytest.approx(val, rel=1e-10)


# --- single steps against frozen scalars --------------------------------------------


def test_ddim_step_frozen_factor():
    grid = _grid_lambda(1, 0.1)
    x0 = np.array([1.0])
    x1 = ddim_step(x0, 1, grid, _unit_gaussian())
    assert float(x1[0]) == pytest.approx(FROZEN["ddim_factor_0_to_01"], rel=1e-13)


def test_solver2_trajectory_frozen_product():
    grid = _grid_lambda(2, 0.2)
    traj = run_sampler(SamplerSpec(rule="odesolver-p", p=2), grid, _unit_gaussian(), np.array([1.0]))
    assert float(traj.final_state[0]) == pytest.approx(
        FROZEN["solver2_two_step_product"], rel=1e-13
    )


def test_forward_value_ideal_frozen_factor():
    grid = _grid_lambda(1, 0.1)
    x1 = forward_value_ideal_step(np.array([1.0]), 1, grid, _unit_gaussian())
    assert float(x1[0]) == pytest.approx(FROZEN["fv_ideal_factor_0_to_01"], rel=1e-13)


def test_forward_coeffs_gain_frozen():
    # the data-form gain alpha_i - (sigma_i/sigma_{i-1}) alpha_{i-1} on VE is 1 - e^{-delta}
    from odeslab.solvers import _forward_coeffs

    grid = _grid_lambda(1, 0.1)
    ratio, gain = _forward_coeffs(1, grid)
    assert ratio == pytest.approx(math.exp(-0.1), rel=1e-14)
    assert gain == pytest.approx(FROZEN["fv_gain_0_to_01"], rel=1e-13)


# --- structural identities ----------------------------------------------------------


def test_first_order_multistep_is_ddim_bitwise():
    model = _unit_gaussian(dim=3)
    rng = np.random.default_rng(np.random.Philox(key=4))
    grid = build_grid(ve_schedule(), "uniform-lambda", 6, 5.0, 1e-2)
    for _ in range(50):
        i = int(rng.integers(1, 7))
        x = rng.normal(size=3)
        a = ddim_step(x, i, grid, model)
        b = ode_solver_p_step(x, [], i, grid, model, p=1)
        assert np.array_equal(a, b)


def test_equal_history_collapses_to_first_order():
    # if every buffered epsilon equals the fresh one, higher-order corrections vanish
    model = PolyLambdaModel(ve_schedule(), coeffs=[[0.4, -1.1]])  # constant noise
    grid = build_grid(ve_schedule(), "uniform-lambda", 4, 2.0, 0.05)
    x = np.array([0.7, -0.3])
    i = 3
    eps = model.eval_noise(x, grid.times[i - 1])
    hist2 = [(float(grid.lambdas[i - 2]), eps)]
    hist3 = [(float(grid.lambdas[i - 3]), eps), (float(grid.lambdas[i - 2]), eps)]
    base = ddim_step(x, i, grid, model)
    assert np.max(np.abs(ode_solver_2_step(x, hist2, i, grid, model) - base)) < 1e-13
    assert np.max(np.abs(ode_solver_3_step(x, hist3, i, grid, model) - base)) < 1e-13
    assert np.max(np.abs(ode_solver_p_step(x, hist3, i, grid, model, p=3) - base)) < 1e-13


def test_detail_forms_match_general_solver():
    # the folded second/third order forms and the Vandermonde path agree
    model = GaussianMixtureModel(
        ve_schedule(), weights=[0.5, 0.5], means=[[-1.0, 0.0], [1.0, 0.5]], scales=[0.6, 0.8]
    )
    grid = build_grid(ve_schedule(), "uniform-lambda", 5, 3.0, 0.05)
    rng = np.random.default_rng(np.random.Philox(key=8))
    for _ in range(40):
        i = int(rng.integers(3, 6))
        x = rng.normal(size=2)
        h = [
            (float(grid.lambdas[i - 3]), rng.normal(size=2)),
            (float(grid.lambdas[i - 2]), rng.normal(size=2)),
        ]
        g2 = ode_solver_p_step(x, h[1:], i, grid, model, p=2)
        d2 = ode_solver_2_step(x, h[1:], i, grid, model)
        g3 = ode_solver_p_step(x, h, i, grid, model, p=3)
        d3 = ode_solver_3_step(x, h, i, grid, model)
        assert np.allclose(d2, g2, rtol=1e-12, atol=1e-14)
        assert np.allclose(d3, g3, rtol=1e-12, atol=1e-14)


def test_constant_noise_collapses_all_rules_to_ddim():
    # degree-0 polynomial noise: every interpolation is constant, so all
    # rules integrate the same exact linear ODE step
    model = PolyLambdaModel(ve_schedule(), coeffs=[[0.3, -0.7, 0.2, 0.05]])
    grid = build_grid(ve_schedule(), "uniform-lambda", 8, 4.0, 0.02)
    x0 = np.array([1.0, 0.25, -0.5, 2.0])
    base = run_sampler(SamplerSpec(rule="ddim"), grid, model, x0).final_state
    for spec in (
        SamplerSpec(rule="odesolver-p", p=2),
        SamplerSpec(rule="odesolver-p", p=3),
        SamplerSpec(rule="unipc"),
        SamplerSpec(rule="unipc", predictor_order=3),
    ):
        final = run_sampler(spec, grid, model, x0).final_state
        assert np.max(np.abs(final - base)) < 1e-13, spec.label()


def test_coincident_nodes_raise():
    model = _unit_gaussian(dim=2)
    grid = build_grid(ve_schedule(), "uniform-lambda", 3, 2.0, 0.1)
    x = np.ones(2)
    h = [(float(grid.lambdas[1]), np.zeros(2))]  # same lambda as the fresh node
    with pytest.raises(ValueError, match="coincident"):
        ode_solver_p_step(x, h, 2, grid, model, p=2)


def test_history_length_validation():
    model = _unit_gaussian(dim=1)
    grid = build_grid(ve_schedule(), "uniform-lambda", 3, 2.0, 0.1)
    x = np.ones(1)
    with pytest.raises(ValueError):
        ode_solver_2_step(x, [], 2, grid, model)
    with pytest.raises(ValueError):
        ode_solver_3_step(x, [(0.0, np.zeros(1))], 2, grid, model)
    with pytest.raises(ValueError):
        ode_solver_p_step(x, [], 2, grid, model, p=0)


def test_unipc_step_returns_corrected_previous_state():
    model = _unit_gaussian(dim=2)
    grid = build_grid(ve_schedule(), "uniform-lambda", 6, 3.0, 0.05)
    rng = np.random.default_rng(np.random.Philox(key=13))
    x_pred = rng.normal(size=2)
    x_cor_prev = rng.normal(size=2)
    h = [
        (float(grid.lambdas[1]), rng.normal(size=2)),
        (float(grid.lambdas[2]), rng.normal(size=2)),
    ]
    x_next, x_cor = unipc_step(x_pred, x_cor_prev, h, 4, grid, model)
    assert x_next.shape == (2,) and x_cor.shape == (2,)
    # the corrector refines the destination the predictor came from
    assert not np.array_equal(x_cor, x_pred)


def test_sigma_zero_terminal_forward_value_is_exact_data_prediction():
    sch = vp_linear_schedule()
    grid = build_grid(sch, "uniform-time", 6, 0.9, 0.0)
    model = IsotropicGaussianModel(sch, gamma=0.8, dim=3)
    x = np.array([0.3, -0.2, 1.1])
    x_hat = ddim_step(x, 6, grid, model)
    out = forward_value_step(x, 6, grid, model, "ddim")
    assert np.array_equal(out, sch.alpha(0.0) * model.eval_data(x_hat, 0.0))


def test_forward_value_ideal_sigma_zero_gaussian_is_degenerate():
    # at sigma=0 the linear-data fixed point is an identity; the solver refuses
    sch = vp_linear_schedule()
    grid = build_grid(sch, "uniform-time", 4, 0.9, 0.0)
    model = IsotropicGaussianModel(sch, gamma=0.8, dim=2)
    with pytest.raises(ValueError, match="degenerate"):
        forward_value_ideal_step(np.ones(2), 4, grid, model)


# --- run_sampler bookkeeping --------------------------------------------------------


def test_model_call_accounting():
    gau = _unit_gaussian(dim=2)
    grid = build_grid(ve_schedule(), "uniform-lambda", 10, 5.0, 1e-2)
    x0 = np.ones(2)
    cases = {
        "ddim": 10,
        "odesolver-2": 10,
        "odesolver-3": 10,
        "unipc-3": 10,
        "forward-ideal": 10,           # closed form plus one certificate call per step
        "forward-value-ddim": 20,      # lookahead + data prediction per step
        "forward-value-dpmsolver2": 20,
        "forward-value-oracle": 10,    # exact lookahead is free on the Gaussian
    }
    specs = [
        SamplerSpec(rule="ddim"),
        SamplerSpec(rule="odesolver-p", p=2),
        SamplerSpec(rule="odesolver-p", p=3),
        SamplerSpec(rule="unipc"),
        SamplerSpec(rule="forward-ideal"),
        SamplerSpec(rule="forward-value", lookahead="ddim"),
        SamplerSpec(rule="forward-value", lookahead="dpmsolver2"),
        SamplerSpec(rule="forward-value", lookahead="oracle"),
    ]
    for spec in specs:
        traj = run_sampler(spec, grid, gau, x0)
        assert traj.model_calls == cases[spec.label()], spec.label()
    # the corrected-state re-evaluation only exists once a corrector ran (steps 3..M)
    extra = run_sampler(SamplerSpec(rule="unipc", eval_at_corrected=True), grid, gau, x0)
    assert extra.model_calls == 10 + 8


def test_trajectory_shape_and_states():
    model = _unit_gaussian(dim=3)
    grid = build_grid(ve_schedule(), "uniform-lambda", 7, 5.0, 1e-2)
    x0 = np.full(3, 0.5)
    traj = run_sampler(SamplerSpec(rule="ddim"), grid, model, x0)
    assert traj.states.shape == (8, 3)
    assert np.array_equal(traj.states[0], x0)
    assert np.array_equal(traj.final_state, traj.states[-1])
    d = traj.to_dict()
    assert d["model_calls"] == 7


def test_forward_ideal_picard_on_mixture():
    model = GaussianMixtureModel(
        ve_schedule(), weights=[0.4, 0.6], means=[[-1.0], [1.0]], scales=[0.5, 0.5]
    )
    grid = build_grid(ve_schedule(), "uniform-lambda", 12, 5.0, 1e-2)
    traj = run_sampler(SamplerSpec(rule="forward-ideal"), grid, model, np.array([0.3]))
    iters = traj.diagnostics["picard_iters"]
    assert len(iters) == 12
    assert all(n >= 1 for n in iters)
    # each step used the ddim guess (one call) plus one call per iteration
    assert traj.model_calls == 12 + sum(iters)


def test_sampler_spec_validation_and_labels():
    assert SamplerSpec(rule="ddim").label() == "ddim"
    assert SamplerSpec(rule="odesolver-p", p=3).label() == "odesolver-3"
    assert SamplerSpec(rule="unipc").label() == "unipc-3"
    assert SamplerSpec(rule="unipc", predictor_order=3).label() == "unipc-3-p3"
    assert SamplerSpec(rule="forward-value").label() == "forward-value-ddim"
    assert SamplerSpec(rule="forward-ideal").label() == "forward-ideal"
    with pytest.raises(ValueError):
        SamplerSpec(rule="heun")
    with pytest.raises(ValueError):
        SamplerSpec(rule="odesolver-p", p=0)
    with pytest.raises(ValueError):
        SamplerSpec(rule="forward-value", lookahead="midpoint")
    with pytest.raises(ValueError):
        SamplerSpec(rule="unipc", predictor_order=4)


def test_step_errors_carry_step_index():
    model = GaussianMixtureModel(
        ve_schedule(), weights=[1.0], means=[[0.0]], scales=[0.5]
    )
    grid = build_grid(ve_schedule(), "uniform-lambda", 4, 5.0, 1e-2)
    spec = SamplerSpec(rule="forward-ideal", picard_max_iters=1)
    with pytest.raises(Exception, match=r"step \d+"):
        run_sampler(spec, grid, model, np.array([0.1]))
