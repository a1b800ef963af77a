"""Analytic model tests: closed-form predictors against independent checks.

The score consistency tests compare each model's noise prediction with a
central finite difference of its own log-density, which is computed by a
separate code path (logsumexp over component densities for the mixture).
"""

import numpy as np
import pytest

from odeslab import (
    CountingModel,
    GaussianMixtureModel,
    IsotropicGaussianModel,
    PolyLambdaModel,
    data_from_noise,
    model_from_dict,
    noise_from_data,
    ve_schedule,
    vp_linear_schedule,
)

# data-prediction gain of the unit Gaussian on the VE schedule, lambda = 0.1
# (50-digit arithmetic: gamma^2 / (gamma^2 + e^{-2 lambda}))
GAUSSIAN_DATA_GAIN_LAM_01 = 0.5498339973124779085592


def _gaussian(gamma=1.0, dim=4):
    return IsotropicGaussianModel(ve_schedule(), gamma=gamma, dim=dim)


def _mixture(dim=2):
    return GaussianMixtureModel(
        ve_schedule(),
        weights=[0.3, 0.7],
        means=[np.zeros(dim), np.full(dim, 1.5)],
        scales=[0.4, 0.9],
    )


def test_gaussian_noise_prediction_closed_form():
    model = _gaussian(gamma=1.0, dim=3)
    x = np.array([1.0, -2.0, 0.5])
    # VE at t=1: sigma=1, variance = gamma^2 + 1 = 2
    assert np.allclose(model.eval_noise(x, 1.0), x / 2.0, rtol=0, atol=1e-16)


def test_gaussian_data_gain_frozen():
    model = _gaussian(gamma=1.0)
    t = float(np.exp(-0.1))  # lambda = 0.1 on VE
    assert model.data_gain(t) == pytest.approx(GAUSSIAN_DATA_GAIN_LAM_01, rel=1e-14)


def test_gaussian_data_prediction_is_gain_times_x():
    model = _gaussian(gamma=2.0, dim=5)
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = float(rng.uniform(1e-3, 10.0))
        x = rng.normal(size=5)
        mu = model.eval_data(x, t)
        assert np.allclose(mu, model.data_gain(t) * x, rtol=1e-14, atol=0)


def test_noise_data_conversion_identity():
    sch = vp_linear_schedule()
    rng = np.random.default_rng(5)
    for _ in range(200):
        t = float(rng.uniform(1e-3, 1.0))
        x = rng.normal(size=3)
        eps = rng.normal(size=3)
        mu = data_from_noise(x, t, eps, sch)
        back = noise_from_data(x, t, mu, sch)
        assert np.allclose(back, eps, rtol=1e-10, atol=1e-12)
        # x = alpha*mu + sigma*eps reconstructs
        assert np.allclose(sch.alpha(t) * mu + sch.sigma(t) * eps, x, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("factory", [_gaussian, _mixture])
def test_noise_prediction_matches_score_finite_difference(factory):
    # eps(x,t) = -sigma * grad log p_t(x); grad checked per coordinate
    model = factory()
    sch = model.schedule
    rng = np.random.default_rng(17)
    dim = model.dim
    h = 1e-6
    for _ in range(25):
        t = float(rng.uniform(0.05, 5.0))
        x = rng.normal(size=dim) * 2.0
        eps = model.eval_noise(x, t)
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            grad_k = (model.logpdf(x + e, t) - model.logpdf(x - e, t)) / (2 * h)
            assert -sch.sigma(t) * grad_k == pytest.approx(float(eps[k]), rel=5e-5, abs=5e-7)


def test_single_component_mixture_equals_gaussian():
    gamma = 0.7
    mix = GaussianMixtureModel(
        ve_schedule(), weights=[1.0], means=[np.zeros(3)], scales=[gamma]
    )
    gau = IsotropicGaussianModel(ve_schedule(), gamma=gamma, dim=3)
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = float(rng.uniform(1e-2, 8.0))
        x = rng.normal(size=3) * 1.5
        assert np.allclose(mix.eval_noise(x, t), gau.eval_noise(x, t), rtol=1e-12, atol=1e-14)
        assert np.allclose(mix.eval_data(x, t), gau.eval_data(x, t), rtol=1e-10, atol=1e-12)


def test_mixture_responsibilities_sum_to_one():
    model = _mixture()
    rng = np.random.default_rng(9)
    for _ in range(50):
        t = float(rng.uniform(1e-2, 10.0))
        x = rng.normal(size=2) * 3.0
        r = model.responsibilities(x, t)
        assert r.shape == (2,)
        assert np.all(r >= 0.0)
        assert float(np.sum(r)) == pytest.approx(1.0, abs=1e-12)


def test_mixture_far_field_collapses_to_nearest_component():
    model = _mixture()
    x = np.full(2, 1.5) + 0.01  # essentially on top of component 2's mean
    r = model.responsibilities(x, 0.05)
    assert r[1] > 0.999


def test_marginal_sample_statistics():
    model = _gaussian(gamma=1.0, dim=4)
    rng = np.random.default_rng(123)
    t = 2.0
    draws = np.array([model.marginal_sample(t, rng) for _ in range(4000)])
    want_std = np.sqrt(1.0 + t * t)  # alpha=1, sigma=t
    assert abs(float(draws.mean())) < 0.1
    assert float(draws.std()) == pytest.approx(want_std, rel=0.05)


def test_poly_model_noise_is_x_independent_polynomial():
    # coeffs rows are powers of lambda, columns are coordinates
    model = PolyLambdaModel(ve_schedule(), coeffs=[[0.3], [-0.7], [0.2], [0.05]])
    t = 0.5
    lam = float(ve_schedule().lambda_of_t(t))
    want = 0.3 - 0.7 * lam + 0.2 * lam**2 + 0.05 * lam**3
    out_a = model.eval_noise(np.array([0.0]), t)
    out_b = model.eval_noise(np.array([42.0]), t)
    assert np.array_equal(out_a, out_b)
    assert float(out_a[0]) == pytest.approx(want, rel=1e-14)


def test_counting_model_counts_and_passthrough():
    counting = CountingModel(_gaussian())
    x = np.ones(4)
    counting.eval_noise(x, 1.0)
    counting.eval_noise(x, 0.5)
    counting.eval_data(x, 1.0)
    assert counting.calls == 3
    assert counting.kind == "gaussian"
    assert counting.dim == 4


def test_model_from_dict_round_trip_and_rejection():
    sch = ve_schedule()
    for model in (_gaussian(gamma=0.5, dim=2), _mixture(), PolyLambdaModel(sch, [[1.0, 2.0]])):
        back = model_from_dict(model.to_dict(), sch)
        assert back.kind == model.kind
        x = np.linspace(-1, 1, model.dim if hasattr(model, "dim") else 1)
        assert np.allclose(back.eval_noise(x, 0.7), model.eval_noise(x, 0.7), rtol=1e-15)
    with pytest.raises(ValueError):
        model_from_dict({"model": "gaussian", "gamma": 1.0, "spurious": 2}, sch)
    with pytest.raises(ValueError):
        model_from_dict({"model": "mixture", "components": [{"w": 1.0, "mu": [0.0]}]}, sch)
    with pytest.raises(ValueError):
        model_from_dict({"model": "spline"}, sch)
