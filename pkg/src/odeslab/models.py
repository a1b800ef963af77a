"""Analytic predictor models with closed-form scores.

A predictor exposes the noise prediction ε(x, t) and the data prediction
μ(x, t), related by the affine identity μ = (x − σ_t ε)/α_t.  For the model
families here both are available in closed form because the data
distribution q_0 has a tractable score at every noise level:

* isotropic Gaussian q_0 = N(0, γ²I):  ε(x, t) = σ_t x / (α_t²γ² + σ_t²),
  linear in x;
* Gaussian mixtures: ε = −σ_t ∇log q_t with log-sum-exp-stabilized
  responsibilities;
* λ-polynomial: ε(x, t) = Σ_k c_k λ(t)^k, independent of x, used as an
  exactness oracle for the polynomial-interpolation solvers.

Models bind their schedule at construction so ε and μ are functions of
(x, t) alone.  Evaluations broadcast over leading axes of x.
"""

from __future__ import annotations

import numpy as np

from .schedule import NoiseSchedule


def _logsumexp(a, axis=-1, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)

__all__ = [
    "IsotropicGaussianModel",
    "GaussianMixtureModel",
    "PolyLambdaModel",
    "CountingModel",
    "data_from_noise",
    "noise_from_data",
    "model_from_dict",
]


def data_from_noise(x, t, eps, schedule: NoiseSchedule):
    """Convert a noise prediction into the data prediction (x − σ_t·eps)/α_t."""
    alpha = schedule.alpha(t)
    if np.any(alpha == 0.0):
        raise ValueError("alpha_t = 0 is outside every supported schedule domain")
    return (x - schedule.sigma(t) * eps) / alpha


def noise_from_data(x, t, mu, schedule: NoiseSchedule):
    """Inverse of :func:`data_from_noise`: eps = (x − α_t·mu)/σ_t."""
    sigma = schedule.sigma(t)
    if np.any(sigma == 0.0):
        raise ValueError("sigma_t = 0: noise prediction undefined")
    return (x - schedule.alpha(t) * mu) / sigma


class IsotropicGaussianModel:
    """Target q_0 = N(0, γ²·I_d); every marginal is N(0, (α_t²γ² + σ_t²)·I_d)."""

    kind = "gaussian"

    def __init__(self, schedule: NoiseSchedule, gamma: float, dim: int):
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        self.schedule = schedule
        self.gamma = float(gamma)
        self.dim = int(dim)

    def _variance(self, t) -> float:
        a = self.schedule.alpha(t)
        s = self.schedule.sigma(t)
        return a * a * self.gamma**2 + s * s

    def eval_noise(self, x, t):
        s = self.schedule.sigma(t)
        v = self._variance(t)
        if v == 0.0:
            raise ValueError("sigma=0 with gamma=0 is degenerate")
        return (s / v) * np.asarray(x, dtype=float)

    def eval_data(self, x, t):
        a = self.schedule.alpha(t)
        v = self._variance(t)
        if v == 0.0:
            raise ValueError("sigma=0 with gamma=0 is degenerate")
        return (a * self.gamma**2 / v) * np.asarray(x, dtype=float)

    def data_gain(self, t) -> float:
        """Scalar m_t with μ(x, t) = m_t·x; the handle linear solvers key on."""
        v = self._variance(t)
        if v == 0.0:
            raise ValueError("sigma=0 with gamma=0 is degenerate")
        return float(self.schedule.alpha(t) * self.gamma**2 / v)

    def score(self, x, t):
        return -np.asarray(x, dtype=float) / self._variance(t)

    def logpdf(self, x, t):
        v = self._variance(t)
        x = np.asarray(x, dtype=float)
        return -0.5 * np.sum(x * x, axis=-1) / v - 0.5 * self.dim * np.log(2.0 * np.pi * v)

    def marginal_std(self, t) -> float:
        return float(np.sqrt(self._variance(t)))

    def marginal_sample(self, t, rng: np.random.Generator):
        return self.marginal_std(t) * rng.standard_normal(self.dim)

    def to_dict(self) -> dict:
        return {"model": "gaussian", "gamma": self.gamma, "dim": self.dim}


class GaussianMixtureModel:
    """Mixture Σ_k w_k·N(m_k, s_k²·I_d) pushed through the forward process.

    The time-t marginal is Σ_k w_k·N(α_t m_k, (α_t²s_k² + σ_t²)·I_d), so the
    score is a responsibility-weighted sum of per-component Gaussian scores.
    Responsibilities are computed with shifted exponentials to survive the
    low-noise regime where one component dominates by hundreds of nats.
    """

    kind = "mixture"

    def __init__(self, schedule: NoiseSchedule, weights, means, scales):
        self.schedule = schedule
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.scales = np.asarray(scales, dtype=float)
        if self.weights.ndim != 1 or not (len(self.weights) == len(self.means) == len(self.scales)):
            raise ValueError("weights, means, scales must have matching component counts")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.scales <= 0):
            raise ValueError("component scales must be positive")
        self.dim = self.means.shape[1]

    def _component_stats(self, t):
        a = self.schedule.alpha(t)
        s = self.schedule.sigma(t)
        v = a * a * self.scales**2 + s * s  # (K,)
        return a, s, v

    def _log_weighted(self, x, t):
        a, _, v = self._component_stats(t)
        x = np.asarray(x, dtype=float)
        diff = x[..., None, :] - a * self.means  # (..., K, d)
        sq = np.sum(diff * diff, axis=-1)  # (..., K)
        logw = np.log(self.weights) - 0.5 * sq / v - 0.5 * self.dim * np.log(v)
        return diff, v, logw

    def responsibilities(self, x, t):
        _, _, logw = self._log_weighted(x, t)
        return np.exp(logw - _logsumexp(logw, axis=-1, keepdims=True))

    def score(self, x, t):
        diff, v, logw = self._log_weighted(x, t)
        r = np.exp(logw - _logsumexp(logw, axis=-1, keepdims=True))
        return -np.sum(r[..., None] * diff / v[:, None], axis=-2)

    def logpdf(self, x, t):
        _, _, logw = self._log_weighted(x, t)
        return _logsumexp(logw, axis=-1) - 0.5 * self.dim * np.log(2.0 * np.pi)

    def eval_noise(self, x, t):
        return -self.schedule.sigma(t) * self.score(x, t)

    def eval_data(self, x, t):
        x = np.asarray(x, dtype=float)
        a = self.schedule.alpha(t)
        s = self.schedule.sigma(t)
        if s == 0.0:
            return x / a
        return (x - s * self.eval_noise(x, t)) / a

    def marginal_sample(self, t, rng: np.random.Generator):
        a, s, v = self._component_stats(t)
        k = int(np.searchsorted(np.cumsum(self.weights), rng.random()))
        k = min(k, len(self.weights) - 1)
        return a * self.means[k] + np.sqrt(v[k]) * rng.standard_normal(self.dim)

    def to_dict(self) -> dict:
        return {
            "model": "mixture",
            "components": [
                {"w": float(w), "mean": [float(c) for c in m], "s": float(s)}
                for w, m, s in zip(self.weights, self.means, self.scales)
            ],
        }


class PolyLambdaModel:
    """x-independent noise prediction ε(x, t) = Σ_k c_k·λ(t)^k.

    Degree-q polynomials are integrated exactly by solvers of order ≥ q+1,
    which makes this the reference model for structural solver tests.  There
    is no underlying density, so no score or sampling interface.
    """

    kind = "poly"

    def __init__(self, schedule: NoiseSchedule, coeffs):
        self.schedule = schedule
        self.coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))  # (q+1, d)
        self.dim = self.coeffs.shape[1]

    def eval_noise(self, x, t):
        lam = self.schedule.lambda_of_t(t)
        out = np.zeros_like(self.coeffs[0])
        for c in self.coeffs[::-1]:  # Horner in lambda
            out = out * lam + c
        return np.broadcast_to(out, np.shape(x)).copy() if np.ndim(x) > 1 else out

    def eval_noise_at_lambda(self, lam):
        out = np.zeros_like(self.coeffs[0])
        for c in self.coeffs[::-1]:
            out = out * lam + c
        return out

    def eval_data(self, x, t):
        x = np.asarray(x, dtype=float)
        a = self.schedule.alpha(t)
        s = self.schedule.sigma(t)
        if s == 0.0:
            return x / a
        return (x - s * self.eval_noise(x, t)) / a

    def to_dict(self) -> dict:
        return {"model": "poly", "coeffs": [[float(c) for c in row] for row in self.coeffs]}


class CountingModel:
    """Transparent wrapper counting predictor evaluations (the NFE ledger)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def eval_noise(self, x, t):
        self.calls += 1
        return self.inner.eval_noise(x, t)

    def eval_data(self, x, t):
        self.calls += 1
        return self.inner.eval_data(x, t)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def model_from_dict(d: dict, schedule: NoiseSchedule):
    """Instantiate a model from its JSON form, rejecting unknown keys."""
    kind = d.get("model")
    if kind == "gaussian":
        unknown = set(d) - {"model", "gamma", "dim"}
        if unknown:
            raise ValueError(f"unknown gaussian model keys: {sorted(unknown)}")
        return IsotropicGaussianModel(schedule, gamma=d["gamma"], dim=d.get("dim", 4))
    if kind == "mixture":
        unknown = set(d) - {"model", "components"}
        if unknown:
            raise ValueError(f"unknown mixture model keys: {sorted(unknown)}")
        comps = d["components"]
        for c in comps:
            bad = set(c) - {"w", "mean", "s"}
            if bad:
                raise ValueError(f"unknown mixture component keys: {sorted(bad)}")
        return GaussianMixtureModel(
            schedule,
            weights=[c["w"] for c in comps],
            means=[c["mean"] for c in comps],
            scales=[c["s"] for c in comps],
        )
    if kind == "poly":
        unknown = set(d) - {"model", "coeffs"}
        if unknown:
            raise ValueError(f"unknown poly model keys: {sorted(unknown)}")
        return PolyLambdaModel(schedule, coeffs=d["coeffs"])
    raise ValueError(f"unknown model kind {kind!r}")
