"""Ground-truth machinery: κ* factors, scalar κ recursions, dense references.

On an isotropic Gaussian target the exact probability-flow solution stays
colinear with its start point, x*_{t(λ)} = κ*_{t(λ)}·x_{t_0} with

    κ*_{t(λ)} = (α_{t(λ)}/α_{t_0})·sqrt((γ² + e^{−2λ}) / (γ² + e^{−2λ_0})),

and the DDIM / second-order sampler iterates follow scalar recursions in the
same coefficient.  Those closed forms are the oracles the vector samplers are
checked against.  For models without closed-form flows a classical RK4
integrator in λ with step-doubling refinement supplies dense references.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .schedule import NoiseSchedule, TimeGrid

__all__ = [
    "NumericalError",
    "GaussianKappaTrace",
    "ReferenceTrajectory",
    "gaussian_kappa_star",
    "gaussian_kappa_star_trace",
    "gaussian_ddim_kappa",
    "gaussian_solver2_kappa",
    "reference_trajectory",
    "reference_final_states",
    "exact_substep",
]

ABS_FLOOR = 1e-300  # relative-tolerance denominators never drop below this


class NumericalError(RuntimeError):
    """A tolerance could not be met (refinement budget, Picard divergence)."""


def _is_gaussian(model) -> bool:
    return getattr(model, "kind", None) == "gaussian"


def gaussian_kappa_star(gamma: float, lam0: float, lam: float, alpha0: float, alpha: float) -> float:
    """Exact colinearity factor (α/α₀)·sqrt((γ²+e^{−2λ})/(γ²+e^{−2λ₀})).

    Accepts lam = +inf (the σ=0 terminal) for γ > 0.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    num = gamma * gamma + math.exp(-2.0 * lam)
    den = gamma * gamma + math.exp(-2.0 * lam0)
    if num == 0.0 and den == 0.0:
        raise ValueError("gamma=0 with both lambdas infinite is indeterminate")
    return (alpha / alpha0) * math.sqrt(num / den)


@dataclass(frozen=True)
class GaussianKappaTrace:
    """Scalar coefficient trajectory κ_{t_0..t_M} on a Gaussian target."""

    kappas: np.ndarray
    variant: str  # "exact" | "ddim" | "solver2"
    gamma: float

    def to_dict(self) -> dict:
        return {
            "role": "oracle",
            "variant": self.variant,
            "gamma": self.gamma,
            "kappas": [float(k) for k in self.kappas],
        }


def gaussian_kappa_star_trace(gamma: float, grid: TimeGrid) -> GaussianKappaTrace:
    lam0 = grid.lambdas[0]
    a0 = grid.alphas[0]
    ks = np.array(
        [gaussian_kappa_star(gamma, lam0, li, a0, ai) for li, ai in zip(grid.lambdas, grid.alphas)]
    )
    return GaussianKappaTrace(kappas=ks, variant="exact", gamma=gamma)


def _ddim_kappa_factor(gamma: float, lam_prev: float, lam_next: float, a_prev: float, a_next: float) -> float:
    # exp integral over [lam_prev, lam_next] in closed form
    r_prev = math.exp(-lam_prev)
    integral = r_prev - math.exp(-lam_next)
    return (a_next / a_prev) * (1.0 - r_prev * integral / (gamma * gamma + r_prev * r_prev))


def gaussian_ddim_kappa(gamma: float, grid: TimeGrid) -> GaussianKappaTrace:
    """Scalar recursion followed by DDIM iterates on N(0, γ²I)."""
    ks = np.empty(grid.M + 1)
    ks[0] = 1.0
    for i in range(1, grid.M + 1):
        ks[i] = ks[i - 1] * _ddim_kappa_factor(
            gamma, grid.lambdas[i - 1], grid.lambdas[i], grid.alphas[i - 1], grid.alphas[i]
        )
    return GaussianKappaTrace(kappas=ks, variant="ddim", gamma=gamma)


def gaussian_solver2_kappa(gamma: float, grid: TimeGrid) -> GaussianKappaTrace:
    """Scalar recursion for the second-order solver iterates on N(0, γ²I).

    Step i ≥ 2 uses the three-term recursion with both λ-integrals in closed
    form,

        ∫ e^{−λ} dλ            = e^{−λ_{i−1}} − e^{−λ_i},
        ∫ (λ−λ_{i−1}) e^{−λ} dλ = e^{−λ_{i−1}} − (1+δ_i) e^{−λ_i};

    step i = 1 ramps with the DDIM recursion, mirroring the vector-side
    warm-up policy (the recursion itself needs two history entries).
    """
    if grid.M < 2:
        raise ValueError("second-order recursion needs M >= 2")
    g2 = gamma * gamma
    ks = np.empty(grid.M + 1)
    ks[0] = 1.0
    ks[1] = ks[0] * _ddim_kappa_factor(
        gamma, grid.lambdas[0], grid.lambdas[1], grid.alphas[0], grid.alphas[1]
    )
    for i in range(2, grid.M + 1):
        lam_p, lam_i = grid.lambdas[i - 1], grid.lambdas[i]
        a_p, a_i = grid.alphas[i - 1], grid.alphas[i]
        delta = lam_i - lam_p
        r_p, r_i = math.exp(-lam_p), math.exp(-lam_i)
        i0 = r_p - r_i
        i1 = r_p - (1.0 + delta) * r_i
        g_prev = r_p * ks[i - 1] / (a_p * (g2 + r_p * r_p))
        r_pp = math.exp(-grid.lambdas[i - 2])
        g_prev2 = r_pp * ks[i - 2] / (grid.alphas[i - 2] * (g2 + r_pp * r_pp))
        slope = (g_prev - g_prev2) / (lam_p - grid.lambdas[i - 2])
        ks[i] = (a_i / a_p) * ks[i - 1] - a_i * (i0 * g_prev + i1 * slope)
    return GaussianKappaTrace(kappas=ks, variant="solver2", gamma=gamma)


# --- dense RK4 reference ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """States of the exact flow at grid times, with the refinement residual."""

    grid: TimeGrid
    states: np.ndarray  # (M+1, d)
    achieved_tolerance: float

    def to_dict(self) -> dict:
        return {
            "role": "oracle",
            "achieved_tolerance": self.achieved_tolerance,
            "states": [[float(c) for c in row] for row in self.states],
        }


def _rk4_through(model, schedule: NoiseSchedule, lams: np.ndarray, y0: np.ndarray, n_sub: int) -> np.ndarray:
    """Integrate dy/dλ = −e^{−λ}·ε(α y, t(λ)) through the λ checkpoints.

    y is the α-rescaled state x/α_t, which turns the probability-flow ODE
    into a plain quadrature-shaped system.  Returns y at every checkpoint,
    including the initial one.
    """

    def f(lam, y):
        t = schedule.t_of_lambda(lam)
        a = schedule.alpha(t)
        return -math.exp(-lam) * model.eval_noise(a * y, t)

    out = np.empty((len(lams),) + y0.shape)
    out[0] = y = y0
    for j in range(1, len(lams)):
        a, b = lams[j - 1], lams[j]
        h = (b - a) / n_sub
        for k in range(n_sub):
            lam = a + k * h
            k1 = f(lam, y)
            k2 = f(lam + 0.5 * h, y + 0.5 * h * k1)
            k3 = f(lam + 0.5 * h, y + 0.5 * h * k2)
            k4 = f(lam + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j] = y
    return out


def _refine(model, schedule, lams, y0, tol, base_substeps):
    n = base_substeps
    prev = _rk4_through(model, schedule, lams, y0, n)
    for _ in range(12):
        n *= 2
        cur = _rk4_through(model, schedule, lams, y0, n)
        scale = np.maximum(np.linalg.norm(cur, axis=-1), ABS_FLOOR)
        diff = float(np.max(np.linalg.norm(cur - prev, axis=-1) / scale))
        if diff <= tol:
            return cur, diff
        prev = cur
    raise NumericalError(
        f"RK refinement exhausted 12 doublings (last residual {diff:.3e} > tol {tol:.1e})"
    )


def reference_trajectory(
    model,
    grid: TimeGrid,
    x0: np.ndarray,
    tol: float = 1e-10,
    use_gaussian_bypass: bool = True,
) -> ReferenceTrajectory:
    """Exact-flow states at every grid node, to relative tolerance ``tol``.

    Isotropic Gaussian models take the κ* closed form unless
    ``use_gaussian_bypass`` is disabled for cross-validation.
    """
    if tol < 1e-12:
        raise ValueError("tol below 1e-12 is not resolvable in double precision here")
    x0 = np.asarray(x0, dtype=float)
    if use_gaussian_bypass and _is_gaussian(model):
        ks = gaussian_kappa_star_trace(model.gamma, grid).kappas
        states = ks[:, None] * x0[None, :]
        return ReferenceTrajectory(grid=grid, states=states, achieved_tolerance=0.0)
    if grid.terminal_sigma_zero:
        raise ValueError("RK reference needs sigma > 0 at every node (infinite final lambda)")
    y, achieved = _refine(model, grid.schedule, grid.lambdas, x0 / grid.alphas[0], tol, 1)
    states = y * grid.alphas[:, None]
    if achieved > 1e-10:
        raise NumericalError(f"reference achieved tolerance {achieved:.3e} > 1e-10")
    return ReferenceTrajectory(grid=grid, states=states, achieved_tolerance=achieved)


def reference_final_states(
    model,
    t_start: float,
    t_end: float,
    x0: np.ndarray,
    tol: float = 1e-10,
    use_gaussian_bypass: bool = True,
) -> tuple[np.ndarray, float]:
    """Exact-flow states at t_end only; x0 may carry leading batch axes.

    The final state does not depend on any grid, so experiments compute it
    once per (model, x0) and reuse it across the whole M sweep.
    """
    schedule = model.schedule
    x0 = np.asarray(x0, dtype=float)
    lam0 = float(schedule.lambda_of_t(t_start))
    lam1 = float(schedule.lambda_of_t(t_end))
    a0 = float(schedule.alpha(t_start))
    a1 = float(schedule.alpha(t_end))
    if use_gaussian_bypass and _is_gaussian(model):
        return gaussian_kappa_star(model.gamma, lam0, lam1, a0, a1) * x0, 0.0
    y, achieved = _refine(model, schedule, np.array([lam0, lam1]), x0 / a0, tol, 8)
    if achieved > 1e-10:
        raise NumericalError(f"reference achieved tolerance {achieved:.3e} > 1e-10")
    return a1 * y[-1], achieved


def exact_substep(
    model,
    x_prev: np.ndarray,
    i: int,
    grid: TimeGrid,
    tol: float = 1e-10,
    use_gaussian_bypass: bool = True,
) -> np.ndarray:
    """Exact flow across the single interval [t_{i−1}, t_i] started at x_prev."""
    if not 1 <= i <= grid.M:
        raise ValueError(f"step index {i} out of range 1..{grid.M}")
    if use_gaussian_bypass and _is_gaussian(model):
        k = gaussian_kappa_star(
            model.gamma, grid.lambdas[i - 1], grid.lambdas[i], grid.alphas[i - 1], grid.alphas[i]
        )
        return k * np.asarray(x_prev, dtype=float)
    if not math.isfinite(grid.lambdas[i]):
        raise ValueError("exact sub-step to a sigma=0 node needs the Gaussian closed form")
    y0 = np.asarray(x_prev, dtype=float) / grid.alphas[i - 1]
    y, _ = _refine(model, grid.schedule, grid.lambdas[i - 1 : i + 1], y0, tol, 1)
    return grid.alphas[i] * y[-1]
