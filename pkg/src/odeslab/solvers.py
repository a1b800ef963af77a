"""Sampler update rules and the trajectory driver.

All backward (noise-form) steps discretize the λ-native integral form

    x_{t_i} = (α_{t_i}/α_{t_{i−1}})·x_{t_{i−1}} − α_{t_i}·∫ e^{−λ} ε̂(λ) dλ,

with the integral over [λ_{t_{i−1}}, λ_{t_i}] and ε̂ a polynomial interpolant
through buffered predictor evaluations.  Writing ε̂ in shifted Taylor basis
(λ−λ_ref)^k/k! reduces every rule here to one routine: solve a small
Vandermonde system for the basis coefficients, then weight them by

    φ_k(δ) = ∫_0^δ e^{−u} u^k du,

the integral-normalized exponential-integrator moments.  DDIM is the p=1
case, the general p-th order rule interpolates the last p evaluations, and
the UniPC corrector is the same update with the destination node included in
the interpolation set.  The forward-value family instead freezes the data
prediction μ at (an estimate of) the interval's end point and uses the
σ-ratio/data-gain coefficient pair, which stays finite at σ = 0.

History buffers are plain sequences of (λ, ε) pairs ordered oldest to
newest; every step makes exactly one fresh model call unless stated
otherwise.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import math

import numpy as np

from .models import CountingModel
from .oracle import NumericalError, exact_substep
from .schedule import TimeGrid

__all__ = [
    "SamplerSpec",
    "Trajectory",
    "phi",
    "ddim_step",
    "ode_solver_p_step",
    "ode_solver_2_step",
    "ode_solver_3_step",
    "unipc_step",
    "forward_value_ideal_step",
    "forward_value_step",
    "run_sampler",
]

_RULES = ("ddim", "odesolver-p", "unipc", "forward-ideal", "forward-value")
_LOOKAHEADS = ("ddim", "dpmsolver2", "oracle")


@dataclass(frozen=True)
class SamplerSpec:
    """Which update rule to iterate, with its order/lookahead parameters."""

    rule: str
    p: int = 1  # order for odesolver-p
    predictor_order: int = 2  # unipc predictor (corrector order is fixed at 3)
    lookahead: str = "ddim"  # forward-value only
    warmup: str = "ramp-order"
    picard_tol: float = 1e-12
    picard_max_iters: int = 100
    eval_at_corrected: bool = False  # unipc: buffer ε at corrected instead of predictor states

    def __post_init__(self) -> None:
        if self.rule not in _RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.rule == "odesolver-p" and self.p < 1:
            raise ValueError("order p must be >= 1")
        if self.rule == "unipc" and self.predictor_order not in (2, 3):
            raise ValueError("unipc predictor order must be 2 or 3")
        if self.rule == "forward-value" and self.lookahead not in _LOOKAHEADS:
            raise ValueError(f"unknown lookahead {self.lookahead!r}")
        if self.warmup != "ramp-order":
            raise ValueError(f"unknown warmup policy {self.warmup!r}")
        if self.picard_tol <= 0 or self.picard_max_iters < 1:
            raise ValueError("picard tolerances must be positive")

    def label(self) -> str:
        if self.rule == "odesolver-p":
            return f"odesolver-{self.p}"
        if self.rule == "unipc":
            return "unipc-3" if self.predictor_order == 2 else "unipc-3-p3"
        if self.rule == "forward-value":
            return f"forward-value-{self.lookahead}"
        return self.rule


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampler output states x_{t_0..t_M} plus the NFE/diagnostic ledger."""

    grid: TimeGrid
    states: np.ndarray  # (M+1, d)
    model_calls: int
    diagnostics: dict

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_dict(self) -> dict:
        return {
            "states": [[float(c) for c in row] for row in self.states],
            "model_calls": self.model_calls,
            "diagnostics": self.diagnostics,
        }


def phi(k: int, x: float) -> float:
    """Exponential-integrator moment φ_k(x) = ∫_0^x e^{−u}·u^k du.

    Closed forms for k ≤ 2, the recurrence φ_k = k·φ_{k−1} − x^k·e^{−x}
    beyond; φ_k(+inf) = k! (the σ=0 terminal limit).  Requires x ≥ 0.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if x < 0.0:
        raise ValueError("negative lambda increment")
    if math.isinf(x):
        return float(math.factorial(k))
    if k == 0:
        return -math.expm1(-x)
    e = math.exp(-x)
    if k == 1:
        return 1.0 - (x + 1.0) * e
    val = 2.0 - (x * x + 2.0 * x + 2.0) * e
    for j in range(3, k + 1):
        val = j * val - x**j * e
    return val


def _exp_update(x_from, lam_from, lam_to, a_from, a_to, node_lams, node_eps):
    """One exponential-integrator update through the given (λ, ε) nodes.

    Interpolates ε̂ through the nodes in the shifted basis (λ−lam_from)^k/k!
    and integrates e^{−λ}·ε̂ over [lam_from, lam_to] exactly.  The node set
    may include lam_to itself (corrector usage).
    """
    p = len(node_lams)
    delta = lam_to - lam_from
    if p == 1:
        acc = phi(0, delta) * node_eps[0]
    else:
        A = np.empty((p, p))
        for j, nl in enumerate(node_lams):
            u = nl - lam_from
            A[j, 0] = 1.0
            for k in range(1, p):
                A[j, k] = A[j, k - 1] * u / k
        try:
            Y = np.linalg.solve(A, np.asarray(node_eps, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"coincident interpolation nodes {node_lams}") from exc
        acc = phi(0, delta) * Y[0]
        for k in range(1, p):
            acc = acc + (phi(k, delta) / math.factorial(k)) * Y[k]
    return (a_to / a_from) * x_from - a_to * math.exp(-lam_from) * acc


def _check_index(i: int, grid: TimeGrid) -> None:
    if not 1 <= i <= grid.M:
        raise ValueError(f"step index {i} out of range 1..{grid.M}")


def ddim_step(x_prev, i, grid: TimeGrid, model):
    """First-order (backward-value) step; exactly one model call.

    The update coefficient α_{t_i}·e^{−λ_{t_{i−1}}}·φ_0(δ_i) equals the
    textbook pair (α_{t_i}σ_{t_{i−1}}/α_{t_{i−1}} − σ_{t_i}) identically and
    stays finite when σ_{t_i} = 0.
    """
    _check_index(i, grid)
    if grid.sigmas[i - 1] == 0.0:
        raise ValueError("sigma must be positive at the step's start node")
    eps = model.eval_noise(x_prev, grid.times[i - 1])
    return _exp_update(
        x_prev,
        grid.lambdas[i - 1],
        grid.lambdas[i],
        grid.alphas[i - 1],
        grid.alphas[i],
        [grid.lambdas[i - 1]],
        [eps],
    )


def _general_nodes(eps_fresh, history, i, grid: TimeGrid, p: int):
    node_lams = [grid.lambdas[i - 1]]
    node_eps = [eps_fresh]
    for lam_j, eps_j in list(history)[-(p - 1):][::-1] if p > 1 else []:
        node_lams.append(lam_j)
        node_eps.append(eps_j)
    return node_lams, node_eps


def ode_solver_p_step(x_prev, history, i, grid: TimeGrid, model, p: int):
    """General p-th order multistep update from p−1 buffered evaluations.

    ``history`` holds (λ, ε) pairs oldest-first; the fresh evaluation at
    (x_prev, t_{i−1}) supplies the p-th interpolation node.
    """
    _check_index(i, grid)
    if p < 1:
        raise ValueError("order p must be >= 1")
    if len(history) < p - 1:
        raise ValueError(f"order {p} needs {p - 1} buffered evaluations, have {len(history)}")
    eps = model.eval_noise(x_prev, grid.times[i - 1])
    node_lams, node_eps = _general_nodes(eps, history, i, grid, p)
    return _exp_update(
        x_prev,
        grid.lambdas[i - 1],
        grid.lambdas[i],
        grid.alphas[i - 1],
        grid.alphas[i],
        node_lams,
        node_eps,
    )


def _folded_phi_1(lam_prev: float, lam_next: float) -> float:
    # the detail-form coefficient; equals −e^{−lam_prev}·phi(1, δ)
    delta = lam_next - lam_prev
    return (delta + 1.0) * math.exp(-lam_next) - math.exp(-lam_prev)


def ode_solver_2_step(x_prev, history, i, grid: TimeGrid, model):
    """Second-order step in its divided-difference detail form."""
    _check_index(i, grid)
    if len(history) < 1:
        raise ValueError("second-order step needs one buffered evaluation")
    eps1 = model.eval_noise(x_prev, grid.times[i - 1])
    lam_p, lam_i = grid.lambdas[i - 1], grid.lambdas[i]
    lam2, eps2 = history[-1]
    d1 = (eps1 - eps2) / (lam_p - lam2)
    f1 = _folded_phi_1(lam_p, lam_i)
    update = (math.exp(-lam_i) - math.exp(-lam_p)) * eps1 + f1 * d1
    return (grid.alphas[i] / grid.alphas[i - 1]) * x_prev + grid.alphas[i] * update


def ode_solver_3_step(x_prev, history, i, grid: TimeGrid, model):
    """Third-order step in its divided-difference detail form."""
    _check_index(i, grid)
    if len(history) < 2:
        raise ValueError("third-order step needs two buffered evaluations")
    eps1 = model.eval_noise(x_prev, grid.times[i - 1])
    lam_p, lam_i = grid.lambdas[i - 1], grid.lambdas[i]
    lam2, eps2 = history[-1]
    lam3, eps3 = history[-2]
    d1 = (eps1 - eps2) / (lam_p - lam2)
    d2 = (eps1 - eps3) / (lam_p - lam3)
    delta = lam_i - lam_p
    f1 = _folded_phi_1(lam_p, lam_i)
    f2 = delta * delta * math.exp(-lam_i) + 2.0 * f1
    span = lam2 - lam3
    update = (
        (math.exp(-lam_i) - math.exp(-lam_p)) * eps1
        + f1 * ((lam_p - lam3) * d1 - (lam_p - lam2) * d2) / span
        + f2 * (d1 - d2) / span
    )
    return (grid.alphas[i] / grid.alphas[i - 1]) * x_prev + grid.alphas[i] * update


def unipc_step(
    x_prev_pred,
    x_prev_cor,
    history,
    i,
    grid: TimeGrid,
    model,
    predictor_order: int = 2,
):
    """Predictor-corrector step: returns (x_{t_i}, x^cor_{t_{i−1}}).

    The corrector moves the corrected state from t_{i−2} to t_{i−1} with the
    quadratic ε-interpolant through the nodes at λ_{t_{i−1}}, λ_{t_{i−2}},
    λ_{t_{i−3}}; including the destination node is what makes it a
    corrector.  The predictor then steps the corrected state to t_i at the
    configured order with the same evaluations.  One fresh model call, at
    (x_prev_pred, t_{i−1}).
    """
    _check_index(i, grid)
    if len(history) < 2:
        raise ValueError("unipc needs 3 evaluations: 2 buffered plus the fresh one")
    if predictor_order not in (2, 3):
        raise ValueError("predictor order must be 2 or 3")
    eps1 = model.eval_noise(x_prev_pred, grid.times[i - 1])
    lam2, eps2 = history[-1]
    lam3, eps3 = history[-2]
    lam_p = grid.lambdas[i - 1]
    x_cor = _exp_update(
        x_prev_cor,
        grid.lambdas[i - 2],
        lam_p,
        grid.alphas[i - 2],
        grid.alphas[i - 1],
        [lam_p, lam2, lam3],
        [eps1, eps2, eps3],
    )
    node_lams = [lam_p, lam2] if predictor_order == 2 else [lam_p, lam2, lam3]
    node_eps = [eps1, eps2] if predictor_order == 2 else [eps1, eps2, eps3]
    x_next = _exp_update(
        x_cor,
        lam_p,
        grid.lambdas[i],
        grid.alphas[i - 1],
        grid.alphas[i],
        node_lams,
        node_eps,
    )
    return x_next, x_cor


# --- forward-value family -----------------------------------------------------


def _forward_coeffs(i: int, grid: TimeGrid) -> tuple[float, float]:
    # (σ_i/σ_{i−1}, α_i − σ_iα_{i−1}/σ_{i−1}); at σ_i=0 these are exactly (0, α_i)
    ratio = grid.sigmas[i] / grid.sigmas[i - 1]
    return ratio, grid.alphas[i] - ratio * grid.alphas[i - 1]


def _forward_ideal(x_prev, i, grid: TimeGrid, model, picard_tol, picard_max_iters):
    ratio, gain = _forward_coeffs(i, grid)
    t_i = grid.times[i]
    base = ratio * x_prev
    if hasattr(model, "data_gain"):
        # linear μ(x) = m·x: the fixed point is a scalar rescale, solved exactly;
        # one evaluation then certifies the fixed-point residual
        m = model.data_gain(t_i)
        denom = 1.0 - gain * m
        if denom == 0.0:
            raise ValueError(
                "degenerate identity: every x solves the sigma=0 terminal equation "
                "for a linear data prediction"
            )
        x = base / denom
        resid = float(np.linalg.norm(x - (base + gain * model.eval_data(x, t_i))))
        if resid > picard_tol * (1.0 + float(np.linalg.norm(x))):
            raise NumericalError(f"closed-form fixed point fails its certificate ({resid:.3e})")
        return x, 1
    x = ddim_step(x_prev, i, grid, model)
    for n in range(1, picard_max_iters + 1):
        x_new = base + gain * model.eval_data(x, t_i)
        if np.linalg.norm(x_new - x) <= picard_tol * (1.0 + np.linalg.norm(x_new)):
            return x_new, n
        x = x_new
    raise NumericalError(
        f"Picard stalled after {picard_max_iters} iterations; refine the grid"
    )


def forward_value_ideal_step(
    x_prev, i, grid: TimeGrid, model, picard_tol: float = 1e-12, picard_max_iters: int = 100
):
    """Implicit (idealized) forward-value step: solve x = (σ_i/σ_{i−1})x_prev
    + (α_i − σ_iα_{i−1}/σ_{i−1})·μ(x, t_i).

    Models advertising a scalar ``data_gain`` are solved in closed form;
    everything else runs Picard iteration from the DDIM initial guess.
    """
    _check_index(i, grid)
    if grid.sigmas[i - 1] == 0.0:
        raise ValueError("sigma must be positive at the step's start node")
    x, _ = _forward_ideal(x_prev, i, grid, model, picard_tol, picard_max_iters)
    return x


def _forward_value(x_prev, i, grid: TimeGrid, model, lookahead, history):
    lam_p, lam_i = grid.lambdas[i - 1], grid.lambdas[i]
    if lookahead == "ddim":
        x_hat = ddim_step(x_prev, i, grid, model)
    elif lookahead == "dpmsolver2":
        # second-order lookahead reusing the previous step's fresh evaluation
        eps = model.eval_noise(x_prev, grid.times[i - 1])
        if history:
            nodes = [(lam_p, eps), history[-1]]
        else:
            nodes = [(lam_p, eps)]  # warm-up: first-order lookahead
        x_hat = _exp_update(
            x_prev,
            lam_p,
            lam_i,
            grid.alphas[i - 1],
            grid.alphas[i],
            [n[0] for n in nodes],
            [n[1] for n in nodes],
        )
        history.append((lam_p, eps))
    elif lookahead == "oracle":
        x_hat = exact_substep(model, x_prev, i, grid)
    else:
        raise ValueError(f"unknown lookahead {lookahead!r}")
    ratio, gain = _forward_coeffs(i, grid)
    return ratio * x_prev + gain * model.eval_data(x_hat, grid.times[i]), x_hat


def forward_value_step(x_prev, i, grid: TimeGrid, model, lookahead: str, history=None):
    """One practical forward-value step: estimate x̂_{t_i} by the lookahead,
    then apply the data-form update with μ evaluated at (x̂_{t_i}, t_i).

    For the ``dpmsolver2`` lookahead, ``history`` is a mutable buffer holding
    the previous step's lookahead evaluation; this call appends its own.
    At σ_{t_i} = 0 the update returns α_{t_i}·μ(x̂, t_M) exactly.
    """
    _check_index(i, grid)
    if grid.sigmas[i - 1] == 0.0:
        raise ValueError("sigma must be positive at the step's start node")
    if history is None:
        history = deque(maxlen=1)
    x, _ = _forward_value(x_prev, i, grid, model, lookahead, history)
    return x


def _attach_step(i: int, exc: Exception) -> Exception:
    try:
        return exc.__class__(f"step {i}: {exc}")
    except TypeError:  # exotic exception signature; keep the original
        return exc


def run_sampler(spec: SamplerSpec, grid: TimeGrid, model, x0) -> Trajectory:
    """Iterate the configured rule from t_0 to t_M with ramp-order warm-up.

    Deterministic given its inputs; model evaluations are counted through a
    wrapper so NFE reflects what actually ran.
    """
    counting = CountingModel(model)
    x = np.array(x0, dtype=float)
    M = grid.M
    states = np.empty((M + 1, x.shape[-1]))
    states[0] = x
    diagnostics: dict = {}
    rule = spec.rule

    try:
        if rule == "ddim":
            for i in range(1, M + 1):
                x = ddim_step(x, i, grid, counting)
                states[i] = x
        elif rule == "odesolver-p":
            hist: deque = deque(maxlen=max(spec.p - 1, 1))
            for i in range(1, M + 1):
                p_eff = min(i, spec.p)  # ramp-order warm-up
                eps = counting.eval_noise(x, grid.times[i - 1])
                node_lams, node_eps = _general_nodes(eps, hist, i, grid, p_eff)
                x = _exp_update(
                    x,
                    grid.lambdas[i - 1],
                    grid.lambdas[i],
                    grid.alphas[i - 1],
                    grid.alphas[i],
                    node_lams,
                    node_eps,
                )
                hist.append((grid.lambdas[i - 1], eps))
                states[i] = x
        elif rule == "unipc":
            hist = deque(maxlen=2)
            x_cor_prev = x
            for i in range(1, M + 1):
                if i <= 2:
                    eps = counting.eval_noise(x, grid.times[i - 1])
                    node_lams, node_eps = _general_nodes(eps, hist, i, grid, min(i, 2))
                    x_cor_prev = x  # bootstrap x^cor_{t_{i−1}} := x_{t_{i−1}}
                    x = _exp_update(
                        x,
                        grid.lambdas[i - 1],
                        grid.lambdas[i],
                        grid.alphas[i - 1],
                        grid.alphas[i],
                        node_lams,
                        node_eps,
                    )
                    hist.append((grid.lambdas[i - 1], eps))
                else:
                    # inlined unipc_step so the fresh ε can be buffered without
                    # a second evaluation
                    eps1 = counting.eval_noise(x, grid.times[i - 1])
                    lam2, eps2 = hist[-1]
                    lam3, eps3 = hist[-2]
                    lam_p = grid.lambdas[i - 1]
                    x_cor_prev = _exp_update(
                        x_cor_prev,
                        grid.lambdas[i - 2],
                        lam_p,
                        grid.alphas[i - 2],
                        grid.alphas[i - 1],
                        [lam_p, lam2, lam3],
                        [eps1, eps2, eps3],
                    )
                    if spec.predictor_order == 2:
                        node_lams, node_eps = [lam_p, lam2], [eps1, eps2]
                    else:
                        node_lams, node_eps = [lam_p, lam2, lam3], [eps1, eps2, eps3]
                    x = _exp_update(
                        x_cor_prev,
                        lam_p,
                        grid.lambdas[i],
                        grid.alphas[i - 1],
                        grid.alphas[i],
                        node_lams,
                        node_eps,
                    )
                    if spec.eval_at_corrected:
                        eps_buf = counting.eval_noise(x_cor_prev, grid.times[i - 1])
                    else:
                        eps_buf = eps1
                    hist.append((lam_p, eps_buf))
                states[i] = x
        elif rule == "forward-ideal":
            iters = []
            for i in range(1, M + 1):
                x, n = _forward_ideal(x, i, grid, counting, spec.picard_tol, spec.picard_max_iters)
                iters.append(n)
                states[i] = x
            diagnostics["picard_iters"] = iters
        elif rule == "forward-value":
            hist = deque(maxlen=1)
            gaps = [] if getattr(model, "kind", None) == "gaussian" else None
            for i in range(1, M + 1):
                x, x_hat = _forward_value(x, i, grid, counting, spec.lookahead, hist)
                if gaps is not None:
                    gaps.append(float(np.linalg.norm(x_hat - exact_substep(model, states[i - 1], i, grid))))
                states[i] = x
            if gaps is not None:
                diagnostics["lookahead_gap"] = gaps
        else:  # pragma: no cover - SamplerSpec already validated
            raise ValueError(f"unknown rule {rule!r}")
    except (ValueError, NumericalError) as exc:
        raise _attach_step(locals().get("i", 0), exc) from exc

    return Trajectory(grid=grid, states=states, model_calls=counting.calls, diagnostics=diagnostics)
