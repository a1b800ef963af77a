"""Noise schedules, the half-log-SNR coordinate, and discretization grids.

Conventions used throughout the package: the forward process is
x_t = α_t x_0 + σ_t z with z ~ N(0, I), and the canonical integration
coordinate is the half-log-SNR

    λ(t) = log(α_t / σ_t),

which is strictly decreasing in t.  Sampling runs backward in time, so a
grid stores times t_0 > t_1 > ... > t_M and the corresponding strictly
increasing λ values; the per-step increments δ_i = λ_{t_i} − λ_{t_{i-1}}
are positive.  e^{-λ} is the noise-to-signal ratio σ_t/α_t.

Two schedule families are provided:

* ``ve``:        α_t = 1, σ_t = t, hence λ = −log t.
* ``vp-linear``: α_t = exp(−t²(β_max−β_min)/4 − t·β_min/2), σ_t = sqrt(1−α_t²).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

__all__ = [
    "NoiseSchedule",
    "TimeGrid",
    "GridValidation",
    "ve_schedule",
    "vp_linear_schedule",
    "build_grid",
    "validate_grid",
    "subsample_indices",
]

_KINDS = ("ve", "vp-linear")
_GRID_KINDS = ("uniform-lambda", "uniform-time", "subsample-reference")


@dataclass(frozen=True)
class NoiseSchedule:
    """Signal/noise amplitude pair (α_t, σ_t) over a closed time domain.

    Immutable; all evaluations are pure and vectorize over numpy inputs.
    ``beta_min``/``beta_max`` are only meaningful for the ``vp-linear`` kind.
    """

    kind: str
    t_domain: tuple[float, float]
    beta_min: float = 0.1
    beta_max: float = 20.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        lo, hi = self.t_domain
        if not (0.0 <= lo < hi):
            raise ValueError(f"bad t_domain {self.t_domain!r}: need 0 <= t_min < t_max")
        if self.kind == "vp-linear" and not (0.0 < self.beta_min < self.beta_max):
            raise ValueError("vp-linear needs 0 < beta_min < beta_max")

    # --- amplitude functions -------------------------------------------------

    def _check_domain(self, t: np.ndarray) -> None:
        lo, hi = self.t_domain
        slack = 1e-9 * (hi - lo)
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise ValueError(f"t={t!r} outside schedule domain [{lo}, {hi}]")

    def _vp_exponent(self, t: np.ndarray) -> np.ndarray:
        # q(t) = -log alpha_t for the vp-linear family
        return t * t * (self.beta_max - self.beta_min) / 4.0 + t * self.beta_min / 2.0

    def alpha(self, t):
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        if self.kind == "ve":
            return np.ones_like(t)
        return np.exp(-self._vp_exponent(t))

    def sigma(self, t):
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        if self.kind == "ve":
            return t.copy()
        # sigma^2 = 1 - alpha^2 = -expm1(-2q); expm1 avoids cancellation near t=0
        return np.sqrt(-np.expm1(-2.0 * self._vp_exponent(t)))

    def lambda_of_t(self, t):
        """Half-log-SNR λ(t) = log(α_t/σ_t).  Raises where σ_t = 0."""
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        if np.any(t == 0.0):
            raise ValueError("lambda is infinite at sigma=0; use the sigma=0-aware step forms")
        if self.kind == "ve":
            return -np.log(t)
        q = self._vp_exponent(t)
        return -q - 0.5 * np.log(-np.expm1(-2.0 * q))

    def t_of_lambda(self, lam):
        """Inverse of :meth:`lambda_of_t`; raises if lam is outside the image."""
        lam = np.asarray(lam, dtype=float)
        if self.kind == "ve":
            t = np.exp(-lam)
        else:
            # Solve q(t) = -log alpha = 0.5*log(1 + e^{-2 lam}) for t > 0,
            # rationalized so the small-c branch stays stable.
            c = 0.5 * np.logaddexp(0.0, -2.0 * lam)
            a = (self.beta_max - self.beta_min) / 4.0
            b = self.beta_min / 2.0
            t = 2.0 * c / (b + np.sqrt(b * b + 4.0 * a * c))
        self._check_domain(t)
        return t

    # --- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "ve":
            return {"kind": "ve"}
        return {"kind": "vp-linear", "beta_min": self.beta_min, "beta_max": self.beta_max}

    @staticmethod
    def from_dict(d: dict) -> "NoiseSchedule":
        allowed = {"kind", "beta_min", "beta_max", "t_domain"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        kind = d.get("kind")
        if kind == "ve":
            return ve_schedule(*d.get("t_domain", (0.0, 100.0)))
        if kind == "vp-linear":
            return vp_linear_schedule(
                beta_min=d.get("beta_min", 0.1),
                beta_max=d.get("beta_max", 20.0),
                t_domain=tuple(d.get("t_domain", (0.0, 1.0))),
            )
        raise ValueError(f"unknown schedule kind {kind!r}")


def ve_schedule(t_min: float = 0.0, t_max: float = 100.0) -> NoiseSchedule:
    return NoiseSchedule(kind="ve", t_domain=(t_min, t_max))


def vp_linear_schedule(
    beta_min: float = 0.1, beta_max: float = 20.0, t_domain: tuple[float, float] = (0.0, 1.0)
) -> NoiseSchedule:
    return NoiseSchedule(kind="vp-linear", t_domain=t_domain, beta_min=beta_min, beta_max=beta_max)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Backward-time discretization t_0 > ... > t_M with cached λ, α, σ.

    ``lambdas[-1]`` may be +inf when the terminal node has σ = 0; every step
    formula that touches a σ=0 node uses the limit-form coefficients instead
    of λ arithmetic.  Instances are immutable; the arrays are read-only.
    """

    schedule: NoiseSchedule
    kind: str
    times: np.ndarray
    lambdas: np.ndarray
    alphas: np.ndarray
    sigmas: np.ndarray
    deltas: np.ndarray
    m_ref: int | None = None
    reference_spacing: str = "uniform-time"

    @property
    def M(self) -> int:
        return len(self.times) - 1

    @property
    def terminal_sigma_zero(self) -> bool:
        return self.sigmas[-1] == 0.0

    def to_dict(self) -> dict:
        g: dict = {
            "kind": self.kind,
            "M": self.M,
            "t_start": float(self.times[0]),
            "t_end": float(self.times[-1]),
        }
        if self.kind == "subsample-reference":
            g["M_ref"] = self.m_ref
            g["reference_spacing"] = self.reference_spacing
        return {"schedule": self.schedule.to_dict(), "grid": g}


@dataclass(frozen=True)
class GridValidation:
    ok: bool
    max_delta: float
    message: str | None = None
    index: int | None = None


def subsample_indices(M: int, m_ref: int) -> np.ndarray:
    """Indices i' = round(i·M_ref/M) into a reference grid, half rounding up."""
    if m_ref < M:
        raise ValueError(f"M_ref={m_ref} < M={M}")
    i = np.arange(M + 1)
    # floor(i*m_ref/M + 1/2) in exact integer arithmetic
    return (2 * i * m_ref + M) // (2 * M)


def build_grid(
    schedule: NoiseSchedule,
    kind: str,
    M: int,
    t_start: float,
    t_end: float,
    m_ref: int | None = None,
    reference_spacing: str = "uniform-time",
) -> TimeGrid:
    """Construct a backward-time grid of M steps from t_start down to t_end.

    Args:
        schedule: the noise schedule supplying α, σ, λ.
        kind: ``uniform-lambda`` (equal δ_i), ``uniform-time``, or
            ``subsample-reference`` (pick M+1 of M_ref+1 reference nodes by
            the rounding rule i' = round(i·M_ref/M)).
        M: step count, at least 1.
        t_start: initial (largest) time.
        t_end: final time; may be 0, flagging a σ=0 terminal node (not
            representable for ``uniform-lambda``, whose coordinate is λ).
        m_ref: reference step count for ``subsample-reference`` (M_ref ≥ M).
        reference_spacing: spacing of the reference grid before subsampling,
            ``uniform-time`` (default) or ``uniform-lambda``.

    Returns:
        An immutable, validated TimeGrid.

    Raises:
        ValueError: on bad arguments or if the constructed grid fails
            validation.
    """
    if M < 1:
        raise ValueError(f"M={M} must be >= 1")
    if not t_start > t_end:
        raise ValueError(f"need t_start > t_end, got {t_start} <= {t_end}")
    if kind not in _GRID_KINDS:
        raise ValueError(f"unknown grid kind {kind!r}")

    if kind == "uniform-lambda":
        lam0 = float(schedule.lambda_of_t(t_start))
        lam1 = float(schedule.lambda_of_t(t_end))
        lambdas = np.linspace(lam0, lam1, M + 1)
        times = np.asarray(schedule.t_of_lambda(lambdas), dtype=float)
        times[0], times[-1] = t_start, t_end  # pin endpoints against inversion drift
    elif kind == "uniform-time":
        times = np.linspace(t_start, t_end, M + 1)
    else:
        if m_ref is None:
            raise ValueError("subsample-reference requires m_ref")
        if reference_spacing not in ("uniform-time", "uniform-lambda"):
            raise ValueError(f"unknown reference_spacing {reference_spacing!r}")
        ref = build_grid(schedule, reference_spacing, m_ref, t_start, t_end)
        times = ref.times[subsample_indices(M, m_ref)].copy()

    alphas = np.asarray(schedule.alpha(times), dtype=float)
    sigmas = np.asarray(schedule.sigma(times), dtype=float)
    if kind != "uniform-lambda":
        lambdas = np.empty(M + 1)
        positive = sigmas > 0.0
        lambdas[positive] = schedule.lambda_of_t(times[positive])
        lambdas[~positive] = math.inf
    deltas = np.diff(lambdas)

    for a in (times, lambdas, alphas, sigmas, deltas):
        a.setflags(write=False)
    grid = TimeGrid(
        schedule=schedule,
        kind=kind,
        times=times,
        lambdas=lambdas,
        alphas=alphas,
        sigmas=sigmas,
        deltas=deltas,
        m_ref=m_ref if kind == "subsample-reference" else None,
        reference_spacing=reference_spacing,
    )
    v = validate_grid(grid)
    if not v.ok:
        raise ValueError(f"constructed grid invalid: {v.message} (i={v.index})")
    return grid


def validate_grid(grid: TimeGrid) -> GridValidation:
    """Check monotonicity invariants; reports the first violation, if any."""
    max_delta = float(np.max(grid.deltas)) if len(grid.deltas) else 0.0
    for i in range(1, len(grid.times)):
        if not grid.deltas[i - 1] > 0.0:
            return GridValidation(False, max_delta, f"delta_{i} = {grid.deltas[i-1]} not positive", i)
        if grid.alphas[i] < grid.alphas[i - 1]:
            return GridValidation(False, max_delta, "alpha not nondecreasing", i)
        if grid.sigmas[i] > grid.sigmas[i - 1]:
            return GridValidation(False, max_delta, "sigma not nonincreasing", i)
    return GridValidation(True, max_delta)
