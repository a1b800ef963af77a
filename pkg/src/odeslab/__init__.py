"""Self-contained lab for probability-flow ODE samplers on analytic models.

Closed-form noise/data predictors (isotropic Gaussian, Gaussian mixture,
polynomial-in-λ) are paired with deterministic sampler update rules and
scalar oracles so convergence order, error cancellation, lookahead tracking
and lower-bound plateaus can be measured against exact references.
"""

from .schedule import (
    NoiseSchedule,
    TimeGrid,
    GridValidation,
    ve_schedule,
    vp_linear_schedule,
    build_grid,
    validate_grid,
    subsample_indices,
)
from .models import (
    IsotropicGaussianModel,
    GaussianMixtureModel,
    PolyLambdaModel,
    CountingModel,
    data_from_noise,
    noise_from_data,
    model_from_dict,
)
from .oracle import (
    NumericalError,
    GaussianKappaTrace,
    ReferenceTrajectory,
    gaussian_kappa_star,
    gaussian_kappa_star_trace,
    gaussian_ddim_kappa,
    gaussian_solver2_kappa,
    reference_trajectory,
    reference_final_states,
    exact_substep,
)
from .solvers import (
    SamplerSpec,
    Trajectory,
    phi,
    ddim_step,
    ode_solver_p_step,
    ode_solver_2_step,
    ode_solver_3_step,
    unipc_step,
    forward_value_ideal_step,
    forward_value_step,
    run_sampler,
)
from .harness import (
    ExperimentPlan,
    ConvergenceReport,
    final_error,
    estimate_order,
    run_plan,
    cancellation_experiment,
    tracking_experiment,
    lower_bound_experiment,
    emit_report,
    report_csv_bytes,
    report_json_bytes,
)
from .acceptance import CriterionResult, default_plans, run_criteria

__version__ = "0.1.0"

__all__ = [
    "NoiseSchedule",
    "TimeGrid",
    "GridValidation",
    "ve_schedule",
    "vp_linear_schedule",
    "build_grid",
    "validate_grid",
    "subsample_indices",
    "IsotropicGaussianModel",
    "GaussianMixtureModel",
    "PolyLambdaModel",
    "CountingModel",
    "data_from_noise",
    "noise_from_data",
    "model_from_dict",
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
    "ExperimentPlan",
    "ConvergenceReport",
    "final_error",
    "estimate_order",
    "run_plan",
    "cancellation_experiment",
    "tracking_experiment",
    "lower_bound_experiment",
    "emit_report",
    "report_csv_bytes",
    "report_json_bytes",
    "CriterionResult",
    "default_plans",
    "run_criteria",
    "__version__",
]
