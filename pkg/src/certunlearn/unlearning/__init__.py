"""Newton-step unlearning, error bounds and Gaussian noise calibration."""

from certunlearn.unlearning.bounds import (
    bound_basic,
    bound_components,
    bound_convex,
    bound_efficient,
    bound_practical,
)
from certunlearn.unlearning.calibration import (
    MECHANISMS,
    analytic_delta,
    calibrate,
    implied_budget_range,
    implied_epsilon,
    sigma_analytic,
    sigma_classic,
)
from certunlearn.unlearning.certify import (
    CertifiedResult,
    certify,
    check_hessian_scale,
    replay,
    unlearn_sequential,
    unlearn_single,
)
from certunlearn.unlearning.config import Budget, UnlearnConfig, group_budget
from certunlearn.unlearning.lissa import lissa_apply
from certunlearn.unlearning.newton import newton_estimate, newton_estimate_exact

__all__ = [
    "Budget",
    "CertifiedResult",
    "MECHANISMS",
    "UnlearnConfig",
    "analytic_delta",
    "bound_basic",
    "bound_components",
    "bound_convex",
    "bound_efficient",
    "bound_practical",
    "calibrate",
    "certify",
    "check_hessian_scale",
    "group_budget",
    "implied_budget_range",
    "implied_epsilon",
    "lissa_apply",
    "newton_estimate",
    "newton_estimate_exact",
    "replay",
    "sigma_analytic",
    "sigma_classic",
    "unlearn_sequential",
    "unlearn_single",
]
