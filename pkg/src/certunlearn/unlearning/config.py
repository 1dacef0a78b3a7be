from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass

from certunlearn.errors import InvalidArgument


@dataclass(frozen=True)
class UnlearnConfig:
    """Hyperparameters of certified unlearning.

    Attributes:
        lam: local convex coefficient added to the Hessian.
        H: Hessian scale; must dominate ``||hessian(batch) + lam I||``.
        s: LiSSA recursion depth.
        C: parameter norm bound used in training.
        L: gradient Lipschitz constant of the per-sample loss.
        M: Hessian Lipschitz constant of the per-sample loss.
        lambda_min: smallest Hessian eigenvalue assumed by the bounds.
        rho: failure probability of the stochastic inverse-Hessian estimate.
        G: floor for the residual gradient norm fed to the bounds.
        hessian_batch_size: rows per Hessian sample; ``None`` uses the full
            retained set for every sample.
    """

    lam: float = 1.0
    H: float = 10.0
    s: int = 1000
    C: float = 10.0
    L: float = 1.0
    M: float = 1.0
    lambda_min: float = 0.0
    rho: float = 0.05
    G: float = 0.0
    hessian_batch_size: int | None = 16

    def __post_init__(self):
        for name in ("lam", "H", "C", "L", "M", "G", "rho", "lambda_min"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgument(f"{name} must be finite")
        if self.lam < 0:
            raise InvalidArgument("lam must be non-negative")
        if not self.H > 0:
            raise InvalidArgument("H must be positive")
        if self.s < 0:
            raise InvalidArgument("s must be non-negative")
        if self.C < 0 or self.L < 0 or self.M < 0 or self.G < 0:
            raise InvalidArgument("C, L, M and G must be non-negative")
        if not 0 < self.rho < 1:
            raise InvalidArgument("rho must lie in (0, 1)")
        if not self.lam + self.lambda_min > 0:
            raise InvalidArgument("lam + lambda_min must be positive")
        if self.hessian_batch_size is not None and self.hessian_batch_size < 1:
            raise InvalidArgument("hessian_batch_size must be positive")
        if self.H < self.lam:
            warnings.warn(
                f"H={self.H} < lam={self.lam}: the Hessian scale condition cannot hold",
                stacklevel=3,
            )

    def replace(self, **changes) -> "UnlearnConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Budget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidArgument(f"delta must lie in (0, 1), got {self.delta}")

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "delta": self.delta}


def group_budget(budget: Budget, k: int) -> Budget:
    """Budget that keeps per-request granularity over ``k`` requests."""
    if k < 1:
        raise InvalidArgument(f"k must be >= 1, got {k}")
    return Budget(k * budget.epsilon, budget.delta)
