"""Closed-form upper bounds on ``||w_estimate - w_retrained||``."""

from __future__ import annotations

import math

from certunlearn.errors import InvalidArgument


def _curvature(cfg) -> float:
    k = cfg.lam + cfg.lambda_min
    if not k > 0:
        raise InvalidArgument(f"lam + lambda_min must be positive, got {k}")
    return k


def _log_term(d: int, rho: float) -> float:
    if d < 1:
        raise InvalidArgument(f"d must be >= 1, got {d}")
    if not 0 < rho < 1:
        raise InvalidArgument(f"rho must lie in (0, 1), got {rho}")
    return math.sqrt(math.log(d / rho))


def bound_basic(cfg) -> float:
    """Exact Newton step with damping: ``2C(MC + lam) / (lam + lambda_min)``."""
    k = _curvature(cfg)
    return 2 * cfg.C * (cfg.M * cfg.C + cfg.lam) / k


def bound_efficient(cfg, d: int) -> float:
    """Newton step with the LiSSA estimate, valid with probability ``1 - rho``."""
    k = _curvature(cfg)
    extra = (32 * _log_term(d, cfg.rho) / k + 1 / 8) * cfg.L * cfg.C
    return bound_basic(cfg) + extra


def bound_practical(cfg, d: int, G: float) -> float:
    """Bound for models whose residual gradient norms are at most ``G``."""
    if G < 0:
        raise InvalidArgument(f"G must be non-negative, got {G}")
    k = _curvature(cfg)
    first = (2 * cfg.C * (cfg.M * cfg.C + cfg.lam) + G) / k
    second = (16 * _log_term(d, cfg.rho) / k + 1 / 16) * (2 * cfg.L * cfg.C + G)
    return first + second


def bound_convex(M: float, C: float, K: float) -> float:
    """Exact Newton step on a ``K``-strongly convex loss: ``2 M C^2 / K``."""
    if not K > 0:
        raise InvalidArgument(f"K must be positive, got {K}")
    return 2 * M * C * C / K


def bound_components(cfg, d: int, G: float) -> dict:
    """Every bound for a configuration, as recorded in certificate manifests."""
    return {
        "basic": bound_basic(cfg),
        "efficient": bound_efficient(cfg, d),
        "practical": bound_practical(cfg, d, G),
        "G": G,
        "d": d,
    }
