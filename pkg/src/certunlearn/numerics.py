"""Dense numerics, labeled random streams and scalar special functions."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from certunlearn.errors import InvalidArgument, NumericalFailure

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream identified by ``(seed, label)``.

    Every call to :meth:`generator` starts the stream from the beginning, so a
    ``SeededRng`` is a value, not a mutable state. Use :meth:`child` to derive
    independent sub-streams (``"noise"``, ``"hessian/0"``, ...).
    """

    seed: int
    label: str = ""

    def child(self, label: str) -> "SeededRng":
        name = f"{self.label}/{label}" if self.label else label
        return SeededRng(self.seed, name)

    def generator(self) -> np.random.Generator:
        digest = hashlib.sha256(self.label.encode("utf-8")).digest()
        words = np.frombuffer(digest, dtype="<u4").tolist()
        seq = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFFFFFFFFFF, *words])
        return np.random.Generator(np.random.Philox(seq))

    def to_json(self) -> dict:
        return {"seed": int(self.seed), "label": self.label}


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument(f"{name} contains non-finite entries")
    return x


def sample_gaussian_vector(dim: int, sigma: float, rng: SeededRng) -> np.ndarray:
    """Draw ``dim`` i.i.d. samples from N(0, sigma^2)."""
    if dim < 1:
        raise InvalidArgument(f"dim must be >= 1, got {dim}")
    if not sigma >= 0:
        raise InvalidArgument(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.zeros(dim)
    return sigma * rng.generator().standard_normal(dim)


def project_to_l2_ball(w: np.ndarray, C: float) -> np.ndarray:
    """Euclidean projection of ``w`` onto ``{x : ||x||_2 <= C}``."""
    if not C > 0:
        raise InvalidArgument(f"C must be positive, got {C}")
    w = check_finite(w, "w")
    norm = _safe_norm(w)
    if norm <= C:
        return w.copy()
    out = (w / norm) * C
    # rounding can leave the result one ulp outside the ball
    while _safe_norm(out) > C:
        out = out * np.nextafter(1.0, 0.0)
    return out


def _safe_norm(w: np.ndarray) -> float:
    """Euclidean norm that does not overflow for entries above ~1e154."""
    scale = np.abs(w).max() if w.size else 0.0
    if scale == 0.0 or not np.isinf(np.dot(w, w)):
        return float(np.linalg.norm(w))
    return float(scale * np.linalg.norm(w / scale))


def std_normal_cdf(x):
    """Standard normal CDF computed through ``erfc`` (accurate in both tails)."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)


def log_std_normal_cdf(x):
    return special.log_ndtr(x)


def power_iteration_opnorm(
    matvec: Callable[[np.ndarray], np.ndarray],
    dim: int,
    iters: int,
    rng: SeededRng,
) -> float:
    """Estimate the spectral norm of a symmetric linear operator.

    The returned value is ``||A v||`` for the final unit iterate ``v``, which
    never exceeds the true norm and converges to it as ``iters`` grows.
    """
    if dim < 1 or iters < 1:
        raise InvalidArgument("dim and iters must be positive")
    v = rng.generator().standard_normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        av = np.asarray(matvec(v), dtype=np.float64)
        if not np.all(np.isfinite(av)):
            raise NumericalFailure("operator returned non-finite values")
        est = float(np.linalg.norm(av))
        if est == 0.0:
            return 0.0
        v = av / est
    return est


def estimate_min_eigenvalue(
    matvec: Callable[[np.ndarray], np.ndarray],
    dim: int,
    iters: int,
    rng: SeededRng,
) -> float:
    """Smallest eigenvalue via power iteration on ``(s I - A)``, ``s ~ ||A||``.

    Advisory only: the result is approximate and slow to converge when the
    bottom of the spectrum is clustered.
    """
    top = power_iteration_opnorm(matvec, dim, iters, rng.child("top"))
    if top == 0.0:
        return 0.0
    shifted = power_iteration_opnorm(
        lambda v: top * v - matvec(v), dim, iters, rng.child("shifted")
    )
    return float(top - shifted)


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h
