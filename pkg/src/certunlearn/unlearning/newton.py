"""Single-step Newton estimates of the retrained model."""

from __future__ import annotations

import numpy as np

from certunlearn.data import Dataset, SplitPlan, hessian_batch_stream
from certunlearn.errors import NumericalFailure
from certunlearn.numerics import SeededRng
from certunlearn.unlearning.lissa import lissa_apply


def newton_estimate(
    model,
    w_star: np.ndarray,
    dataset: Dataset,
    split: SplitPlan,
    cfg,
    rng: SeededRng,
    batches=None,
) -> np.ndarray:
    """``w* + n_u / (n - n_u) * lissa(grad L(w*, D_u))``.

    Uses the stationarity of ``w*`` on the full data to replace the retained
    gradient by a rescaled gradient over the (small) unlearned set. Hessian
    samples come from ``rng`` unless ``batches`` is given.
    """
    n, n_u = len(dataset), split.n_u
    g_u = model.grad(w_star, dataset.batch(split.unlearn_indices))
    if batches is None:
        batches = hessian_batch_stream(dataset, split, cfg.hessian_batch_size, cfg.s, rng)
    step = lissa_apply(model, w_star, g_u, batches, cfg.lam, cfg.H)
    return w_star + (n_u / (n - n_u)) * step


def newton_estimate_exact(
    model,
    w_star: np.ndarray,
    dataset: Dataset,
    split: SplitPlan,
    lam: float,
) -> np.ndarray:
    """``w* - (H_r + lam I)^{-1} grad L(w*, D_r)`` with a dense solve.

    ``H_r`` is the Hessian over the retained set. Intended as a test oracle for
    small models.
    """
    retained = dataset.batch(split.retained_indices)
    hess = model.full_hessian(w_star, retained)
    hess = 0.5 * (hess + hess.T) + lam * np.eye(len(w_star))
    g_r = model.grad(w_star, retained)
    try:
        eig_min = np.linalg.eigvalsh(hess)[0]
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigen-decomposition failed: {exc}") from None
    if not eig_min > 1e-12 * max(1.0, np.abs(hess).max()):
        raise NumericalFailure(
            f"damped Hessian is not positive definite (smallest eigenvalue {eig_min:.3g})"
        )
    return w_star - np.linalg.solve(hess, g_r)
