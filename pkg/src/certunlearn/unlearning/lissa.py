"""Stochastic inverse-Hessian-vector products (LiSSA recursion)."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from certunlearn.errors import InvalidArgument, NumericalFailure


def lissa_apply(model, w, v, batches: Sequence, lam: float, H: float) -> np.ndarray:
    """Estimate ``(hessian + lam I)^{-1} v`` from i.i.d. Hessian samples.

    Runs ``P_0 = v``, ``P_j = v + (I - (H_j + lam I) / H) P_{j-1}`` where
    ``H_j u`` is ``model.hvp(w, batches[j-1], u)``, and returns ``P_s / H``
    with ``s = len(batches)``. Converges when every ``H_j + lam I`` has its
    spectrum inside ``(0, 2H)``.
    """
    if not H > 0:
        raise InvalidArgument(f"H must be positive, got {H}")
    v = np.asarray(v, dtype=np.float64)
    p = v.copy()
    for j, batch in enumerate(batches, start=1):
        p = v + p - (model.hvp(w, batch, p) + lam * p) / H
        if not np.all(np.isfinite(p)):
            raise NumericalFailure(
                f"LiSSA recursion became non-finite at step {j}; H is likely too small"
            )
    return p / H
