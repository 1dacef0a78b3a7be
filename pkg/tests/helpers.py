"""Shared oracles and problem builders for the test suite."""

from __future__ import annotations

import numpy as np

from certunlearn.data import Dataset
from certunlearn.model import Mlp, MlpSpec


def central_diff_grad(f, w, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    g = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300))


def least_squares_problem(n=200, p=5, seed=0, noise=0.3):
    """Linear regression as a one-layer MSE network.

    Returns the model, the dataset and the design matrix with an appended
    intercept column, laid out like the flattened parameters (weights, then
    bias).
    """
    gen = np.random.default_rng(seed)
    X = gen.standard_normal((n, p))
    theta = gen.standard_normal(p + 1)
    Xa = np.hstack([X, np.ones((n, 1))])
    y = Xa @ theta + noise * gen.standard_normal(n)
    model = Mlp(MlpSpec((p, 1), "tanh", "mean-squared-error"))
    return model, Dataset(X, y, "least-squares"), Xa


def lstsq_minimizer(Xa, y, rows=None):
    """Normal-equations minimizer of the mean squared error over ``rows``."""
    if rows is not None:
        Xa, y = Xa[rows], y[rows]
    return np.linalg.solve(Xa.T @ Xa, Xa.T @ y)
