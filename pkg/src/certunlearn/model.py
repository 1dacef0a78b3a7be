"""Small twice-differentiable MLPs with exact gradients and Hessian-vector products.

Parameters are a flat float64 vector laid out layer by layer as ``W_1`` (row
major, ``fan_in x fan_out``) followed by ``b_1``, then ``W_2``, ``b_2``, ...

The per-sample losses are

* ``softmax-cross-entropy``: ``logsumexp(z) - z[y]``
* ``mean-squared-error``: ``0.5 * ||z - y||^2``

and every batch quantity is the mean over samples. Hessian-vector products use
the R-operator (forward-over-reverse), so they are exact up to rounding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from certunlearn.errors import CapabilityExceeded, InvalidArgument, NumericalFailure
from certunlearn.numerics import SeededRng

ACTIVATIONS = ("tanh", "softplus")
LOSSES = ("softmax-cross-entropy", "mean-squared-error")

DEFAULT_ORACLE_LIMIT = 2000


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    activation: str = "tanh"
    loss: str = "softmax-cross-entropy"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise InvalidArgument("an MLP needs at least an input and an output layer")
        if any(d < 1 for d in dims):
            raise InvalidArgument(f"layer sizes must be positive, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(
                f"activation must be one of {ACTIVATIONS} (ReLU is not C2), "
                f"got {self.activation!r}"
            )
        if self.loss not in LOSSES:
            raise InvalidArgument(f"loss must be one of {LOSSES}, got {self.loss!r}")

    @property
    def num_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    @property
    def is_classifier(self) -> bool:
        return self.loss == "softmax-cross-entropy"

    def fingerprint(self) -> str:
        text = f"{list(self.layer_dims)}|{self.activation}|{self.loss}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Batch:
    """Features and labels of a set of samples.

    ``labels`` holds integer class ids for classification. For regression it
    holds real targets of shape ``(n,)`` or ``(n, out_dim)``. ``indices`` records
    the dataset rows the batch was drawn from, when known.
    """

    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels)
        if self.features.shape[0] < 1:
            raise InvalidArgument("a batch needs at least one sample")
        if self.labels.shape[0] != self.features.shape[0]:
            raise InvalidArgument("features and labels disagree on the sample count")

    def __len__(self) -> int:
        return self.features.shape[0]


def _act(name, z):
    if name == "tanh":
        t = np.tanh(z)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    # softplus
    a = np.logaddexp(0.0, z)
    s = 0.5 * (1.0 + np.tanh(0.5 * z))  # stable sigmoid
    return a, s, s * (1.0 - s)


class Mlp:
    """Loss, derivatives and predictions of an :class:`MlpSpec` network."""

    def __init__(self, spec: MlpSpec, oracle_limit: int = DEFAULT_ORACLE_LIMIT):
        self.spec = spec
        self.oracle_limit = oracle_limit
        self._shapes = []
        offset = 0
        for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
            w_end = offset + fan_in * fan_out
            b_end = w_end + fan_out
            self._shapes.append((offset, w_end, b_end, fan_in, fan_out))
            offset = b_end
        self.dim = offset

    # -- parameter layout -------------------------------------------------

    def unflatten(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.dim,):
            raise InvalidArgument(f"expected {self.dim} parameters, got shape {w.shape}")
        return [
            (w[o:we].reshape(fi, fo), w[we:be])
            for o, we, be, fi, fo in self._shapes
        ]

    def flatten(self, layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])

    def init_params(self, rng: SeededRng) -> np.ndarray:
        """Glorot-uniform weights and zero biases."""
        gen = rng.generator()
        layers = []
        for _, _, _, fan_in, fan_out in self._shapes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append((gen.uniform(-limit, limit, (fan_in, fan_out)), np.zeros(fan_out)))
        return self.flatten(layers)

    # -- forward / backward ----------------------------------------------

    def _check(self, w, batch: Batch):
        if batch.features.shape[1] != self.spec.layer_dims[0]:
            raise InvalidArgument(
                f"feature width {batch.features.shape[1]} does not match input "
                f"dim {self.spec.layer_dims[0]}"
            )
        return self.unflatten(w)

    def _targets(self, batch: Batch) -> np.ndarray:
        out = self.spec.layer_dims[-1]
        y = batch.labels
        if self.spec.is_classifier:
            y = y.astype(np.int64)
            if y.min() < 0 or y.max() >= out:
                raise InvalidArgument("class labels out of range for the output layer")
            return y
        if np.issubdtype(y.dtype, np.integer) and out > 1:
            return np.eye(out)[y]
        return y.astype(np.float64).reshape(len(y), out)

    def _forward(self, layers, X):
        acts, derivs = [X], []
        a = X
        last = len(layers) - 1
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            if i == last:
                acts.append(z)
            else:
                a, d1, d2 = _act(self.spec.activation, z)
                acts.append(a)
                derivs.append((d1, d2))
        return acts, derivs

    def logits(self, w, batch: Batch) -> np.ndarray:
        acts, _ = self._forward(self._check(w, batch), batch.features)
        return acts[-1]

    def per_sample_loss(self, w, batch: Batch) -> np.ndarray:
        z = self.logits(w, batch)
        y = self._targets(batch)
        if self.spec.is_classifier:
            return logsumexp(z, axis=1) - z[np.arange(len(y)), y]
        return 0.5 * np.sum((z - y) ** 2, axis=1)

    def loss(self, w, batch: Batch) -> float:
        # overflow surfaces as NumericalFailure below
        with np.errstate(over="ignore", invalid="ignore"):
            val = float(np.mean(self.per_sample_loss(w, batch)))
        if not np.isfinite(val):
            raise NumericalFailure("loss is not finite")
        return val

    def _output_delta(self, z, y, n):
        if self.spec.is_classifier:
            p = softmax(z, axis=1)
            d = p.copy()
            d[np.arange(n), y] -= 1.0
            return d / n, p
        return (z - y) / n, None

    def grad(self, w, batch: Batch) -> np.ndarray:
        layers = self._check(w, batch)
        acts, derivs = self._forward(layers, batch.features)
        n = len(batch)
        delta, _ = self._output_delta(acts[-1], self._targets(batch), n)
        grads = [None] * len(layers)
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
            if i > 0:
                delta = (delta @ W.T) * derivs[i - 1][0]
        g = self.flatten(grads)
        if not np.all(np.isfinite(g)):
            raise NumericalFailure("gradient is not finite")
        return g

    def hvp(self, w, batch: Batch, v: np.ndarray) -> np.ndarray:
        """Exact ``(d^2 L / dw^2) v`` by differentiating the backward pass along ``v``."""
        layers = self._check(w, batch)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise InvalidArgument(f"v must have shape ({self.dim},), got {v.shape}")
        vlayers = self.unflatten(v)
        acts, derivs = self._forward(layers, batch.features)
        n = len(batch)
        last = len(layers) - 1

        # R-forward: directional derivatives of pre-activations and activations
        r_a = np.zeros_like(batch.features)
        r_z = []
        for i, ((W, _), (VW, Vb)) in enumerate(zip(layers, vlayers)):
            rz = r_a @ W + acts[i] @ VW + Vb
            r_z.append(rz)
            if i < last:
                r_a = derivs[i][0] * rz

        z = acts[-1]
        delta, p = self._output_delta(z, self._targets(batch), n)
        if self.spec.is_classifier:
            pr = p * r_z[-1]
            r_delta = (pr - p * pr.sum(axis=1, keepdims=True)) / n
        else:
            r_delta = r_z[-1] / n

        out = [None] * len(layers)
        for i in range(last, -1, -1):
            W, _ = layers[i]
            VW, _ = vlayers[i]
            r_in = r_a_prev(acts, derivs, r_z, i)
            out[i] = (r_in.T @ delta + acts[i].T @ r_delta, r_delta.sum(axis=0))
            if i > 0:
                d1, d2 = derivs[i - 1]
                back = delta @ W.T
                r_delta = (r_delta @ W.T + delta @ VW.T) * d1 + back * d2 * r_z[i - 1]
                delta = back * d1
        return self.flatten(out)

    def full_hessian(self, w, batch: Batch) -> np.ndarray:
        """Dense Hessian assembled column by column from exact HVPs."""
        if self.dim > self.oracle_limit:
            raise CapabilityExceeded(
                f"dense Hessian of dimension {self.dim} exceeds oracle limit {self.oracle_limit}"
            )
        eye = np.eye(self.dim)
        return np.column_stack([self.hvp(w, batch, eye[j]) for j in range(self.dim)])

    # -- prediction -------------------------------------------------------

    def predict(self, w, batch: Batch) -> np.ndarray:
        if not self.spec.is_classifier:
            raise InvalidArgument("predictions are only defined for classifiers")
        return np.argmax(self.logits(w, batch), axis=1)

    def predict_metrics(self, w, batch: Batch) -> dict:
        """Accuracy and micro-averaged F1 from the confusion matrix.

        For single-label classification every error is one false positive and
        one false negative, so micro-F1 equals accuracy.
        """
        pred = self.predict(w, batch)
        return classification_metrics(pred, batch.labels.astype(np.int64), self.spec.layer_dims[-1])


def r_a_prev(acts, derivs, r_z, i):
    """Directional derivative of the input to layer ``i``."""
    if i == 0:
        return np.zeros_like(acts[0])
    return derivs[i - 1][0] * r_z[i - 1]


def classification_metrics(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> dict:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, pred), 1)
    tp = np.trace(cm)
    fp = cm.sum(axis=0) - np.diag(cm)
    fn = cm.sum(axis=1) - np.diag(cm)
    total = cm.sum()
    denom = 2 * tp + fp.sum() + fn.sum()
    return {
        "accuracy": float(tp / total),
        "micro_f1": float(2 * tp / denom) if denom else 0.0,
    }


class QuadraticModel:
    """``L(w) = 0.5 w^T A w - b^T w`` regardless of the batch.

    A stand-in model with a constant Hessian, used to exercise LiSSA and the
    Newton step against closed forms.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray | None = None):
        self.A = np.asarray(A, dtype=np.float64)
        self.dim = self.A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=np.float64)

    def loss(self, w, batch=None) -> float:
        return float(0.5 * w @ self.A @ w - self.b @ w)

    def grad(self, w, batch=None) -> np.ndarray:
        return self.A @ w - self.b

    def hvp(self, w, batch, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise InvalidArgument(f"v must have shape ({self.dim},)")
        return self.A @ v

    def full_hessian(self, w, batch=None) -> np.ndarray:
        return self.A.copy()
