"""Measurement harness: approximation error, utility, relearn time, ablations and sweeps.

Everything here is deterministic given an :class:`ExperimentConfig`; each
randomised quantity draws from a labelled child of the config's root seed.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from certunlearn.data import (
    Dataset,
    SplitPlan,
    load_csv,
    load_mnist_idx,
    make_split,
    synth_blobs,
    train_test_split,
)
from certunlearn.errors import InvalidArgument, NumericalFailure
from certunlearn.model import Mlp, MlpSpec
from certunlearn.numerics import SeededRng, sample_gaussian_vector
from certunlearn.training import TrainConfig, TrainedModel, pgd_epochs, retrain_oracle, train_pgd
from certunlearn.unlearning import (
    Budget,
    CertifiedResult,
    UnlearnConfig,
    bound_practical,
    calibrate,
    newton_estimate,
    unlearn_single,
)

NOISE_REPEATS = 3
UNCONSTRAINED_C = 1e8
ABLATION_LAMBDAS = (10.0, 1e2, 1e3, 1e4)
SWEEP_EPSILONS = (10.0, 20.0, 50.0, 100.0, 200.0, 500.0)
SWEEP_LAMBDAS = (10.0, 1e3)
SWEEP_DELTA = 0.1


@dataclass(frozen=True)
class UtilityReport:
    f1_unlearn: float
    f1_retain: float
    f1_test: float
    dataset_hash: str
    test_hash: str

    def __post_init__(self):
        for name in ("f1_unlearn", "f1_retain", "f1_test"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class AblationRow:
    lam: float
    err_bound: float
    approx_err: float
    approx_err_unconstrained: float


@dataclass(frozen=True)
class ExperimentConfig:
    """One desk-scale experiment: data, model, training and unlearning settings.

    ``data`` selects the source: ``{"kind": "blobs", n, dim, classes,
    separation, seed}``, ``{"kind": "idx", images, labels, limit}`` or
    ``{"kind": "csv", path, label_column}``. ``n_test`` rows are held out
    before training.
    """

    data: dict = field(
        default_factory=lambda: {
            "kind": "blobs", "n": 1500, "dim": 10, "classes": 4, "separation": 3.0, "seed": 0,
        }
    )
    n_test: int = 500
    hidden: tuple[int, ...] = (16,)
    activation: str = "tanh"
    loss: str = "softmax-cross-entropy"
    train: TrainConfig = TrainConfig()
    unlearn: UnlearnConfig = UnlearnConfig(s=500)
    n_u: int = 20
    split_seed: int = 1
    seed: int = 0
    epsilon: float = 1.0
    delta: float = 0.1
    mechanism: str = "classic"
    relearn_factor: float = 1.2
    relearn_max_epochs: int = 50

    def __post_init__(self):
        if self.unlearn.C != self.train.C:
            raise InvalidArgument("unlearning C must equal the training norm bound C")

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        defaults = cls()
        train = TrainConfig(**{**dataclasses.asdict(defaults.train), **obj.pop("train", {})})
        unlearn = {**defaults.unlearn.to_json(), "C": train.C, **obj.pop("unlearn", {})}
        if "hidden" in obj:
            obj["hidden"] = tuple(obj["hidden"])
        return cls(train=train, unlearn=UnlearnConfig(**unlearn), **obj)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def budget(self) -> Budget:
        return Budget(self.epsilon, self.delta)


@dataclass
class Setup:
    exp: ExperimentConfig
    model: Mlp
    train: Dataset
    test: Dataset
    split: SplitPlan


def load_data(spec: dict) -> Dataset:
    kind = spec.get("kind")
    if kind == "blobs":
        return synth_blobs(
            spec["n"], spec["dim"], spec["classes"], spec["separation"], spec["seed"],
            spec.get("noise", 1.0),
        )
    if kind == "idx":
        return load_mnist_idx(spec["images"], spec["labels"], spec.get("limit"))
    if kind == "csv":
        return load_csv(spec["path"], spec["label_column"], spec.get("num_classes"))
    raise InvalidArgument(f"unknown data kind {kind!r}")


def prepare(exp: ExperimentConfig) -> Setup:
    """Load the data, hold out the test set and draw the unlearning split."""
    full = load_data(exp.data)
    train, test = train_test_split(full, exp.n_test, exp.seed)
    width = train.features.shape[1]
    out = full.num_classes if exp.loss == "softmax-cross-entropy" else (full.num_classes or 1)
    model = Mlp(MlpSpec((width, *exp.hidden, out), exp.activation, exp.loss))
    return Setup(exp, model, train, test, make_split(train, exp.n_u, exp.split_seed))


def approximation_error(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two parameter vectors of the same model."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"parameter vectors differ in shape: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def utility_report(model: Mlp, w, dataset: Dataset, split: SplitPlan, test: Dataset) -> UtilityReport:
    """Micro-F1 on the unlearned, retained and test sets."""
    if not model.spec.is_classifier:
        raise InvalidArgument("utility reports need a classification model")
    parts = {}
    for name, ds, idx in (
        ("unlearn", dataset, split.unlearn_indices),
        ("retain", dataset, split.retained_indices),
        ("test", test, np.arange(len(test))),
    ):
        if len(idx) == 0:
            raise InvalidArgument(f"the {name} subset is empty")
        parts[name] = model.predict_metrics(w, ds.batch(idx))["micro_f1"]
    return UtilityReport(parts["unlearn"], parts["retain"], parts["test"], dataset.hash_hex, test.hash_hex)


def relearn_time(
    model: Mlp,
    w,
    dataset: Dataset,
    split: SplitPlan,
    threshold: float,
    cfg: TrainConfig,
    max_epochs: int,
) -> int | None:
    """Epochs of fine-tuning on the unlearned set until its loss is at most ``threshold``.

    Returns 0 when ``w`` already meets the threshold and ``None`` when
    ``max_epochs`` pass without reaching it. A zero threshold is accepted and
    is never reached under cross-entropy.

    Raises:
        InvalidArgument: if ``threshold`` is negative or not a number.
        NumericalFailure: if fine-tuning produces a non-finite loss.
    """
    if not threshold >= 0:
        raise InvalidArgument(f"threshold must be non-negative, got {threshold}")
    forget = dataset.batch(split.unlearn_indices)
    if model.loss(w, forget) <= threshold:
        return 0
    tune = cfg.replace(epochs=max_epochs)
    for epoch, w_e in enumerate(pgd_epochs(model, dataset, tune, w, split.unlearn_indices), start=1):
        value = model.loss(w_e, forget)
        if not np.isfinite(value):
            raise NumericalFailure(f"relearning diverged at epoch {epoch}")
        if value <= threshold:
            return epoch
    return None


def _train_pair(setup: Setup, C: float) -> tuple[TrainedModel, TrainedModel]:
    cfg = setup.exp.train.replace(C=C)
    return (
        train_pgd(setup.model, setup.train, cfg, trace=False),
        retrain_oracle(setup.model, setup.train, setup.split, cfg),
    )


def ablation_config(base: UnlearnConfig, lam: float) -> UnlearnConfig:
    """``base`` with ``lam`` replaced and ``H`` raised to at least ``lam + base.H``."""
    return base.replace(lam=lam, H=max(base.H, lam + base.H))


def ablation_lambda(
    setup: Setup,
    lambdas,
    pairs: dict | None = None,
    unconstrained_C: float = UNCONSTRAINED_C,
    seed: int | None = None,
) -> list[AblationRow]:
    """Bound and measured error of the Newton estimate across a lambda grid.

    One original/retrained pair is trained with the norm constraint and one
    with an effectively unconstrained ball of radius ``unconstrained_C``;
    both are reused for every lambda. ``H`` follows :func:`ablation_config`.
    The Hessian samples and the bound use the constrained setting's ``C``.
    """
    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise InvalidArgument("lambda grid is empty")
    exp = setup.exp
    if pairs is None:
        pairs = {"constrained": _train_pair(setup, exp.train.C), "unconstrained": _train_pair(setup, unconstrained_C)}
    d = setup.model.dim
    rng = SeededRng(exp.seed if seed is None else seed, "ablation")
    rows = []
    for lam in lambdas:
        cfg = ablation_config(exp.unlearn, lam)
        errs = {}
        for key, (orig, retrained) in pairs.items():
            w_tilde = newton_estimate(setup.model, orig.w, setup.train, setup.split, cfg, rng.child("hessian/0"))
            errs[key] = approximation_error(w_tilde, retrained.w)
        G = max(cfg.G, pairs["constrained"][0].residual_grad_norm)
        rows.append(AblationRow(lam, bound_practical(cfg, d, G), errs["constrained"], errs["unconstrained"]))
    return rows


def budget_sweep(
    setup: Setup,
    epsilons,
    delta: float,
    lambdas=None,
    trained: TrainedModel | None = None,
    repeats: int = NOISE_REPEATS,
    seed: int | None = None,
) -> list[dict]:
    """Test micro-F1 of the certified model across a grid of epsilon values.

    For each lambda the noiseless estimate and its bound are computed once;
    each epsilon then gets its calibrated sigma. Repeat ``r`` uses the noise
    stream ``sweep-noise/r`` at every grid point, so curves differ only
    through sigma and the estimate.
    """
    eps = [float(e) for e in epsilons]
    if not eps or any(b <= a for a, b in zip(eps, eps[1:])):
        raise InvalidArgument("epsilon grid must be nonempty and strictly ascending")
    exp = setup.exp
    lambdas = [exp.unlearn.lam] if lambdas is None else [float(x) for x in lambdas]
    if trained is None:
        trained = train_pgd(setup.model, setup.train, exp.train, trace=False)
    d = setup.model.dim
    rng = SeededRng(exp.seed if seed is None else seed, "sweep")
    test = setup.test.batch()
    rows = []
    for lam in lambdas:
        cfg = ablation_config(exp.unlearn, lam)
        w_tilde = newton_estimate(setup.model, trained.w, setup.train, setup.split, cfg, rng.child("hessian/0"))
        delta_bound = bound_practical(cfg, d, max(cfg.G, trained.residual_grad_norm))
        for e in eps:
            sigma = calibrate(delta_bound, Budget(e, delta), exp.mechanism)
            for r in range(repeats):
                noise = sample_gaussian_vector(d, sigma, rng.child(f"sweep-noise/{r}"))
                rows.append(
                    {
                        "lam": lam,
                        "epsilon": e,
                        "delta": delta,
                        "repeat": r,
                        "delta_bound": delta_bound,
                        "sigma": sigma,
                        "f1_test": setup.model.predict_metrics(w_tilde + noise, test)["micro_f1"],
                    }
                )
    return rows


def sweep_summary(rows: list[dict]) -> dict:
    """Mean F1 per (lambda, epsilon) and the epsilon/F1 Spearman correlation per lambda."""
    out = {}
    for lam in sorted({r["lam"] for r in rows}):
        sub = [r for r in rows if r["lam"] == lam]
        eps = sorted({r["epsilon"] for r in sub})
        means = [float(np.mean([r["f1_test"] for r in sub if r["epsilon"] == e])) for e in eps]
        rho = stats.spearmanr(eps, means).statistic if len(eps) > 1 else float("nan")
        out[lam] = {"epsilon": eps, "mean_f1": means, "spearman": float(rho)}
    return out


def sequential_trace(model: Mlp, result: CertifiedResult, test: Dataset) -> list[dict]:
    """Per-step gradient norm, bound inputs and test micro-F1 of a sequential run."""
    if result.kind != "sequential":
        raise InvalidArgument("sequential_trace needs the result of a sequential run")
    batch = test.batch()
    rows = []
    for step in result.trace:
        row = {k: v for k, v in step.items() if k != "w"}
        row["f1_test"] = model.predict_metrics(step["w"], batch)["micro_f1"]
        rows.append(row)
    return rows


def timed_comparison(setup: Setup, repeats: int = 3) -> dict:
    """Wall-clock of certified unlearning versus retraining on the same split.

    Each side is run ``repeats`` times and the fastest run is reported, which
    damps scheduler noise without favouring either side.
    """
    exp = setup.exp
    trained = train_pgd(setup.model, setup.train, exp.train, trace=False)
    retrain_s = unlearn_s = float("inf")
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        retrained = retrain_oracle(setup.model, setup.train, setup.split, exp.train)
        retrain_s = min(retrain_s, time.perf_counter() - start)
        start = time.perf_counter()
        result = unlearn_single(
            setup.model, trained, setup.train, setup.split, exp.unlearn, exp.budget, exp.mechanism,
            SeededRng(exp.seed),
        )
        unlearn_s = min(unlearn_s, time.perf_counter() - start)
    return {
        "unlearn_seconds": unlearn_s,
        "retrain_seconds": retrain_s,
        "speedup": retrain_s / unlearn_s,
        "approx_err": approximation_error(result.w_tilde, retrained.w),
        "delta_bound": result.delta_bound,
    }


def relearn_comparison(setup: Setup, result: CertifiedResult, trained: TrainedModel) -> dict:
    """Relearn epochs of the original, retrained, noiseless and certified models.

    The threshold is ``relearn_factor`` times the retrained model's loss on
    the unlearned set.
    """
    exp = setup.exp
    retrained = retrain_oracle(setup.model, setup.train, setup.split, exp.train)
    forget = setup.train.batch(setup.split.unlearn_indices)
    threshold = exp.relearn_factor * setup.model.loss(retrained.w, forget)
    out = {"threshold": threshold}
    for name, w in (
        ("original", trained.w),
        ("retrained", retrained.w),
        ("w_tilde", result.w_tilde),
        ("w_minus", result.w_minus),
    ):
        out[name] = relearn_time(
            setup.model, w, setup.train, setup.split, threshold, exp.train, exp.relearn_max_epochs
        )
    return out


def write_rows(rows, path) -> Path:
    """Write dict rows (or dataclass rows) as CSV with a header taken from the first row."""
    rows = [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else r for r in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path
