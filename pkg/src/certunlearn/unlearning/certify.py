"""Noisy certified unlearning: single batch and sequential requests."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from certunlearn import __version__
from certunlearn.data import Dataset, SplitPlan, hessian_batch_stream
from certunlearn.errors import CertUnlearnError, IntegrityError, InvalidArgument
from certunlearn.numerics import SeededRng, power_iteration_opnorm, sample_gaussian_vector
from certunlearn.unlearning.bounds import bound_components, bound_practical
from certunlearn.unlearning.calibration import MECHANISMS, calibrate, implied_budget_range
from certunlearn.unlearning.config import Budget, UnlearnConfig, group_budget
from certunlearn.unlearning.lissa import lissa_apply
from certunlearn.unlearning.newton import newton_estimate


@dataclass
class CertifiedResult:
    w_tilde: np.ndarray
    w_minus: np.ndarray
    delta_bound: float
    sigma: float
    budget: Budget
    mechanism: str
    noise_rng: SeededRng
    kind: str = "single"
    certified_budget: Budget | None = None
    trace: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def digest(w: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(w, dtype="<f8").tobytes()).hexdigest()


def certify(
    w_tilde: np.ndarray,
    delta_bound: float,
    budget: Budget,
    mechanism: str,
    rng: SeededRng,
    sigma: float | None = None,
) -> CertifiedResult:
    """Add calibrated Gaussian noise to ``w_tilde``.

    ``sigma`` overrides calibration (fixed-noise, post hoc budgeting).
    """
    if mechanism not in MECHANISMS:
        raise InvalidArgument(f"mechanism must be one of {MECHANISMS}, got {mechanism!r}")
    if sigma is None:
        sigma = calibrate(delta_bound, budget, mechanism)
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    noise = sample_gaussian_vector(len(w_tilde), sigma, rng)
    return CertifiedResult(
        w_tilde=w_tilde,
        w_minus=w_tilde + noise,
        delta_bound=float(delta_bound),
        sigma=float(sigma),
        budget=budget,
        mechanism=mechanism,
        noise_rng=rng,
        certified_budget=budget,
    )


def check_hessian_scale(model, w, batches, lam: float, H: float, rng: SeededRng, iters: int = 30) -> dict:
    """Power-iteration estimates of ``||hessian(batch) + lam I||`` against ``H``.

    Only advisory: the recorded flags never stop a run.
    """
    norms = []
    for i, batch in enumerate(batches):
        norms.append(
            power_iteration_opnorm(
                lambda u, b=batch: model.hvp(w, b, u) + lam * u, len(w), iters, rng.child(str(i))
            )
        )
    worst = max(norms) if norms else 0.0
    return {"sampled_norms": norms, "max_norm": worst, "H": H, "H_ok": worst <= H}


def _hessian_norm(model, w, batch, rng, iters=30) -> float:
    return power_iteration_opnorm(lambda u: model.hvp(w, batch, u), len(w), iters, rng)


def _stage(name, timings, fn, *args, **kwargs):
    start = time.perf_counter()
    try:
        return fn(*args, **kwargs)
    except CertUnlearnError as exc:
        exc.stage = name
        if not exc.args or not str(exc.args[0]).startswith(f"[{name}]"):
            exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise
    finally:
        timings[name] = time.perf_counter() - start


def _base_manifest(model, trained, dataset, cfg, budget, mechanism, rng, sigma_override):
    return {
        "toolkit_version": __version__,
        "model": {
            "layer_dims": list(model.spec.layer_dims),
            "activation": model.spec.activation,
            "loss": model.spec.loss,
            "fingerprint": model.spec.fingerprint(),
        },
        "original_sha256": digest(trained.w),
        "original_residual_grad_norm": trained.residual_grad_norm,
        "dataset_hash": dataset.hash_hex,
        "n": len(dataset),
        "cfg": cfg.to_json(),
        "budget": budget.to_json(),
        "mechanism": mechanism,
        "sigma_override": sigma_override,
        "rng": rng.to_json(),
    }


def _finish(result, manifest, d, G, cfg, sigma_override, timings):
    manifest.update(
        {
            "delta_bound": result.delta_bound,
            "bound_components": bound_components(cfg, d, G),
            "sigma": result.sigma,
            "certified_budget": result.certified_budget.to_json(),
            "noise_stream": result.noise_rng.to_json(),
            "w_tilde_sha256": digest(result.w_tilde),
            "w_minus_sha256": digest(result.w_minus),
            "timings": dict(timings),
        }
    )
    if sigma_override is not None:
        manifest["implied_budgets"] = {
            m: implied_budget_range(result.delta_bound, sigma_override, m) for m in MECHANISMS
        }
    result.manifest = manifest
    return result


def unlearn_single(
    model,
    trained,
    dataset: Dataset,
    split: SplitPlan,
    cfg: UnlearnConfig,
    budget: Budget,
    mechanism: str = "classic",
    rng: SeededRng = SeededRng(0),
    sigma_override: float | None = None,
    diagnostics: bool = False,
) -> CertifiedResult:
    """Certified removal of ``split.unlearn_indices`` from a trained model.

    Samples Hessian minibatches from the retained set, takes the LiSSA Newton
    step, bounds its error with the nonconvergence bound using
    ``G = max(cfg.G, trained.residual_grad_norm)``, calibrates sigma and adds
    the noise. ``rng`` is the root of the ``hessian/0`` and ``noise`` streams.
    """
    if split.n != len(dataset):
        raise InvalidArgument("split was made for a dataset of a different size")
    timings: dict[str, float] = {}
    w_star = trained.w
    d = len(w_star)
    batches = _stage(
        "hessian-sampling", timings, hessian_batch_stream,
        dataset, split, cfg.hessian_batch_size, cfg.s, rng.child("hessian/0"),
    )
    w_tilde = _stage("newton", timings, newton_estimate, model, w_star, dataset, split, cfg, rng, batches)
    G = max(cfg.G, trained.residual_grad_norm)
    delta = _stage("bound", timings, bound_practical, cfg, d, G)
    result = _stage(
        "noise", timings, certify, w_tilde, delta, budget, mechanism, rng.child("noise"), sigma_override
    )
    manifest = _base_manifest(model, trained, dataset, cfg, budget, mechanism, rng, sigma_override)
    n, n_u = len(dataset), split.n_u
    flags = []
    if n_u == n - 1:
        flags.append("n_u = n - 1: a single retained sample")
    manifest.update(
        {
            "kind": "single",
            "unlearn_indices": split.unlearn_indices.tolist(),
            "split_hash": split.split_hash,
            "n_u": n_u,
            "ratio": n_u / (n - n_u),
            "flags": flags,
        }
    )
    timings["unlearn_total"] = sum(timings.values())
    if diagnostics:
        manifest["checks"] = _stage(
            "diagnostics", timings, _diagnostics, model, w_star, dataset, split, cfg, batches, rng
        )
    return _finish(result, manifest, d, G, cfg, sigma_override, timings)


def _diagnostics(model, w, dataset, split, cfg, batches, rng):
    probe = rng.child("diagnostics")
    scale = check_hessian_scale(model, w, batches[:3], cfg.lam, cfg.H, probe.child("scale"))
    hnorm = _hessian_norm(model, w, dataset.batch(split.retained_indices), probe.child("full"))
    return {
        "hessian_scale": scale,
        "hessian_norm_estimate": hnorm,
        "lambda_exceeds_hessian_norm": cfg.lam > hnorm,
    }


def validate_requests(requests, n: int) -> list[np.ndarray]:
    out = []
    owner: dict[int, int] = {}
    for i, req in enumerate(requests):
        idx = np.unique(np.asarray(req, dtype=np.int64))
        if len(idx) != len(np.asarray(req).ravel()):
            raise InvalidArgument(f"request {i} repeats an index")
        if len(idx) == 0:
            raise InvalidArgument(f"request {i} is empty")
        if idx[0] < 0 or idx[-1] >= n:
            raise InvalidArgument(f"request {i} has indices outside [0, {n})")
        for j in idx.tolist():
            if j in owner:
                raise InvalidArgument(f"requests {owner[j]} and {i} overlap (index {j})")
            owner[j] = i
        out.append(idx)
    if len(owner) >= n:
        raise InvalidArgument("requests would remove every training sample")
    return out


def unlearn_sequential(
    model,
    trained,
    dataset: Dataset,
    requests,
    cfg: UnlearnConfig,
    budget: Budget,
    mechanism: str = "classic",
    rng: SeededRng = SeededRng(0),
    group_privacy: bool = False,
    sigma_override: float | None = None,
) -> CertifiedResult:
    """Process ordered, disjoint deletion requests with one terminal noise draw.

    Step ``i`` takes a LiSSA Newton step from the previous estimate using the
    full gradient over the shrunken retained set (the unlearned-set shortcut
    needs a stationary starting point). The trace records, per step, the
    Newton gradient norm ``||grad L(w_{i-1}, D_{r_i})||``, the starting
    residual ``||grad L(w_{i-1}, D_{r_{i-1}})||`` and the bound it implies.
    The noise uses the largest per-step bound.

    With ``group_privacy`` the certificate keeps per-request granularity and
    reports the budget ``(k eps, delta)``; otherwise granularity is the
    cumulative number of removed samples at the original budget.
    """
    n = len(dataset)
    reqs = validate_requests(requests, n)
    d = len(trained.w)
    timings: dict[str, float] = {"hessian-sampling": 0.0, "newton": 0.0}
    floor = cfg.G
    w = trained.w.copy()
    mask = np.ones(n, dtype=bool)
    prev_rows = np.arange(n)
    trace = []
    G_used = max(floor, trained.residual_grad_norm)
    for i, req in enumerate(reqs, start=1):
        mask[req] = False
        rows = np.flatnonzero(mask)
        start = time.perf_counter()
        residual = float(np.linalg.norm(model.grad(w, dataset.batch(prev_rows))))
        g = model.grad(w, dataset.batch(rows))
        step_split = SplitPlan(np.flatnonzero(~mask), rows, None, n)
        batches = hessian_batch_stream(
            dataset, step_split, cfg.hessian_batch_size, cfg.s, rng.child(f"hessian/{i - 1}")
        )
        timings["hessian-sampling"] += time.perf_counter() - start
        start = time.perf_counter()
        w = w - _stage("newton", {}, lissa_apply, model, w, g, batches, cfg.lam, cfg.H)
        timings["newton"] += time.perf_counter() - start
        G_step = max(floor, residual)
        G_used = max(G_used, G_step)
        trace.append(
            {
                "step": i,
                "n_u_step": int(len(req)),
                "n_u_cumulative": int(n - len(rows)),
                "grad_norm": float(np.linalg.norm(g)),
                "start_residual": residual,
                "G_step": G_step,
                "delta_bound_step": bound_practical(cfg, d, G_step),
                "w": w.copy(),
            }
        )
        prev_rows = rows
    delta = _stage("bound", timings, bound_practical, cfg, d, G_used)
    result = _stage(
        "noise", timings, certify, w, delta, budget, mechanism, rng.child("noise"), sigma_override
    )
    k = len(reqs)
    result.kind = "sequential"
    result.trace = trace
    if group_privacy and k > 0:
        result.certified_budget = group_budget(budget, k)
    manifest = _base_manifest(model, trained, dataset, cfg, budget, mechanism, rng, sigma_override)
    manifest.update(
        {
            "kind": "sequential",
            "requests": [r.tolist() for r in reqs],
            "k": k,
            "group_privacy": group_privacy,
            "granularity": (
                max((len(r) for r in reqs), default=0) if group_privacy else int(n - mask.sum())
            ),
            "trace": [{key: v for key, v in row.items() if key != "w"} for row in trace],
        }
    )
    timings["unlearn_total"] = sum(timings.values())
    return _finish(result, manifest, d, G_used, cfg, sigma_override, timings)


def replay(manifest: dict, model, trained, dataset: Dataset) -> CertifiedResult:
    """Re-run a certificate from its manifest and check the noisy output bit for bit."""
    if dataset.hash_hex != manifest["dataset_hash"]:
        raise IntegrityError("dataset hash does not match the manifest")
    if digest(trained.w) != manifest["original_sha256"]:
        raise IntegrityError("original model does not match the manifest")
    cfg = UnlearnConfig(**manifest["cfg"])
    budget = Budget(**manifest["budget"])
    rng = SeededRng(**manifest["rng"])
    if manifest["kind"] == "single":
        split = SplitPlan.from_unlearn(len(dataset), manifest["unlearn_indices"])
        out = unlearn_single(
            model, trained, dataset, split, cfg, budget, manifest["mechanism"], rng,
            manifest["sigma_override"],
        )
    else:
        out = unlearn_sequential(
            model, trained, dataset, manifest["requests"], cfg, budget, manifest["mechanism"],
            rng, manifest["group_privacy"], manifest["sigma_override"],
        )
    if digest(out.w_minus) != manifest["w_minus_sha256"]:
        raise IntegrityError("replayed output differs from the recorded certificate")
    for key in ("sigma", "delta_bound"):
        if key in manifest and float(manifest[key]) != getattr(out, key):
            raise IntegrityError(f"recorded {key} {manifest[key]!r} differs from the replayed {getattr(out, key)!r}")
    return out
