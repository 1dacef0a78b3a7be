"""Command-line front end: manifest-driven train / unlearn / evaluate runs.

Every command writes ``<out-dir>/manifest.json`` atomically, on success and on
failure. Exit codes: 0 success, 2 usage or schema error, 3 integrity error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
import traceback
from pathlib import Path

import jsonschema
import numpy as np

from certunlearn import __version__
from certunlearn.checkpoint import atomic_write_json, load_checkpoint, save_checkpoint
from certunlearn.data import SplitPlan
from certunlearn.errors import (
    CapabilityExceeded,
    CertUnlearnError,
    FormatError,
    IntegrityError,
    InvalidArgument,
    NumericalFailure,
)
from certunlearn.evaluation import (
    ABLATION_LAMBDAS,
    SWEEP_EPSILONS,
    SWEEP_LAMBDAS,
    ExperimentConfig,
    ablation_lambda,
    budget_sweep,
    prepare,
    relearn_time,
    sequential_trace,
    sweep_summary,
    utility_report,
    write_rows,
)
from certunlearn.numerics import SeededRng
from certunlearn.training import TrainedModel, retrain_oracle, train_pgd, write_loss_trace
from certunlearn.unlearning import MECHANISMS, Budget, replay, unlearn_sequential, unlearn_single

EXIT_OK, EXIT_USAGE, EXIT_INTEGRITY, EXIT_NUMERICAL = 0, 2, 3, 4

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer", "minimum": 0}
_POSINT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "certunlearn experiment config",
    "type": "object",
    "required": ["data", "train"],
    "additionalProperties": False,
    "properties": {
        "data": {
            "type": "object",
            "required": ["kind"],
            "oneOf": [
                {
                    "properties": {
                        "kind": {"const": "blobs"},
                        "n": _POSINT, "dim": _POSINT, "classes": _POSINT,
                        "separation": _NONNEG, "seed": _INT, "noise": _NONNEG,
                    },
                    "required": ["kind", "n", "dim", "classes", "separation", "seed"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "idx"},
                        "images": {"type": "string"}, "labels": {"type": "string"}, "limit": _POSINT,
                    },
                    "required": ["kind", "images", "labels"],
                    "additionalProperties": False,
                },
                {
                    "properties": {
                        "kind": {"const": "csv"},
                        "path": {"type": "string"}, "label_column": {"type": "string"},
                        "num_classes": _POSINT,
                    },
                    "required": ["kind", "path", "label_column"],
                    "additionalProperties": False,
                },
            ],
        },
        "n_test": _POSINT,
        "hidden": {"type": "array", "items": _POSINT},
        "activation": {"enum": ["tanh", "softplus"]},
        "loss": {"enum": ["softmax-cross-entropy", "mean-squared-error"]},
        "train": {
            "type": "object",
            "required": ["C"],
            "additionalProperties": False,
            "properties": {
                "learning_rate": _POS, "epochs": _INT, "batch_size": _POSINT,
                "weight_decay": _NONNEG, "C": _POS, "seed": _INT,
                "optimizer": {"enum": ["pgd-momentum", "pgd-plain"]},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "unlearn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lam": _NONNEG, "H": _POS, "s": _INT, "C": _POS, "L": _NONNEG, "M": _NONNEG,
                "lambda_min": _NUM, "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "G": _NONNEG, "hessian_batch_size": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "n_u": _POSINT,
        "split_seed": _INT,
        "seed": _INT,
        "epsilon": _POS,
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "mechanism": {"enum": list(MECHANISMS)},
        "relearn_factor": _POS,
        "relearn_max_epochs": _POSINT,
    },
}


class UsageError(CertUnlearnError):
    pass


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def validate_config(obj) -> None:
    """Raise :class:`UsageError` listing every schema violation with its JSON pointer."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_pointer(e.absolute_path)}: {e.message}" for e in errors]
        raise UsageError("config does not match the schema:\n  " + "\n  ".join(lines))


def load_config(path) -> tuple[ExperimentConfig, dict]:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    validate_config(obj)
    if "unlearn" in obj and "C" in obj["unlearn"] and obj["unlearn"]["C"] != obj["train"]["C"]:
        raise UsageError("/unlearn/C: must equal /train/C")
    return ExperimentConfig.from_json(obj), obj


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json_input(path, what: str):
    p = Path(path)
    if not p.exists():
        raise IntegrityError(f"{what} file {path} not found")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def load_split(path, n: int) -> SplitPlan:
    """Split file: ``{"unlearn_indices": [...], "n": n}`` (``n`` optional)."""
    obj = _read_json_input(path, "split")
    if isinstance(obj, list):
        obj = {"unlearn_indices": obj}
    if not isinstance(obj, dict) or "unlearn_indices" not in obj:
        raise FormatError(f"{path}: expected an object with 'unlearn_indices'")
    if "n" in obj and obj["n"] != n:
        raise IntegrityError(f"split was written for n={obj['n']}, the training set has n={n}")
    return SplitPlan.from_unlearn(n, obj["unlearn_indices"], obj.get("seed"))


def load_requests(path) -> list[list[int]]:
    """Requests file: a list of index lists, or ``{"requests": [...]}``."""
    obj = _read_json_input(path, "requests")
    reqs = obj.get("requests", []) if isinstance(obj, dict) else obj
    if not isinstance(reqs, list) or not all(isinstance(r, list) for r in reqs):
        raise FormatError(f"{path}: requests must be a list of index lists")
    return reqs


class Run:
    """Collects the run manifest and stage timings for one command."""

    def __init__(self, command: str, args: argparse.Namespace, argv: list[str]):
        self.out_dir = Path(args.out_dir)
        self.manifest = {
            "command": command,
            "argv": argv,
            "toolkit_version": __version__,
            "status": "running",
            "inputs": {},
            "outputs": {},
            "seeds": {},
            "timings": {},
        }
        self.stage = "setup"

    def time(self, stage: str, fn, *a, **kw):
        self.stage = stage
        start = time.perf_counter()
        try:
            return fn(*a, **kw)
        finally:
            self.manifest["timings"][stage] = time.perf_counter() - start

    def output(self, key: str, path: Path) -> Path:
        self.manifest["outputs"][key] = str(path)
        return path

    def write(self) -> Path:
        path = self.out_dir / "manifest.json"
        atomic_write_json(path, _jsonable(self.manifest))
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _setup(run: Run, args):
    exp, raw = load_config(args.config)
    run.manifest["config"] = raw
    run.manifest["inputs"]["config_sha256"] = _sha256_file(args.config)
    setup = run.time("data", prepare, exp)
    run.manifest["inputs"]["dataset_hash"] = setup.train.hash_hex
    run.manifest["inputs"]["test_hash"] = setup.test.hash_hex
    return exp, setup


def _load_trained(run: Run, path, setup) -> TrainedModel:
    if not Path(path).exists():
        raise IntegrityError(f"checkpoint {path} not found")
    trained = load_checkpoint(path)
    run.manifest["inputs"]["checkpoint_sha256"] = _sha256_file(path)
    if trained.spec != setup.model.spec:
        raise IntegrityError("checkpoint architecture does not match the config")
    if trained.dataset_hash != setup.train.hash_hex:
        raise IntegrityError(
            f"checkpoint was trained on dataset {trained.dataset_hash}, "
            f"the config yields {setup.train.hash_hex}"
        )
    return trained


def _split(run: Run, args, setup) -> SplitPlan:
    if args.split is None:
        split = setup.split
    else:
        split = load_split(args.split, len(setup.train))
        run.manifest["inputs"]["split_sha256"] = _sha256_file(args.split)
    run.manifest["inputs"]["split_hash"] = split.split_hash
    return split


def _budget(exp: ExperimentConfig, args) -> Budget:
    eps = exp.epsilon if args.budget_eps is None else args.budget_eps
    delta = exp.delta if args.budget_delta is None else args.budget_delta
    return Budget(eps, delta)


def _save_certified(run: Run, setup, result, split_rows, name: str):
    retained = setup.train.batch(split_rows)
    out = TrainedModel(
        w=result.w_minus,
        residual_grad_norm=float(np.linalg.norm(setup.model.grad(result.w_minus, retained))),
        loss_trace=[],
        C=setup.exp.train.C,
        seed=setup.exp.train.seed,
        spec=setup.model.spec,
        dataset_hash=setup.train.hash_hex,
        epochs=0,
        extra={"certificate": "certificate.json", "kind": result.kind},
    )
    ckpt = run.output("checkpoint", run.out_dir / name)
    save_checkpoint(ckpt, out)
    cert = run.output("certificate", run.out_dir / "certificate.json")
    atomic_write_json(cert, _jsonable(result.manifest))
    run.manifest["certificate"] = {
        "delta_bound": result.delta_bound,
        "sigma": result.sigma,
        "mechanism": result.mechanism,
        "budget": result.budget.to_json(),
        "certified_budget": result.certified_budget.to_json(),
    }


def cmd_train(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    cfg = exp.train if args.seed is None else exp.train.replace(seed=args.seed)
    run.manifest["seeds"]["train"] = cfg.seed
    if args.split is None:
        trained = run.time("train", train_pgd, setup.model, setup.train, cfg)
        name = "model.cuw"
    else:
        split = _split(run, args, setup)
        trained = run.time("train", retrain_oracle, setup.model, setup.train, split, cfg)
        name = "retrained.cuw"
    save_checkpoint(run.output("checkpoint", run.out_dir / name), trained)
    write_loss_trace(trained, run.output("loss_trace", run.out_dir / "loss_trace.csv"))
    run.manifest["result"] = {
        "final_loss": trained.loss_trace[-1],
        "residual_grad_norm": trained.residual_grad_norm,
        "param_norm": float(np.linalg.norm(trained.w)),
    }


def cmd_unlearn(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    trained = _load_trained(run, args.checkpoint, setup)
    split = _split(run, args, setup)
    seed = exp.seed if args.seed is None else args.seed
    run.manifest["seeds"]["root"] = seed
    result = run.time(
        "unlearn", unlearn_single, setup.model, trained, setup.train, split, exp.unlearn,
        _budget(exp, args), args.mechanism or exp.mechanism, SeededRng(seed), args.sigma_override,
        diagnostics=args.diagnostics,
    )
    _save_certified(run, setup, result, split.retained_indices, "unlearned.cuw")


def cmd_sequential(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    trained = _load_trained(run, args.checkpoint, setup)
    reqs = load_requests(args.requests)
    run.manifest["inputs"]["requests_sha256"] = _sha256_file(args.requests)
    seed = exp.seed if args.seed is None else args.seed
    run.manifest["seeds"]["root"] = seed
    result = run.time(
        "unlearn", unlearn_sequential, setup.model, trained, setup.train, reqs, exp.unlearn,
        _budget(exp, args), args.mechanism or exp.mechanism, SeededRng(seed), args.group_privacy,
        args.sigma_override,
    )
    removed = np.zeros(len(setup.train), dtype=bool)
    for r in reqs:
        removed[np.asarray(r, dtype=np.int64)] = True
    _save_certified(run, setup, result, np.flatnonzero(~removed), "unlearned.cuw")
    if result.trace:
        rows = run.time("trace", sequential_trace, setup.model, result, setup.test)
        write_rows(rows, run.output("trace", run.out_dir / f"trace-{exp.config_hash()}.csv"))


def cmd_evaluate(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    split = _split(run, args, setup)
    rows = []
    for path in args.checkpoint:
        trained = _load_trained(run, path, setup)
        report = run.time("utility", utility_report, setup.model, trained.w, setup.train, split, setup.test)
        row = {"checkpoint": str(path), **report.__dict__}
        if args.relearn_threshold is not None:
            row["relearn_epochs"] = run.time(
                "relearn", relearn_time, setup.model, trained.w, setup.train, split,
                args.relearn_threshold, exp.train, exp.relearn_max_epochs,
            )
        rows.append(row)
    write_rows(rows, run.output("utility", run.out_dir / f"utility-{exp.config_hash()}.csv"))
    run.manifest["result"] = rows


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_ablate(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    run.manifest["seeds"]["root"] = exp.seed if args.seed is None else args.seed
    rows = run.time("ablate", ablation_lambda, setup, args.lambdas, seed=args.seed)
    write_rows(rows, run.output("ablation", run.out_dir / f"ablation-{exp.config_hash()}.csv"))
    run.manifest["result"] = [r.__dict__ for r in rows]


def cmd_sweep(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    trained = None if args.checkpoint is None else _load_trained(run, args.checkpoint, setup)
    delta = exp.delta if args.budget_delta is None else args.budget_delta
    run.manifest["seeds"]["root"] = exp.seed if args.seed is None else args.seed
    rows = run.time(
        "sweep", budget_sweep, setup, args.epsilons, delta, args.lambdas, trained, seed=args.seed
    )
    write_rows(rows, run.output("sweep", run.out_dir / f"sweep-{exp.config_hash()}.csv"))
    summary = sweep_summary(rows)
    path = run.output("summary", run.out_dir / f"sweep-{exp.config_hash()}.json")
    atomic_write_json(path, _jsonable(summary))
    run.manifest["result"] = summary


def cmd_replay(run: Run, args) -> None:
    exp, setup = _setup(run, args)
    trained = _load_trained(run, args.checkpoint, setup)
    cert = _read_json_input(args.certificate, "certificate")
    out = run.time("replay", replay, cert, setup.model, trained, setup.train)
    run.manifest["result"] = {"w_minus_sha256": cert["w_minus_sha256"], "replayed": True, "sigma": out.sigma}


COMMANDS = {
    "train": cmd_train,
    "unlearn": cmd_unlearn,
    "sequential": cmd_sequential,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="certunlearn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out-dir", required=True, help="directory for outputs and manifest.json")
        p.add_argument("--seed", type=int, default=None, help="root seed override")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="CUW1 checkpoint")

    def budget(p):
        p.add_argument("--budget-eps", type=float, default=None)
        p.add_argument("--budget-delta", type=float, default=None)
        p.add_argument("--mechanism", choices=MECHANISMS, default=None)
        p.add_argument("--sigma-override", type=float, default=None,
                       help="fix the noise scale and record the implied budgets")

    p = sub.add_parser("train", help="train a norm-constrained model (or retrain without a split)")
    common(p, checkpoint=False)
    p.add_argument("--split", default=None, help="retrain on the rows a split retains")

    p = sub.add_parser("unlearn", help="single-batch certified unlearning")
    common(p)
    budget(p)
    p.add_argument("--split", default=None, help="split file; defaults to the config's random split")
    p.add_argument("--diagnostics", action="store_true", help="record Hessian-scale checks")

    p = sub.add_parser("sequential", help="sequential certified unlearning")
    common(p)
    budget(p)
    p.add_argument("--requests", required=True, help="JSON list of disjoint index lists")
    p.add_argument("--group-privacy", action="store_true", help="certify (k eps, delta) per request")

    p = sub.add_parser("evaluate", help="utility report (and relearn time) of checkpoints")
    common(p, checkpoint=False)
    p.add_argument("--checkpoint", required=True, action="append", help="repeatable")
    p.add_argument("--split", default=None)
    p.add_argument("--relearn-threshold", type=float, default=None)

    p = sub.add_parser("ablate", help="lambda ablation with and without the norm constraint")
    common(p, checkpoint=False)
    p.add_argument("--lambdas", type=_floats, default=list(ABLATION_LAMBDAS))

    p = sub.add_parser("sweep", help="utility across certification budgets")
    common(p, checkpoint=False)
    p.add_argument("--checkpoint", default=None, help="trained model; trains one when omitted")
    p.add_argument("--epsilons", type=_floats, default=list(SWEEP_EPSILONS))
    p.add_argument("--lambdas", type=_floats, default=list(SWEEP_LAMBDAS))
    p.add_argument("--budget-delta", type=float, default=None)

    p = sub.add_parser("replay", help="re-derive a certificate and check it bit for bit")
    common(p)
    p.add_argument("--certificate", required=True)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, IntegrityError):
        return EXIT_INTEGRITY
    if isinstance(exc, NumericalFailure):
        return EXIT_NUMERICAL
    if isinstance(exc, (UsageError, InvalidArgument, FormatError, CapabilityExceeded)):
        return EXIT_USAGE
    return 1


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    run = Run(args.command, args, argv)
    try:
        COMMANDS[args.command](run, args)
    except CertUnlearnError as exc:
        run.manifest["status"] = "error"
        run.manifest["error"] = {
            "type": type(exc).__name__,
            "stage": getattr(exc, "stage", None) or run.stage,
            "message": str(exc),
        }
        run.write()
        print(f"certunlearn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except Exception as exc:
        run.manifest["status"] = "error"
        run.manifest["error"] = {
            "type": type(exc).__name__,
            "stage": run.stage,
            "message": str(exc),
            "traceback": traceback.format_exc(),
        }
        run.write()
        raise
    run.manifest["status"] = "ok"
    path = run.write()
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
