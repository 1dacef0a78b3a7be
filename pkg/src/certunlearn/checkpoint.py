"""CUW1 binary checkpoints with a JSON sidecar.

Layout (little endian)::

    b"CUW1" | version u16 | layer count u16 | layer dims u32 * count
            | activation u8 | loss u8 | d float64 values

The sidecar ``<path>.json`` stores ``C``, ``residual_grad_norm``, ``seed``,
``dataset_hash`` and ``epochs``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from certunlearn.errors import FormatError
from certunlearn.model import ACTIVATIONS, LOSSES, MlpSpec
from certunlearn.training import TrainedModel

MAGIC = b"CUW1"
VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def atomic_write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def encode_params(spec: MlpSpec, w: np.ndarray) -> bytes:
    w = np.asarray(w, dtype="<f8")
    if w.shape != (spec.num_params,):
        raise FormatError(f"expected {spec.num_params} parameters, got {w.shape}")
    dims = spec.layer_dims
    head = MAGIC + struct.pack("<HH", VERSION, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    head += struct.pack("<BB", ACTIVATIONS.index(spec.activation), LOSSES.index(spec.loss))
    return head + w.tobytes()


def decode_params(raw: bytes) -> tuple[MlpSpec, np.ndarray]:
    if raw[:4] != MAGIC:
        raise FormatError("not a CUW1 checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<HH", raw, 4)
        if version != VERSION:
            raise FormatError(f"unsupported CUW1 version {version}")
        dims = struct.unpack_from(f"<{count}I", raw, 8)
        off = 8 + 4 * count
        act, loss = struct.unpack_from("<BB", raw, off)
        spec = MlpSpec(tuple(dims), ACTIVATIONS[act], LOSSES[loss])
    except (struct.error, IndexError) as exc:
        raise FormatError(f"corrupt CUW1 header: {exc}") from None
    body = raw[off + 2 :]
    if len(body) != 8 * spec.num_params:
        raise FormatError(
            f"CUW1 payload holds {len(body)} bytes, expected {8 * spec.num_params}"
        )
    return spec, np.frombuffer(body, dtype="<f8").astype(np.float64)


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(path, trained: TrainedModel) -> None:
    atomic_write_bytes(path, encode_params(trained.spec, trained.w))
    atomic_write_json(
        sidecar_path(path),
        {
            "C": trained.C,
            "residual_grad_norm": trained.residual_grad_norm,
            "seed": trained.seed,
            "dataset_hash": trained.dataset_hash,
            "epochs": trained.epochs,
            **trained.extra,
        },
    )


def load_checkpoint(path) -> TrainedModel:
    spec, w = decode_params(Path(path).read_bytes())
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing checkpoint sidecar {side}")
    meta = json.loads(side.read_text())
    known = {"C", "residual_grad_norm", "seed", "dataset_hash", "epochs"}
    return TrainedModel(
        w=w,
        residual_grad_norm=float(meta["residual_grad_norm"]),
        loss_trace=[],
        C=float(meta["C"]),
        seed=int(meta["seed"]),
        spec=spec,
        dataset_hash=meta.get("dataset_hash"),
        epochs=int(meta.get("epochs", 0)),
        extra={k: v for k, v in meta.items() if k not in known},
    )
