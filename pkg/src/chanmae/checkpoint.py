"""Model checkpoints: magic "CSIM", a JSON header (config + metadata), then
named float64 tensors in a fixed order. Round-trips are bit-exact."""

from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import Parameter
from .errors import CheckpointFormatError
from .network import ModelConfig

MAGIC = b"CSIM"
FORMAT_VERSION = 1


def save_checkpoint(
    path,
    config: ModelConfig,
    named_params: dict[str, Parameter],
    meta: dict | None = None,
) -> None:
    header = json.dumps(
        {"config": config.to_dict(), "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(named_params)))
        for name, param in named_params.items():
            blob = name.encode("utf-8")
            arr = np.ascontiguousarray(param.data, dtype="<f8")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointFormatError(f"{path}: file ends inside {what}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise CheckpointFormatError(f"{path}: not a CSIM checkpoint")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: checkpoint version {version}, expected {FORMAT_VERSION}")
    (hlen,) = struct.unpack("<I", take(4, "header length"))
    try:
        header = json.loads(take(hlen, "header").decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        meta = header.get("meta", {})
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointFormatError(f"{path}: bad checkpoint header: {e}") from e
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4, "tensor name length"))
        name = take(nlen, "tensor name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "tensor rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "tensor shape"))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * size, f"tensor {name} data"), dtype="<f8").reshape(shape)
        arrays[name] = data.astype(np.float64)
    if pos != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - pos} unexpected trailing bytes")
    return config, arrays, meta


def load_into_params(params: dict[str, Parameter], arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into an existing parameter set by name."""
    missing = [n for n in params if n not in arrays]
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing tensors: {missing}")
    for name, param in params.items():
        if arrays[name].shape != param.data.shape:
            raise CheckpointFormatError(
                f"tensor {name}: checkpoint shape {arrays[name].shape} != expected {param.data.shape}"
            )
        np.copyto(param.data, arrays[name])
