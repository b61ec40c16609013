"""Checkpoint files: one JSON header line, then raw little-endian tensor blobs.

The header maps each tensor name to dtype (numpy struct string), shape, and
byte offset into the blob section. Save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json

import numpy as np
import torch
from torch import Tensor, nn

_MAGIC = "evseq-checkpoint"
_DTYPES = {"<f4": torch.float32, "<f8": torch.float64, "<i8": torch.int64}


def state_tensors(module: nn.Module) -> dict[str, Tensor]:
    """The module's parameters and persistent buffers, detached, sorted by name."""
    state = module.state_dict()
    return {name: state[name].detach() for name in sorted(state)}


def save_checkpoint(path, tensors: dict[str, Tensor]) -> None:
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        shape = list(arr.shape)
        arr = np.ascontiguousarray(arr)  # note: promotes 0-d to (1,); bytes unchanged
        dtype = arr.dtype.newbyteorder("<")
        arr = arr.astype(dtype, copy=False)
        key = dtype.str
        if key not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {key} for {name!r}")
        raw = arr.tobytes()
        entries[name] = {"dtype": key, "shape": shape, "offset": offset}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format": _MAGIC, "version": 1, "size": offset, "tensors": entries},
        sort_keys=True,
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"corrupt checkpoint header in {path}") from exc
        if header.get("format") != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        payload = fh.read()
    if len(payload) != header["size"]:
        raise ValueError(
            f"truncated checkpoint: expected {header['size']} bytes, got {len(payload)}"
        )
    out = {}
    for name, meta in header["tensors"].items():
        dt = np.dtype(meta["dtype"])
        count = int(np.prod(meta["shape"], dtype=np.int64)) if meta["shape"] else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype=dt, count=count, offset=start)
        arr = arr.reshape(meta["shape"]).copy()
        out[name] = torch.from_numpy(arr)
    return out


def load_into(module: nn.Module, tensors: dict[str, Tensor], prefix: str = "") -> None:
    """Copy checkpoint tensors into a module's parameters and buffers.

    Every parameter/buffer of ``module`` must be present (after adding
    ``prefix`` to its name) with a matching shape.
    """
    own = state_tensors(module)
    missing = [prefix + n for n in own if prefix + n not in tensors]
    if missing:
        raise ValueError(f"checkpoint missing tensors: {missing[:5]}")
    state = {}
    for name, current in own.items():
        incoming = tensors[prefix + name]
        if tuple(incoming.shape) != tuple(current.shape):
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {tuple(incoming.shape)}, "
                f"model {tuple(current.shape)}"
            )
        state[name] = incoming.to(current.dtype)
    module.load_state_dict(state)
