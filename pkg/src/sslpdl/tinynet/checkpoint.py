"""Checkpoint file format ("SSLC").

Layout: magic ``SSLC``, version (uint32 LE), uint32 JSON length, a JSON
header (arch config, optimizer config, step, seed, parameter manifest),
then flat float64 arrays in declaration order: all parameters, all
first moments, all second moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .model import ArchConfig, TinyNet
from .optim import OptimConfig, TrainState

MAGIC = b"SSLC"
VERSION = 1


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    model = state.model
    header = {
        "arch": model.arch.to_dict(),
        "optimizer": asdict(state.opt),
        "step": state.step_count,
        "seed": state.seed,
        "params": [[n, list(p.data.shape)] for n, p in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for group in (
            (p.data for p in model.params.values()),
            (state.m[n] for n in model.params),
            (state.v[n] for n in model.params),
        ):
            for arr in group:
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path, arch: ArchConfig | None = None) -> TrainState:
    """Rebuild a TrainState; errors if ``arch`` is given and disagrees."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + blob_len].decode("utf-8"))
    stored_arch = ArchConfig.from_dict(header["arch"])
    if arch is not None and arch != stored_arch:
        raise CheckpointError(
            f"{path}: checkpoint arch {stored_arch} does not match requested {arch}"
        )
    opt = OptimConfig(**header["optimizer"])
    model = TinyNet(stored_arch, header["seed"])
    manifest = header["params"]
    if [n for n, _ in manifest] != list(model.params.keys()):
        raise CheckpointError(f"{path}: parameter manifest mismatch")

    offset = 12 + blob_len
    groups = []
    for _ in range(3):
        arrays = {}
        for name, shape in manifest:
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(raw):
                raise CheckpointError(f"{path}: truncated array data")
            arrays[name] = np.frombuffer(
                raw, dtype="<f8", count=count, offset=offset
            ).reshape(shape)
            offset = end
        groups.append(arrays)
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")

    model.load_param_arrays(groups[0])
    state = TrainState(model, opt, header["seed"])
    state.step_count = header["step"]
    dtype = next(iter(model.params.values())).data.dtype
    state.m = {n: groups[1][n].astype(dtype) for n, _ in manifest}
    state.v = {n: groups[2][n].astype(dtype) for n, _ in manifest}
    return state
