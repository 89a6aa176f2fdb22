"""Versioned binary container for trained network weights.

Layout: magic ``EDCK``, one version byte, a little-endian u32 length
followed by a JSON header (architecture, normalization rule, training
metadata, parameter manifest), the weight arrays as little-endian
64-bit floats in declaration order, and a trailing SHA-256 of
everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import (
    ChecksumError,
    FileFormatError,
    ShapeMismatchError,
    UnsupportedVersionError,
)
from .network import NetworkSpec

MAGIC = b"EDCK"
VERSION = 1

# Per-record input scaling applied before the forward pass.
NORMALIZATION_RMS_WINDOW = "rms_window_v1"


@dataclass
class Checkpoint:
    """Network weights plus everything needed to reproduce inference."""

    spec: NetworkSpec
    params: dict                      # name -> float64 ndarray
    normalization: str = NORMALIZATION_RMS_WINDOW
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.spec.param_shapes()
        if set(self.params) != set(expected):
            raise ShapeMismatchError("checkpoint parameter names do not "
                                     "match the network spec")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeMismatchError(
                    f"{name} has shape {self.params[name].shape}, "
                    f"expected {shape}")


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    spec = checkpoint.spec
    header = {
        "spec": {
            "input_rows": spec.input_rows,
            "input_time": spec.input_time,
            "conv_stages": spec.conv_stages,
            "feature_maps": spec.feature_maps,
            "kernel_rows": spec.kernel_rows,
            "kernel_time": spec.kernel_time,
            "dense_widths": list(spec.dense_widths),
        },
        "normalization": checkpoint.normalization,
        "metadata": checkpoint.metadata,
        "params": [{"name": n, "shape": list(s)}
                   for n, s in spec.param_shapes().items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    for name in spec.param_shapes():
        out += np.ascontiguousarray(checkpoint.params[name],
                                    dtype="<f8").tobytes()
    out += hashlib.sha256(out).digest()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 1 + 4 + 32:
        raise FileFormatError(f"{path}: truncated checkpoint")
    if raw[:4] != MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise UnsupportedVersionError(
            f"{path}: version {raw[4]}, expected {VERSION}")
    digest = raw[-32:]
    body = raw[:-32]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch")
    (header_len,) = struct.unpack_from("<I", raw, 5)
    header_end = 9 + header_len
    try:
        header = json.loads(raw[9:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: unreadable header: {exc}") from exc
    spec_dict = dict(header["spec"])
    spec_dict["dense_widths"] = tuple(spec_dict["dense_widths"])
    spec = NetworkSpec(**spec_dict)

    params = {}
    offset = header_end
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        end = offset + count * 8
        if end > len(body):
            raise FileFormatError(f"{path}: weight payload truncated")
        params[entry["name"]] = np.frombuffer(
            body, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(body):
        raise FileFormatError(f"{path}: trailing bytes after weights")
    return Checkpoint(spec=spec, params=params,
                      normalization=header["normalization"],
                      metadata=header["metadata"])


def export_weights_text(checkpoint: Checkpoint, path) -> None:
    """Debug dump: one line per tensor name/shape, then its values."""
    lines = []
    for name in checkpoint.spec.param_shapes():
        arr = checkpoint.params[name]
        lines.append(f"# {name} shape={list(arr.shape)}")
        lines.extend(f"{v:.17g}" for v in arr.ravel())
    Path(path).write_text("\n".join(lines) + "\n")
