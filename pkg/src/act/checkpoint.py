"""Model checkpoint file format (ACTCKPT version 1).

Layout, in order:

* 8-byte magic ``ACTCKPT1``
* 8-byte little-endian unsigned header length
* UTF-8 JSON header: format version, every model-config field, optional
  class names, optional creation seed, byte order (always little), dtype
  (always float32), and the canonical parameter order
* all parameter tensors as raw little-endian float32, row-major, concatenated
  in canonical order: input projection, class token, positional table, then
  per layer query/key/value/output projections, both feed-forward matrices
  and both layer norms, then the classification head

The header carries the parameter order explicitly so a reader never has to
re-derive it.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ActParams, ModelConfig, parameter_shapes

_MAGIC = b"ACTCKPT1"
_VERSION = 1


def save_checkpoint(path, params: ActParams, class_names: list[str] | None = None,
                    seed: int | None = None) -> None:
    """Write parameters and their config to ``path``; always float32."""
    cfg = params.config
    if class_names is not None and len(class_names) != cfg.num_classes:
        raise DataError(
            f"{len(class_names)} class names for a {cfg.num_classes}-class model"
        )
    order = list(parameter_shapes(cfg))
    header = {
        "format": "ACTCKPT",
        "version": _VERSION,
        "config": dataclasses.asdict(cfg),
        "class_names": class_names,
        "seed": seed,
        "byte_order": "little",
        "dtype": "float32",
        "param_order": order,
    }
    blob = json.dumps(header, indent=1).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in order:
            fh.write(np.ascontiguousarray(
                params.arrays[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ActParams, dict]:
    """Read an ACTCKPT file back into parameters plus its header metadata."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(_MAGIC) + 8 or raw[: len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path} is not a model checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + header_len > len(raw):
        raise DataError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path} has a corrupt header: {exc}") from exc
    version = header.get("version")
    if version != _VERSION:
        raise DataError(f"unsupported checkpoint version {version!r}, expected {_VERSION}")
    cfg = ModelConfig(**header["config"])
    shapes = parameter_shapes(cfg)
    expected_order = list(shapes)
    if header.get("param_order") != expected_order:
        raise DataError(f"{path} parameter order does not match its config")
    blob = raw[16 + header_len:]
    total = sum(int(np.prod(s)) for s in shapes.values())
    if len(blob) != total * 4:
        raise DataError(
            f"{path} parameter payload is {len(blob)} bytes, expected {total * 4}"
        )
    flat = np.frombuffer(blob, dtype="<f4")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in shapes.items():
        n = int(np.prod(shape))
        arrays[name] = flat[offset:offset + n].reshape(shape).astype(np.float32)
        offset += n
    meta = {
        "class_names": header.get("class_names"),
        "seed": header.get("seed"),
        "config": cfg,
    }
    return ActParams(cfg, arrays), meta
