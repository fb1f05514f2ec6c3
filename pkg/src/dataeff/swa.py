"""Checkpoint averaging: elementwise means over named tensor maps, plus a
neutral on-disk container (binary header + raw float64 payload, with a pure
JSON variant for small fixtures).

A checkpoint is a dict mapping tensor names to float64 numpy arrays.
"""

from __future__ import annotations

import json
import struct
from math import prod
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

Checkpoint = dict[str, np.ndarray]

_MAGIC = b"CKPT\x00"


def _validate_checkpoint(ck: Checkpoint, label: str = "checkpoint") -> Checkpoint:
    if not isinstance(ck, dict):
        raise ValidationError(f"{label} must be a dict of named tensors")
    for name, arr in ck.items():
        if not isinstance(arr, np.ndarray):
            raise ValidationError(f"{label}: tensor {name!r} is not an array")
    return ck


def _pairwise_sum(arrays: list[np.ndarray]) -> np.ndarray:
    # full binary-tree reduction: bounds rounding error and keeps means of
    # power-of-two many equal summands exact
    if len(arrays) == 1:
        return arrays[0].copy()
    mid = len(arrays) // 2
    return _pairwise_sum(arrays[:mid]) + _pairwise_sum(arrays[mid:])


def average_checkpoints(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Elementwise mean of same-shaped checkpoints. Per element, the summands
    are put in sorted value order before a pairwise reduction, so the result
    is exactly permutation-invariant in the checkpoint list."""
    if not checkpoints:
        raise ValidationError("need at least one checkpoint to average")
    for i, ck in enumerate(checkpoints):
        _validate_checkpoint(ck, label=f"checkpoint {i}")
    names = list(checkpoints[0])
    key_set = set(names)
    for i, ck in enumerate(checkpoints[1:], start=1):
        missing = key_set - set(ck)
        extra = set(ck) - key_set
        if missing:
            raise ValidationError(f"checkpoint {i} is missing tensor {sorted(missing)[0]!r}")
        if extra:
            raise ValidationError(f"checkpoint {i} has unexpected tensor {sorted(extra)[0]!r}")
    out: Checkpoint = {}
    for name in names:
        shape = checkpoints[0][name].shape
        for i, ck in enumerate(checkpoints[1:], start=1):
            if ck[name].shape != shape:
                raise ValidationError(f"tensor {name!r}: shape {ck[name].shape} in "
                                      f"checkpoint {i} does not match {shape}")
        stack = np.sort(np.stack([np.asarray(ck[name], dtype=np.float64)
                                  for ck in checkpoints]), axis=0)
        total = _pairwise_sum([stack[k] for k in range(stack.shape[0])])
        out[name] = total / len(checkpoints)
    return out


def save_checkpoint(ck: Checkpoint, path, fmt: str | None = None) -> None:
    """Write a checkpoint; fmt is 'binary' or 'json' (default: json when the
    path ends in .json, binary otherwise)."""
    _validate_checkpoint(ck)
    path = Path(path)
    if fmt is None:
        fmt = "json" if path.suffix == ".json" else "binary"
    if fmt not in ("binary", "json"):
        raise ValidationError(f"unknown checkpoint format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.asarray(arr, dtype=np.float64) for name, arr in ck.items()}
    if fmt == "json":
        obj = {"tensors": {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                           for name, arr in arrays.items()}}
        path.write_text(json.dumps(obj, indent=2))
        return
    header: dict[str, dict] = {"tensors": {}}
    offset = 0
    payload = []
    for name, arr in arrays.items():
        raw = arr.astype("<f8").tobytes()
        header["tensors"][name] = {"shape": list(arr.shape), "offset": offset}
        payload.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payload:
            fh.write(raw)


def _tensor_from_fields(name: str, shape, count_or_data, source: str) -> tuple[tuple, int]:
    if not isinstance(shape, list) or any((not isinstance(d, int)) or d < 1 for d in shape):
        raise ValidationError(f"{source}: tensor {name!r} has invalid shape {shape!r}")
    return tuple(shape), prod(shape) if shape else 1


def load_checkpoint(path) -> Checkpoint:
    """Read either container format back; load(save(ck)) round-trips
    bit-exactly."""
    path = Path(path)
    blob = path.read_bytes()
    if blob.startswith(_MAGIC):
        return _load_binary(blob, str(path))
    try:
        obj = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: not a checkpoint container ({exc})") from exc
    return _load_json_checkpoint(obj, str(path))


def _load_binary(blob: bytes, source: str) -> Checkpoint:
    base = len(_MAGIC)
    if len(blob) < base + 8:
        raise ParseError(f"{source}: truncated checkpoint header")
    (header_len,) = struct.unpack_from("<Q", blob, base)
    header_end = base + 8 + header_len
    if len(blob) < header_end:
        raise ParseError(f"{source}: header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[base + 8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{source}: malformed checkpoint header ({exc})") from exc
    tensors = header.get("tensors")
    if not isinstance(tensors, dict):
        raise ParseError(f"{source}: checkpoint header lacks a tensor table")
    payload = blob[header_end:]
    out: Checkpoint = {}
    expected = 0
    for name, meta in tensors.items():
        shape, count = _tensor_from_fields(name, meta.get("shape"), None, source)
        offset = meta.get("offset")
        nbytes = count * 8
        if not isinstance(offset, int) or offset < 0 or offset + nbytes > len(payload):
            raise ValidationError(f"{source}: tensor {name!r} payload out of range")
        out[name] = np.frombuffer(payload, dtype="<f8", count=count,
                                  offset=offset).reshape(shape).copy()
        expected += nbytes
    if expected != len(payload):
        raise ValidationError(f"{source}: payload size {len(payload)} does not match "
                              f"tensor table total {expected}")
    return out


def _load_json_checkpoint(obj, source: str) -> Checkpoint:
    if not isinstance(obj, dict) or not isinstance(obj.get("tensors"), dict):
        raise ParseError(f"{source}: checkpoint JSON lacks a tensor table")
    out: Checkpoint = {}
    for name, meta in obj["tensors"].items():
        shape, count = _tensor_from_fields(name, meta.get("shape"), None, source)
        data = meta.get("data")
        if not isinstance(data, list):
            raise ValidationError(f"{source}: tensor {name!r} has no data array")
        if len(data) != count:
            raise ValidationError(f"{source}: tensor {name!r} data length {len(data)} "
                                  f"does not match shape product {count}")
        out[name] = np.asarray(data, dtype=np.float64).reshape(shape)
    return out
