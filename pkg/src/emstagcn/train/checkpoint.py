"""Checkpoint pair ``<prefix>.json`` + ``<prefix>.bin``.

The binary file is ``b"EMTW"``, a uint32 LE version, then float64 LE
arrays back to back in manifest order. The manifest lists every entry with
its kind (``param``, ``momentum`` or ``buffer``), name, shape and byte
offset, alongside the model config, topology and training state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..data.io import FormatError, _topology_from_json, _topology_to_json
from ..model.graph import ConfigError
from ..model.network import EmsTagcn, ModelConfig

MAGIC = b"EMTW"
VERSION = 1
HEADER = struct.Struct("<4sI")


def checkpoint_paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    if prefix.suffix in (".json", ".bin"):
        prefix = prefix.with_suffix("")
    return prefix.with_name(prefix.name + ".json"), prefix.with_name(prefix.name + ".bin")


def _entries(model: EmsTagcn):
    for name, p in model.named_parameters():
        yield "param", name, p.data
    for name, p in model.named_parameters():
        yield "momentum", name, p.momentum_buffer
    for name, buf in model.named_buffers():
        yield "buffer", name, buf


def checkpoint_save(model: EmsTagcn, prefix: str | Path, state: dict | None = None) -> None:
    """Write model parameters, momentum buffers, BN statistics and ``state``."""
    json_path, bin_path = checkpoint_paths(prefix)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    manifest, chunks = [], []
    offset = HEADER.size
    for kind, name, arr in _entries(model):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest.append({"kind": kind, "name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    bin_path.write_bytes(HEADER.pack(MAGIC, VERSION) + b"".join(chunks))
    doc = {
        "format": "emstagcn-checkpoint",
        "version": VERSION,
        "model_config": model.config.to_dict(),
        "topology": _topology_to_json(model.topology),
        "state": state or {},
        "tensors": manifest,
    }
    json_path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _targets(model: EmsTagcn) -> dict[tuple[str, str], np.ndarray]:
    return {(kind, name): arr for kind, name, arr in _entries(model)}


def checkpoint_load(prefix: str | Path, expect: ModelConfig | None = None) -> tuple[EmsTagcn, dict]:
    """Rebuild the model and return it with the saved training state.

    When ``expect`` is given, every config field must match; the first
    mismatching field is named in the error.
    """
    json_path, bin_path = checkpoint_paths(prefix)
    for path in (json_path, bin_path):
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint file not found: {path}")
    try:
        doc = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{json_path}: invalid JSON ({exc})") from None
    if doc.get("format") != "emstagcn-checkpoint" or doc.get("version") != VERSION:
        raise FormatError(f"{json_path}: unsupported checkpoint format/version")
    try:
        cfg = ModelConfig.from_dict(doc["model_config"])
    except (ConfigError, TypeError) as exc:
        raise FormatError(f"{json_path}: bad model config ({exc})") from None
    if expect is not None:
        for key, value in expect.to_dict().items():
            if cfg.to_dict()[key] != value:
                raise FormatError(f"{json_path}: field {key!r} is {cfg.to_dict()[key]!r}, expected {value!r}")
    model = EmsTagcn(cfg, _topology_from_json(doc["topology"]))
    raw = bin_path.read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{bin_path}: truncated header")
    magic, version = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{bin_path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{bin_path}: unsupported version {version}")
    targets = _targets(model)
    seen = set()
    for entry in doc["tensors"]:
        key = (entry["kind"], entry["name"])
        if key not in targets:
            raise FormatError(f"{json_path}: unexpected tensor {key}")
        dst = targets[key]
        shape = tuple(entry["shape"])
        if shape != dst.shape:
            raise FormatError(f"{json_path}: tensor {entry['name']} has shape {shape}, model expects {dst.shape}")
        start = entry["offset"]
        stop = start + 8 * int(np.prod(shape, dtype=np.int64))
        if start < HEADER.size or stop > len(raw):
            raise FormatError(f"{bin_path}: tensor {entry['name']} lies outside the file")
        dst[...] = np.frombuffer(raw[start:stop], dtype="<f8").reshape(shape)
        seen.add(key)
    missing = set(targets) - seen
    if missing:
        raise FormatError(f"{json_path}: missing tensors {sorted(missing)[:3]}")
    return model, doc.get("state", {})
