"""NTU ``.skeleton`` ingestion and the on-disk dataset directory format.

Dataset directory layout::

    manifest.json      topology, class names, one row per sample
    <id>.skl           b"SKL1", C, T, N, M as uint32 LE, then C*T*N*M float32 LE
                       in [C][T][N][M] order

The manifest stores a SHA-256 digest per sample file so truncation and bit
flips are caught before the payload is trusted.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .sequence import Dataset, SkeletonSequence
from .topology import SkeletonTopology, TopologyError, _orient, build_topology

MAGIC = b"SKL1"
HEADER = struct.Struct("<4sIIII")
MAX_DIM = 1 << 20
NTU_JOINTS = 25
MAX_BODIES = 2


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FormatError(ValueError):
    pass


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what: str) -> list[str]:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines):
            raise ParseError(self.pos + 1, f"unexpected end of file, expected {what}")
        self.pos += 1
        return self.lines[self.pos - 1].split()

    def integer(self, what: str) -> int:
        fields = self.next(what)
        try:
            return int(fields[0])
        except ValueError:
            raise ParseError(self.pos, f"expected integer {what}, got {fields[0]!r}") from None

    def floats(self, count: int, what: str) -> list[float]:
        fields = self.next(what)
        if len(fields) < count:
            raise ParseError(self.pos, f"expected {count} fields for {what}, got {len(fields)}")
        try:
            return [float(f) for f in fields[:count]]
        except ValueError as exc:
            raise ParseError(self.pos, f"unparsable number in {what}: {exc}") from None


def parse_ntu_skeleton(text: bytes | str, sample_id: str = "", label: int | None = None) -> SkeletonSequence:
    """Read one NTU RGB+D ``.skeleton`` file.

    Bodies are tracked by body id. When more than two appear, the two with
    the highest mean joint tracking state (the file's per-joint confidence)
    are kept, best first; slots for missing bodies stay zero.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    lines = _Lines(text)
    num_frames = lines.integer("frame count")
    if num_frames < 1:
        raise ParseError(lines.pos, f"frame count must be positive, got {num_frames}")
    tracks: dict[str, dict] = {}
    for f in range(num_frames):
        num_bodies = lines.integer(f"body count of frame {f}")
        for _ in range(num_bodies):
            info = lines.next("body info")
            body_id = info[0]
            njoints = lines.integer("joint count")
            if njoints != NTU_JOINTS:
                raise ParseError(lines.pos, f"expected {NTU_JOINTS} joints, got {njoints}")
            joints = np.array([lines.floats(12, f"joint {j}") for j in range(NTU_JOINTS)])
            track = tracks.setdefault(body_id, {"order": len(tracks), "xyz": {}, "conf": []})
            track["xyz"][f] = joints[:, :3]
            track["conf"].append(joints[:, 11].mean())
    ranked = sorted(tracks.values(), key=lambda tr: (-float(np.mean(tr["conf"])), tr["order"]))
    data = np.zeros((3, num_frames, NTU_JOINTS, MAX_BODIES))
    for m, track in enumerate(ranked[:MAX_BODIES]):
        for f, xyz in track["xyz"].items():
            data[:, f, :, m] = xyz.T
    return SkeletonSequence(data.astype(np.float32).astype(np.float64), label=label, id=sample_id)


def _topology_to_json(topo: SkeletonTopology) -> dict:
    return {
        "name": topo.name,
        "num_joints": topo.num_joints,
        "center_joint": topo.center_joint,
        "edges": [list(e) for e in topo.edges],
    }


def _topology_from_json(obj: dict) -> SkeletonTopology:
    try:
        topo = _orient(int(obj["num_joints"]), obj["edges"], int(obj["center_joint"]), str(obj["name"]))
    except (KeyError, TypeError, TopologyError) as exc:
        raise FormatError(f"bad topology in manifest: {exc}") from None
    if obj["name"] in ("ntu25", "kinetics18") and topo != build_topology(obj["name"]):
        raise FormatError(f"manifest topology {obj['name']!r} does not match the built-in tree")
    return topo


def _sample_filename(index: int) -> str:
    return f"{index:06d}.skl"


def encode_sample(seq: SkeletonSequence) -> bytes:
    as32 = seq.data.astype("<f4")
    if not np.array_equal(as32.astype(np.float64), seq.data):
        raise ValueError(f"sample {seq.id!r} is not exactly representable as float32")
    return HEADER.pack(MAGIC, *seq.data.shape) + as32.tobytes(order="C")


def decode_sample(raw: bytes, where: str = "") -> np.ndarray:
    if len(raw) < HEADER.size:
        raise FormatError(f"{where}: file shorter than header")
    magic, c, t, n, m = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}")
    if max(c, t, n, m) > MAX_DIM or min(c, t, n, m) == 0:
        raise FormatError(f"{where}: dimensions {(c, t, n, m)} out of range")
    expected = c * t * n * m * 4
    if len(raw) - HEADER.size != expected:
        raise FormatError(f"{where}: payload has {len(raw) - HEADER.size} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(c, t, n, m)
    return data.astype(np.float64)


def dataset_write(ds: Dataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, seq in enumerate(ds.samples):
        raw = encode_sample(seq)
        name = _sample_filename(i)
        (directory / name).write_bytes(raw)
        c, t, n, m = seq.shape
        rows.append({
            "id": seq.id, "label": seq.label, "file": name,
            "C": c, "T": t, "N": n, "M": m,
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
    manifest = {
        "format": "skl-dataset",
        "version": 1,
        "topology": _topology_to_json(ds.topology),
        "class_names": list(ds.class_names),
        "samples": rows,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def dataset_read(directory: str | Path) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if manifest.get("format") != "skl-dataset" or manifest.get("version") != 1:
        raise FormatError(f"{path}: unsupported format {manifest.get('format')!r} v{manifest.get('version')!r}")
    topo = _topology_from_json(manifest["topology"])
    samples = []
    for row in manifest["samples"]:
        fpath = directory / row["file"]
        if not fpath.is_file():
            raise FileNotFoundError(f"missing sample file {fpath}")
        raw = fpath.read_bytes()
        if hashlib.sha256(raw).hexdigest() != row["sha256"]:
            raise FormatError(f"{fpath}: checksum mismatch")
        data = decode_sample(raw, str(fpath))
        if data.shape != (row["C"], row["T"], row["N"], row["M"]):
            raise FormatError(f"{fpath}: shape {data.shape} disagrees with manifest")
        samples.append(SkeletonSequence(data, label=row["label"], id=row["id"]))
    try:
        return Dataset(samples, topo, list(manifest["class_names"]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
