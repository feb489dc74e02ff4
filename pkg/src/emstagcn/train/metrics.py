"""Top-k accuracy, per-stream score sets, and score fusion."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class ScoreSet:
    """Softmax probability vectors keyed by sample id."""

    scores: dict[str, np.ndarray]
    stream: str = ""
    labels: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for sid, p in self.scores.items():
            p = np.asarray(p, dtype=np.float64)
            if abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"scores for {sid!r} sum to {p.sum()}, not 1")
            self.scores[sid] = p

    def ids(self) -> list[str]:
        return list(self.scores)

    def matrix(self, ids: Sequence[str] | None = None) -> np.ndarray:
        ids = self.ids() if ids is None else ids
        return np.stack([self.scores[i] for i in ids])

    def predictions(self) -> dict[str, int]:
        return {sid: int(np.argmax(p)) for sid, p in self.scores.items()}

    def write(self, path: str | Path) -> None:
        obj = {sid: [float(v) for v in p] for sid, p in self.scores.items()}
        Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path, stream: str = "") -> ScoreSet:
        obj = json.loads(Path(path).read_text())
        if not isinstance(obj, dict):
            raise ValueError(f"{path}: expected an object mapping sample id to probabilities")
        return cls({sid: np.asarray(v, dtype=np.float64) for sid, v in obj.items()}, stream=stream)


def label_ranks(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """0-based rank of each true label; ties go to the lower class index."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p_true = probs[np.arange(len(labels)), labels][:, None]
    index = np.arange(probs.shape[1])[None, :]
    ahead = (probs > p_true) | ((probs == p_true) & (index < labels[:, None]))
    return ahead.sum(axis=1)


def topk_accuracy(probs: np.ndarray, labels: np.ndarray, ks: Sequence[int]) -> dict[int, float]:
    if len(labels) == 0:
        raise ValueError("top-k accuracy of an empty set is undefined")
    ranks = label_ranks(probs, labels)
    return {int(k): float(np.mean(ranks < k)) for k in ks}


def ensemble_fuse(score_sets: Sequence[ScoreSet], weights: Sequence[float] | None = None) -> ScoreSet:
    """Weighted sum of per-stream scores, renormalized per sample (default weights 1)."""
    if not score_sets:
        raise ValueError("nothing to fuse")
    if weights is None:
        weights = [1.0] * len(score_sets)
    if len(weights) != len(score_sets):
        raise ValueError(f"{len(weights)} weights for {len(score_sets)} score sets")
    ids = score_sets[0].ids()
    for s in score_sets[1:]:
        if set(s.ids()) != set(ids):
            raise ValueError(f"score sets {score_sets[0].stream!r} and {s.stream!r} cover different sample ids")
    fused = {}
    for sid in ids:
        total = sum(w * s.scores[sid] for w, s in zip(weights, score_sets))
        fused[sid] = total / total.sum()
    labels = {}
    for s in score_sets:
        labels.update(s.labels)
    return ScoreSet(fused, stream="+".join(s.stream for s in score_sets), labels=labels)


def scoreset_accuracy(scores: ScoreSet, ks: Sequence[int] = (1,)) -> dict[int, float]:
    ids = [sid for sid in scores.ids() if sid in scores.labels]
    return topk_accuracy(scores.matrix(ids), np.array([scores.labels[i] for i in ids]), ks)
