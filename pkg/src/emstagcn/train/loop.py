from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import tensor as T
from ..data.augment import AugmentParams, augment, center_crop, pad_repeat
from ..data.sequence import Dataset, SkeletonSequence, StreamKind
from ..data.streams import center_on_joint, derive_stream
from ..model.graph import ConfigError
from ..model.network import EmsTagcn
from .metrics import ScoreSet, topk_accuracy
from .optim import TrainConfig, lr_at_epoch, sgd_nesterov_step


def _fit_bodies(data: np.ndarray, num_bodies: int) -> np.ndarray:
    m = data.shape[3]
    if m == num_bodies:
        return data
    if m > num_bodies:
        return data[..., :num_bodies]
    return np.concatenate([data, np.zeros(data.shape[:3] + (num_bodies - m,))], axis=3)


def prepare_sample(
    seq: SkeletonSequence,
    model: EmsTagcn,
    stream: StreamKind,
    cfg: TrainConfig,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Pad, crop (random + rotate/translate when ``rng`` is given), then derive the stream.

    Spatial augmentation acts on joint coordinates, before any differencing,
    so bone and motion streams stay translation-free.
    """
    window = model.config.window
    seq = pad_repeat(seq, window)
    if cfg.center_joints:
        seq = center_on_joint(seq, model.topology)
    if rng is None:
        seq = center_crop(seq, window)
    else:
        seq = augment(seq, rng, AugmentParams(cfg.max_rot_deg, cfg.max_trans, window))
    seq = derive_stream(seq, model.topology, stream)
    return _fit_bodies(seq.data, model.config.num_bodies)


def _check_stream(model: EmsTagcn, stream: StreamKind) -> None:
    if stream.channels != model.config.in_channels:
        raise ConfigError(
            f"stream {stream.value!r} has {stream.channels} channels but the model expects {model.config.in_channels}"
        )


def sample_rng(seed: int, index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed ^ index, epoch])


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 0x5EED]).permutation(n)


@dataclass
class EpochResult:
    mean_loss: float
    train_top1: float
    batch_losses: list[float]


def train_epoch(model: EmsTagcn, dataset: Dataset, stream: StreamKind | str, cfg: TrainConfig, epoch: int) -> EpochResult:
    """One pass over ``dataset`` in a (seed, epoch)-determined order."""
    stream = StreamKind(stream)
    _check_stream(model, stream)
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model.train()
    if model.config.init_scheme == 2:
        model.set_b_frozen(epoch < model.config.freeze_b_epochs)
    lr = lr_at_epoch(cfg, epoch)
    order = epoch_order(cfg.seed, epoch, len(dataset))
    losses, correct = [], 0
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start: start + cfg.batch_size]
        x = np.stack([
            prepare_sample(dataset.samples[i], model, stream, cfg,
                           sample_rng(cfg.seed, int(i), epoch) if cfg.augment else None)
            for i in idx
        ])
        y = np.array([dataset.samples[i].label for i in idx])
        logits = model(x)
        loss = T.cross_entropy(logits, y)
        model.zero_grad()
        loss.backward()
        sgd_nesterov_step(model.parameters(), lr, cfg.momentum, cfg.weight_decay, cfg.wd_exempt_bn_gates)
        losses.append(float(loss.data))
        correct += int((np.argmax(logits.data, axis=1) == y).sum())
    sizes = [len(order[s: s + cfg.batch_size]) for s in range(0, len(order), cfg.batch_size)]
    mean_loss = float(np.dot(losses, sizes) / len(order))
    return EpochResult(mean_loss, correct / len(order), losses)


def predict_dataset(
    model: EmsTagcn,
    dataset: Dataset,
    stream: StreamKind | str,
    cfg: TrainConfig | None = None,
    batch_size: int = 32,
    threads: int = 1,
) -> np.ndarray:
    """Eval-mode softmax probabilities ``[S, num_classes]``, no augmentation."""
    stream = StreamKind(stream)
    _check_stream(model, stream)
    cfg = cfg or TrainConfig()
    model.eval()
    batches = [list(range(s, min(s + batch_size, len(dataset)))) for s in range(0, len(dataset), batch_size)]

    def run(idx):
        x = np.stack([prepare_sample(dataset.samples[i], model, stream, cfg, None) for i in idx])
        return model.predict_proba(x)

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(idx) for idx in batches]
    return np.concatenate(parts, axis=0)


def evaluate_topk(
    model: EmsTagcn,
    dataset: Dataset,
    stream: StreamKind | str,
    ks: Sequence[int] = (1, 5),
    cfg: TrainConfig | None = None,
    batch_size: int = 32,
    threads: int = 1,
) -> tuple[dict[int, float], ScoreSet]:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    stream = StreamKind(stream)
    probs = predict_dataset(model, dataset, stream, cfg, batch_size, threads)
    ids = [s.id for s in dataset.samples]
    scores = ScoreSet(dict(zip(ids, probs)), stream=stream.value,
                      labels={s.id: s.label for s in dataset.samples if s.label is not None})
    # k beyond the class count behaves as k = num_classes
    acc = topk_accuracy(probs, dataset.labels(), [min(k, dataset.num_classes) for k in ks])
    return {int(k): acc[min(k, dataset.num_classes)] for k in ks}, scores


def fit(
    model: EmsTagcn,
    dataset: Dataset,
    stream: StreamKind | str,
    cfg: TrainConfig,
    start_epoch: int = 0,
    end_epoch: int | None = None,
    eval_data: Dataset | None = None,
    metrics_path: str | Path | None = None,
    log: Callable[[str], None] | None = print,
    stop_at_train_acc: float | None = None,
) -> list[dict]:
    """Train epochs ``[start_epoch, end_epoch)``, emitting one JSON record per epoch.

    With ``stop_at_train_acc`` set, training ends after the first epoch whose
    clean (eval-mode, unaugmented) training accuracy reaches that value.
    """
    end_epoch = cfg.total_epochs if end_epoch is None else end_epoch
    records = []
    mode = "a" if start_epoch > 0 else "w"
    sink = open(metrics_path, mode) if metrics_path is not None else None
    try:
        for epoch in range(start_epoch, end_epoch):
            res = train_epoch(model, dataset, stream, cfg, epoch)
            rec = {"epoch": epoch, "lr": lr_at_epoch(cfg, epoch), "mean_loss": res.mean_loss, "train_top1": res.train_top1}
            if stop_at_train_acc is not None:
                rec["train_eval_top1"] = evaluate_topk(model, dataset, stream, (1,), cfg)[0][1]
            if eval_data is not None:
                acc, _ = evaluate_topk(model, eval_data, stream, (1, 5), cfg)
                rec["eval_top1"] = acc[1]
                rec["eval_top5"] = acc[5]
            line = json.dumps(rec, sort_keys=True)
            if sink is not None:
                sink.write(line + "\n")
                sink.flush()
            if log is not None:
                log(line)
            records.append(rec)
            if stop_at_train_acc is not None and rec["train_eval_top1"] >= stop_at_train_acc:
                break
    finally:
        if sink is not None:
            sink.close()
    return records
