"""Command-line entry point: ``emstagcn <subcommand> ...``.

Exit codes: 0 success, 1 validation or config error (including bad usage),
2 I/O or format error. Diagnostics go to stderr; data goes to files, with
per-epoch metrics and short result summaries also echoed on stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data.io import FormatError, ParseError, dataset_read, dataset_write, parse_ntu_skeleton
from .data.sequence import DEFAULT_STREAMS, Dataset, StreamKind
from .data.streams import derive_stream
from .data.synth import SynthSpec, synth_generate
from .data.topology import TopologyError, build_topology
from .model.graph import ConfigError
from .model.network import EmsTagcn, ModelConfig, count_parameters
from .tensor import ShapeError
from .train.checkpoint import checkpoint_load, checkpoint_paths, checkpoint_save
from .train.harness import grad_check_model, small_config
from .train.loop import evaluate_topk, fit, prepare_sample
from .train.metrics import ScoreSet, ensemble_fuse, scoreset_accuracy
from .train.optim import TrainConfig

CONFIG_KEYS = ("model", "train", "data", "eval_data", "stream", "threads")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------- config


def default_config() -> dict:
    return {
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "data": None,
        "eval_data": None,
        "stream": StreamKind.JOINT.value,
        "threads": 1,
    }


def _merge_section(base: dict, override: dict, cls, section: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(override) - known)
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {unknown}")
    return {**base, **override}


def merge_config(base: dict, override: dict) -> dict:
    """Overlay ``override`` on ``base``, rejecting unknown keys at either level."""
    if not isinstance(override, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(override) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    out = dict(base)
    for key, value in override.items():
        if key == "model":
            out[key] = _merge_section(base["model"], value, ModelConfig, "model")
        elif key == "train":
            out[key] = _merge_section(base["train"], value, TrainConfig, "train")
        else:
            out[key] = value
    return out


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def write_effective_config(cfg: dict, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "effective_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def _bind_to_data(model_cfg: dict, explicit: dict, ds: Dataset, stream: StreamKind) -> dict:
    """Fill the data-bound model fields from the dataset, refusing contradictions."""
    bound = {
        "topology": ds.topology.name,
        "num_joints": ds.topology.num_joints if ds.topology.name.startswith("chain") else None,
        "num_classes": ds.num_classes,
        "in_channels": stream.channels,
    }
    for key, value in bound.items():
        if key in explicit and explicit[key] != value:
            raise ConfigError(f"model.{key} is {explicit[key]!r} but the data/stream require {value!r}")
    return {**model_cfg, **bound}


# ---------------------------------------------------------------- CSV


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path: Path, rows, header: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if header is not None:
            w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _safe_id(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", sample_id)


def export_graphs(model: EmsTagcn, out: Path) -> list[Path]:
    """``adjacency_k{k}_layer{l}.csv`` (fixed + learned graph) and ``gate.csv``."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    gates = []
    for l, block in enumerate(model.blocks):
        agcl = block.agcl
        for k, a in enumerate(agcl.adjacency.matrices):
            path = out / f"adjacency_k{k}_layer{l}.csv"
            write_csv(path, (a + agcl.B[k].data).tolist())
            written.append(path)
        gates.append([l, float(agcl.gate.data[0])])
    path = out / "gate.csv"
    write_csv(path, gates, header=["layer", "alpha"])
    written.append(path)
    return written


def export_attention(model: EmsTagcn, ds: Dataset, sample_id: str, stream: StreamKind,
                     cfg: TrainConfig, out: Path) -> list[Path]:
    """One eval-mode pass on ``sample_id``; attention of body slot 0 per layer."""
    seq = ds.by_id(sample_id)
    x = prepare_sample(seq, model, stream, cfg, None)[None]
    model.eval()
    model.predict_proba(x)
    out.mkdir(parents=True, exist_ok=True)
    sid = _safe_id(sample_id)
    written = []
    for l, block in enumerate(model.blocks):
        stc = block.stc
        files = {
            f"sam_layer{l}_sample{sid}.csv": [stc.sam.last_map[0].reshape(-1).tolist()],
            f"tam_kernels_layer{l}_sample{sid}.csv": stc.tam.last_kernels[0].tolist(),
            f"cam_layer{l}_sample{sid}.csv": [stc.cam.last_map[0].reshape(-1).tolist()],
        }
        for name, rows in files.items():
            write_csv(out / name, rows)
            written.append(out / name)
    return written


# ---------------------------------------------------------------- commands


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_synth(args) -> int:
    spec = SynthSpec(num_classes=args.classes, per_class=args.per_class, num_joints=args.joints,
                     num_frames=args.frames, noise_std=args.noise, num_bodies=args.bodies)
    ds = synth_generate(spec, getattr(args, "seed", 0))
    dataset_write(ds, args.out)
    _log(f"wrote {len(ds)} samples to {args.out}")
    return 0


_NTU_ACTION = re.compile(r"A(\d{3})")


def _read_raw(path: Path) -> Dataset:
    """A dataset directory, or a directory of NTU ``.skeleton`` files."""
    if (path / "manifest.json").is_file():
        return dataset_read(path)
    files = sorted(path.glob("*.skeleton"))
    if not files:
        raise FileNotFoundError(f"{path}: neither a dataset directory nor a folder of .skeleton files")
    samples = []
    for f in files:
        m = _NTU_ACTION.search(f.stem)
        if m is None:
            raise ConfigError(f"{f.name}: cannot read the action label (expected 'A###' in the name)")
        try:
            samples.append(parse_ntu_skeleton(f.read_bytes(), sample_id=f.stem, label=int(m.group(1)) - 1))
        except ParseError as exc:
            raise FormatError(f"{f}: {exc}") from None
    num_classes = max(60, max(s.label for s in samples) + 1)
    names = [f"A{c + 1:03d}" for c in range(num_classes)]
    return Dataset(samples, build_topology("ntu25"), names)


def _to_f32(seq):
    return seq.replace(data=seq.data.astype(np.float32).astype(np.float64))


def cmd_preprocess(args) -> int:
    ds = _read_raw(Path(args.input))
    streams = [StreamKind(s) for s in args.streams.split(",") if s]
    out = Path(args.out)
    for stream in streams:
        # the on-disk format is float32, so derived values are rounded to it
        derived = Dataset([_to_f32(derive_stream(s, ds.topology, stream)) for s in ds.samples],
                          ds.topology, ds.class_names)
        dataset_write(derived, out / stream.value)
        _log(f"{stream.value}: {len(derived)} samples -> {out / stream.value}")
    return 0


def _resolve(args, base: dict | None = None) -> tuple[dict, dict]:
    """Defaults <- config file <- flags. Returns (effective, explicit model keys)."""
    cfg = base or default_config()
    file_cfg = load_config_file(getattr(args, "config", None))
    cfg = merge_config(cfg, file_cfg)
    explicit = dict(file_cfg.get("model", {}))
    for flag, key in (("data", "data"), ("eval_data", "eval_data"), ("stream", "stream"), ("threads", "threads")):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "seed", None) is not None:
        cfg["train"] = {**cfg["train"], "seed": args.seed}
        cfg["model"] = {**cfg["model"], "init_seed": args.seed}
    if getattr(args, "epochs", None) is not None:
        cfg["train"] = {**cfg["train"], "total_epochs": args.epochs}
    return cfg, explicit


def cmd_train(args) -> int:
    out = Path(args.out)
    state = {}
    if args.resume:
        model, state = checkpoint_load(args.resume)
        cfg, explicit = _resolve(args, base=state.get("config"))
        if ModelConfig.from_dict(cfg["model"]) != model.config:
            raise ConfigError("the model config cannot change on resume")
    else:
        cfg, explicit = _resolve(args)
    if cfg["data"] is None:
        raise ConfigError("no training data: pass --data or set 'data' in the config")
    stream = StreamKind(cfg["stream"])
    ds = dataset_read(cfg["data"])
    eval_ds = dataset_read(cfg["eval_data"]) if cfg["eval_data"] else None
    train_cfg = TrainConfig.from_dict(cfg["train"])
    if not args.resume:
        cfg["model"] = _bind_to_data(cfg["model"], explicit, ds, stream)
        model = EmsTagcn(ModelConfig.from_dict(cfg["model"]), ds.topology)
    start = int(state.get("epoch", 0))
    end = train_cfg.total_epochs if args.stop_after is None else min(args.stop_after, train_cfg.total_epochs)
    write_effective_config(cfg, out)
    fit(model, ds, stream, train_cfg, start_epoch=start, end_epoch=end, eval_data=eval_ds,
        metrics_path=out / "metrics.jsonl", log=print)
    checkpoint_save(model, out / "model", {"epoch": max(start, end), "stream": stream.value, "config": cfg})
    _log(f"checkpoint written to {out / 'model'}.json/.bin")
    return 0


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k]
    except ValueError:
        raise ConfigError(f"--topk expects comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError(f"--topk values must be >= 1, got {text!r}")
    return ks


def cmd_eval(args) -> int:
    model, state = checkpoint_load(args.ckpt)
    cfg, _ = _resolve(args, base=state.get("config"))
    if cfg["data"] is None:
        raise ConfigError("no evaluation data: pass --data")
    stream = StreamKind(args.stream or state.get("stream", cfg["stream"]))
    cfg["stream"] = stream.value
    ds = dataset_read(cfg["data"])
    ks = _parse_ks(args.topk)
    acc, scores = evaluate_topk(model, ds, stream, ks, TrainConfig.from_dict(cfg["train"]), threads=cfg["threads"])
    scores_out = Path(args.scores_out) if args.scores_out else checkpoint_paths(args.ckpt)[0].parent / f"scores_{stream.value}.json"
    scores_out.parent.mkdir(parents=True, exist_ok=True)
    scores.write(scores_out)
    write_effective_config(cfg, scores_out.parent)
    print(json.dumps({"stream": stream.value, **{f"top{k}": v for k, v in acc.items()}}, sort_keys=True))
    return 0


def cmd_fuse(args) -> int:
    sets = []
    for path in args.scores:
        m = re.match(r"scores_(.+)\.json$", Path(path).name)
        sets.append(ScoreSet.read(path, stream=m.group(1) if m else Path(path).stem))
    weights = None
    if args.weights:
        try:
            weights = [float(w) for w in args.weights.split(",")]
        except ValueError:
            raise ConfigError(f"--weights expects comma-separated numbers, got {args.weights!r}") from None
    fused = ensemble_fuse(sets, weights)
    fused.write(args.out)
    if args.data:
        ds = dataset_read(args.data)
        fused.labels = {s.id: s.label for s in ds.samples if s.label is not None}
        acc = scoreset_accuracy(fused, _parse_ks(args.topk))
        print(json.dumps({"stream": fused.stream, **{f"top{k}": v for k, v in acc.items()}}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    report = grad_check_model(small_config(args.blocks), tol=args.tol,
                              seed=getattr(args, "seed", 0), eps=args.eps)
    for line in report.lines():
        print(line)
    print(f"max_relative_error\t{report.max_error:.3e}\t{'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


def cmd_export(args) -> int:
    model, state = checkpoint_load(args.ckpt)
    out = Path(args.out)
    if args.what == "graphs":
        files = export_graphs(model, out)
    else:
        cfg, _ = _resolve(args, base=state.get("config"))
        if cfg["data"] is None or args.sample is None:
            raise ConfigError("attention export needs --data and --sample")
        ds = dataset_read(cfg["data"])
        if args.sample not in {s.id for s in ds.samples}:
            raise ConfigError(f"unknown sample id {args.sample!r}")
        stream = StreamKind(state.get("stream", cfg["stream"]))
        files = export_attention(model, ds, args.sample, stream, TrainConfig.from_dict(cfg["train"]), out)
    _log(f"wrote {len(files)} files to {out}")
    return 0


def cmd_params(args) -> int:
    cfg, _ = _resolve(args)
    model = EmsTagcn(ModelConfig.from_dict(cfg["model"]))
    total, table = count_parameters(model)
    for name, count in table.items():
        print(f"{name}\t{count}")
    print(f"total\t{total}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker cap (default 1)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")

    parser = _Parser(prog="emstagcn", description="Skeleton action recognition with adaptive graph convolutions.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=16)
    p.add_argument("--joints", type=int, default=11)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--bodies", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", parents=[common], help="derive stream datasets")
    p.add_argument("--input", required=True, help="dataset directory or folder of NTU .skeleton files")
    p.add_argument("--out", required=True)
    p.add_argument("--streams", default=",".join(s.value for s in DEFAULT_STREAMS))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train one stream")
    p.add_argument("--data")
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--stream", choices=[s.value for s in StreamKind])
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint prefix to continue from")
    p.add_argument("--epochs", type=int, help="total_epochs override")
    p.add_argument("--stop-after", dest="stop_after", type=int,
                   help="stop once this epoch count is reached (schedule unchanged)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="top-k accuracy and score file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--stream", choices=[s.value for s in StreamKind])
    p.add_argument("--topk", default="1,5")
    p.add_argument("--scores-out", dest="scores_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", parents=[common], help="fuse per-stream score files")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", default="scores_fused.json")
    p.add_argument("--data", help="dataset supplying labels for accuracy")
    p.add_argument("--topk", default="1,5")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the whole model")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--blocks", type=int, choices=[1, 2, 3], default=1)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export", parents=[common], help="write graphs or attention maps as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--what", choices=["graphs", "attention"], required=True)
    p.add_argument("--data")
    p.add_argument("--sample")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("params", parents=[common], help="parameter count per module")
    p.set_defaults(func=cmd_params)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "emstagcn: error: a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FormatError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, TopologyError, ShapeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
