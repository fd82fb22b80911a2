"""Command-line entry point: ``hybrid-snn <command> [options]``.

Commands follow the training flow: ``train-ann`` -> ``convert`` ->
``train-stdb`` -> ``infer`` / ``analyze-spikes``. ``gradcheck`` runs the
oracle comparisons. Every command writes its checkpoint or CSV under
``--out`` and prints one metrics line per event to stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import compare_energy, plot_reports, spike_report, write_report_csv
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .conversion import convert
from .datasets import load_dataset
from .errors import ConfigError, SNNError
from .network import preset
from .training import _eval_subset, evaluate_ann, evaluate_snn, train_ann, train_stdb

log = logging.getLogger("hybrid_snn")

CALIBRATION_STREAM = 4


class MetricsLog:
    """Echo metric records to stdout and keep a CSV copy up to date."""

    def __init__(self, path: Path | None, stream=None):
        self.path = path
        self.rows: list = []
        self.stream = stream or sys.stdout

    def __call__(self, record: dict) -> None:
        self.rows.append(dict(record))
        print(json.dumps(record, sort_keys=True, default=float), file=self.stream, flush=True)
        if self.path is not None:
            self.flush()

    def flush(self) -> None:
        fieldnames = []
        for row in self.rows:
            fieldnames += [k for k in row if k not in fieldnames]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(self.rows)


# -- argument parsing --------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--arch", help="architecture preset (vgg5, resnet8-lite)")
    p.add_argument("--out", help="output directory for checkpoints and CSV files")
    p.add_argument("--data-dir", dest="data_dir", help="dataset directory")
    p.add_argument("--dataset", choices=("mnist", "cifar10"))
    p.add_argument("--timesteps", type=int, help="simulation length T")
    p.add_argument("--eval-samples", dest="eval_samples", type=int,
                   help="evaluate on a fixed random subset of this many test images")
    p.add_argument("-v", "--verbose", action="store_true")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--train-samples", dest="max_train_samples", type=int,
                   help="use at most this many training images per epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-snn",
                                     description="Hybrid ANN-SNN training and analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("train-ann", help="train the ReLU network and save a checkpoint")
    _common(p)
    _training(p)

    p = sub.add_parser("convert", help="copy ANN weights and balance thresholds")
    _common(p)
    p.add_argument("--checkpoint", help="ANN checkpoint (default OUT/ann.snnf)")
    p.add_argument("--calibration-samples", dest="calibration_samples", type=int)

    p = sub.add_parser("train-stdb", help="fine-tune a converted SNN with STDB")
    _common(p)
    _training(p)
    p.add_argument("--checkpoint", help="converted checkpoint (default OUT/converted_T{T}.snnf)")
    p.add_argument("--truncate", type=int, help="truncated BPTT interval t'")
    p.add_argument("--surrogate", choices=("stdb", "linear", "exp"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--leak", type=float)

    p = sub.add_parser("infer", help="test accuracy of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("analyze-spikes", help="average spikes per layer (CSV)")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--compare", help="second checkpoint; reports checkpoint/compare ratios")
    p.add_argument("--csv", help="report path (default OUT/spikes.csv)")
    p.add_argument("--plot", help="also save a bar chart (needs matplotlib)")

    p = sub.add_parser("gradcheck", help="compare gradients against independent oracles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nets", type=int, default=20, help="random toy nets per surrogate")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    cfg = cfg.override(seed=args.seed, arch=getattr(args, "arch", None),
                       out=getattr(args, "out", None), data_dir=getattr(args, "data_dir", None),
                       dataset=getattr(args, "dataset", None),
                       eval_samples=getattr(args, "eval_samples", None))
    train_kw = {k: getattr(args, k, None) for k in ("epochs", "lr", "batch_size",
                                                   "max_train_samples")}
    train_kw = {k: v for k, v in train_kw.items() if v is not None}
    if args.command == "train-ann" and train_kw:
        cfg = replace(cfg, ann=replace(cfg.ann, **train_kw))
    if args.command == "train-stdb":
        extra = {k: getattr(args, k) for k in ("truncate", "surrogate", "alpha", "beta", "leak")
                 if getattr(args, k) is not None}
        if args.timesteps is not None:
            extra["timesteps"] = args.timesteps
        if train_kw or extra:
            cfg = replace(cfg, stdb=replace(cfg.stdb, **train_kw, **extra))
    if args.command == "convert":
        conv = {}
        if args.timesteps is not None:
            conv["timesteps"] = args.timesteps
        if args.calibration_samples is not None:
            conv["calibration_samples"] = args.calibration_samples
        if conv:
            cfg = replace(cfg, conversion=replace(cfg.conversion, **conv))
    return cfg


# -- commands ----------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _input_shape(dataset: str) -> tuple:
    return (1, 28, 28) if dataset == "mnist" else (3, 32, 32)


def _data(cfg: RunConfig, split: str):
    return load_dataset(cfg.dataset, cfg.data_dir, split)


def _test_subset(cfg: RunConfig):
    images, labels = _data(cfg, "test")
    idx = _eval_subset(len(labels), cfg.eval_samples, cfg.seed)
    return images[idx], labels[idx], idx


def cmd_train_ann(cfg: RunConfig, args) -> dict:
    arch = preset(cfg.arch, _input_shape(cfg.dataset))
    out = _out(cfg)
    train = _data(cfg, "train")
    test = _data(cfg, "test")
    metrics = MetricsLog(out / "ann_metrics.csv")
    params, history = train_ann(arch, train, cfg.ann, test, sink=metrics)
    acc = evaluate_ann(params, arch, *test)
    meta = {"phase": "ann", "epochs": cfg.ann.epochs, "seed": cfg.seed, "leak": 1.0,
            "test_accuracy": acc, "dataset": cfg.dataset}
    path = out / "ann.snnf"
    save_checkpoint(path, Checkpoint(arch, params, meta))
    return {"checkpoint": str(path), "accuracy": acc}


def cmd_convert(cfg: RunConfig, args) -> dict:
    out = _out(cfg)
    src = Path(args.checkpoint) if args.checkpoint else out / "ann.snnf"
    ann = load_checkpoint(src)
    if ann.phase != "ann":
        raise ConfigError(f"{src} holds a {ann.phase!r} checkpoint; convert needs an ANN")
    conv = cfg.conversion
    images, _ = _data(cfg, "train")
    n = min(conv.calibration_samples, len(images))
    start = time.perf_counter()
    snn = convert(ann.params, ann.arch, images[:n], conv.timesteps,
                  (cfg.seed, CALIBRATION_STREAM), batch_size=conv.calibration_batch,
                  floor=conv.floor, scale=conv.scale, leak=conv.leak)
    for pop, v in snn.thresholds.items():
        print(json.dumps({"phase": "convert", "population": pop, "threshold": v}), flush=True)
    meta = {"phase": "converted", "epochs": 0, "seed": cfg.seed, "leak": conv.leak,
            "timesteps": conv.timesteps, "calibration_samples": n,
            "ann_epochs": ann.metadata.get("epochs")}
    path = out / f"converted_T{conv.timesteps}.snnf"
    save_checkpoint(path, Checkpoint(ann.arch, snn, meta))
    print(json.dumps({"phase": "convert", "checkpoint": str(path),
                      "seconds": round(time.perf_counter() - start, 3)}), flush=True)
    return {"checkpoint": str(path), "thresholds": dict(snn.thresholds)}


def cmd_train_stdb(cfg: RunConfig, args) -> dict:
    out = _out(cfg)
    st = cfg.stdb
    src = Path(args.checkpoint) if args.checkpoint else out / f"converted_T{st.timesteps}.snnf"
    ckpt = load_checkpoint(src)
    if ckpt.phase not in ("converted", "stdb"):
        raise ConfigError(f"{src} holds a {ckpt.phase!r} checkpoint; train-stdb needs a "
                          f"converted SNN")
    train = _data(cfg, "train")
    test = _data(cfg, "test")
    tag = f"stdb_T{st.timesteps}_{st.surrogate}"
    metrics = MetricsLog(out / f"{tag}_metrics.csv")
    params, history = train_stdb(ckpt.params, ckpt.arch, train, st, test, sink=metrics)
    sur = st.surrogate_config()
    meta = {"phase": "stdb", "epochs": ckpt.metadata.get("epochs", 0) + st.epochs,
            "seed": cfg.seed, "leak": st.leak, "alpha": sur.alpha, "beta": sur.beta,
            "surrogate": st.surrogate, "timesteps": st.timesteps, "truncate": st.segment_length,
            "source": ckpt.metadata.get("phase")}
    path = out / f"{tag}.snnf"
    save_checkpoint(path, Checkpoint(ckpt.arch, params, meta))
    tests = [r for r in history if r.get("split") == "test"]
    acc = tests[-1]["accuracy"] if tests else None
    return {"checkpoint": str(path), "accuracy": acc, "history": history}


def cmd_infer(cfg: RunConfig, args) -> dict:
    ckpt = load_checkpoint(args.checkpoint)
    images, labels, idx = _test_subset(cfg)
    if ckpt.phase == "ann":
        acc = evaluate_ann(ckpt.params, ckpt.arch, images, labels)
        rec = {"phase": "infer", "model": "ann", "samples": len(labels), "accuracy": acc}
    else:
        T = args.timesteps or ckpt.metadata.get("timesteps")
        if not T:
            raise ConfigError("pass --timesteps; the checkpoint does not record T")
        leak = float(ckpt.metadata.get("leak", 1.0))
        acc, counts, _ = evaluate_snn(ckpt.params, ckpt.arch, images, labels, T, cfg.seed, leak,
                                      cfg.eval_batch_size, idx)
        rec = {"phase": "infer", "model": ckpt.phase, "timesteps": T, "leak": leak,
               "samples": len(labels), "accuracy": acc}
    print(json.dumps(rec), flush=True)
    return rec


def cmd_analyze(cfg: RunConfig, args) -> dict:
    out = _out(cfg)
    paths = [args.checkpoint] + ([args.compare] if args.compare else [])
    ckpts = [load_checkpoint(p) for p in paths]
    if any(c.phase == "ann" for c in ckpts):
        raise ConfigError("spike analysis needs SNN checkpoints")
    T = args.timesteps or ckpts[0].metadata.get("timesteps")
    if not T:
        raise ConfigError("pass --timesteps; the checkpoint does not record T")
    images, labels, idx = _test_subset(cfg)
    reports = []
    for ckpt in ckpts:
        leak = float(ckpt.metadata.get("leak", 1.0))
        reports.append(spike_report(ckpt.params, ckpt.arch, images, T, cfg.seed, leak,
                                    cfg.eval_batch_size, idx))
    labels_ = [Path(p).stem for p in paths]
    csv_path = Path(args.csv) if args.csv else out / "spikes.csv"
    write_report_csv(csv_path, *reports, labels=labels_)
    for label, report in zip(labels_, reports):
        for p, a in report.average.items():
            print(json.dumps({"phase": "spikes", "model": label, "population": p,
                              "avg_spikes": a}), flush=True)
        print(json.dumps({"phase": "spikes", "model": label, "timesteps": T,
                          "samples": report.samples,
                          "spikes_per_sample": report.spikes_per_sample,
                          "energy_delay": report.energy_delay}), flush=True)
    result = {"csv": str(csv_path), "reports": reports}
    if len(reports) == 2:
        cmp = compare_energy(reports[0], reports[1])
        print(json.dumps({"phase": "spikes", "ratio": cmp.aggregate,
                          "per_layer": cmp.per_layer}), flush=True)
        result["comparison"] = cmp
    if args.plot:
        plot_reports(args.plot, *reports, labels=labels_)
    return result


def cmd_gradcheck(args) -> dict:
    from .oracles import run_suites

    results = run_suites(args.seed, args.nets)
    for r in results:
        print(r.line(), flush=True)
    return {"results": results, "passed": all(r.passed for r in results)}


COMMANDS = {"train-ann": cmd_train_ann, "convert": cmd_convert, "train-stdb": cmd_train_stdb,
            "infer": cmd_infer, "analyze-spikes": cmd_analyze}


def run(argv=None) -> dict:
    """Parse ``argv`` and execute the command; returns its result record."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gradcheck":
        return cmd_gradcheck(args)
    cfg = resolve_config(args)
    return COMMANDS[args.command](cfg, args)


def main(argv=None) -> int:
    try:
        result = run(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except SNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if result.get("passed") is False:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
