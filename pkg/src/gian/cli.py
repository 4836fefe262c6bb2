"""Command-line entry point: synth, corrupt, train, eval, sweep, gradcheck, embed.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
failure, 3 gradient check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data_io
from .corruption import corrupt_dataset, sample_masks
from .gradsuite import TOLERANCE, run_suite
from .metrics import evaluate, sweep, sweep_csv
from .model import ABLATIONS, ConfigError, ModelParams, predict_arrays
from .training import fit

log = logging.getLogger("gian")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _ablations(values) -> frozenset:
    out = set()
    for v in values or ():
        out.update(x for x in v.split(",") if x)
    unknown = out - ABLATIONS
    if unknown:
        raise ConfigError(f"unknown ablation(s) {sorted(unknown)}; choose from {sorted(ABLATIONS)}")
    return frozenset(out)


def _load_config(args) -> config_mod.ExperimentConfig:
    return config_mod.load(args.config)


def _replace(obj, **changes):
    """dataclasses.replace that reports validation failures as config errors."""
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _split(data, name):
    return data if name == "all" else data.split(name)


def _require(path, what):
    if path is None:
        raise ConfigError(f"--{what} is required")
    return Path(path)


def _model_for(cfg, ckpt) -> ModelParams:
    params = ModelParams.init(cfg.train.model, 0)
    return data_io.load_checkpoint(ckpt, params)


def cmd_default_config(args) -> int:
    text = config_mod.dump(config_mod.ExperimentConfig())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    spec = _replace(cfg.synth, seed=args.seed)
    out = _require(args.out, "out")
    data = data_io.synth_generate(spec)
    data_io.save_dataset(data, out)
    print(json.dumps({"out": str(out), "n": data.n, "splits": list(data.splits), "T": data.T, "dims": list(data.dims)}))
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg = _load_config(args)
    cc = _replace(cfg.corrupt, pattern=args.pattern, rate=args.rate, seed=args.seed)
    spec = cc.spec()
    src, out = _require(args.data, "data"), _require(args.out, "out")
    data = data_io.load_dataset(src)
    bad, masks = corrupt_dataset(data, spec)
    data_io.save_dataset(bad, out)
    mask_path = out.with_suffix(".gmask")
    data_io.save_masks(masks, mask_path, spec.pattern, spec.rate, spec.seed)
    print(json.dumps({"out": str(out), "masks": str(mask_path), "pattern": spec.pattern.value, "rate": spec.rate}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    abl = _ablations(args.ablate) if args.ablate else cfg.train.ablation
    tcfg = _replace(cfg.train, seed=args.seed, epochs=args.epochs, ablation=abl)
    src, out = _require(args.data, "data"), _require(args.out, "out")
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    data = data_io.load_dataset(src)
    params, trainlog = fit(data, tcfg, on_epoch=lambda row: log.info("epoch %s", json.dumps(row, sort_keys=True)))
    data_io.save_checkpoint(params, out)
    log_path.write_text(trainlog.to_jsonl())
    resolved = dataclasses.replace(cfg, train=tcfg)
    out.with_suffix(".config.yaml").write_text(config_mod.dump(resolved))
    print(json.dumps({"checkpoint": str(out), "log": str(log_path), "epochs_run": len(trainlog.rows), "best_epoch": trainlog.best_epoch}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    ec = _replace(cfg.eval, pattern=args.pattern, rate=args.rate, seed=args.seed)
    abl = _ablations(args.ablate) if args.ablate else cfg.train.ablation
    src, ckpt = _require(args.data, "data"), _require(args.ckpt, "ckpt")
    data = _split(data_io.load_dataset(src), ec.split)
    params = _model_for(cfg, ckpt)
    rep = evaluate(params, cfg.train.model, data, ec.pattern, ec.rate, ec.seed, abl)
    text = json.dumps({"pattern": ec.pattern, "rate": ec.rate, **rep.as_dict()}, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    patterns = tuple(args.pattern) if args.pattern else None
    ec = _replace(cfg.eval, seed=args.seed, patterns=patterns)
    abl = _ablations(args.ablate) if args.ablate else cfg.train.ablation
    src, ckpt = _require(args.data, "data"), _require(args.ckpt, "ckpt")
    data = _split(data_io.load_dataset(src), ec.split)
    params = _model_for(cfg, ckpt)
    curves = {p: sweep(params, cfg.train.model, data, p, ec.rates, ec.seed, abl) for p in ec.patterns}
    text = sweep_csv(curves)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed or 0)
    failed = False
    for name, (err, secs) in results.items():
        ok = err <= TOLERANCE
        failed |= not ok
        print(f"{name:12s} max_rel_err={err:.3e} time={secs:.2f}s {'ok' if ok else 'FAIL'}")
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_embed(args) -> int:
    cfg = _load_config(args)
    ec = _replace(cfg.eval, pattern=args.pattern, rate=args.rate, seed=args.seed)
    abl = _ablations(args.ablate) if args.ablate else cfg.train.ablation
    src, ckpt, out = _require(args.data, "data"), _require(args.ckpt, "ckpt"), _require(args.out, "out")
    data = _split(data_io.load_dataset(src), ec.split)
    params = _model_for(cfg, ckpt)
    masks = None
    if ec.rate > 0:
        masks = sample_masks(ec.pattern, ec.rate, ec.seed, data.n, data.T)
    preds, fused = predict_arrays(data.X, params, cfg.train.model, abl, masks, return_fused=True)
    np.savez(out, fused=fused, preds=preds, labels=data.y)
    print(json.dumps({"out": str(out), "shape": list(fused.shape)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gian", description="Temporal hypergraph multimodal regression toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help, data=False, ckpt=False, corrupt=False, ablate=False):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="YAML config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the seed for this command")
        p.add_argument("--out", help="output path")
        if data:
            p.add_argument("--data", help="dataset file (.gds)")
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint file (.gckpt)")
        if corrupt:
            p.add_argument("--pattern", help="RM, TM or STM")
            p.add_argument("--rate", type=float, help="fraction of time steps to zero")
        if ablate:
            p.add_argument("--ablate", action="append", help="no_lthm, no_amgm or no_strategy (repeat or comma-separate)")
        p.set_defaults(func=fn)
        return p

    add("default-config", cmd_default_config, "print every configuration default as YAML")
    add("synth", cmd_synth, "generate a synthetic dataset")
    add("corrupt", cmd_corrupt, "write a corrupted copy of a dataset plus its mask sidecar", data=True, corrupt=True)
    train = add("train", cmd_train, "fit a model and write a checkpoint and JSONL log", data=True, ablate=True)
    train.add_argument("--epochs", type=int, help="override train.epochs")
    train.add_argument("--log", help="train log path (default: <out>.log.jsonl)")
    add("eval", cmd_eval, "metrics at one corruption setting", data=True, ckpt=True, corrupt=True, ablate=True)
    sw = add("sweep", cmd_sweep, "missing-rate sweep with AUILC summary as CSV", data=True, ckpt=True, ablate=True)
    sw.add_argument("--pattern", action="append", help="pattern to sweep (repeatable; default from config)")
    add("gradcheck", cmd_gradcheck, "finite-difference gradient suite")
    add("embed", cmd_embed, "dump fused representations per sample (.npz)", data=True, ckpt=True, corrupt=True, ablate=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"gian {args.command}: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (data_io.FormatError, OSError, FloatingPointError, ValueError) as e:
        print(f"gian {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
