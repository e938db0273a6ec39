"""Command-line entry point: ``iva <subcommand> ...``.

Exit status is 0 on success, 2 for usage errors and 1 for failures while
running.  ``IVA_SEED`` in the environment overrides any seed flag or
config value.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluation
from .adapter import injection_schedule
from .autodiff import serialize
from .config import ModelConfig
from .errors import ConfigError, IvaError
from .experiments import NeedleSetup, run_needle
from .features import (
    generate_caption_dataset,
    generate_needle_dataset,
    load_features,
    read_manifest,
    write_manifest,
)
from .host import IvaModel
from .training import OptimConfig, StagePlan, gradcheck_model, run_stage

TRAIN_CONFIG_KEYS = ("stage", "steps", "batch", "lr", "seed", "dataset_manifest", "checkpoint_dir")
STAGE_DEFAULT_LR = {1: 3e-4, 2: 1e-4}


class UsageError(Exception):
    """Bad arguments or config contents; reported with exit status 2."""


def effective_seed(seed):
    env = os.environ.get("IVA_SEED")
    if env is None or env == "":
        return seed
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"IVA_SEED must be an integer, got {env!r}") from None


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


# -- subcommands -----------------------------------------------------------------

def cmd_gen_data(args):
    seed = effective_seed(args.seed)
    if args.kind == "needle":
        samples = generate_needle_dataset(args.count, args.frames, args.patches, args.d_v, args.vocab,
                                          seed, num_classes=args.classes, num_families=args.families)
    else:
        samples = generate_caption_dataset(args.count, args.frames, args.patches, args.d_v, args.vocab,
                                           seed, num_classes=args.classes)
    path = write_manifest(args.out, samples)
    print(f"wrote {len(samples)} {args.kind} samples to {path}")
    return 0


def _model_from_args(checkpoint, config_path, seed):
    if checkpoint:
        return IvaModel.load(checkpoint)
    if config_path:
        with open(config_path) as fh:
            return IvaModel(ModelConfig.from_dict(json.load(fh)), seed=seed)
    return IvaModel(ModelConfig.build(), seed=seed)


def cmd_tokenize(args):
    model = _model_from_args(args.checkpoint, args.model_config, effective_seed(args.seed))
    fs = load_features(args.features)
    tokens = model.tokenizer(fs.global_feats[None], fs.fine_feats[None]).tokens.data[0]
    if args.out:
        serialize.save_tensor(args.out, tokens)
        print(f"wrote video tokens {tokens.shape} to {args.out}")
    else:
        print(json.dumps({"shape": list(tokens.shape), "tokens": tokens.tolist()}))
    return 0


def load_train_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    missing = [k for k in ("stage", "steps", "dataset_manifest", "checkpoint_dir") if k not in cfg]
    if missing:
        raise UsageError(f"config {path} is missing {', '.join(missing)}")
    if cfg["stage"] not in (1, 2):
        raise UsageError(f"config stage must be 1 or 2, got {cfg['stage']!r}")
    return cfg


def cmd_train(args):
    cfg = load_train_config(args.config)
    stage = cfg["stage"]
    if args.stage is not None and args.stage != stage:
        raise UsageError(f"--stage {args.stage} disagrees with config stage {stage}")
    seed = effective_seed(cfg.get("seed", 0))
    base = os.path.dirname(os.path.abspath(args.config))
    manifest = os.path.join(base, cfg["dataset_manifest"])
    dataset = read_manifest(manifest)
    if cfg.get("init_checkpoint"):
        model = IvaModel.load(os.path.join(base, cfg["init_checkpoint"]))
    else:
        mc = cfg.get("model")
        config = ModelConfig.from_dict(mc) if mc and "host" in mc else ModelConfig.build(**(mc or {}))
        model = IvaModel(config, seed=seed, with_iva=cfg.get("with_iva", True))
    plan = StagePlan.for_stage(stage)
    optim = OptimConfig(lr=cfg.get("lr", STAGE_DEFAULT_LR[stage]), batch=cfg.get("batch", 8),
                        warmup_steps=cfg.get("warmup_steps", 0), min_lr=cfg.get("min_lr", 0.0), seed=seed)
    log = run_stage(model, plan, dataset, cfg["steps"], optim)
    out = os.path.join(base, cfg["checkpoint_dir"])
    model.save(out, extra={"stage": stage, "seed": seed})
    log.write_csv(os.path.join(out, "train_log.csv"))
    print(f"stage {stage}: {len(log.steps)} steps, loss {log.losses[0]:.4f} -> {log.losses[-1]:.4f}; "
          f"checkpoint in {out}")
    return 0


def cmd_eval(args):
    if args.responses:
        report = evaluation.aggregate(evaluation.read_judge_responses(args.responses))
    else:
        if not (args.checkpoint and args.manifest):
            raise UsageError("eval needs --checkpoint and --manifest (or --responses)")
        model = IvaModel.load(args.checkpoint)
        samples = read_manifest(args.manifest)
        preds = evaluation.predict_answers(model, samples, use_iva=not args.no_iva)
        if args.write_requests:
            evaluation.write_judge_requests(
                args.write_requests, ((i, s.question, p, s.answer) for i, (s, p) in enumerate(zip(samples, preds)))
            )
        report = evaluation.aggregate([evaluation.judge_exact(p, s.answer) for p, s in zip(preds, samples)])
    _emit(json.loads(report.to_json()), args.out)
    print(report.summary(), file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    seed = effective_seed(args.seed)
    if args.checkpoint:
        model = IvaModel.load(args.checkpoint)
    else:
        config = ModelConfig.build(vocab_size=12, d_m=16, layers=2, heads=4, max_seq_len=24, d_v=8,
                                   ct_heads=2, ct_layers=1, lq=2, ni=2, d_s=8, iva_depth=1)
        model = IvaModel(config, seed=seed, iva_out_std=0.1)
    c = model.config
    rng = np.random.default_rng(seed)
    sample = generate_needle_dataset(1, 3, 2, c.tokenizer.d_v, c.host.vocab_size, seed,
                                     num_classes=2, num_families=2)[0] if c.tokenizer.d_v >= 5 else None
    if sample is None:
        raise ConfigError("gradcheck needs d_v >= 5 to build a needle sample")
    if not args.checkpoint:
        # move query projections off their zero start so every path carries gradient
        for name, p in model.named_parameters():
            if name.endswith("_q.weight"):
                p.data = rng.normal(0.0, 0.3, p.shape)
    report = gradcheck_model(model, sample, eps=args.eps, subset=args.subset, seed=seed)
    _emit(json.loads(report.to_json()), args.out)
    print(f"max relative error {report.max_error:.3e} (tolerance {args.tol:g})", file=sys.stderr)
    return 0 if report.max_error < args.tol else 1


def cmd_schedule(args):
    print(" ".join(str(i) for i in injection_schedule(args.layers, args.ni)))
    return 0


def cmd_ablate(args):
    seed = effective_seed(args.seed)
    setup = NeedleSetup(steps=args.steps, train=args.train, test=args.test, layers=args.layers)
    data = setup.datasets(seed)
    results = []
    for lq in args.lq:
        for ni in args.ni:
            setup.lq, setup.ni = lq, ni
            run, _ = run_needle(setup, seed, with_iva=True, data=data)
            row = {"lq": lq, "ni": ni, "accuracy": run.final_accuracy, "steps": run.steps_run,
                   "seconds": round(run.seconds, 2)}
            results.append(row)
            print(json.dumps(row), flush=True)
    if args.out:
        _emit(results, args.out)
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="iva", description="Video LLM with an interactive visual adapter.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset and its manifest")
    g.add_argument("--kind", choices=("needle", "caption"), default="needle")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--patches", type=int, default=8)
    g.add_argument("--d-v", type=int, default=32)
    g.add_argument("--vocab", type=int, default=128)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--families", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("tokenize", help="dump the video tokens of one feature file")
    t.add_argument("--features", required=True)
    t.add_argument("--checkpoint")
    t.add_argument("--model-config", help="model config JSON when no checkpoint is given")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="IVAT output file (JSON to stdout when omitted)")
    t.set_defaults(func=cmd_tokenize)

    tr = sub.add_parser("train", help="run one training stage from a JSON config")
    tr.add_argument("--config", required=True,
                    help="JSON with " + ", ".join(TRAIN_CONFIG_KEYS))
    tr.add_argument("--stage", type=int, choices=(1, 2))
    tr.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="answer a manifest with a checkpoint and report accuracy")
    e.add_argument("--checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--no-iva", action="store_true", help="skip the adapter at inference")
    e.add_argument("--write-requests", help="also write judge requests (JSON lines) here")
    e.add_argument("--responses", help="aggregate an external judge's response file instead")
    e.add_argument("--out", help="report path (stdout when omitted)")
    e.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every trainable parameter")
    gc.add_argument("--checkpoint")
    gc.add_argument("--eps", type=float, default=1e-6)
    gc.add_argument("--subset", type=int, default=None, help="coordinates per parameter")
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--out")
    gc.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("schedule", help="print the injection layers")
    s.add_argument("--layers", type=int, required=True)
    s.add_argument("--ni", type=int, required=True)
    s.set_defaults(func=cmd_schedule)

    a = sub.add_parser("ablate", help="sweep LQ and NI on the synthetic needle task")
    a.add_argument("--lq", type=int, nargs="+", default=[4])
    a.add_argument("--ni", type=int, nargs="+", default=[2])
    a.add_argument("--layers", type=int, default=4)
    a.add_argument("--steps", type=int, default=1000)
    a.add_argument("--train", type=int, default=2000)
    a.add_argument("--test", type=int, default=500)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"iva: error: {exc}", file=sys.stderr)
        return 2
    except (IvaError, OSError, ValueError) as exc:
        print(f"iva: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
