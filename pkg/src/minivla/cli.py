"""Command-line entry point.

Verbs: gen-data, train, eval, augment-preview, ablate, metrics. Exit codes
are stable API: 0 success, 2 configuration error, 3 missing dataset or
checkpoint, 4 training diverged.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DIVERGED = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minivla", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", help="generate an expert demonstration dataset")
    p.add_argument("--out", required=True, help="output .rbds path")
    p.add_argument("--per-task", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", help="run config file (key=value lines)")
    p.add_argument("--stage", choices=["1", "2", "both", "direct-nl"], default="both")
    p.add_argument("--resume", action="store_true", help="skip stages whose final checkpoint already exists")
    p.add_argument("--from-scratch", action="store_true", help="allow stage 2 without a stage-1 checkpoint")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on subtask chains")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="run config; defaults to config.cfg next to the checkpoint")
    p.add_argument("--chains", type=int, default=100)
    p.add_argument("--instructions", choices=["standard", "natural"], default="standard")
    p.add_argument("--shift", action="store_true", help="recolored evaluation environment")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", help="results directory; defaults next to the checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment-preview", help="write before/after PPM dumps for each augmentation")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("ablate", help="train and evaluate one run per augmentation setting")
    p.add_argument("--config")
    p.add_argument("--augmentations", default="none,salt_pepper,affine,jitter,mixup,all,all_wo_affine")
    p.add_argument("--out", required=True)
    p.add_argument("--chains", type=int, default=50)
    p.add_argument("--seeds", default="0")
    p.add_argument("--shift", action="store_true", default=True)
    p.add_argument("--no-shift", dest="shift", action="store_false")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("metrics", help="average-length metric from rates or a results file")
    p.add_argument("--rates", help="comma-separated positional success rates")
    p.add_argument("--results", help="results JSON written by eval")
    p.set_defaults(func=cmd_metrics)

    return parser


def _load_run_config(args):
    from .config import RunConfig, apply_overrides, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    shortcut = []
    if getattr(args, "seed", None) is not None:
        shortcut.append(f"seed={args.seed}")
    if getattr(args, "dataset", None):
        shortcut.append(f"dataset={args.dataset}")
    if getattr(args, "out_dir", None):
        shortcut.append(f"out_dir={args.out_dir}")
    return apply_overrides(cfg, shortcut + list(getattr(args, "overrides", [])))


def cmd_gen_data(args) -> int:
    from .minisim import gen_dataset

    demos = gen_dataset(args.per_task, args.seed, args.out)
    print(f"wrote {len(demos)} demonstrations to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .minisim import load_dataset
    from .trainer import Trainer

    cfg = _load_run_config(args)
    if not os.path.exists(cfg.dataset):
        print(f"dataset not found: {cfg.dataset}", file=sys.stderr)
        return EXIT_MISSING
    demos = load_dataset(cfg.dataset)
    trainer = Trainer(cfg, demos)
    trainer.save_run_metadata()

    def stage1_done():
        return os.path.exists(os.path.join(cfg.out_dir, "stage1.rbbt"))

    if args.stage == "1":
        path = trainer.run_stage1()
    elif args.stage == "2":
        path = trainer.run_stage2(from_scratch=args.from_scratch)
    elif args.stage == "direct-nl":
        path = trainer.run_direct_nl()
    else:  # both
        if not (args.resume and stage1_done()):
            trainer.run_stage1()
        path = trainer.run_stage2()
    print(f"final checkpoint: {path}")
    print(f"loss log: {trainer.loss_csv}")
    return EXIT_OK


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in raw.split(",") if s.strip() != "")
    except ValueError as exc:
        from .config import ConfigError

        raise ConfigError(f"bad seed list {raw!r}") from exc


def _policy_factory(checkpoint: str, cfg, vocab):
    from .model import VLAPolicy
    from .nn import load_checkpoint

    params = load_checkpoint(checkpoint, dtype=np.float32)
    _check_model_match(params, cfg.model, len(vocab))

    def make_policy(env, policy_seed):
        return VLAPolicy(params, cfg.model, vocab, seed=policy_seed)

    return make_policy


def _check_model_match(params, model_cfg, vocab_size) -> None:
    from .config import ConfigError
    from .model import init_model_params

    reference = init_model_params(model_cfg, vocab_size, seed=0)
    if reference.names() != params.names():
        raise ConfigError("checkpoint parameters do not match the configured model")
    for name, t in reference.items():
        if t.data.shape != params[name].data.shape:
            raise ConfigError(f"checkpoint shape mismatch for {name}: {params[name].data.shape} vs {t.data.shape}")


def _eval_setup(checkpoint: str, config_path: str | None):
    from .config import RunConfig, load_config
    from .encoders import Vocabulary, default_vocabulary

    ckpt_dir = os.path.dirname(os.path.abspath(checkpoint))
    if config_path is None:
        candidate = os.path.join(ckpt_dir, "config.cfg")
        config_path = candidate if os.path.exists(candidate) else None
    cfg = load_config(config_path) if config_path else RunConfig()
    vocab_path = os.path.join(ckpt_dir, "vocab.txt")
    vocab = Vocabulary.load(vocab_path) if os.path.exists(vocab_path) else default_vocabulary()
    return cfg, vocab, ckpt_dir


def cmd_eval(args) -> int:
    from .evaluation import evaluate, write_results

    if not os.path.exists(args.checkpoint):
        print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
        return EXIT_MISSING
    cfg, vocab, ckpt_dir = _eval_setup(args.checkpoint, args.config)
    make_policy = _policy_factory(args.checkpoint, cfg, vocab)
    summary = evaluate(make_policy, n_chains=args.chains, mode=args.instructions, seeds=_parse_seeds(args.seeds), shift=args.shift)
    out_dir = args.out or os.path.join(ckpt_dir, f"eval_{args.instructions}" + ("_shift" if args.shift else ""))
    os.makedirs(out_dir, exist_ok=True)
    write_results(summary, os.path.join(out_dir, "results.json"), os.path.join(out_dir, "results.csv"))
    print(f"avg length {summary.avg_length:.3f} +- {summary.std_over_seeds:.3f} over {len(summary.per_seed)} seeds")
    print(f"results: {out_dir}")
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    from .augment import affine, augment_frame, color_jitter, robotic_mixup, salt_pepper, AugmentConfig
    from .minisim import render_views, sample_initial_state
    from .ppm import write_ppm

    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    state_a = sample_initial_state(rng)
    state_b = sample_initial_state(rng)
    img = render_views(state_a)[0]
    other = render_views(state_b)[0]
    write_ppm(os.path.join(args.out, "before.ppm"), img)
    write_ppm(os.path.join(args.out, "salt_pepper.ppm"), salt_pepper(img, 0.95, np.random.default_rng(args.seed + 1)))
    write_ppm(os.path.join(args.out, "affine.ppm"), affine(img, 0.15, np.random.default_rng(args.seed + 2)))
    write_ppm(os.path.join(args.out, "color_jitter.ppm"), color_jitter(img, 0.4, np.random.default_rng(args.seed + 3)))
    mixed = robotic_mixup((img, np.zeros((8, 3))), (other, np.zeros((8, 3))), 0.5)
    write_ppm(os.path.join(args.out, "mixup.ppm"), mixed.frames)
    write_ppm(os.path.join(args.out, "combined.ppm"), augment_frame(img, AugmentConfig(seed=args.seed), np.random.default_rng(args.seed + 4)))
    print(f"wrote previews to {args.out}")
    return EXIT_OK


_ABLATE_SETTINGS = ("none", "salt_pepper", "affine", "jitter", "mixup", "all", "all_wo_affine")


def _ablate_aug(setting: str, seed: int):
    from .augment import AugmentConfig

    if setting == "none":
        return AugmentConfig.none(seed)
    if setting in ("salt_pepper", "affine", "jitter", "mixup"):
        return AugmentConfig.only(setting, seed)
    if setting == "all":
        return AugmentConfig(seed=seed, affine_on=True)
    if setting == "all_wo_affine":
        return AugmentConfig(seed=seed)
    from .config import ConfigError

    raise ConfigError(f"unknown augmentation setting {setting!r}; expected one of {_ABLATE_SETTINGS}")


def cmd_ablate(args) -> int:
    from .config import ConfigError
    from .evaluation import evaluate
    from .minisim import load_dataset
    from .trainer import Trainer

    cfg = _load_run_config(args)
    if not os.path.exists(cfg.dataset):
        print(f"dataset not found: {cfg.dataset}", file=sys.stderr)
        return EXIT_MISSING
    settings = [s.strip() for s in args.augmentations.split(",") if s.strip()]
    for s in settings:
        _ablate_aug(s, cfg.seed)  # reject unknown settings before any work
    demos = load_dataset(cfg.dataset)
    seeds = _parse_seeds(args.seeds)
    os.makedirs(args.out, exist_ok=True)

    rows = []
    for setting in settings:
        run_cfg = dataclasses.replace(cfg, aug=_ablate_aug(setting, cfg.seed), out_dir=os.path.join(args.out, setting))
        trainer = Trainer(run_cfg, demos)
        trainer.save_run_metadata()
        ckpt = trainer.run_two_stage()
        make_policy = _policy_factory(ckpt, run_cfg, trainer.vocab)
        summary = evaluate(make_policy, n_chains=args.chains, mode="standard", seeds=seeds, shift=args.shift)
        rows.append((setting, summary.avg_length, summary.std_over_seeds))
        print(f"{setting}: avg length {summary.avg_length:.3f}")

    base = dict((s, a) for s, a, _ in rows).get("none")
    table = os.path.join(args.out, "ablation.csv")
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("setting,avg_length,std_over_seeds,increment\n")
        for setting, avg, std in rows:
            inc = "" if base is None else f"{avg - base:+.3f}"
            fh.write(f"{setting},{avg:.4f},{std:.4f},{inc}\n")
    print(f"ablation table: {table}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .config import ConfigError
    from .evaluation import avg_length

    if bool(args.rates) == bool(args.results):
        raise ConfigError("metrics needs exactly one of --rates or --results")
    if args.rates:
        try:
            rates = [float(x) for x in args.rates.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad rates {args.rates!r}") from exc
    else:
        if not os.path.exists(args.results):
            print(f"results file not found: {args.results}", file=sys.stderr)
            return EXIT_MISSING
        with open(args.results, encoding="utf-8") as fh:
            rates = json.load(fh)["rates"]
    print(f"avg length: {avg_length(rates):.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    from .config import ConfigError
    from .minisim import DatasetError
    from .nn import CheckpointError
    from .trainer import StageError, TrainingDivergedError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
