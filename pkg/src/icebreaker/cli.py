"""``icebreaker`` command line: synth, train, predict, eval.

Exit codes: 0 success, 1 config, 2 usage, 3 training divergence,
4 data/format, 5 evaluation strictness.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import config as config_mod
from .dataset import SynthConfig, generate_synthetic, load_dataset, load_relevance, save_dataset
from .errors import ConfigError, EvalError, IcebreakerError, TrainingDiverged
from .evaluation import HIT_KS, RECALL_KS, evaluate, load_predictions, save_predictions, save_report
from .models import load_model, rank, save_model, train
from .parallel import max_workers

log = logging.getLogger("icebreaker")

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_DIVERGED, EXIT_DATA, EXIT_EVAL = 0, 1, 2, 3, 4, 5


def _ks(text: str) -> list[int]:
    try:
        ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise argparse.ArgumentTypeError("K values must be positive")
    return ks


def _fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated reals, got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected exactly three fractions")
    return parts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icebreaker", description="Cold-start video relevance models.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic cluster-structured dataset")
    d = SynthConfig()
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--videos", type=int, default=d.n_videos)
    s.add_argument("--clusters", type=int, default=d.n_clusters)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--video-dim", type=int, default=d.video_dim)
    s.add_argument("--frame-dim", type=int, default=d.frame_dim)
    s.add_argument("--max-frames", type=int, default=d.max_frames)
    s.add_argument("--relevant", type=int, default=d.relevant_per_query)
    s.add_argument("--sigma", type=float, default=d.cluster_noise_sigma)
    s.add_argument("--split-fractions", type=_fractions, default=d.split_fractions)

    t = sub.add_parser("train", help="train one model variant on the train split")
    t.add_argument("--model", required=True, choices=config_mod.MODELS)
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path)
    t.add_argument("--config", type=Path, help="key = value file with dotted keys")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="epochs for the neural variants")
    t.add_argument("--set", dest="settings", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. deeplda.eps_threshold=0.5")

    pr = sub.add_parser("predict", help="write top-K predictions for a split")
    pr.add_argument("--model", required=True, type=Path)
    pr.add_argument("--data", required=True, type=Path)
    pr.add_argument("--split", choices=("val", "test"), default="test")
    pr.add_argument("--topk", type=int, default=max(RECALL_KS))
    pr.add_argument("--out", required=True, type=Path)

    e = sub.add_parser("eval", help="score a predictions CSV against relevance lists")
    e.add_argument("--pred", required=True, type=Path)
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", type=Path, help="dataset directory (relevance and split)")
    src.add_argument("--relevance", type=Path, help="relevance file")
    e.add_argument("--split", choices=("train", "val", "test"),
                   help="restrict ground truth to this split (needs --data)")
    e.add_argument("--hit-ks", type=_ks, default=list(HIT_KS))
    e.add_argument("--recall-ks", type=_ks, default=list(RECALL_KS))
    e.add_argument("--no-strict", dest="strict", action="store_false")
    e.add_argument("--out", type=Path, help="write metric,k,value CSV here")
    return p


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_videos=args.videos, n_clusters=args.clusters, video_dim=args.video_dim,
        frame_dim=args.frame_dim, max_frames=args.max_frames, relevant_per_query=args.relevant,
        cluster_noise_sigma=args.sigma, seed=args.seed, split_fractions=args.split_fractions,
    )
    frames, videos, rel, split = generate_synthetic(cfg)
    paths = save_dataset(args.out, frames, videos, rel, split)
    print(f"synth seed={cfg.seed} videos={cfg.n_videos} clusters={cfg.n_clusters} "
          f"sigma={cfg.cluster_noise_sigma} files={','.join(str(p) for p in paths)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_mod.RunConfig(model=args.model)
    if args.config is not None:
        config_mod.load_config(args.config, cfg)
        cfg.model = args.model
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        config_mod.apply_setting(cfg, "reg.epochs", str(args.epochs))
        config_mod.apply_setting(cfg, "deeplda.epochs", str(args.epochs))
    for item in args.settings:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        config_mod.apply_setting(cfg, key, value)
    cfg = config_mod.seeded(cfg)
    data = load_dataset(args.data)
    model = train(cfg, data)
    save_model(model, args.out)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.topk < 1:
        raise ConfigError("--topk must be >= 1")
    model = load_model(args.model)
    data = load_dataset(args.data)
    queries = sorted(q for q in data.split.get(args.split) if q in data.videos)
    preds = rank(model, data, queries, args.topk)
    save_predictions(preds, args.out)
    log.info("wrote %d rankings to %s", len(preds), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.data is not None:
        data = load_dataset(args.data)
        rel = data.relevance
        if args.split:
            rel = rel.restrict(data.split.get(args.split))
    else:
        if args.split:
            raise ConfigError("--split needs --data")
        rel = load_relevance(args.relevance)
    preds = load_predictions(args.pred)
    report = evaluate(preds, rel, args.hit_ks, args.recall_ks, strict=args.strict)
    sys.stdout.write(report.to_table())
    if args.out is not None:
        save_report(report, args.out)
    return EXIT_OK


_COMMANDS = {"synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval}


def exit_code(exc: IcebreakerError) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, TrainingDiverged):
        return EXIT_DIVERGED
    if isinstance(exc, EvalError):
        return EXIT_EVAL
    return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        with threadpool_limits(limits=max_workers()):
            return _COMMANDS[args.command](args)
    except IcebreakerError as exc:
        print(f"icebreaker {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
