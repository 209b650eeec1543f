"""Command-line surface: train, eval, diagnose, ablate, trace, profile.

Exit codes: 0 success, 1 usage error (bad flags, bad config, bad inputs),
2 runtime failure (corrupt checkpoint, divergence, I/O). All randomness is
controlled by --seed; --no-timestamp makes output byte-reproducible by
dropping time stamps from file names and zeroing measured timings.
"""

import argparse
import json
import os
import sys

from . import corpus as corpus_mod
from . import diagnostics as diag
from . import memory as memsel
from .checkpoint_io import load_checkpoint, save_checkpoint
from .errors import TramsError, UsageError
from .memory import DIRECTIONS, STRATEGIES
from .model import eval_corpus, forward_segment, train_toy
from .reports import output_path, write_report
from .runconfig import parse_config


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out-dir", help="output directory "
                   "(default: $TRAMS_OUT_DIR or current directory)")
    p.add_argument("--no-timestamp", action="store_true",
                   help="reproducible output: no time stamps, timings zeroed")


def _add_model_flags(p, training=False):
    p.add_argument("--M", type=int, dest="pool_capacity",
                   help="memory pool capacity (default 128)")
    p.add_argument("--m", type=int, dest="selected_m",
                   help="memories kept by selection (default 32)")
    p.add_argument("--n", type=int, dest="segment_len",
                   help="segment length (default 32)")
    p.add_argument("--strategy", choices=STRATEGIES,
                   help="memory selection strategy (default trams)")
    p.add_argument("--direction", choices=DIRECTIONS, dest="metric_direction",
                   help="score ranking direction (default descending)")
    if training:
        p.add_argument("--layers", type=int, dest="num_layers",
                       help="transformer layers (default 4)")
        p.add_argument("--heads", type=int, dest="num_heads",
                       help="attention heads (default 4)")
        p.add_argument("--d-model", type=int, dest="d_model",
                       help="model width (default 64)")
        p.add_argument("--d-ffn", type=int, dest="d_ffn",
                       help="feed-forward width (default 256)")
        p.add_argument("--dropout", type=float, help="dropout rate (default 0)")
        p.add_argument("--no-u-bias", action="store_true",
                       help="drop the content bias term from selection scores")
        p.add_argument("--kind", choices=("char", "word"),
                       help="tokenizer kind (default char)")
        p.add_argument("--max-vocab", type=int, dest="max_vocab",
                       help="word-kind vocabulary cap")
        p.add_argument("--lr", type=float, help="learning rate (default 2.5e-4)")
        p.add_argument("--steps", type=int, help="training steps (default 600)")
        p.add_argument("--batch", type=int, help="parallel lanes (default 8)")
        p.add_argument("--no-cosine", action="store_true",
                       help="constant learning rate instead of cosine decay")


_CONFIG_KEYS = ("corpus", "checkpoint", "seed", "out_dir", "kind", "max_vocab",
                "num_layers", "num_heads", "d_model", "d_ffn", "segment_len",
                "pool_capacity", "selected_m", "strategy", "metric_direction",
                "dropout", "lr", "steps", "batch")


def _overrides(args):
    ov = {}
    for key in _CONFIG_KEYS:
        if getattr(args, key, None) is not None:
            ov[key] = getattr(args, key)
    if getattr(args, "no_u_bias", False):
        ov["select_u_bias"] = False
    if getattr(args, "no_cosine", False):
        ov["cosine"] = False
    return ov


def _resolve(args):
    cfg = parse_config(args.config, _overrides(args))
    out_dir = cfg.out_dir or os.environ.get("TRAMS_OUT_DIR") or "."
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def _load_eval_inputs(cfg):
    if not cfg.checkpoint:
        raise UsageError("a --checkpoint path is required")
    if not cfg.corpus:
        raise UsageError("a --corpus path is required")
    ckpt = load_checkpoint(cfg.checkpoint)
    if ckpt.vocab is None:
        raise UsageError("checkpoint stores no vocabulary; cannot encode corpus")
    text = corpus_mod.read_text(cfg.corpus)
    stream = corpus_mod.encode(ckpt.vocab, text)
    return ckpt, stream


def _emit(report, out_dir, experiment, stamped):
    csv_path = output_path(out_dir, experiment, "csv", timestamp=stamped)
    json_path = output_path(out_dir, experiment, "json", timestamp=stamped)
    write_report(report, csv_path, "csv")
    write_report(report, json_path, "json")
    return {"csv": csv_path, "json": json_path}


def cmd_train(args):
    cfg, out_dir = _resolve(args)
    if not cfg.corpus:
        raise UsageError("a --corpus path is required")
    text = corpus_mod.read_text(cfg.corpus)
    vocab, stream = corpus_mod.tokenize_corpus(text, cfg.kind, cfg.max_vocab)
    mcfg = cfg.to_model_config(vocab.size)
    result = train_toy(mcfg, stream, cfg.to_train_params())
    result.checkpoint.vocab = vocab
    save_path = args.save or os.path.join(out_dir, "model.ckpt")
    save_checkpoint(result.checkpoint, save_path)
    curve = [{"step": i, "mean_nll_nats": v}
             for i, v in enumerate(result.loss_curve)]
    loss_csv = output_path(out_dir, "train-loss", "csv",
                           timestamp=not args.no_timestamp)
    if curve:
        write_report(curve, loss_csv, "csv")
    summary = {
        "checkpoint": save_path,
        "vocab_size": vocab.size,
        "steps": len(result.loss_curve),
        "final_nll_nats": result.loss_curve[-1] if result.loss_curve else None,
        "loss_csv": loss_csv if curve else None,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(args):
    cfg, _ = _resolve(args)
    ckpt, stream = _load_eval_inputs(cfg)
    rep = eval_corpus(
        ckpt, stream,
        strategy=cfg.given("strategy"),
        segment_len=cfg.given("segment_len"),
        pool_capacity=cfg.given("pool_capacity"),
        selected_m=cfg.given("selected_m"),
        direction=cfg.given("metric_direction"),
        seed=cfg.seed,
        timestamps=not args.no_timestamp,
    )
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_diagnose(args):
    cfg, out_dir = _resolve(args)
    ckpt, stream = _load_eval_inputs(cfg)
    stamped = not args.no_timestamp
    kw = dict(segment_len=cfg.given("segment_len"),
              pool_capacity=cfg.given("pool_capacity"),
              max_segments=args.max_segments)
    if args.what == "correlation":
        buckets = _int_list(args.buckets) if args.buckets else diag.BUCKETS
        report = diag.ranking_correlation_experiment(ckpt, stream,
                                                     buckets=buckets, **kw)
        experiment = "correlation"
    elif args.what == "norms":
        report = diag.norm_distribution(ckpt, stream, **kw)
        experiment = "norms"
    else:
        report = diag.utilization_experiment(
            ckpt, stream, m=cfg.given("selected_m"),
            direction=cfg.given("metric_direction"), seed=cfg.seed,
            compare_directions=args.directions, **kw)
        experiment = "utilization"
    paths = _emit(report, out_dir, experiment, stamped)
    summary = report.to_dict()
    summary["outputs"] = paths
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_ablate(args):
    cfg, out_dir = _resolve(args)
    ckpt, stream = _load_eval_inputs(cfg)
    curve = diag.ablation_sweep(
        ckpt, stream, args.param, _int_list(args.values),
        strategy=cfg.given("strategy") or "trams",
        m=cfg.given("selected_m"),
        segment_len=cfg.given("segment_len"),
        pool_capacity=cfg.given("pool_capacity"),
        seed=cfg.seed,
    )
    paths = _emit(curve, out_dir, "ablation-%s" % args.param,
                  not args.no_timestamp)
    summary = curve.to_dict()
    summary["outputs"] = paths
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_trace(args):
    cfg, out_dir = _resolve(args)
    ckpt, stream = _load_eval_inputs(cfg)
    config = ckpt.config
    n = cfg.given("segment_len") or config.segment_len
    cap = cfg.given("pool_capacity")
    cap = config.pool_capacity if cap is None else cap
    if cap < 1:
        raise UsageError("trace: needs a memory pool")
    strategy = cfg.given("strategy") or config.strategy
    if strategy == "none":
        raise UsageError("trace: strategy none never selects")
    from .numerics import Rng

    rng = Rng(cfg.seed)
    pool = memsel.empty_pool(config.num_layers, config.d_model, cap,
                             ckpt.dtype())
    detok = lambda ids: corpus_mod.detokenize(ckpt.vocab, ids)
    records = []
    for k, pos in enumerate(range(0, stream.shape[0] - 1, n)):
        if k >= args.segments:
            break
        before = pool
        _, pool, stats = forward_segment(
            ckpt, stream[pos : pos + n], pool, strategy=strategy, seg_start=pos,
            m=cfg.given("selected_m"), direction=cfg.given("metric_direction"),
            rng=rng, collect_selections=True,
        )
        for sel in stats.selections or ():
            for rec in memsel.selection_trace(sel, before, detok):
                rec["segment"] = k
                records.append(rec)
    path = output_path(out_dir, "trace", "jsonl",
                       timestamp=not args.no_timestamp)
    with open(path, "w", encoding="utf-8") as fh:
        if records:
            fh.write(memsel.trace_to_jsonl(records))
            fh.write("\n")
    print(json.dumps({"trace": path, "records": len(records)},
                     indent=2, sort_keys=True))
    return 0


def cmd_profile(args):
    cfg, out_dir = _resolve(args)
    ckpt, stream = _load_eval_inputs(cfg)
    strategies = tuple(args.strategies.split(",")) if args.strategies else (
        "none", "recency", "trams")
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError("profile: unknown strategy %r" % (s,))
    caps = _int_list(args.scaling_M) if args.scaling_M else None
    prof = diag.cost_profile(
        ckpt, stream, strategies=strategies, repeats=args.repeats,
        m=cfg.given("selected_m"), segment_len=cfg.given("segment_len"),
        pool_capacity=cfg.given("pool_capacity"), scaling_capacities=caps,
        seed=cfg.seed,
    )
    if args.no_timestamp:
        for row in prof.rows:
            row["median_wall_s"] = 0.0
            row["peak_rss_bytes"] = 0
        if prof.scaling:
            prof.scaling["selection_seconds"] = [0.0] * len(
                prof.scaling["selection_seconds"])
            prof.scaling["exponent"] = None
    paths = _emit(prof, out_dir, "cost", not args.no_timestamp)
    summary = prof.to_dict()
    summary["outputs"] = paths
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError("expected a comma-separated list of integers, got %r"
                         % (text,))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="trams",
        description="Toy memory-augmented LM with training-free memory selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a toy model on a text corpus")
    p.add_argument("--corpus", help="UTF-8 text file")
    p.add_argument("--save", help="checkpoint path (default OUT_DIR/model.ckpt)")
    _add_model_flags(p, training=True)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; JSON on stdout")
    p.add_argument("--corpus", help="UTF-8 text file")
    p.add_argument("--checkpoint", help="checkpoint to evaluate")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="correlation, norm, or utilization study")
    p.add_argument("what", choices=("correlation", "norms", "utilization"))
    p.add_argument("--corpus", help="UTF-8 text file")
    p.add_argument("--checkpoint", help="checkpoint to analyze")
    p.add_argument("--buckets", help="top-percent buckets, e.g. 1,10,30,50,100")
    p.add_argument("--max-segments", type=int, default=16,
                   help="segments to sample (default 16)")
    p.add_argument("--directions", action="store_true",
                   help="also compare ranking directions (utilization)")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("ablate", help="sweep M, m, n, or layer against recency")
    p.add_argument("--param", required=True, choices=("M", "m", "n", "layer"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--corpus", help="UTF-8 text file")
    p.add_argument("--checkpoint", help="checkpoint to sweep")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("trace", help="dump per-head selection records as JSONL")
    p.add_argument("--corpus", help="UTF-8 text file")
    p.add_argument("--checkpoint", help="checkpoint to trace")
    p.add_argument("--segments", type=int, default=4,
                   help="segments to trace (default 4)")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("profile", help="wall time and peak memory per strategy")
    p.add_argument("--corpus", help="UTF-8 text file")
    p.add_argument("--checkpoint", help="checkpoint to profile")
    p.add_argument("--strategies", help="comma-separated (default none,recency,trams)")
    p.add_argument("--repeats", type=int, default=5,
                   help="timed repeats after warmup (default 5)")
    p.add_argument("--scaling-M", dest="scaling_M",
                   help="pool sizes for the selection-time scaling fit")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_profile)
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args) or 0
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except (TramsError, OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
