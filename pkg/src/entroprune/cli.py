"""Command-line front end: trace | analyze | plan | evaluate | bench.

Every run writes its outputs plus a `<out>.manifest.json` naming the
resolved parameters and the CRC32 of each input and output file;
re-running with the same parameters reproduces every output byte-exactly
(timing tables excepted).

Exit codes: 0 success, 2 usage, 3 I/O or trace-format failure, 4 domain
constraint (capacity, granularity mismatch, estimator contract).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import zlib
from pathlib import Path

from . import __version__
from .corpus import (
    MarkovSpec,
    RepetitionSpec,
    generate_corpus,
    uniform_corpus,
)
from .errors import EntropruneError, TraceError
from .estimators import Bucket, EstimatorConfig, Knn, Renyi
from .importance import (
    Criterion,
    Granularity,
    ImportanceScore,
    PruningPlan,
    build_profile,
    make_cosine_plan,
    make_plan,
    profile_csv,
    read_profile_csv,
)
from .model import (
    ToyModelConfig,
    bench_inference,
    collect_trace,
    init_model,
    load_checkpoint,
    perplexity,
    save_checkpoint,
    scale_attention_output,
    train_briefly,
)
from .svg import write_line_chart
from .trace import MAGIC, SamplePolicy, read_trace_file, write_trace_file


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _scale_spec(text: str) -> tuple[int, float]:
    layer, _, factor = text.partition(":")
    try:
        return int(layer), float(factor)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected LAYER:FACTOR, got {text!r}"
        ) from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=_positive_int,
                   default=max(1, os.cpu_count() or 1),
                   help="worker pool size for analysis (default: all cores)")
    p.add_argument("--out", required=True, help="output path or prefix")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=_positive_int, default=8)
    p.add_argument("--dim", type=_positive_int, default=64)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--ffn", type=_positive_int, default=256)
    p.add_argument("--vocab", type=_positive_int, default=256)
    p.add_argument("--max-seq", type=_positive_int, default=128)
    p.add_argument("--train-steps", type=_nonneg_int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--scale-attn-out", type=_scale_spec, action="append",
                   default=[], metavar="LAYER:FACTOR",
                   help="scale a layer's attention output projection")
    p.add_argument("--load-model", default=None,
                   help="load a checkpoint instead of initializing")


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", choices=["repetition", "markov", "uniform"],
                   default="repetition")
    p.add_argument("--sequences", type=_positive_int, default=16)
    p.add_argument("--corpus-len", type=_positive_int, default=64,
                   help="tokens per corpus sequence")
    p.add_argument("--period", type=_positive_int, default=8)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--order", type=_positive_int, default=2)
    p.add_argument("--corpus-seed", type=int, default=None,
                   help="defaults to --seed + 1")


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=["bucket", "knn", "renyi"],
                   default="bucket")
    p.add_argument("--bins", type=_positive_int, default=40)
    p.add_argument("--k-neighbors", type=_positive_int, default=25)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--max-tokens", type=_positive_int, default=4096)
    p.add_argument("--sample-seed", type=int, default=0)


def _estimator_from_args(args) -> EstimatorConfig:
    policy = SamplePolicy(max_tokens=args.max_tokens, seed=args.sample_seed)
    if args.estimator == "bucket":
        return EstimatorConfig(Bucket(args.bins), policy)
    if args.estimator == "knn":
        return EstimatorConfig(Knn(args.k_neighbors), policy)
    return EstimatorConfig(Renyi(args.alpha, args.bins), policy)


def _model_from_args(args):
    if args.load_model:
        model = load_checkpoint(args.load_model)
    else:
        config = ToyModelConfig(
            layers=args.layers,
            hidden_dim=args.dim,
            heads=args.heads,
            ffn_dim=args.ffn,
            vocab=args.vocab,
            max_seq=args.max_seq,
            seed=args.seed,
        )
        model = init_model(config)
    for layer, factor in args.scale_attn_out:
        scale_attention_output(model, layer, factor)
    if args.train_steps > 0:
        corpus = _corpus_from_args(args, model.config.vocab)
        train_briefly(model, corpus, args.train_steps, args.lr)
    return model


def _corpus_from_args(args, vocab: int):
    seed = args.corpus_seed if args.corpus_seed is not None else args.seed + 1
    if args.corpus == "uniform":
        return uniform_corpus(vocab, args.sequences, args.corpus_len, seed)
    if args.corpus == "markov":
        spec = MarkovSpec(order=args.order, seed=seed)
    else:
        spec = RepetitionSpec(period=args.period, noise=args.noise, seed=seed)
    return generate_corpus(spec, vocab, args.sequences, args.corpus_len)


def _crc_of(path: Path) -> int:
    return zlib.crc32(Path(path).read_bytes())


def _write_manifest(out: Path, command: str, args, inputs, outputs,
                    started: float) -> None:
    params = {
        k: v for k, v in sorted(vars(args).items())
        if k != "func" and not callable(v)
    }
    doc = {
        "tool": "entroprune",
        "version": __version__,
        "command": command,
        "parameters": params,
        "seed": getattr(args, "seed", None),
        "inputs": [
            {"path": str(p), "crc32": _crc_of(p)} for p in inputs
        ],
        "outputs": [
            {"path": str(p), "crc32": _crc_of(p)} for p in outputs
        ],
        "wall_clock_s": round(time.time() - started, 6),
    }
    manifest_path = Path(str(out) + ".manifest.json")
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# -- subcommands ---------------------------------------------------------------

def _cmd_trace(args) -> int:
    started = time.time()
    model = _model_from_args(args)
    corpus = _corpus_from_args(args, model.config.vocab)
    trace = collect_trace(model, corpus)
    out = Path(args.out)
    write_trace_file(trace, out)
    outputs = [out]
    if args.save_model:
        save_checkpoint(model, args.save_model)
        outputs.append(Path(args.save_model))
    inputs = [Path(args.load_model)] if args.load_model else []
    _write_manifest(out, "trace", args, inputs, outputs, started)
    return 0


def _cmd_analyze(args) -> int:
    started = time.time()
    trace = read_trace_file(args.trace)
    config = _estimator_from_args(args)
    granularity = Granularity(args.granularity)
    profile = build_profile(trace, config, granularity, threads=args.threads)
    out = Path(args.out)
    csv_path = Path(str(out) + ".csv")
    svg_path = Path(str(out) + ".svg")
    csv_path.write_text(profile_csv(profile), encoding="utf-8")
    blocks = list(range(1, profile.block_count + 1))
    h_out = [float(profile.h_values[profile.boundaries(b)[1]]) for b in blocks]
    write_line_chart(
        svg_path,
        [
            ("H", [0] + blocks, [float(profile.h_values[0])] + h_out),
            ("delta H", blocks, [float(d) for d in profile.delta_h]),
        ],
        title=f"entropy by block ({config.label()}, {granularity.value})",
        x_label="block index",
        y_label="nats",
    )
    _write_manifest(out, "analyze", args, [Path(args.trace)],
                    [csv_path, svg_path], started)
    return 0


def _plan_from_input(args) -> PruningPlan:
    path = Path(args.input)
    with open(path, "rb") as fh:
        is_trace = fh.read(4) == MAGIC
    criterion = Criterion(args.criterion)
    if criterion is Criterion.COSINE_DISTANCE:
        if not is_trace:
            raise EntropruneError(
                "the cosine criterion needs snapshot geometry: pass a trace, "
                "not a profile CSV"
            )
        trace = read_trace_file(path)
        return make_cosine_plan(
            trace, Granularity(args.granularity), args.k, args.s_start
        )
    if is_trace:
        trace = read_trace_file(path)
        profile = build_profile(
            trace, _estimator_from_args(args), Granularity(args.granularity),
            threads=args.threads,
        )
        return make_plan(profile, args.k, args.s_start)
    header, blocks = read_profile_csv(path.read_text(encoding="utf-8"))
    entries = [
        ImportanceScore(b["block_index"], b["delta_h_nats"],
                        Criterion.ENTROPY_INCREASE)
        for b in blocks
    ]
    s_start = args.s_start
    if s_start is None and "s_start" in header:
        s_start = int(header["s_start"])
    plan = make_plan(entries, args.k, s_start)
    plan.granularity = Granularity(header.get("granularity", args.granularity))
    return plan


def _cmd_plan(args) -> int:
    started = time.time()
    plan = _plan_from_input(args)
    out = Path(args.out)
    out.write_text(plan.to_json() + "\n", encoding="utf-8")
    print(f"criterion={plan.criterion.value} granularity="
          f"{plan.granularity.value} s_start={plan.s_start} k={plan.k}")
    print(f"{'rank':>4}  {'block':>5}  {'score':>12}  pruned")
    for rank, entry in enumerate(plan.ranked, start=1):
        marker = "yes" if entry.block_index in plan.prune_set else ""
        print(f"{rank:>4}  {entry.block_index:>5}  {entry.score:>12.6f}  {marker}")
    _write_manifest(out, "plan", args, [Path(args.input)], [out], started)
    return 0


def _cmd_evaluate(args) -> int:
    started = time.time()
    plan = PruningPlan.from_json(Path(args.plan).read_text(encoding="utf-8"))
    model = _model_from_args(args)
    if plan.granularity in (Granularity.ATTENTION, Granularity.MLP,
                            Granularity.FULL_LAYER):
        max_block = max((e.block_index for e in plan.ranked), default=0)
        if max_block > model.config.layers:
            raise EntropruneError(
                f"plan ranks block {max_block} but the model has only "
                f"{model.config.layers} layers (granularity mismatch)"
            )
    corpus = _corpus_from_args(args, model.config.vocab)
    base = perplexity(model, corpus)
    lines = ["k,pruned_blocks,perplexity,degradation_pct"]
    for k in range(plan.k + 1):
        mask = plan.prefix_mask(model.config.layers, k)
        ppl = base if k == 0 else perplexity(model, corpus, mask)
        blocks = ";".join(str(e.block_index) for e in plan.ranked[:k])
        lines.append(f"{k},{blocks},{ppl!r},{(ppl - base) / base * 100.0!r}")
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, "evaluate", args, [Path(args.plan)], [out], started)
    return 0


def _cmd_bench(args) -> int:
    started = time.time()
    plan = PruningPlan.from_json(Path(args.plan).read_text(encoding="utf-8"))
    model = _model_from_args(args)
    k_max = plan.k if args.k_max is None else args.k_max
    ks = list(range(0, k_max + 1, args.k_step))
    masks = [plan.prefix_mask(model.config.layers, k) for k in ks]
    rows = bench_inference(
        model, masks, args.seq_len, args.gen_len, args.repeats,
        prompt_seed=args.seed,
    )
    out = Path(args.out)
    csv_path = Path(str(out) + ".csv")
    svg_path = Path(str(out) + ".svg")
    lines = ["k,skipped_blocks,mean_ms,std_ms"]
    for k, row in zip(ks, rows):
        lines.append(f"{k},{row.skipped_blocks},{row.mean_ms!r},{row.std_ms!r}")
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_line_chart(
        svg_path,
        [("mean ms", ks, [row.mean_ms for row in rows])],
        title=f"generation time vs pruned blocks "
              f"(seq {args.seq_len}, gen {args.gen_len})",
        x_label="pruned blocks k",
        y_label="ms",
    )
    _write_manifest(out, "bench", args, [Path(args.plan)],
                    [csv_path, svg_path], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entroprune",
        description="entropy-increase pruning of transformer blocks",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace", help="run calibration passes, write an ETRC file")
    _add_common(p)
    _add_model_flags(p)
    _add_corpus_flags(p)
    p.add_argument("--save-model", default=None,
                   help="also write the model checkpoint")
    p.set_defaults(func=_cmd_trace)

    p = sub.add_parser("analyze", help="entropy profile CSV + curve SVG")
    p.add_argument("trace")
    _add_common(p)
    _add_estimator_flags(p)
    p.add_argument("--granularity", choices=[g.value for g in Granularity],
                   default="layer")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("plan", help="rank blocks and emit a pruning plan")
    p.add_argument("input", help="trace (ETRC) or profile CSV")
    _add_common(p)
    _add_estimator_flags(p)
    p.add_argument("--criterion", choices=[c.value for c in Criterion],
                   default="entropy")
    p.add_argument("--k", type=_nonneg_int, default=0)
    p.add_argument("--granularity", choices=[g.value for g in Granularity],
                   default="layer")
    p.add_argument("--s-start", type=_nonneg_int, default=None,
                   help="override stage-2 start block (0 disables protection)")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("evaluate", help="perplexity impact per prune prefix")
    p.add_argument("plan")
    _add_common(p)
    _add_model_flags(p)
    _add_corpus_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="timing table over prune prefixes")
    p.add_argument("plan")
    _add_common(p)
    _add_model_flags(p)
    _add_corpus_flags(p)
    # Defaults mirror the full speed-test protocol (1024-token prompt,
    # 1024 generated, 10 repetitions); scale the flags down for desk runs
    # and raise --max-seq to cover seq_len + gen_len.
    p.add_argument("--seq-len", type=_positive_int, default=1024)
    p.add_argument("--gen-len", type=_positive_int, default=1024)
    p.add_argument("--repeats", type=_positive_int, default=10)
    p.add_argument("--k-step", type=_positive_int, default=1)
    p.add_argument("--k-max", type=_nonneg_int, default=None)
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EntropruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
