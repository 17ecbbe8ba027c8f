#!/usr/bin/env python3
"""Hyperparameter sweep: how stable are the block rankings when the
estimator knobs move across their grids (bins in {20,40,80,160}, neighbors
in {25,50,75,100})? Prints the pairwise Spearman matrix and writes it as CSV.
"""

import argparse
from pathlib import Path

from entroprune.corpus import RepetitionSpec, generate_corpus
from entroprune.estimators import Bucket, EstimatorConfig, Knn
from entroprune.importance import Granularity, correlation_csv, sweep
from entroprune.model import ToyModelConfig, collect_trace, init_model, train_briefly
from entroprune.trace import SamplePolicy


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="sweep_correlation.csv")
    ap.add_argument("--steps", type=int, default=150)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    cfg = ToyModelConfig(seed=args.seed)
    model = init_model(cfg)
    corpus = generate_corpus(RepetitionSpec(period=8, noise=0.05,
                                            seed=args.seed + 10),
                             cfg.vocab, 16, 64)
    train_briefly(model, corpus, args.steps, 0.05)
    trace = collect_trace(model, corpus)

    policy = SamplePolicy(max_tokens=1024, seed=0)
    grid = [EstimatorConfig(Bucket(b), policy) for b in (20, 40, 80, 160)]
    grid += [EstimatorConfig(Knn(k), policy) for k in (25, 50, 75, 100)]
    result = sweep(trace, grid, Granularity.ATTENTION, s_start_override=1)

    labels = [row.config.label() for row in result.rows]
    width = max(len(s) for s in labels)
    print(" " * width + "  " + "  ".join(f"{s:>{width}}" for s in labels))
    for label, row in zip(labels, result.correlation):
        cells = "  ".join(f"{v:>{width}.3f}" for v in row)
        print(f"{label:>{width}}  {cells}")

    Path(args.out).write_text(correlation_csv(result), encoding="utf-8")
    print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
