#!/usr/bin/env python3
"""End-to-end demo: trace -> analyze -> plan -> evaluate -> bench.

Drives the CLI exactly as a user would and drops every artifact (ETRC trace,
profile CSV/SVG, plan JSON, perplexity report, timing table) into --workdir.
Finishes in under a minute on one CPU core at the default desk scale.
"""

import argparse
import sys
from pathlib import Path

from entroprune.cli import main as cli


def run(argv):
    print("$ entroprune " + " ".join(argv))
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="pipeline_out")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--train-steps", type=int, default=100)
    ap.add_argument("--k", type=int, default=3)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    trace = work / "calibration.etrc"
    seed = str(args.seed)

    model_flags = ["--layers", "8", "--dim", "64", "--heads", "4",
                   "--ffn", "256", "--vocab", "256", "--max-seq", "512",
                   "--train-steps", str(args.train_steps), "--seed", seed]
    corpus_flags = ["--corpus", "repetition", "--sequences", "16",
                    "--corpus-len", "64", "--period", "8", "--noise", "0.05"]

    run(["trace", "--out", str(trace), *model_flags, *corpus_flags])
    run(["analyze", str(trace), "--estimator", "bucket", "--bins", "40",
         "--granularity", "attention", "--out", str(work / "profile")])
    run(["plan", str(trace), "--criterion", "entropy", "--granularity",
         "attention", "--k", str(args.k), "--out", str(work / "plan.json")])
    run(["plan", str(trace), "--criterion", "cosine", "--granularity",
         "attention", "--k", str(args.k),
         "--out", str(work / "plan_cosine.json")])
    run(["evaluate", str(work / "plan.json"), "--out", str(work / "report.csv"),
         *model_flags, *corpus_flags])
    run(["bench", str(work / "plan.json"), "--out", str(work / "bench"),
         *model_flags, *corpus_flags, "--seq-len", "128", "--gen-len", "128",
         "--repeats", "5"])
    print(f"\nartifacts in {work}/")
    for p in sorted(work.iterdir()):
        print(f"  {p.name}")


if __name__ == "__main__":
    main()
