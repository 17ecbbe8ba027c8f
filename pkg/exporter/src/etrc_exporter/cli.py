"""Command line: export --model <id> --tokens <file> --max-tokens N
--seed S --out <path>.

Token file: newline-delimited integer ids — one sequence per line with
space-separated ids, or one id per line for a single sequence."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .capture import BoundaryCountError, HookSpec, export_trace


def read_token_file(path) -> list[np.ndarray]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(np.array([int(t) for t in line.split()], dtype=np.int64))
    if not rows:
        raise ValueError(f"no token ids found in {path}")
    if all(r.size == 1 for r in rows) and len(rows) > 1:
        return [np.concatenate(rows)]
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etrc-export",
        description="capture residual-stream boundaries into an ETRC trace",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export")
    p.add_argument("--model", required=True,
                   help="path to a .pt checkpoint or a transformers model id")
    p.add_argument("--tokens", required=True,
                   help="newline-delimited token-id file")
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--identity-patch", action="store_true",
                   help="zero every block's contribution (validation aid)")
    p.add_argument("--layers-path", default="layers")
    p.add_argument("--post-attention-norm", default="post_attention_layernorm")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    spec = HookSpec(
        model_id=args.model,
        max_tokens=args.max_tokens,
        seed=args.seed,
        layers_path=args.layers_path,
        post_attention_norm=args.post_attention_norm,
        identity_patch=args.identity_patch,
    )
    try:
        sequences = read_token_file(args.tokens)
        written = export_trace(spec, sequences, args.out)
    except BoundaryCountError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except MemoryError:
        print(
            "error: ran out of memory while capturing boundaries; lower "
            "--max-tokens (fewer rows are kept per snapshot) or pass fewer/"
            "shorter calibration sequences",
            file=sys.stderr,
        )
        return 3
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {written} bytes to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
