#!/usr/bin/env python3
"""Regenerate the committed 2-layer reference checkpoint (tests/data/tiny2.pt)."""

from pathlib import Path

from etrc_exporter.tiny import make_reference_checkpoint

if __name__ == "__main__":
    out = Path(__file__).parent.parent / "tests" / "data" / "tiny2.pt"
    out.parent.mkdir(parents=True, exist_ok=True)
    make_reference_checkpoint(out, seed=7)
    print(f"wrote {out}")
