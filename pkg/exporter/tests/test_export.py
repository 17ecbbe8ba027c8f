"""Exporter conformance tests.

The analysis toolkit is exercised ONLY through its external surfaces: the
ETRC byte format (parsed directly against the published layout) and the
`entroprune` CLI run as a subprocess. Nothing here imports the primary
package.
"""

import csv
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from etrc_exporter.capture import BoundaryCountError, HookSpec, export_trace
from etrc_exporter.cli import main, read_token_file
from etrc_exporter.writer import sample_rows

DATA = Path(__file__).parent / "data"
CHECKPOINT = DATA / "tiny2.pt"
VOCAB = 64  # of the shipped checkpoint


def write_tokens(path, sequences):
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(" ".join(str(t) for t in seq) + "\n")


@pytest.fixture()
def token_file(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "tokens.txt"
    write_tokens(path, [rng.integers(0, VOCAB, size=16) for _ in range(2)])
    return path


def run_primary_analyze(trace_path, out_prefix):
    """The primary toolkit's analyze command, as a subprocess."""
    return subprocess.run(
        [sys.executable, "-m", "entroprune.cli", "analyze", str(trace_path),
         "--out", str(out_prefix)],
        capture_output=True, text=True,
    )


def parse_etrc_header(path):
    data = Path(path).read_bytes()
    assert data[:4] == b"ETRC"
    version, dim, tokens, snaps, seed, source_len = struct.unpack_from(
        "<HIIIQH", data, 4
    )
    return {"version": version, "hidden_dim": dim, "token_count": tokens,
            "snapshot_count": snaps, "seed": seed}


class TestExport:
    def test_primary_validator_accepts_export(self, tmp_path, token_file):
        out = tmp_path / "export.etrc"
        code = main(["export", "--model", str(CHECKPOINT), "--tokens",
                     str(token_file), "--max-tokens", "4096", "--seed", "5",
                     "--out", str(out)])
        assert code == 0
        result = run_primary_analyze(out, tmp_path / "prof")
        assert result.returncode == 0, result.stderr
        assert (tmp_path / "prof.csv").exists()

    def test_header_fields(self, tmp_path, token_file):
        out = tmp_path / "export.etrc"
        main(["export", "--model", str(CHECKPOINT), "--tokens",
              str(token_file), "--max-tokens", "4096", "--seed", "5",
              "--out", str(out)])
        header = parse_etrc_header(out)
        assert header["version"] == 1
        assert header["hidden_dim"] == 16
        assert header["token_count"] == 32          # 2 sequences x 16 tokens
        assert header["snapshot_count"] == 5        # 2L+1 for L=2
        assert header["seed"] == 5

    def test_identity_patched_model_has_zero_deltas(self, tmp_path, token_file):
        out = tmp_path / "identity.etrc"
        code = main(["export", "--model", str(CHECKPOINT), "--tokens",
                     str(token_file), "--identity-patch", "--seed", "1",
                     "--out", str(out)])
        assert code == 0
        result = run_primary_analyze(out, tmp_path / "prof")
        assert result.returncode == 0, result.stderr
        with open(tmp_path / "prof.csv", encoding="utf-8") as fh:
            rows = list(csv.DictReader(
                line for line in fh if not line.startswith("#")
            ))
        deltas = [float(r["delta_h_nats"]) for r in rows if r["block_index"] != "0"]
        assert deltas and all(d == 0.0 for d in deltas)

    def test_repeated_export_byte_identical(self, tmp_path, token_file):
        a, b = tmp_path / "a.etrc", tmp_path / "b.etrc"
        for out in (a, b):
            assert main(["export", "--model", str(CHECKPOINT), "--tokens",
                         str(token_file), "--max-tokens", "24", "--seed", "9",
                         "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_token_budget_subsamples(self, tmp_path, token_file):
        out = tmp_path / "small.etrc"
        main(["export", "--model", str(CHECKPOINT), "--tokens",
              str(token_file), "--max-tokens", "8", "--seed", "2",
              "--out", str(out)])
        assert parse_etrc_header(out)["token_count"] == 8

    def test_wrong_boundary_rule_is_structural_error(self, tmp_path, token_file):
        spec = HookSpec(model_id=str(CHECKPOINT),
                        post_attention_norm="post_attn_norm_wrong_name")
        with pytest.raises(BoundaryCountError):
            export_trace(spec, read_token_file(token_file),
                         tmp_path / "x.etrc")

    def test_cli_reports_structural_error(self, tmp_path, token_file):
        code = main(["export", "--model", str(CHECKPOINT), "--tokens",
                     str(token_file), "--post-attention-norm",
                     "post_attn_norm_wrong_name",
                     "--out", str(tmp_path / "x.etrc")])
        assert code == 4


class TestSampler:
    def test_identity_under_budget(self):
        assert sample_rows(10, 16, 1).tolist() == list(range(10))

    def test_sorted_unique_deterministic(self):
        a = sample_rows(100, 30, 7)
        b = sample_rows(100, 30, 7)
        assert np.array_equal(a, b)
        assert len(set(a.tolist())) == 30
        assert np.array_equal(a, np.sort(a))


class TestTokenFile:
    def test_one_id_per_line_single_sequence(self, tmp_path):
        path = tmp_path / "flat.txt"
        path.write_text("5\n6\n7\n")
        seqs = read_token_file(path)
        assert len(seqs) == 1 and seqs[0].tolist() == [5, 6, 7]

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "none.txt"
        path.write_text("# comment only\n")
        with pytest.raises(ValueError):
            read_token_file(path)
