"""Activation traces and the ETRC byte format.

A trace is the ordered sequence of residual-stream snapshots captured at
every block boundary of a decoder: the embedding output, then per layer the
post-attention and post-MLP states. In a residual architecture the input of
block l IS the output of block l-1, so an L-layer model yields exactly
2L+1 snapshots and every block-level entropy difference is a difference of
two stored snapshots.

ETRC v1, little-endian:

    magic "ETRC" | version u16 | hidden_dim u32 | token_count u32
    | snapshot_count u32 | seed u64 | source_len u16 + UTF-8 source
    then per snapshot:
    layer_index u32 | position u8 (0=PreAttention, 1=PostAttention, 2=PostMLP)
    | payload (token_count x hidden_dim float32, row-major) | CRC32(payload) u32

The embedding-output snapshot is (layer_index=0, position=0).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO

import numpy as np

from .errors import (
    ContractError,
    StructureError,
    TraceCorruptionError,
    TraceDataError,
    TraceFormatError,
    TraceIOError,
    TraceVersionError,
)
from .numerics import Rng

MAGIC = b"ETRC"
VERSION = 1


class Position(IntEnum):
    PRE_ATTENTION = 0
    POST_ATTENTION = 1
    POST_MLP = 2


@dataclass(frozen=True, order=True)
class SnapshotLabel:
    layer_index: int
    position: Position


@dataclass(frozen=True)
class SamplePolicy:
    """Seeded cap on how many token rows feed the estimators."""

    max_tokens: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.max_tokens < 2:
            raise ContractError(f"max_tokens must be >= 2, got {self.max_tokens}")


# Policy large enough to never subsample any realistic trace; echoed by the
# low-level estimators, which do not subsample themselves.
NO_SUBSAMPLE = SamplePolicy(max_tokens=2**31 - 1, seed=0)


def expected_labels(layer_count: int) -> list[SnapshotLabel]:
    """The 2L+1 labels of a complete trace, in storage order."""
    labels = [SnapshotLabel(0, Position.PRE_ATTENTION)]
    for layer in range(layer_count):
        labels.append(SnapshotLabel(layer, Position.POST_ATTENTION))
        labels.append(SnapshotLabel(layer, Position.POST_MLP))
    return labels


@dataclass(eq=False)
class ActivationTrace:
    hidden_dim: int
    token_count: int
    seed: int
    source: str
    snapshots: list[tuple[SnapshotLabel, np.ndarray]] = field(repr=False)

    def __post_init__(self):
        if not self.snapshots:
            raise ContractError("trace must contain at least one snapshot")
        n = len(self.snapshots)
        if n % 2 == 0:
            raise ContractError(
                f"snapshot count must be 2L+1 for an L-layer model, got {n}"
            )
        expected = expected_labels((n - 1) // 2)
        for i, ((label, sample), want) in enumerate(zip(self.snapshots, expected)):
            if label != want:
                raise ContractError(
                    f"snapshot {i} labeled {label}, expected {want}"
                )
            if sample.shape != (self.token_count, self.hidden_dim):
                raise ContractError(
                    f"snapshot {label} has shape {sample.shape}, expected "
                    f"({self.token_count}, {self.hidden_dim})"
                )
            if sample.dtype != np.float32:
                raise ContractError(f"snapshot {label} must be float32")
            if not np.isfinite(sample).all():
                raise ContractError(f"snapshot {label} contains non-finite values")

    @property
    def layer_count(self) -> int:
        return (len(self.snapshots) - 1) // 2

    def sample(self, label: SnapshotLabel) -> np.ndarray:
        for got, arr in self.snapshots:
            if got == label:
                return arr
        raise StructureError(f"trace has no snapshot {label}")


def traces_equal(a: ActivationTrace, b: ActivationTrace) -> bool:
    """Bit-exact equality of two traces (payload bytes included)."""
    if (a.hidden_dim, a.token_count, a.seed, a.source) != (
        b.hidden_dim, b.token_count, b.seed, b.source,
    ):
        return False
    if len(a.snapshots) != len(b.snapshots):
        return False
    for (la, sa), (lb, sb) in zip(a.snapshots, b.snapshots):
        if la != lb or sa.tobytes() != sb.tobytes():
            return False
    return True


def write_trace(trace: ActivationTrace, destination: BinaryIO) -> int:
    """Serialize `trace` as ETRC v1. Returns the number of bytes written."""
    source_bytes = trace.source.encode("utf-8")
    if len(source_bytes) > 0xFFFF:
        raise ContractError("source string exceeds 65535 UTF-8 bytes")
    written = 0

    def emit(chunk: bytes):
        nonlocal written
        try:
            destination.write(chunk)
        except OSError as exc:
            raise TraceIOError(
                f"sink failed after {written} bytes: {exc}"
            ) from exc
        written += len(chunk)

    emit(MAGIC)
    emit(struct.pack(
        "<HIIIQH",
        VERSION,
        trace.hidden_dim,
        trace.token_count,
        len(trace.snapshots),
        trace.seed,
        len(source_bytes),
    ))
    emit(source_bytes)
    for label, sample in trace.snapshots:
        emit(struct.pack("<IB", label.layer_index, int(label.position)))
        payload = np.ascontiguousarray(sample, dtype="<f4").tobytes()
        emit(payload)
        emit(struct.pack("<I", zlib.crc32(payload)))
    return written


def read_trace(source: BinaryIO) -> ActivationTrace:
    """Parse an ETRC stream, validating magic, version, checksums, and
    every ActivationTrace invariant. Never returns an invalid trace."""
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        try:
            chunk = source.read(n)
        except OSError as exc:
            raise TraceIOError(f"source failed at offset {offset}: {exc}") from exc
        if len(chunk) != n:
            raise TraceCorruptionError(
                f"truncated stream reading {what} at offset {offset} "
                f"(wanted {n} bytes, got {len(chunk)})",
                offset=offset,
            )
        offset += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, hidden_dim, token_count, snapshot_count, seed, source_len = (
        struct.unpack("<HIIIQH", take(24, "header"))
    )
    if version != VERSION:
        raise TraceVersionError(f"unsupported ETRC version {version}")
    source_text = take(source_len, "source string").decode("utf-8")

    payload_len = token_count * hidden_dim * 4
    snapshots = []
    for i in range(snapshot_count):
        layer_index, position_raw = struct.unpack(
            "<IB", take(5, f"snapshot {i} label")
        )
        try:
            position = Position(position_raw)
        except ValueError:
            raise TraceFormatError(
                f"snapshot {i} has invalid position code {position_raw}"
            ) from None
        payload_offset = offset
        payload = take(payload_len, f"snapshot {i} payload")
        (crc_stored,) = struct.unpack("<I", take(4, f"snapshot {i} checksum"))
        if zlib.crc32(payload) != crc_stored:
            raise TraceCorruptionError(
                f"checksum mismatch in snapshot {i} "
                f"(layer {layer_index}, position {position.name})",
                offset=payload_offset,
            )
        sample = np.frombuffer(payload, dtype="<f4").reshape(token_count, hidden_dim)
        sample = np.ascontiguousarray(sample, dtype=np.float32)
        if not np.isfinite(sample).all():
            raise TraceDataError(
                f"snapshot (layer {layer_index}, {position.name}) "
                "contains non-finite values"
            )
        snapshots.append((SnapshotLabel(layer_index, position), sample))

    try:
        return ActivationTrace(
            hidden_dim=hidden_dim,
            token_count=token_count,
            seed=seed,
            source=source_text,
            snapshots=snapshots,
        )
    except ContractError as exc:
        raise TraceFormatError(f"stream violates trace invariants: {exc}") from exc


def write_trace_file(trace: ActivationTrace, path) -> int:
    with open(path, "wb") as fh:
        return write_trace(trace, fh)


def read_trace_file(path) -> ActivationTrace:
    with open(path, "rb") as fh:
        return read_trace(fh)


def subsample(trace: ActivationTrace, policy: SamplePolicy) -> ActivationTrace:
    """Select min(max_tokens, token_count) rows by seeded uniform sampling
    without replacement, applying the SAME row indices to every snapshot so
    entropy differences compare identical token populations.

    Idempotent: once token_count <= max_tokens this is the identity.
    """
    m = min(policy.max_tokens, trace.token_count)
    if m == trace.token_count:
        return trace
    rows = Rng(policy.seed).sample_indices(trace.token_count, m)
    idx = np.array(rows, dtype=np.intp)
    return ActivationTrace(
        hidden_dim=trace.hidden_dim,
        token_count=m,
        seed=trace.seed,
        source=(
            f"{trace.source} | subsample(max_tokens={policy.max_tokens}, "
            f"seed={policy.seed})"
        ),
        snapshots=[
            (label, np.ascontiguousarray(sample[idx]))
            for label, sample in trace.snapshots
        ],
    )
