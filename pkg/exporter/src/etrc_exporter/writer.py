"""Standalone ETRC v1 writer and the seeded row subsampler.

Implemented directly from the format description so this package shares no
code with the consumer toolkit:

    magic "ETRC" | version u16 | hidden_dim u32 | token_count u32
    | snapshot_count u32 | seed u64 | source_len u16 + UTF-8 source
    | per snapshot: layer_index u32 | position u8 (0=PreAttention,
    1=PostAttention, 2=PostMLP) | token_count x hidden_dim float32
    row-major | CRC32(payload) u32

All integers little-endian. The embedding-output snapshot is (0, 0), then
per layer (i, 1) and (i, 2): a model with L layers yields 2L+1 snapshots.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

ETRC_MAGIC = b"ETRC"
ETRC_VERSION = 1

_MASK64 = (1 << 64) - 1


def _splitmix64_stream(seed: int):
    x = seed & _MASK64
    while True:
        x = (x + 0x9E3779B97F4A7C15) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


def sample_rows(total: int, budget: int, seed: int) -> np.ndarray:
    """Seeded uniform row choice without replacement, sorted. Deterministic
    across platforms and torch versions (pure integer arithmetic)."""
    if total <= budget:
        return np.arange(total, dtype=np.intp)
    stream = _splitmix64_stream(seed)
    idx = list(range(total))
    for i in range(budget):
        span = total - i
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            word = next(stream)
            if word < limit:
                break
        j = i + word % span
        idx[i], idx[j] = idx[j], idx[i]
    return np.array(sorted(idx[:budget]), dtype=np.intp)


def write_etrc(path, snapshots: list[tuple[int, int, np.ndarray]],
               seed: int, source: str) -> int:
    """Write labeled snapshots [(layer_index, position, (tokens, dim) array)]
    to `path`. Returns bytes written."""
    if not snapshots:
        raise ValueError("no snapshots to write")
    tokens, dim = snapshots[0][2].shape
    source_bytes = source.encode("utf-8")
    blob = bytearray()
    blob += ETRC_MAGIC
    blob += struct.pack("<HIIIQH", ETRC_VERSION, dim, tokens, len(snapshots),
                        seed, len(source_bytes))
    blob += source_bytes
    for layer_index, position, sample in snapshots:
        if sample.shape != (tokens, dim):
            raise ValueError(
                f"snapshot ({layer_index}, {position}) has shape "
                f"{sample.shape}, expected {(tokens, dim)}"
            )
        payload = np.ascontiguousarray(sample, dtype="<f4").tobytes()
        blob += struct.pack("<IB", layer_index, position)
        blob += payload
        blob += struct.pack("<I", zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
    return len(blob)
