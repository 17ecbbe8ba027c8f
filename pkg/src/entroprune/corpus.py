"""Synthetic token corpora standing in for a calibration dataset.

Two generator families:

* Markov(order, seed) — a seeded sparse transition table: each order-k
  context hashes to a fixed 4-way successor set, and the chain walks it
  uniformly. Structured enough for attention to learn, cheap at any vocab.
* Repetition(period, noise, seed) — a random base pattern of `period`
  tokens tiled to length, with each position independently replaced by a
  uniform token with probability `noise`.

Corpora regenerate exactly from (generator spec, shape); files use one
sequence per line with space-separated token ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import Rng, _splitmix64

_BRANCH = 4


@dataclass(frozen=True)
class MarkovSpec:
    order: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise ContractError(f"order must be >= 1, got {self.order}")


@dataclass(frozen=True)
class RepetitionSpec:
    period: int = 8
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.period < 1:
            raise ContractError(f"period must be >= 1, got {self.period}")
        if not 0.0 <= self.noise <= 1.0:
            raise ContractError(f"noise must be in [0, 1], got {self.noise}")


GeneratorSpec = MarkovSpec | RepetitionSpec


@dataclass(eq=False)
class SyntheticCorpus:
    vocab: int
    generator: GeneratorSpec
    sequences: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        if not self.sequences:
            raise ContractError("corpus must contain at least one sequence")
        for seq in self.sequences:
            if seq.size == 0 or seq.min() < 0 or seq.max() >= self.vocab:
                raise ContractError("token ids must lie in [0, vocab)")

    @property
    def total_tokens(self) -> int:
        return sum(int(s.size) for s in self.sequences)


def _context_hash(seed: int, context: tuple[int, ...]) -> int:
    h = seed
    for tok in context:
        h, mixed = _splitmix64(h ^ (tok + 1))
        h ^= mixed
    return h


def _markov_sequence(spec: MarkovSpec, vocab: int, length: int, rng: Rng) -> np.ndarray:
    tokens = [rng.below(vocab) for _ in range(spec.order)]
    while len(tokens) < length:
        context = tuple(tokens[-spec.order:])
        h = _context_hash(spec.seed, context)
        successors = []
        for _ in range(_BRANCH):
            h, word = _splitmix64(h)
            successors.append(word % vocab)
        tokens.append(successors[rng.below(_BRANCH)])
    return np.array(tokens[:length], dtype=np.int64)


def _repetition_sequence(spec: RepetitionSpec, vocab: int, length: int,
                         rng: Rng) -> np.ndarray:
    pattern = [rng.below(vocab) for _ in range(spec.period)]
    out = np.empty(length, dtype=np.int64)
    for i in range(length):
        if rng.uniform() < spec.noise:
            out[i] = rng.below(vocab)
        else:
            out[i] = pattern[i % spec.period]
    return out


def generate_corpus(spec: GeneratorSpec, vocab: int, sequences: int,
                    length: int) -> SyntheticCorpus:
    """Deterministically materialize `sequences` sequences of `length` tokens."""
    if vocab < 2:
        raise ContractError(f"vocab must be >= 2, got {vocab}")
    if sequences < 1 or length < 2:
        raise ContractError("need at least one sequence of length >= 2")
    rng = Rng(spec.seed)
    maker = _markov_sequence if isinstance(spec, MarkovSpec) else _repetition_sequence
    seqs = [maker(spec, vocab, length, rng) for _ in range(sequences)]
    return SyntheticCorpus(vocab=vocab, generator=spec, sequences=seqs)


def uniform_corpus(vocab: int, sequences: int, length: int,
                   seed: int = 0) -> SyntheticCorpus:
    """IID uniform tokens; the baseline corpus for untrained-model checks."""
    rng = Rng(seed)
    seqs = [
        np.array([rng.below(vocab) for _ in range(length)], dtype=np.int64)
        for _ in range(sequences)
    ]
    # Uniform is Repetition with noise 1.0: every position is a fresh draw.
    return SyntheticCorpus(
        vocab=vocab,
        generator=RepetitionSpec(period=1, noise=1.0, seed=seed),
        sequences=seqs,
    )


def save_corpus(corpus: SyntheticCorpus, path) -> None:
    """One sequence per line, token ids space-separated."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vocab={corpus.vocab} generator={corpus.generator!r}\n")
        for seq in corpus.sequences:
            fh.write(" ".join(str(int(t)) for t in seq))
            fh.write("\n")


def load_sequences(path) -> list[np.ndarray]:
    """Read newline-delimited token ids.

    Lines with several ids are sequences; a file of one id per line is
    treated as a single sequence. '#' lines are comments.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(np.array([int(tok) for tok in line.split()], dtype=np.int64))
    if not rows:
        raise ContractError(f"no token ids found in {path}")
    if all(r.size == 1 for r in rows) and len(rows) > 1:
        return [np.concatenate(rows)]
    return rows
