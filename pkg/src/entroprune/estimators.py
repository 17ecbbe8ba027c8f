"""Entropy estimators mapping a snapshot's sample matrix to a value in nats.

Three estimators share one dispatch surface:

* Bucket — equal-width histogram over the pooled scalar population
  (every token x dim activation value), Shannon entropy of bin frequencies.
  Pooling is a deliberate choice; a per-dimension marginal-sum variant would
  be possible but is not implemented.
* KNN — Kozachenko-Leonenko differential entropy on token rows as points
  in hidden-dim space, Euclidean metric, exact brute-force neighbors.
* Renyi — histogram plug-in over the same binning as Bucket,
  H_a = ln(sum p_i^a) / (1 - a). Alpha is a first-class parameter.

Units are nats throughout. Only differences and rankings feed pruning, so
the base is a free choice made once. All estimators are pure functions and
invariant to row permutations bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .numerics import Rng, digamma, log_unit_ball_volume
from .trace import NO_SUBSAMPLE, SamplePolicy

MAX_BINS = 65536

# Duplicate token rows occur in real traces; flooring the neighbor distance
# keeps the KNN estimator finite while perturbing results below tolerance.
DISTANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class Bucket:
    bins: int = 40

    def __post_init__(self):
        if not 2 <= self.bins <= MAX_BINS:
            raise ContractError(f"bins must be in [2, {MAX_BINS}], got {self.bins}")


@dataclass(frozen=True)
class Knn:
    k: int = 25

    def __post_init__(self):
        if self.k < 1:
            raise ContractError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class Renyi:
    alpha: float = 2.0
    bins: int = 40

    def __post_init__(self):
        if not self.alpha > 0 or self.alpha == 1.0:
            raise ContractError(
                f"alpha must be positive and != 1, got {self.alpha}"
            )
        if not 2 <= self.bins <= MAX_BINS:
            raise ContractError(f"bins must be in [2, {MAX_BINS}], got {self.bins}")


Kind = Bucket | Knn | Renyi


@dataclass(frozen=True)
class EstimatorConfig:
    kind: Kind
    sample_policy: SamplePolicy = field(default_factory=SamplePolicy)

    def label(self) -> str:
        k = self.kind
        if isinstance(k, Bucket):
            return f"bucket(bins={k.bins})"
        if isinstance(k, Knn):
            return f"knn(k={k.k})"
        return f"renyi(alpha={k.alpha},bins={k.bins})"


@dataclass(frozen=True)
class EntropyValue:
    nats: float
    estimator: EstimatorConfig
    sample_size: int


def _pooled(sample: np.ndarray) -> np.ndarray:
    a = np.asarray(sample, dtype=np.float64)
    if a.size == 0:
        raise ContractError("sample is empty")
    return a.reshape(-1)


def _bin_probabilities(values: np.ndarray, bins: int) -> np.ndarray | None:
    """Equal-width bin occupancy over [min, max]; None for degenerate range.

    Binning is range-relative, which makes the histogram estimators exactly
    invariant under positive affine transforms of the whole sample.
    """
    lo = values.min()
    hi = values.max()
    if lo == hi:
        return None
    idx = np.floor((values - lo) * (bins / (hi - lo))).astype(np.int64)
    np.clip(idx, 0, bins - 1, out=idx)
    counts = np.bincount(idx, minlength=bins)
    return counts / values.size


def bucket_entropy(sample: np.ndarray, bins: int = 40) -> EntropyValue:
    """Shannon entropy of the pooled-scalar bin frequencies, 0*ln 0 := 0."""
    config = EstimatorConfig(Bucket(bins), NO_SUBSAMPLE)
    values = _pooled(sample)
    p = _bin_probabilities(values, bins)
    if p is None:
        return EntropyValue(0.0, config, values.size)
    p = p[p > 0]
    nats = float(-(p * np.log(p)).sum())
    return EntropyValue(nats, config, values.size)


def renyi_entropy(sample: np.ndarray, alpha: float = 2.0,
                  bins: int = 40) -> EntropyValue:
    """Renyi entropy of order alpha on the Bucket binning."""
    if alpha == 1.0:
        raise ContractError("alpha = 1 is Shannon entropy; use bucket_entropy")
    config = EstimatorConfig(Renyi(alpha, bins), NO_SUBSAMPLE)
    values = _pooled(sample)
    p = _bin_probabilities(values, bins)
    if p is None:
        return EntropyValue(0.0, config, values.size)
    p = p[p > 0]
    nats = float(np.log((p ** alpha).sum()) / (1.0 - alpha))
    return EntropyValue(nats, config, values.size)


def knn_entropy(sample: np.ndarray, k: int = 25) -> EntropyValue:
    """Kozachenko-Leonenko estimator on token rows.

    H = psi(n) - psi(k) + ln V_d + (d/n) * sum_i ln eps_i, where eps_i is the
    Euclidean distance from row i to its k-th nearest neighbor (self
    excluded). Exact brute-force search: at the default subsampling cap this
    is seconds of work and rules out approximate-search bugs entirely.
    """
    points = np.asarray(sample, dtype=np.float64)
    if points.ndim != 2 or points.size == 0:
        raise ContractError("sample must be a non-empty 2-D matrix")
    n, d = points.shape
    if n < k + 1:
        raise ContractError(
            f"knn_entropy needs at least k+1 = {k + 1} points, got {n}"
        )
    eps = _kth_neighbor_distances(points, k)
    np.maximum(eps, DISTANCE_FLOOR, out=eps)
    # Sorted before summation so row permutations cannot change the result
    # even in the last bit.
    eps.sort()
    nats = (
        digamma(n) - digamma(k) + log_unit_ball_volume(d)
        + (d / n) * float(np.log(eps).sum())
    )
    return EntropyValue(float(nats), EstimatorConfig(Knn(k), NO_SUBSAMPLE), n)


def _kth_neighbor_distances(points: np.ndarray, k: int) -> np.ndarray:
    """Distance to the k-th nearest neighbor for every row, self excluded.

    Broadcast-subtract rather than the BLAS x^2+y^2-2xy expansion: each pair
    distance then depends only on the two rows involved, so the result is
    bit-stable under row permutation (and never negative under rounding).
    """
    n, d = points.shape
    block = max(1, int(4_000_000 // max(n * d, 1)))
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = points[start:stop, None, :] - points[None, :, :]
        dist2 = np.einsum("ijd,ijd->ij", diff, diff)
        for row in range(start, stop):
            dist2[row - start, row] = np.inf
        out[start:stop] = np.partition(dist2, k - 1, axis=1)[:, k - 1]
    return np.sqrt(out)


def estimate(sample: np.ndarray, config: EstimatorConfig) -> EntropyValue:
    """Apply the config's sample policy, then dispatch to its estimator."""
    points = np.asarray(sample)
    if points.ndim != 2 or points.size == 0:
        raise ContractError("sample must be a non-empty 2-D matrix")
    n = points.shape[0]
    policy = config.sample_policy
    if n > policy.max_tokens:
        rows = Rng(policy.seed).sample_indices(n, policy.max_tokens)
        points = points[np.array(rows, dtype=np.intp)]
    kind = config.kind
    if isinstance(kind, Bucket):
        value = bucket_entropy(points, kind.bins)
    elif isinstance(kind, Knn):
        value = knn_entropy(points, kind.k)
    elif isinstance(kind, Renyi):
        value = renyi_entropy(points, kind.alpha, kind.bins)
    else:
        raise ContractError(f"unknown estimator kind {kind!r}")
    return EntropyValue(value.nats, config, value.sample_size)
