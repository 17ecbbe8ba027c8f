"""Dense float32 matrix ops, a portable PRNG, and the special functions the
entropy estimators need.

Storage is 32-bit, accumulation 64-bit (inference practice; keeps traces
compact). Entropy math elsewhere runs entirely in 64-bit. digamma/log-gamma
are implemented here (recurrence shift + asymptotic series) so estimates do
not depend on platform special-function libraries.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError

_MASK64 = (1 << 64) - 1


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D, C-contiguous, finite float32 array."""
    m = np.ascontiguousarray(data, dtype=np.float32)
    if m.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ContractError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ContractError(f"{name} contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two float32 matrices, accumulated in float64, stored in float32."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}"
        )
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction; preserves input dtype.

    Any finite input is safe: subtracting the row max bounds every exponent
    by zero, so no overflow is possible.
    """
    a = np.asarray(m)
    if not np.isfinite(a).all():
        raise ContractError("softmax_rows requires finite input")
    x = a.astype(np.float64)
    x -= x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x if a.dtype == np.float64 else x.astype(a.dtype)


def layer_norm(m: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    """Per-row normalization to mean 0 / variance 1, then affine gain + bias.

    Constant rows are handled by eps (they normalize to zero before the
    affine step). Preserves input dtype; internal math is float64.
    """
    a = np.asarray(m)
    g = np.asarray(gain, dtype=np.float64).reshape(-1)
    b = np.asarray(bias, dtype=np.float64).reshape(-1)
    if a.ndim != 2:
        raise ContractError(f"layer_norm input must be 2-D, got shape {a.shape}")
    if g.shape[0] != a.shape[1] or b.shape[0] != a.shape[1]:
        raise ContractError("gain/bias length must equal column count")
    if not eps > 0:
        raise ContractError("eps must be positive")
    x = a.astype(np.float64)
    mu = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    out = (x - mu) / np.sqrt(var + eps) * g + b
    return out if a.dtype == np.float64 else out.astype(a.dtype)


# Asymptotic series coefficients (Bernoulli-number tails), valid once the
# argument has been shifted above _SHIFT_POINT.
_SHIFT_POINT = 10.0


def digamma(x: float) -> float:
    """psi(x) for x > 0, accurate to ~1e-12 absolute for x >= 1e-3."""
    x = float(x)
    if not x > 0:
        raise ContractError(f"digamma requires x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_POINT:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # psi(x) ~ ln x - 1/(2x) - sum B_{2n} / (2n x^{2n})
    series = inv2 * (
        1.0 / 12
        - inv2 * (1.0 / 120
                  - inv2 * (1.0 / 252
                            - inv2 * (1.0 / 240
                                      - inv2 * (1.0 / 132
                                                - inv2 * (691.0 / 32760)))))
    )
    return acc + math.log(x) - 0.5 * inv - series


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0 via shift plus Stirling series."""
    x = float(x)
    if not x > 0:
        raise ContractError(f"log_gamma requires x > 0, got {x}")
    acc = 0.0
    while x < _SHIFT_POINT:
        acc -= math.log(x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (
        1.0 / 12
        - inv2 * (1.0 / 360
                  - inv2 * (1.0 / 1260
                            - inv2 * (1.0 / 1680
                                      - inv2 * (1.0 / 1188))))
    )
    return acc + (x - 0.5) * math.log(x) - x + 0.5 * math.log(2.0 * math.pi) + series


def log_unit_ball_volume(d: int) -> float:
    """ln of the volume of the unit ball in R^d: (d/2) ln pi - ln Gamma(d/2 + 1)."""
    d = int(d)
    if d < 1:
        raise ContractError(f"dimension must be >= 1, got {d}")
    return 0.5 * d * math.log(math.pi) - log_gamma(0.5 * d + 1.0)


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (advanced state, output word)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _rotl(v: int, k: int) -> int:
    return ((v << k) | (v >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** seeded through splitmix64.

    Pure-integer implementation: identical seeds produce identical streams on
    every platform. One stream per worker; instances are not thread-safe.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        s = self.seed
        state = []
        for _ in range(4):
            s, word = _splitmix64(s)
            state.append(word)
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform float64 in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def below(self, n: int) -> int:
        """Unbiased uniform integer in [0, n) by rejection."""
        if n <= 0:
            raise ContractError(f"below() requires n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def sample_indices(self, n: int, m: int) -> list[int]:
        """m distinct indices from range(n), uniformly, returned sorted."""
        if m > n:
            raise ContractError(f"cannot sample {m} of {n} indices")
        idx = list(range(n))
        for i in range(m):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return sorted(idx[:m])

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
