"""Deterministic numeric primitives: dense kernels, losses, Adam, RNG.

Arrays are plain numpy ndarrays in row-major (C) order; a matrix has shape
(rows, cols) and a vector shape (n,). Training code runs in float32.
Gradient checking promotes copies to float64 so finite-difference
tolerances stay meaningful. Public operations reject NaN/Inf inputs with
ValueError instead of propagating them.

Randomness comes from a splitmix64 counter generator so a seed reproduces
the same stream on every platform; the stdlib and numpy default generators
are never used for anything that affects results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float32

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """splitmix64 stream: the k-th output is a hash of seed + k * gamma.

    Counter-based, so scalar draws and vectorized array draws produce the
    same stream, and the whole sequence is reproducible from the seed alone
    on any platform.
    """

    def __init__(self, seed: int):
        self._base = int(seed) & _MASK64
        self._count = 0

    def next_u64(self) -> int:
        self._count += 1
        return _mix64((self._base + self._count * _GAMMA) & _MASK64)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * 2.0**-53
        return low + (high - low) * u

    def uniform_array(self, shape, low=0.0, high=1.0, dtype=DTYPE) -> np.ndarray:
        """Array of uniforms drawn from the same stream as uniform()."""
        n = int(np.prod(shape))
        ks = np.uint64(self._count + 1) + np.arange(n, dtype=np.uint64)
        self._count += n
        z = np.uint64(self._base) + ks * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return np.asarray(low + (high - low) * u, dtype=dtype).reshape(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased via rejection sampling."""
        if n <= 0:
            raise ValueError("randint: n must be positive")
        span = _MASK64 + 1
        limit = span - span % n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.asarray(idx, dtype=np.int64)


def require_finite(name: str, arr) -> np.ndarray:
    a = np.asarray(arr)
    if a.size and not np.isfinite(a).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis; rows sum to 1."""
    x = np.asarray(logits)
    if x.size == 0:
        raise ValueError("softmax: empty input")
    require_finite("softmax input", x)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probabilities, target_class: int) -> float:
    """Negative log probability of the target class, clamped at p >= 1e-12."""
    p = require_finite("probabilities", probabilities)
    if p.ndim != 1:
        raise ValueError("cross_entropy expects a probability vector")
    if not 0 <= target_class < p.shape[0]:
        raise IndexError(f"target class {target_class} out of range for {p.shape[0]} classes")
    pt = min(max(float(p[target_class]), 1e-12), 1.0)
    return -math.log(pt)


def global_norm(gradients) -> float:
    """L2 norm over all entries of all gradients, accumulated in float64."""
    total = 0.0
    for g in gradients:
        g64 = np.asarray(g, dtype=np.float64)
        total += float((g64 * g64).sum())
    return math.sqrt(total)


def clip_global_norm(gradients, max_norm: float) -> list[np.ndarray]:
    """Scale all gradients by max_norm/norm when the global norm exceeds it.

    Inputs are returned untouched when under the threshold. The comparison
    carries a 1e-9 relative slack, matching the guaranteed post-clip bound
    norm <= max_norm * (1 + 1e-9), which also makes clipping idempotent:
    a clipped set re-clips to itself.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [require_finite("gradient", g) for g in gradients]
    norm = global_norm(grads)
    if norm <= max_norm * (1.0 + 1e-9):
        return list(grads)
    scale = max_norm / norm
    return [g * g.dtype.type(scale) for g in grads]


@dataclass
class AdamState:
    """First/second moment accumulators plus step counter and hyperparameters."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(params, gradients, state: AdamState, lr: float | None = None):
    """One bias-corrected Adam update; returns (new params, new state).

    `lr` overrides the state's base rate for this step so callers can decay
    it over training without mutating the state.
    """
    if len(params) != len(gradients) or len(params) != len(state.m):
        raise ValueError("adam_step: params, gradients and state lengths differ")
    for p, g in zip(params, gradients):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"adam_step: shape mismatch {np.shape(p)} vs {np.shape(g)}")
        require_finite("gradient", g)
    rate = state.lr if lr is None else lr
    t = state.step + 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, gradients, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params.append(p - rate * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, eps)
    return new_params, new_state


def finite_difference_check(loss_function, params, analytic_gradients,
                            h: float = 1e-5, rng: Rng | None = None,
                            max_coords: int | None = 100) -> float:
    """Max relative error between analytic gradients and central differences.

    Samples up to `max_coords` coordinates (all when there are fewer, or
    when max_coords is None) and evaluates (f(w+h) - f(w-h)) / 2h per
    coordinate. The loss must be deterministic; two equal evaluations at
    the base point are required up front.

    Parameters are promoted to numpy's widest float (long double on x86)
    so that the difference quotient is not drowned by cancellation noise
    on coordinates with very small gradients; `loss_function` must carry
    its input dtype through to the returned scalar for this to help. The
    analytic side is compared at its own precision.
    """
    wide = [np.array(p, dtype=np.longdouble) for p in params]
    base = loss_function(wide)
    again = loss_function([p.copy() for p in wide])
    if base != again:
        raise ValueError("finite_difference_check: loss function is not deterministic")
    coords = [(i, j) for i, p in enumerate(wide) for j in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else Rng(0)
        rng.shuffle(coords)
        coords = coords[:max_coords]
    step = np.longdouble(h)
    worst = 0.0
    for i, j in coords:
        flat = wide[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + step
        f_plus = loss_function(wide)
        flat[j] = orig - step
        f_minus = loss_function(wide)
        flat[j] = orig
        numeric = float((f_plus - f_minus) / (2.0 * step))
        analytic = float(np.asarray(analytic_gradients[i]).reshape(-1)[j])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
