"""Synthetic series for enriching the token-model training corpus.

``tsmixup`` forms Dirichlet-weighted convex combinations of mean-scaled
windows; ``kernelsynth`` draws from a zero-mean GP prior whose kernel is a
random sum/product composition of linear, periodic and RBF primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky

from .chronoslite import window_sequences
from .errors import ConfigurationError, NumericalError

KERNEL_JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5)


@dataclass(frozen=True)
class TSMixupConfig:
    K: int = 3
    dirichlet_alpha: float = 1.5
    length_range: tuple = (64, 512)

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("K must be >= 1")
        if not self.dirichlet_alpha > 0:
            raise ConfigurationError("dirichlet_alpha must be > 0")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"invalid length_range {self.length_range}")


@dataclass
class MixupSample:
    series: np.ndarray
    weights: np.ndarray
    sources: list
    offsets: list


def _scale_window(w: np.ndarray) -> np.ndarray:
    s = np.mean(np.abs(w))
    return w / s if s > 0 else w.copy()


def tsmixup(pool, config: TSMixupConfig | None = None, seed: int = 0) -> MixupSample:
    """Draw ``k ~ U{1..K}`` pool series and a length ``l ~ U{l_min..l_max}``,
    mean-scale an independent random length-``l`` window of each and mix with
    ``Dirichlet(alpha, ..., alpha)`` weights.

    ``l`` is capped at the shortest selected series.
    """
    config = config or TSMixupConfig()
    pool = [np.asarray(p, dtype=float) for p in pool]
    if not pool:
        raise ConfigurationError("TSMixup pool is empty")
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, config.K + 1))
    length = int(rng.integers(config.length_range[0], config.length_range[1] + 1))
    sources = [int(i) for i in rng.choice(len(pool), size=k, replace=len(pool) < k)]
    length = min([length] + [pool[i].size for i in sources])
    weights = rng.dirichlet(np.full(k, config.dirichlet_alpha))
    if k == 1:
        weights = np.ones(1)  # dirichlet can return 1 - eps
    mix = np.zeros(length)
    offsets = []
    for lam, i in zip(weights, sources):
        off = int(rng.integers(0, pool[i].size - length + 1))
        offsets.append(off)
        mix += lam * _scale_window(pool[i][off:off + length])
    return MixupSample(mix, weights, sources, offsets)


# --------------------------------------------------------------------------
# Kernel expressions


@dataclass(frozen=True)
class Linear:
    offset: float = 0.0
    variance: float = 1.0

    def __call__(self, t, s):
        return self.variance * (self.offset + np.multiply.outer(t, s))

    def describe(self) -> str:
        return f"Lin(c={self.offset:.3g})"


@dataclass(frozen=True)
class Periodic:
    period: float
    length_scale: float = 1.0
    variance: float = 1.0

    def __call__(self, t, s):
        d = np.subtract.outer(t, s)
        return self.variance * np.exp(-2.0 * np.sin(np.pi * np.abs(d) / self.period) ** 2
                                      / self.length_scale**2)

    def describe(self) -> str:
        return f"Per(p={self.period:.3g})"


@dataclass(frozen=True)
class RBF:
    length_scale: float
    variance: float = 1.0

    def __call__(self, t, s):
        d = np.subtract.outer(t, s)
        return self.variance * np.exp(-0.5 * d**2 / self.length_scale**2)

    def describe(self) -> str:
        return f"RBF(l={self.length_scale:.3g})"


@dataclass(frozen=True)
class Sum:
    left: object
    right: object

    def __call__(self, t, s):
        return self.left(t, s) + self.right(t, s)

    def describe(self) -> str:
        return f"({self.left.describe()} + {self.right.describe()})"


@dataclass(frozen=True)
class Product:
    left: object
    right: object

    def __call__(self, t, s):
        return self.left(t, s) * self.right(t, s)

    def describe(self) -> str:
        return f"({self.left.describe()} * {self.right.describe()})"


KernelExpr = Linear | Periodic | RBF | Sum | Product


@dataclass(frozen=True)
class PrimitiveRanges:
    period: tuple = (0.05, 0.5)
    length_scale: tuple = (0.05, 1.0)
    linear_offset: tuple = (0.0, 1.0)


def _random_primitive(rng: np.random.Generator, ranges: PrimitiveRanges):
    kind = int(rng.integers(3))
    if kind == 0:
        return Linear(offset=float(rng.uniform(*ranges.linear_offset)))
    if kind == 1:
        return Periodic(period=float(rng.uniform(*ranges.period)))
    return RBF(length_scale=float(rng.uniform(*ranges.length_scale)))


def sample_kernel(max_terms: int = 5, seed: int = 0,
                  ranges: PrimitiveRanges | None = None):
    """Random composite kernel: ``j ~ U{1..J}`` primitives folded left with
    uniformly chosen ``+`` / ``*``."""
    if max_terms < 1:
        raise ConfigurationError("max_terms must be >= 1")
    ranges = ranges or PrimitiveRanges()
    rng = np.random.default_rng(seed)
    j = int(rng.integers(1, max_terms + 1))
    expr = _random_primitive(rng, ranges)
    for _ in range(j - 1):
        nxt = _random_primitive(rng, ranges)
        expr = Sum(expr, nxt) if rng.integers(2) == 0 else Product(expr, nxt)
    return expr


def kernel_grid(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def kernelsynth(n: int, expr, seed: int = 0) -> np.ndarray:
    """One draw from ``GP(0, expr)`` on ``n`` equally spaced points in [0, 1]."""
    if n < 2:
        raise ConfigurationError("kernelsynth needs n >= 2")
    t = kernel_grid(n)
    K = expr(t, t)
    K = 0.5 * (K + K.T)
    z = np.random.default_rng(seed).standard_normal(n)
    if not np.any(K):
        return np.zeros(n)
    base = float(np.mean(np.abs(np.diag(K)))) or 1.0
    for jit in KERNEL_JITTERS:
        try:
            L = cholesky(K + jit * base * np.eye(n), lower=True, check_finite=False)
            return L @ z
        except LinAlgError:
            continue
    raise NumericalError("kernel matrix not positive definite after jitter escalation to 1e-5")


def synthetic_pool(n_series: int, length: int = 256, max_terms: int = 5, seed: int = 0,
                   level_range: tuple = (0.0, 3.0)) -> list:
    """KernelSynth draws, each shifted by a random level of
    ``U(level_range) * sd`` so that mean scaling sees both centred and
    positive-level series."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFF)
    pool = []
    for child in ss.spawn(n_series):
        s_kernel, s_draw, s_level = (int(v) for v in child.generate_state(3))
        g = kernelsynth(length, sample_kernel(max_terms, s_kernel), s_draw)
        sd = float(np.std(g)) or 1.0
        level = np.random.default_rng(s_level).uniform(*level_range)
        pool.append(g + level * sd)
    return pool


def synthetic_corpus(quantizer, context_len: int, horizon: int, n_series: int = 100,
                     n_mixup: int = 100, length: int = 256, seed: int = 0, stride: int = 4) -> list:
    """Token corpus from KernelSynth series plus TSMixup combinations of them."""
    pool = synthetic_pool(n_series, length, seed=seed)
    series = list(pool)
    cfg = TSMixupConfig(length_range=(min(length, context_len + horizon), length))
    for k in range(n_mixup):
        series.append(tsmixup(pool, cfg, seed=seed * 100003 + k + 1).series)
    corpus = []
    for s in series:
        corpus.extend(window_sequences(s, quantizer, context_len, horizon, stride))
    return corpus
