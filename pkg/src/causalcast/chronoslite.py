"""Quantisation-token probabilistic forecasting.

A context window is mean-scaled, mapped to tokens by a uniform quantiser,
and extended autoregressively by sampling from a smoothed back-off k-gram
model over the token vocabulary.  Sampled tokens are dequantised to bin
centres and multiplied back by the scale.

Token ids are 1-based: ``1..B`` are value bins, ``B + 1`` is PAD and
``B + 2`` is EOS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PanelError, SampleSizeError, SpecialTokenError

DEFAULT_LEVELS = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class ScaledContext:
    scale: float
    values: np.ndarray
    length: int


def mean_scale(context) -> ScaledContext:
    """Divide by the mean absolute value of the context."""
    x = np.asarray(context, dtype=float)
    if x.size == 0:
        raise ConfigurationError("empty context")
    s = float(np.mean(np.abs(x)))
    if not s > 0:
        raise PanelError("context is all zeros; mean scale is degenerate")
    return ScaledContext(s, x / s, x.size)


@dataclass(frozen=True)
class Quantizer:
    n_bins: int
    lo: float
    hi: float
    centers: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigurationError(f"need at least 2 bins, got {self.n_bins}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ConfigurationError(f"invalid range [{self.lo}, {self.hi}]")
        w = (self.hi - self.lo) / self.n_bins
        centers = self.lo + w * (np.arange(self.n_bins) + 0.5)
        edges = (centers[:-1] + centers[1:]) / 2
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "edges", edges)

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def pad(self) -> int:
        return self.n_bins + 1

    @property
    def eos(self) -> int:
        return self.n_bins + 2

    @property
    def vocab_size(self) -> int:
        return self.n_bins + 2

    def to_dict(self) -> dict:
        return {"bins": self.n_bins, "lo": self.lo, "hi": self.hi}


def build_quantizer(n_bins: int = 64, lo: float = -15.0, hi: float = 15.0) -> Quantizer:
    return Quantizer(int(n_bins), float(lo), float(hi))


def quantize(v, q: Quantizer):
    """Token id of the bin containing ``v`` (after clamping to ``[lo, hi]``).
    A value exactly on an edge goes to the upper bin."""
    arr = np.clip(np.asarray(v, dtype=float), q.lo, q.hi)
    tok = np.searchsorted(q.edges, arr, side="right") + 1
    return int(tok) if np.ndim(tok) == 0 else tok.astype(np.int64)


def dequantize(j, q: Quantizer):
    arr = np.asarray(j)
    if np.any((arr < 1) | (arr > q.n_bins)):
        raise SpecialTokenError(f"token(s) outside value range 1..{q.n_bins} cannot be dequantized")
    out = q.centers[arr - 1]
    return float(out) if np.ndim(out) == 0 else out


def tokenize(context, q: Quantizer, window: int | None = None, append_eos: bool = False) -> np.ndarray:
    """Tokens for an already scaled context.

    ``append_eos`` marks a complete training sequence.  With ``window``, the
    sequence is left-padded with PAD (or truncated on the left) to that length.
    """
    vals = np.asarray(context, dtype=float)
    toks = quantize(vals, q) if vals.size else np.empty(0, dtype=np.int64)
    toks = np.atleast_1d(toks).astype(np.int64)
    if append_eos:
        toks = np.append(toks, q.eos)
    if window is not None:
        if toks.size >= window:
            toks = toks[toks.size - window:]
        else:
            toks = np.concatenate([np.full(window - toks.size, q.pad, dtype=np.int64), toks])
    return toks


# --------------------------------------------------------------------------
# Count model


class TokenPredictor:
    """Smoothed back-off k-gram model.

    ``p(z | ctx) = (count(ctx, z) + gamma) / (count(ctx) + gamma * V)`` for the
    longest suffix of ``ctx`` (at most ``order`` tokens) seen in training.
    """

    def __init__(self, order: int, gamma: float, vocab_size: int):
        if order < 1:
            raise ConfigurationError("order must be >= 1")
        if not gamma > 0:
            raise ConfigurationError("gamma must be > 0")
        self.order = int(order)
        self.gamma = float(gamma)
        self.vocab_size = int(vocab_size)
        self._rows = [dict() for _ in range(self.order + 1)]
        self._counts = [np.zeros((0, self.vocab_size)) for _ in range(self.order + 1)]
        self._n_rows = [0] * (self.order + 1)

    def _codes(self, ctx_matrix: np.ndarray) -> np.ndarray:
        V1 = self.vocab_size + 1
        codes = np.zeros(ctx_matrix.shape[0], dtype=np.int64)
        for col in range(ctx_matrix.shape[1]):
            codes = codes * V1 + ctx_matrix[:, col]
        return codes

    def _row_ids(self, m: int, codes: np.ndarray, create: bool) -> np.ndarray:
        rows = self._rows[m]
        out = np.empty(codes.size, dtype=np.int64)
        for n, c in enumerate(codes.tolist()):
            r = rows.get(c)
            if r is None:
                if not create:
                    out[n] = -1
                    continue
                r = self._n_rows[m]
                rows[c] = r
                self._n_rows[m] += 1
            out[n] = r
        if create and self._n_rows[m] > self._counts[m].shape[0]:
            grown = np.zeros((max(2 * self._counts[m].shape[0], self._n_rows[m], 16),
                              self.vocab_size))
            grown[:self._counts[m].shape[0]] = self._counts[m]
            self._counts[m] = grown
        return out

    def update(self, sequences, weight: float = 1.0) -> "TokenPredictor":
        """Add (or with negative weight, remove) n-gram counts."""
        for m in range(self.order + 1):
            ctxs, targets = [], []
            for seq in sequences:
                seq = np.asarray(seq, dtype=np.int64)
                if seq.size <= m:
                    continue
                idx = np.arange(m, seq.size)
                ctxs.append(np.stack([seq[idx - m + c] for c in range(m)], axis=1)
                            if m else np.empty((idx.size, 0), dtype=np.int64))
                targets.append(seq[idx])
            if not ctxs:
                continue
            ctx = np.concatenate(ctxs)
            tgt = np.concatenate(targets)
            rows = self._row_ids(m, self._codes(ctx), create=True)
            np.add.at(self._counts[m], (rows, tgt - 1), weight)
        return self

    def distributions(self, contexts: np.ndarray) -> np.ndarray:
        """Conditional distributions for a batch of contexts.

        ``contexts`` has shape ``(n, L)``; returns ``(n, V)`` where column
        ``t - 1`` holds the probability of token id ``t``.
        """
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.int64))
        n, L = contexts.shape
        chosen = np.full(n, -1, dtype=np.int64)
        chosen_m = np.full(n, -1, dtype=np.int64)
        for m in range(min(self.order, L), -1, -1):
            todo = chosen < 0
            if not todo.any():
                break
            sub = contexts[todo, L - m:] if m else np.empty((int(todo.sum()), 0), dtype=np.int64)
            rows = self._row_ids(m, self._codes(sub), create=False)
            ok = rows >= 0
            if ok.any():
                totals = self._counts[m][rows[ok]].sum(axis=1)
                ok_idx = np.flatnonzero(todo)[ok]
                seen = totals > 0
                chosen[ok_idx[seen]] = rows[ok][seen]
                chosen_m[ok_idx[seen]] = m
        out = np.full((n, self.vocab_size), 1.0 / self.vocab_size)
        for m in np.unique(chosen_m[chosen_m >= 0]):
            sel = chosen_m == m
            c = self._counts[m][chosen[sel]]
            out[sel] = (c + self.gamma) / (c.sum(axis=1, keepdims=True) + self.gamma * self.vocab_size)
        return out

    def distribution(self, context) -> np.ndarray:
        ctx = np.asarray(context, dtype=np.int64).reshape(1, -1)
        return self.distributions(ctx)[0]

    def n_contexts(self, m: int) -> int:
        return self._n_rows[m]


def train_count_model(corpus, order: int = 3, gamma: float = 0.5,
                      vocab_size: int | None = None) -> TokenPredictor:
    """Count-based maximum-likelihood k-gram model with additive smoothing.

    ``vocab_size`` defaults to the largest token id in the corpus.
    """
    corpus = [np.asarray(s, dtype=np.int64) for s in corpus]
    if not corpus or all(s.size == 0 for s in corpus):
        raise ConfigurationError("training corpus is empty")
    if vocab_size is None:
        vocab_size = int(max(s.max() for s in corpus if s.size))
    return TokenPredictor(order, gamma, vocab_size).update(corpus)


def cross_entropy(predictor: TokenPredictor, tokens, context_len: int) -> float:
    """Summed negative log-likelihood of every token after the first
    ``context_len`` ones (the forecast tokens and the closing EOS)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size < context_len + 2:
        raise ConfigurationError("need at least one forecast token plus EOS after the context")
    total = 0.0
    for t in range(context_len, tokens.size):
        p = predictor.distribution(tokens[:t])[tokens[t] - 1]
        total -= math.log(p)
    return total


# --------------------------------------------------------------------------
# Sampling


@dataclass
class ForecastBundle:
    origin: str
    horizon: int
    samples: np.ndarray | None
    quantiles: dict
    scale: float
    step_index: list = field(default_factory=list)
    origin_position: int | None = None
    tokens: np.ndarray | None = None

    def band(self, level: float):
        return self.quantiles[_level_key(level)]

    def to_dict(self, include_samples: bool = True) -> dict:
        d = {
            "origin": self.origin,
            "s": self.scale,
            "horizon": self.horizon,
            "steps": list(self.step_index),
            "quantiles": {k: [float(v) for v in vals] for k, vals in self.quantiles.items()},
        }
        if include_samples and self.samples is not None:
            d["samples"] = [[float(v) for v in row] for row in self.samples]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastBundle":
        samples = np.asarray(d["samples"], dtype=float) if d.get("samples") is not None else None
        quantiles = {k: np.asarray(v, dtype=float) for k, v in d["quantiles"].items()}
        return cls(d["origin"], int(d.get("horizon", len(next(iter(quantiles.values()))))),
                   samples, quantiles, float(d["s"]), list(d.get("steps", [])))


def _level_key(level: float) -> str:
    return format(float(level), "g")


def trajectory_uniforms(seed: int, n_samples: int, horizon: int) -> np.ndarray:
    """Uniform draws per trajectory from generators keyed on ``(seed, i)``."""
    return np.stack([np.random.default_rng([int(seed) & 0xFFFFFFFF, i]).random(horizon)
                     for i in range(n_samples)])


def sample_tokens(predictor: TokenPredictor, context_tokens, horizon: int, n_samples: int,
                  seed: int, n_bins: int) -> np.ndarray:
    """Draw ``n_samples`` token paths of length ``horizon``.

    Special tokens are excluded by renormalising over the value bins, which
    gives the same distribution as rejecting and redrawing them.
    """
    if horizon < 1 or n_samples < 1:
        raise ConfigurationError("horizon and n_samples must be >= 1")
    ctx = np.asarray(context_tokens, dtype=np.int64)
    u = trajectory_uniforms(seed, n_samples, horizon)
    paths = np.empty((n_samples, horizon), dtype=np.int64)
    keep = predictor.order
    hist = np.tile(ctx[max(0, ctx.size - keep):], (n_samples, 1))
    for h in range(horizon):
        probs = predictor.distributions(hist)[:, :n_bins]
        cdf = np.cumsum(probs, axis=1)
        draw = (cdf < (u[:, h] * cdf[:, -1])[:, None]).sum(axis=1)
        tok = np.minimum(draw, n_bins - 1) + 1
        paths[:, h] = tok
        hist = np.concatenate([hist, tok[:, None]], axis=1)[:, -keep:] if keep else hist
    return paths


def sample_forecast(predictor: TokenPredictor, context_tokens, horizon: int, n_samples: int,
                    seed: int, quantizer: Quantizer, scale: float = 1.0, origin: str = "",
                    levels=DEFAULT_LEVELS, keep_tokens: bool = False) -> ForecastBundle:
    paths = sample_tokens(predictor, context_tokens, horizon, n_samples, seed, quantizer.n_bins)
    samples = quantizer.centers[paths - 1] * scale
    quants = forecast_quantiles(samples, levels) if n_samples >= 20 else {}
    return ForecastBundle(origin, horizon, samples, quants, float(scale),
                          tokens=paths if keep_tokens else None)


def forecast_quantiles(bundle_or_samples, levels=DEFAULT_LEVELS) -> dict:
    """Nearest-rank empirical quantiles per horizon step:
    ``q_p = x_(ceil(p * n))``."""
    samples = (bundle_or_samples.samples if isinstance(bundle_or_samples, ForecastBundle)
               else np.asarray(bundle_or_samples, dtype=float))
    if samples is None:
        raise ConfigurationError("bundle carries no samples")
    samples = np.atleast_2d(samples)
    n = samples.shape[0]
    if n < 20:
        raise ConfigurationError(f"need at least 20 samples for quantiles, got {n}")
    srt = np.sort(samples, axis=0)
    out = {}
    for p in levels:
        if not 0 < p < 1:
            raise ConfigurationError(f"quantile level {p} outside (0, 1)")
        rank = max(1, math.ceil(p * n - 1e-9))
        out[_level_key(p)] = srt[rank - 1].copy()
    return out


# --------------------------------------------------------------------------
# Corpus construction and rolling evaluation


def window_sequences(series, quantizer: Quantizer, context_len: int, horizon: int,
                     stride: int = 1) -> list:
    """Training sequences from sliding windows of length ``context_len +
    horizon``: each window is scaled by its context part, tokenised and closed
    with EOS.  Series shorter than one window yield a single shorter sequence
    scaled by all but its last ``horizon`` values."""
    x = np.asarray(series, dtype=float)
    W = context_len + horizon
    out = []
    if x.size < 2:
        return out
    if x.size < W:
        starts, W = [0], x.size
        ctx_len = max(1, W - horizon)
    else:
        starts = range(0, x.size - W + 1, stride)
        ctx_len = context_len
    for s in starts:
        w = x[s:s + W]
        sc = float(np.mean(np.abs(w[:ctx_len])))
        if not sc > 0:
            continue
        out.append(tokenize(w / sc, quantizer, append_eos=True))
    return out


def rolling_origins(n: int, context_len: int = 40, horizon: int = 4, step: int = 4) -> list:
    """Origin positions ``o`` (first forecast index) with ``o >= context_len``
    and ``o + horizon <= n``."""
    if n < context_len + horizon:
        raise SampleSizeError(
            f"series of length {n} shorter than context_len + horizon = {context_len + horizon}")
    return list(range(context_len, n - horizon + 1, step))


def rolling_forecast(series, context_len: int = 40, horizon: int = 4, step: int = 4,
                     train: str = "expanding-history", *, index=None, quantizer=None,
                     order: int = 3, gamma: float = 0.5, n_samples: int = 200, seed: int = 0,
                     pretrain=None, levels=DEFAULT_LEVELS, keep_tokens: bool = False,
                     train_stride: int = 1) -> list:
    """Rolling-origin probabilistic forecasts.

    At each origin the predictor holds the ``pretrain`` token corpus (if
    any) plus windows drawn only from observations strictly before the
    origin; the context is the last ``context_len`` points.  Bundle ``k``
    uses seed ``seed + k``.
    """
    if train != "expanding-history":
        raise ConfigurationError(f"unsupported training scheme {train!r}")
    x = np.asarray(series, dtype=float)
    q = quantizer or build_quantizer()
    origins = rolling_origins(x.size, context_len, horizon, step)
    predictor = TokenPredictor(order, gamma, q.vocab_size)
    if pretrain:
        predictor.update(pretrain)
    W = context_len + horizon
    added_upto = 0  # full windows with start < added_upto are in the model
    bundles = []
    for k, o in enumerate(origins):
        history = x[:o]
        partial = None
        if o >= W:
            new_starts = [s for s in range(added_upto, o - W + 1) if s % train_stride == 0]
            seqs = []
            for s in new_starts:
                seqs.extend(window_sequences(x[s:s + W], q, context_len, horizon))
            if seqs:
                predictor.update(seqs)
            added_upto = o - W + 1
        else:
            partial = window_sequences(history, q, context_len, horizon)
            if partial:
                predictor.update(partial)
        ctx = mean_scale(history[-context_len:])
        toks = tokenize(ctx.values, q)
        label = index[o] if index is not None else str(o)
        b = sample_forecast(predictor, toks, horizon, n_samples, seed + k, q, ctx.scale,
                            label, levels, keep_tokens)
        b.origin_position = o
        b.step_index = (list(index[o:o + horizon]) if index is not None
                        else [str(t) for t in range(o, o + horizon)])
        bundles.append(b)
        if partial:
            predictor.update(partial, weight=-1.0)
    return bundles
