"""Forecast evaluation: interval coverage with Jeffreys-Beta posteriors,
absolute errors, interval widths, binomial calibration and anomaly flags."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import betainc

from .chronoslite import ForecastBundle, forecast_quantiles, _level_key
from .errors import AlignmentError, ConfigurationError


@dataclass
class CoverageCounts:
    n: list
    k: list

    def proportions(self) -> list:
        return [ki / ni if ni else float("nan") for ki, ni in zip(self.k, self.n)]

    def pooled(self) -> float:
        return sum(self.k) / sum(self.n) if sum(self.n) else float("nan")


@dataclass
class PosteriorSummary:
    a: float
    b: float
    mean: float
    interval: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interval"] = list(self.interval)
        return d


@dataclass
class AnomalyFlag:
    timestamp: str
    observed: float
    lower_tail: float
    upper_tail: float
    tail_probability: float
    flagged: bool
    alpha: float
    horizon: int = 1


def _actuals_matrix(actuals, bundles) -> np.ndarray:
    if not bundles:
        raise AlignmentError("no forecast bundles")
    H = bundles[0].horizon
    if any(b.horizon != H for b in bundles):
        raise AlignmentError("bundles have different horizons")
    A = np.asarray(actuals, dtype=float)
    if A.ndim == 1 and len(bundles) == 1:
        A = A[None, :]
    if A.shape != (len(bundles), H):
        raise AlignmentError(f"actuals shape {A.shape} != ({len(bundles)}, {H})")
    return A


def align_actuals(index, values, bundles) -> np.ndarray:
    """Look up the realised value for every forecast step by period label."""
    pos = {lab: k for k, lab in enumerate(index)}
    out = np.empty((len(bundles), bundles[0].horizon if bundles else 0))
    for r, b in enumerate(bundles):
        if len(b.step_index) != b.horizon:
            raise AlignmentError(f"bundle {b.origin!r} has no step labels")
        for h, lab in enumerate(b.step_index):
            if lab not in pos:
                raise AlignmentError(f"no actual value for period {lab!r}")
            out[r, h] = values[pos[lab]]
    return out


def _band(b: ForecastBundle, level: float) -> np.ndarray:
    key = _level_key(level)
    if key in b.quantiles:
        return np.asarray(b.quantiles[key], dtype=float)
    if b.samples is None:
        raise ConfigurationError(f"bundle {b.origin!r} has neither the {key} band nor samples")
    return forecast_quantiles(b.samples, [level])[key]


def central_band(b: ForecastBundle, level: float = 0.90):
    tail = (1.0 - level) / 2.0
    return _band(b, round(tail, 10)), _band(b, round(1.0 - tail, 10))


def coverage_counts(actuals, bundles, level: float = 0.90) -> CoverageCounts:
    """Per-horizon count of actuals inside the central ``level`` band
    (boundaries inclusive)."""
    A = _actuals_matrix(actuals, bundles)
    lo = np.array([central_band(b, level)[0] for b in bundles])
    hi = np.array([central_band(b, level)[1] for b in bundles])
    inside = (A >= lo) & (A <= hi)
    return CoverageCounts([len(bundles)] * A.shape[1], [int(v) for v in inside.sum(axis=0)])


def beta_ppf(p: float, a: float, b: float, tol: float = 1e-10) -> float:
    """Inverse of the regularised incomplete beta function by bisection."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_posterior(k: int, n: int, credible: float = 0.90) -> PosteriorSummary:
    """Jeffreys posterior ``Beta(k + 0.5, n - k + 0.5)`` with equal-tailed
    credible interval."""
    if not 0 <= k <= n:
        raise ConfigurationError(f"need 0 <= k <= n, got k={k}, n={n}")
    a, b = k + 0.5, n - k + 0.5
    tail = (1.0 - credible) / 2.0
    return PosteriorSummary(a, b, a / (a + b), (beta_ppf(tail, a, b), beta_ppf(1.0 - tail, a, b)))


def _summaries(M: np.ndarray) -> list:
    out = []
    for h in range(M.shape[1]):
        col = M[:, h]
        q1, med, q3 = np.percentile(col, [25, 50, 75])
        out.append({"horizon": h + 1, "mean": float(col.mean()), "median": float(med),
                    "iqr": float(q3 - q1), "n": int(col.size)})
    return out


def error_distributions(actuals, bundles) -> dict:
    """Absolute errors ``|y - median|`` per origin and horizon."""
    A = _actuals_matrix(actuals, bundles)
    med = np.array([_band(b, 0.5) for b in bundles])
    err = np.abs(A - med)
    return {"errors": err, "summary": _summaries(err)}


def interval_widths(bundles, level: float = 0.90) -> dict:
    if not bundles:
        raise AlignmentError("no forecast bundles")
    W = np.array([central_band(b, level)[1] - central_band(b, level)[0] for b in bundles])
    return {"widths": W, "summary": _summaries(W)}


def binomial_calibration(violations: int, n: int, p: float = 0.10) -> dict:
    """Compare a violation count with ``Binomial(n, p)``."""
    if not 0 <= violations <= n:
        raise ConfigurationError(f"need 0 <= violations <= n, got {violations}, {n}")
    mean = n * p
    sd = math.sqrt(n * p * (1 - p))
    z = (violations - mean) / sd if sd > 0 else float("nan")
    return {"violations": violations, "n": n, "p": p, "expected_mean": mean, "sd": sd,
            "z": z, "within_2sd": bool(abs(z) <= 2.0)}


def anomaly_flags(actuals, bundles, alpha: float = 0.05) -> list:
    """Flag observations in either tail of the sampled predictive distribution.

    ``P(X <= obs) = (1 + #{samples <= obs}) / (m + 1)`` and symmetrically for
    the upper tail; flagged when the smaller of the two is below ``alpha``.
    """
    A = _actuals_matrix(actuals, bundles)
    flags = []
    for r, b in enumerate(bundles):
        if b.samples is None:
            raise ConfigurationError(f"bundle {b.origin!r} has no samples; cannot flag anomalies")
        S = np.asarray(b.samples, dtype=float)
        m = S.shape[0]
        for h in range(A.shape[1]):
            obs = A[r, h]
            lower = (1 + int((S[:, h] <= obs).sum())) / (m + 1)
            upper = (1 + int((S[:, h] >= obs).sum())) / (m + 1)
            tail = min(lower, upper)
            label = b.step_index[h] if len(b.step_index) > h else f"{b.origin}+{h + 1}"
            flags.append(AnomalyFlag(label, float(obs), lower, upper, tail, tail < alpha,
                                     alpha, h + 1))
    return flags


# --------------------------------------------------------------------------
# Plot-ready CSV


def matrix_csv(M: np.ndarray, origins, value_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["origin", "horizon", value_name])
    for r, origin in enumerate(origins):
        for h in range(M.shape[1]):
            w.writerow([origin, h + 1, repr(float(M[r, h]))])
    return buf.getvalue()


def posteriors_csv(counts: CoverageCounts, credible: float = 0.90) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon", "k", "n", "proportion", "a", "b", "mean", "ci_low", "ci_high"])
    for h, (k, n) in enumerate(zip(counts.k, counts.n)):
        post = beta_posterior(k, n, credible)
        w.writerow([h + 1, k, n, repr(k / n if n else float("nan")), repr(post.a), repr(post.b),
                    repr(post.mean), repr(post.interval[0]), repr(post.interval[1])])
    return buf.getvalue()


def anomalies_csv(flags) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "horizon", "observed", "lower_tail", "upper_tail",
                "tail_probability", "flagged"])
    for f in flags:
        w.writerow([f.timestamp, f.horizon, repr(f.observed), repr(f.lower_tail),
                    repr(f.upper_tail), repr(f.tail_probability), int(f.flagged)])
    return buf.getvalue()
