"""Conditional independence tests ``X _|_ Y | Z`` for scalar X and Y.

Two tests are provided:

* :func:`parcorr_test` -- partial correlation of OLS residuals with an
  analytic Student's-t null.
* :func:`gpdc_test` -- Gaussian-process regression residuals, rank
  uniformisation, distance correlation, and a permutation null.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.spatial.distance import pdist, squareform

from .errors import (ConfigurationError, DegenerateTestError, NumericalError,
                     SampleSizeError, SingularityError)

DEFAULT_N_PERM = 199
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class HighDimensionalConditioningWarning(UserWarning):
    """The conditioning set is large relative to the sample; GP regression may
    then leave the test close to an unconditional dependence measure."""


@dataclass
class CITestResult:
    statistic: float
    p_value: float
    sample_size: int
    cond_dim: int
    dof: int | None = None
    n_permutations: int | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class ResidualPair:
    eps_x: np.ndarray
    eps_y: np.ndarray
    fit_diagnostics: dict = field(default_factory=dict)


def _as_matrix(Z, n: int) -> np.ndarray:
    if Z is None:
        return np.empty((n, 0))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise ConfigurationError(f"Z has {Z.shape[0]} rows, expected {n}")
    return Z


# --------------------------------------------------------------------------
# Partial correlation


def ols_residuals(v, Z=None, return_coef: bool = False):
    """Residuals of the least-squares regression of ``v`` on ``[1, Z]``."""
    v = np.asarray(v, dtype=float)
    n = v.size
    Z = _as_matrix(Z, n)
    if Z.shape[1] == 0:
        if n < 2:
            raise SampleSizeError("need at least 2 samples")
        res = v - v.mean()
        return (res, np.array([v.mean()])) if return_coef else res
    X = np.column_stack([np.ones(n), Z])
    if X.shape[1] >= n:
        raise SampleSizeError(f"{X.shape[1]} regressors (with intercept) for {n} samples")
    coef, _, rank, sv = np.linalg.lstsq(X, v, rcond=None)
    if rank < X.shape[1]:
        raise SingularityError(f"conditioning matrix is rank deficient ({rank} < {X.shape[1]})")
    res = v - X @ coef
    return (res, coef) if return_coef else res


def parcorr_test(x, y, Z=None) -> CITestResult:
    """Partial correlation test.

    The statistic is the Pearson correlation of the OLS residuals of ``x`` and
    ``y`` on ``Z`` (plus intercept); the two-sided p-value uses a Student's-t
    distribution with ``T - D_Z - 2`` degrees of freedom.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    T = x.size
    if y.size != T:
        raise ConfigurationError("x and y must have equal length")
    Zm = _as_matrix(Z, T)
    dz = Zm.shape[1]
    if T < dz + 4:
        raise SampleSizeError(f"T={T} too small for conditioning dimension {dz}")
    ex = ols_residuals(x, Zm)
    ey = ols_residuals(y, Zm)
    sx = np.sqrt(ex @ ex)
    sy = np.sqrt(ey @ ey)
    scale = max(np.abs(x).max(), np.abs(y).max(), 1.0)
    if sx <= 1e-12 * scale * np.sqrt(T) or sy <= 1e-12 * scale * np.sqrt(T):
        raise DegenerateTestError("residuals have zero variance")
    r = float(np.clip((ex @ ey) / (sx * sy), -1.0, 1.0))
    dof = T - dz - 2
    if 1.0 - abs(r) < 1e-15:
        return CITestResult(r, 0.0, T, dz, dof=dof, note="saturated: |r| = 1")
    t = r * np.sqrt(dof / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), dof))
    return CITestResult(r, min(max(p, 0.0), 1.0), T, dz, dof=dof)


# --------------------------------------------------------------------------
# Gaussian process regression


@dataclass
class GPModel:
    """Zero-mean GP with isotropic squared-exponential kernel plus noise."""

    signal_var: float
    length_scale: float
    noise_var: float
    Z: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    jitter: float = 0.0
    log_marginal_likelihood: float = float("nan")

    def kernel(self) -> np.ndarray:
        return self.signal_var * _se_kernel(_sq_dists(self.Z), self.length_scale)

    def posterior_mean(self, v) -> np.ndarray:
        alpha = cho_solve((self.chol, True), np.asarray(v, dtype=float), check_finite=False)
        return self.kernel() @ alpha


@dataclass
class GPGrid:
    """Absolute hyperparameter values to search."""

    length_scales: tuple
    signal_vars: tuple
    noise_vars: tuple

    @classmethod
    def default(cls, Z, v) -> "GPGrid":
        """Grid relative to the data: length scales are multiples of the
        median pairwise distance, variances multiples of ``var(v)``."""
        Z = np.asarray(Z, dtype=float)
        d = pdist(Z) if Z.shape[0] > 1 else np.array([])
        med = float(np.median(d)) if d.size else 0.0
        if not med > 0:
            med = 1.0
        var = float(np.var(v))
        if not var > 1e-300:
            var = 1.0
        return cls(
            length_scales=tuple(med * np.logspace(-1, 1, 7)),
            signal_vars=tuple(var * np.array([0.25, 0.5, 1.0, 2.0])),
            noise_vars=tuple(var * np.logspace(-4, 0, 7)),
        )


def _sq_dists(Z: np.ndarray) -> np.ndarray:
    return squareform(pdist(Z, "sqeuclidean")) if Z.shape[0] > 1 else np.zeros((1, 1))


def _se_kernel(sq_dists: np.ndarray, length_scale: float) -> np.ndarray:
    return np.exp(-0.5 * sq_dists / length_scale**2)


def _jittered_cholesky(K: np.ndarray):
    """Cholesky factor of ``K``, adding ``jitter * mean(diag)`` on failure."""
    base = max(float(np.mean(np.diag(K))), 1e-300)
    for jit in JITTERS:
        Kj = K if jit == 0.0 else K + jit * base * np.eye(K.shape[0])
        try:
            return cholesky(Kj, lower=True, check_finite=False), jit
        except LinAlgError:
            continue
    raise NumericalError("Cholesky factorisation failed after jitter escalation to 1e-6")


def _lml(L: np.ndarray, v: np.ndarray) -> float:
    alpha = cho_solve((L, True), v, check_finite=False)
    return float(-0.5 * v @ alpha - np.log(np.diag(L)).sum() - 0.5 * v.size * np.log(2 * np.pi))


def gp_fit(Z, v, grid: GPGrid | None = None) -> GPModel:
    """Select GP hyperparameters by exhaustive grid search on the exact log
    marginal likelihood.

    Grid points are visited in the order (length scale, signal variance,
    noise variance); the first maximiser wins.
    """
    v = np.asarray(v, dtype=float)
    Z = _as_matrix(Z, v.size)
    if v.size < 10:
        raise SampleSizeError("GP regression needs at least 10 samples")
    if grid is None:
        grid = GPGrid.default(Z, v)
    D = _sq_dists(Z)
    n = v.size
    best = None
    for ell in grid.length_scales:
        K0 = _se_kernel(D, ell)
        for sf in grid.signal_vars:
            for sn in grid.noise_vars:
                K = sf * K0
                K[np.diag_indices(n)] += sn
                L, jit = _jittered_cholesky(K)
                lml = _lml(L, v)
                if best is None or lml > best[0]:
                    best = (lml, sf, ell, sn, L, jit)
    lml, sf, ell, sn, L, jit = best
    return GPModel(float(sf), float(ell), float(sn), Z, L, jit, lml)


def gp_residuals(model: GPModel, v) -> np.ndarray:
    """``v`` minus the GP posterior mean at the training inputs."""
    v = np.asarray(v, dtype=float)
    if v.size != model.Z.shape[0]:
        raise ConfigurationError("v length differs from the model's training inputs")
    return v - model.posterior_mean(v)


# --------------------------------------------------------------------------
# Distance correlation


def rank_uniform_transform(v) -> np.ndarray:
    """Map to ``rank / n`` in ``(0, 1]``, averaging ranks over ties."""
    v = np.asarray(v, dtype=float)
    return stats.rankdata(v, method="average") / v.size


def _double_centered(u: np.ndarray) -> np.ndarray:
    a = np.abs(u[:, None] - u[None, :])
    row = a.mean(axis=1)
    return a - row[:, None] - row[None, :] + row.mean()


def _dcor_from_centered(A: np.ndarray, B: np.ndarray) -> float:
    vxy = np.mean(A * B)
    vxx = np.mean(A * A)
    vyy = np.mean(B * B)
    denom = vxx * vyy
    if not denom > 0:
        return 0.0
    return float(min(max(vxy / np.sqrt(denom), 0.0), 1.0))


def distance_correlation(u, v) -> float:
    """Sample distance correlation ``V2(u,v) / sqrt(V2(u,u) V2(v,v))`` using
    the uncorrected V-statistic. Returns 0 if either distance variance is 0."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size != v.size or u.size < 2:
        raise ConfigurationError("distance_correlation needs equal lengths n >= 2")
    return _dcor_from_centered(_double_centered(u), _double_centered(v))


# --------------------------------------------------------------------------
# GPDC


def _standardize_columns(Z: np.ndarray) -> np.ndarray:
    sd = Z.std(axis=0)
    sd[sd == 0] = 1.0
    return (Z - Z.mean(axis=0)) / sd


def gpdc_residuals(x, y, Z=None) -> ResidualPair:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    Zm = _as_matrix(Z, x.size)
    if Zm.shape[1] == 0:
        return ResidualPair(x - x.mean(), y - y.mean(), {"regression": "demean"})
    Zs = _standardize_columns(Zm)
    diag = {"regression": "gp"}
    out = []
    for name, v in (("x", x), ("y", y)):
        vc = v - v.mean()
        model = gp_fit(Zs, vc)
        out.append(gp_residuals(model, vc))
        diag[name] = {
            "signal_var": model.signal_var,
            "length_scale": model.length_scale,
            "noise_var": model.noise_var,
            "log_marginal_likelihood": model.log_marginal_likelihood,
        }
    return ResidualPair(out[0], out[1], diag)


def permutation_seed(seed: int, index: int) -> np.random.Generator:
    """Generator for permutation ``index``; independent of evaluation order."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(index)])


def gpdc_test(x, y, Z=None, n_perm: int = DEFAULT_N_PERM, seed: int = 0) -> CITestResult:
    """GP distance-correlation CI test with a permutation null.

    Residuals of ``x`` and ``y`` (GP regression on ``Z``, or demeaning when
    ``Z`` is empty) are rank-uniformised; the p-value is
    ``(1 + #{R_perm >= R_obs}) / (n_perm + 1)`` where each permutation
    shuffles the x ranks.
    """
    if n_perm < 99:
        raise ConfigurationError(f"n_perm must be >= 99, got {n_perm}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    T = x.size
    if y.size != T:
        raise ConfigurationError("x and y must have equal length")
    Zm = _as_matrix(Z, T)
    dz = Zm.shape[1]
    if dz and T < 20:
        raise SampleSizeError(f"GPDC with conditioning needs T >= 20, got {T}")
    if dz > T / 10:
        warnings.warn(
            f"conditioning dimension {dz} exceeds T/10 (T={T}); the GP regression may not "
            "capture the conditional structure and the test then approaches an "
            "unconditional dependence measure",
            HighDimensionalConditioningWarning, stacklevel=2)
    res = gpdc_residuals(x, y, Zm)
    rx = rank_uniform_transform(res.eps_x)
    ry = rank_uniform_transform(res.eps_y)
    A = _double_centered(rx)
    B = _double_centered(ry)
    obs = _dcor_from_centered(A, B)
    if obs == 0.0 and (np.mean(A * A) == 0 or np.mean(B * B) == 0):
        return CITestResult(0.0, 1.0, T, dz, n_permutations=n_perm,
                            note="degenerate distance variance")
    exceed = 0
    for k in range(n_perm):
        perm = permutation_seed(seed, k).permutation(T)
        if _dcor_from_centered(A[np.ix_(perm, perm)], B) >= obs:
            exceed += 1
    p = (1 + exceed) / (n_perm + 1)
    return CITestResult(obs, p, T, dz, n_permutations=n_perm)


TESTS = {"parcorr": parcorr_test, "gpdc": gpdc_test}


def run_test(name: str, x, y, Z=None, *, n_perm: int = DEFAULT_N_PERM, seed: int = 0) -> CITestResult:
    if name == "parcorr":
        return parcorr_test(x, y, Z)
    if name == "gpdc":
        return gpdc_test(x, y, Z, n_perm=n_perm, seed=seed)
    raise ConfigurationError(f"unknown CI test {name!r}; choose from {sorted(TESTS)}")
