"""Synthetic systems shared by the test modules."""

import numpy as np

from causalcast.panel import TimeSeriesPanel, format_period


def quarterly_index(T, start_year=1970):
    return [format_period(4 * start_year + t, "quarterly") for t in range(T)]


def make_panel(data: dict, start_year=1970):
    names = list(data)
    values = np.column_stack([np.asarray(data[n], dtype=float) for n in names])
    return TimeSeriesPanel(names, quarterly_index(values.shape[0], start_year), values)


def linear_scm(T=1000, seed=0, burn=100):
    """x_t = 0.7 x_{t-1} + e;  y_t = 0.5 x_{t-2} + 0.6 y_{t-1} + e."""
    rng = np.random.default_rng(seed)
    n = T + burn
    e = rng.standard_normal((n, 2))
    x = np.zeros(n)
    y = np.zeros(n)
    for t in range(2, n):
        x[t] = 0.7 * x[t - 1] + e[t, 0]
        y[t] = 0.5 * x[t - 2] + 0.6 * y[t - 1] + e[t, 1]
    return make_panel({"x": x[burn:], "y": y[burn:]})


LINEAR_TRUTH = {("x", 1, "x"), ("x", 2, "y"), ("y", 1, "y")}


def latent_confounder(T=1000, seed=0, burn=100):
    """Hidden white-noise L drives x and y at lag 1; no direct x-y link."""
    rng = np.random.default_rng(seed)
    n = T + burn
    L = rng.standard_normal(n)
    e = rng.standard_normal((n, 2))
    x = np.zeros(n)
    y = np.zeros(n)
    for t in range(1, n):
        x[t] = 0.5 * x[t - 1] + 0.8 * L[t - 1] + e[t, 0]
        y[t] = 0.5 * y[t - 1] + 0.8 * L[t - 1] + e[t, 1]
    return make_panel({"x": x[burn:], "y": y[burn:]})


def ar1(n, phi=0.9, seed=0, burn=100):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return x[burn:]


def adjacency_f1(found: set, truth: set) -> float:
    tp = len(found & truth)
    if tp == 0:
        return 0.0
    prec = tp / len(found)
    rec = tp / len(truth)
    return 2 * prec * rec / (prec + rec)
