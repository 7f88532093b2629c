"""Independent reference implementations used as test oracles."""

import math


def dcor_bruteforce(u, v):
    """Distance correlation by explicit loops over every index pair."""
    n = len(u)

    def centered(x):
        a = [[abs(x[k] - x[l]) for l in range(n)] for k in range(n)]
        row = [sum(a[k][l] for l in range(n)) / n for k in range(n)]
        col = [sum(a[k][l] for k in range(n)) / n for l in range(n)]
        grand = sum(a[k][l] for k in range(n) for l in range(n)) / n**2
        return [[a[k][l] - row[k] - col[l] + grand for l in range(n)] for k in range(n)]

    A, B = centered(u), centered(v)
    vxy = vxx = vyy = 0.0
    for k in range(n):
        for l in range(n):
            vxy += A[k][l] * B[k][l]
            vxx += A[k][l] * A[k][l]
            vyy += B[k][l] * B[k][l]
    vxy, vxx, vyy = vxy / n**2, vxx / n**2, vyy / n**2
    if vxx * vyy <= 0:
        return 0.0
    return max(vxy, 0.0) / math.sqrt(vxx * vyy)


def ols_by_normal_equations(v, z):
    """Residuals of v on [1, z] for a single regressor via closed-form slope."""
    n = len(v)
    mz = sum(z) / n
    mv = sum(v) / n
    sxy = sum((zi - mz) * (vi - mv) for zi, vi in zip(z, v))
    sxx = sum((zi - mz) ** 2 for zi in z)
    b = sxy / sxx
    a = mv - b * mz
    return [vi - a - b * zi for zi, vi in zip(z, v)]
