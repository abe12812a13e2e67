"""Pure numpy implementations of the numerical kernels.

Reference backend; :mod:`fleetopt._ckernels` mirrors every function here with
identical signatures and must agree to rounding error.
"""
import math

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)


def sq_dists(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign_nearest(points, centroids):
    """Index of the nearest centroid per point (lowest index on ties) and
    the squared distance to it."""
    d2 = sq_dists(points, centroids)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), d2[np.arange(d2.shape[0]), labels]


def matern52(x1, x2, lengthscales, variance):
    x1 = np.asarray(x1, dtype=float) / lengthscales
    x2 = np.asarray(x2, dtype=float) / lengthscales
    r = np.sqrt(np.maximum(sq_dists(x1, x2), 0.0))
    s = SQRT5 * r
    return variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def gp_nlml(x, y, lengthscales, variance, noise):
    """Negative log marginal likelihood of a zero-mean Matérn-5/2 GP.

    ``noise`` is the total diagonal term (noise variance plus jitter).
    Returns ``inf`` when the Gram matrix is not numerically positive definite.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    k = matern52(x, x, lengthscales, variance)
    k[np.diag_indices(n)] += noise
    try:
        chol = cholesky(k, lower=True, check_finite=False)
    except LinAlgError:
        return math.inf
    alpha = solve_triangular(chol, y, lower=True, check_finite=False)
    return 0.5 * float(alpha @ alpha) + float(np.log(np.diag(chol)).sum()) + 0.5 * n * LOG_2PI


def matern52_ls_grad(x, lengthscales, variance, w):
    """``sum_ij w_ij * dK_ij / d log(lengthscale_k)`` for each dim ``k``."""
    x = np.asarray(x, dtype=float) / lengthscales
    diff2 = (x[:, None, :] - x[None, :, :]) ** 2
    s = SQRT5 * np.sqrt(diff2.sum(axis=-1))
    e = variance * (5.0 / 3.0) * (1.0 + s) * np.exp(-s)
    return np.einsum("ij,ijk->k", np.asarray(w, dtype=float) * e, diff2)


def mc_expected_improvement(mean, std, z, best):
    """Monte Carlo EI: average of ``max(mean + std*z - best, 0)`` over draws ``z``."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    z = np.asarray(z, dtype=float)
    draws = mean[:, None] + std[:, None] * z[None, :]
    return np.maximum(draws - best, 0.0).mean(axis=1)
