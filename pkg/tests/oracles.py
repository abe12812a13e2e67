"""Independent reference computations used by the tests.

Each oracle is written directly from the defining formula, without sharing
code with the package.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.stats import norm


def direct_aggregate(deltas, raw_weights, alpha, epsilon):
    """(mean, rate, feasible) via exact rational arithmetic for the rate and
    normalized weights, then rounded mean."""
    n = len(deltas)
    count = 0
    for d in deltas:
        if d < -alpha:
            count += 1
    rate = count / n
    total = Fraction(0)
    for w in raw_weights:
        total += Fraction(w)
    mean = Fraction(0)
    for w, d in zip(raw_weights, deltas):
        mean += Fraction(w) / total * Fraction(d)
    return float(mean), rate, rate <= epsilon


def normal_equations(x, y):
    """OLS with intercept through (X^T X) beta = X^T y, solved by Cholesky."""
    x = np.column_stack([np.ones(len(x)), np.asarray(x, dtype=float)])
    gram = x.T @ x
    rhs = x.T @ np.asarray(y, dtype=float)
    chol = np.linalg.cholesky(gram)
    z = np.linalg.solve(chol, rhs)
    coef = np.linalg.solve(chol.T, z)
    return coef[0], coef[1:]


def closed_form_ei(mean, std, best):
    """E[max(f - best, 0)] for f ~ N(mean, std^2)."""
    if std <= 0:
        return max(mean - best, 0.0)
    z = (mean - best) / std
    return (mean - best) * norm.cdf(z) + std * norm.pdf(z)


def matern52_reference(x1, x2, lengthscales, variance):
    out = np.empty((len(x1), len(x2)))
    for i, a in enumerate(x1):
        for j, b in enumerate(x2):
            r = math.sqrt(sum(((ai - bi) / l) ** 2 for ai, bi, l in zip(a, b, lengthscales)))
            s = math.sqrt(5.0) * r
            out[i, j] = variance * (1 + s + s * s / 3) * math.exp(-s)
    return out


def population_variance(values):
    m = sum(values) / len(values)
    return sum((v - m) ** 2 for v in values) / len(values)
