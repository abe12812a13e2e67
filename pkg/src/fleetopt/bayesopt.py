"""Gaussian-process Bayesian optimization over mixed hyperparameter spaces.

Configurations are encoded to a unit box (continuous and integer dims min-max
scaled, categorical dims one-hot). The surrogate is a zero-mean GP with an ARD
Matérn-5/2 kernel on standardized targets; hyperparameters are a MAP estimate
found by multi-start L-BFGS-B. Only feasible trials enter the GP. Feasibility
is modeled separately, by a GP on the feasibility margin when one is available
and a kernel-weighted vote otherwise, and multiplies the Monte Carlo expected
improvement at acquisition time.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from . import kernels
from .core import (
    Categorical,
    Configuration,
    Continuous,
    HyperparameterSpace,
    Integer,
    validate_configuration,
)
from .errors import InsufficientFeasibleTrials, InvalidConfiguration, SingularGram
from .objective import AggregateResult

JITTER = 1e-8
MAX_JITTER = 1e-4
NOISE_FLOOR = 1e-8
P_FLOOR = 1e-6
# candidates less likely than this to be feasible get no EI credit
P_CONFIDENT = 0.01

# log-space box for (lengthscales..., signal variance, noise variance),
# in encoded-input and standardized-target units
LOG_LS_BOUNDS = (math.log(1e-2), math.log(1e2))
LOG_SF2_BOUNDS = (math.log(1e-2), math.log(1e2))
LOG_SN2_BOUNDS = (math.log(NOISE_FLOOR), math.log(10.0))
# Gamma(shape, rate) prior on each lengthscale; keeps few-point fits from
# collapsing to tiny lengthscales that explain everything as noise
LS_PRIOR = (3.0, 6.0)
# log-normal prior (mean, sd of the log) on the standardized noise variance;
# same purpose for the noise/signal split
LOG_SN2_PRIOR = (math.log(1e-3), 2.0)


# --- encoding -----------------------------------------------------------------


def encoded_width(space: HyperparameterSpace) -> int:
    return sum(len(d.kind.values) if isinstance(d.kind, Categorical) else 1 for d in space.dims)


def encoded_names(space: HyperparameterSpace) -> list[str]:
    names = []
    for d in space.dims:
        if isinstance(d.kind, Categorical):
            names.extend(f"{d.name}={v}" for v in d.kind.values)
        else:
            names.append(d.name)
    return names


def encode_config(space: HyperparameterSpace, config: Configuration) -> np.ndarray:
    """Map a configuration to its unit-box coordinates."""
    report = validate_configuration(space, config)
    if not report.ok:
        raise InvalidConfiguration("; ".join(report.violations))
    out = []
    for d, v in zip(space.dims, config.values):
        k = d.kind
        if isinstance(k, Categorical):
            out.extend(1.0 if v == c else 0.0 for c in k.values)
        elif k.hi == k.lo:
            out.append(0.0)
        else:
            out.append((v - k.lo) / (k.hi - k.lo))
    return np.array(out, dtype=float)


def decode_vector(space: HyperparameterSpace, x: Sequence[float]) -> Configuration:
    """Inverse of :func:`encode_config` (categoricals decode by argmax)."""
    values = []
    i = 0
    for d in space.dims:
        k = d.kind
        if isinstance(k, Categorical):
            m = len(k.values)
            values.append(k.values[int(np.argmax(x[i : i + m]))])
            i += m
            continue
        u = min(max(float(x[i]), 0.0), 1.0)
        if isinstance(k, Integer):
            values.append(int(k.lo + round(u * (k.hi - k.lo))))
        else:
            values.append(min(max(k.lo + u * (k.hi - k.lo), k.lo), k.hi))
        i += 1
    return Configuration(tuple(values))


def config_from_unit(space: HyperparameterSpace, u: Sequence[float]) -> Configuration:
    """Map one point of ``[0, 1)^len(space)`` to a configuration.

    Integer and categorical dims use equal-width bins, so a stratified design
    hits every integer value / category equally often.
    """
    values = []
    for d, ui in zip(space.dims, u):
        k = d.kind
        if isinstance(k, Continuous):
            values.append(min(k.lo + float(ui) * (k.hi - k.lo), k.hi))
        elif isinstance(k, Integer):
            values.append(min(k.lo + int(math.floor(ui * (k.hi - k.lo + 1))), k.hi))
        else:
            values.append(k.values[min(int(math.floor(ui * len(k.values))), len(k.values) - 1)])
    return Configuration(tuple(values))


def initial_design(space: HyperparameterSpace, n: int, seed: int) -> list[Configuration]:
    """Latin hypercube over numeric dims; categorical values cycled in balance."""
    if n < 1:
        raise ValueError("initial design needs n >= 1")
    rng = np.random.default_rng(seed)
    columns = []
    for d in space.dims:
        perm = rng.permutation(n)
        if isinstance(d.kind, Categorical):
            m = len(d.kind.values)
            # (perm % m + 0.5) / m lands in the middle of category bin perm % m
            columns.append(((perm % m) + 0.5) / m)
        else:
            columns.append((perm + rng.random(n)) / n)
    unit = np.column_stack(columns)
    return [config_from_unit(space, row) for row in unit]


# --- surrogate ------------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateModel:
    space: HyperparameterSpace
    x: np.ndarray
    y: np.ndarray
    y_mean: float
    y_std: float
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    jitter: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    start_points: np.ndarray = field(repr=False)
    start_nlml: np.ndarray = field(repr=False)
    nlml: float = math.nan

    @property
    def log_marginal_likelihood(self) -> float:
        return -self.nlml

    @property
    def prior_mean(self) -> float:
        return self.y_mean

    @property
    def prior_variance(self) -> float:
        return self.signal_variance * self.y_std**2

    def predict(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance at encoded inputs ``xq``."""
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        kq = kernels.matern52(xq, self.x, self.lengthscales, self.signal_variance)
        mean = kq @ self.alpha
        v = solve_triangular(self.chol, kq.T, lower=True, check_finite=False)
        var = self.signal_variance - np.einsum("ij,ij->j", v, v)
        var = np.maximum(var, 0.0)
        return self.y_mean + self.y_std * mean, var * self.y_std**2


def _unpack(theta: np.ndarray, d: int):
    return np.exp(theta[:d]), math.exp(theta[d]), math.exp(theta[d + 1])


def _bounds(d: int) -> list[tuple[float, float]]:
    return [LOG_LS_BOUNDS] * d + [LOG_SF2_BOUNDS, LOG_SN2_BOUNDS]


def _nlml(theta, x, y, d):
    ls, sf2, sn2 = _unpack(np.clip(theta, *np.array(_bounds(d)).T), d)
    return kernels.gp_nlml(x, y, ls, sf2, sn2 + JITTER)


def _neg_log_posterior(theta, x, y, d):
    """NLML plus negative log priors on lengthscales and noise (log coordinates)."""
    shape, rate = LS_PRIOR
    log_ls = np.clip(theta[:d], *LOG_LS_BOUNDS)
    penalty = -float(np.sum(shape * log_ls - rate * np.exp(log_ls)))
    mu, sd = LOG_SN2_PRIOR
    penalty += 0.5 * ((float(np.clip(theta[d + 1], *LOG_SN2_BOUNDS)) - mu) / sd) ** 2
    return _nlml(theta, x, y, d) + penalty


def _neg_log_posterior_grad(theta, x, y, d):
    """Value and gradient of the negative log posterior; (inf, None) if not PD."""
    theta = np.clip(theta, *np.array(_bounds(d)).T)
    ls, sf2, sn2 = _unpack(theta, d)
    n = len(y)
    signal = kernels.matern52(x, x, ls, sf2)
    try:
        chol = cholesky(signal + (sn2 + JITTER) * np.eye(n), lower=True, check_finite=False)
    except LinAlgError:
        return math.inf, None
    alpha = cho_solve((chol, True), y, check_finite=False)
    value = 0.5 * float(y @ alpha) + float(np.log(np.diag(chol)).sum()) + 0.5 * n * math.log(2 * math.pi)
    # d nlml / d t = 0.5 tr((K^-1 - a a^T) dK/dt)
    w = 0.5 * (cho_solve((chol, True), np.eye(n), check_finite=False) - np.outer(alpha, alpha))
    grad = np.empty(d + 2)
    grad[:d] = kernels.matern52_ls_grad(x, ls, sf2, w)
    grad[d] = float(np.sum(w * signal))
    grad[d + 1] = sn2 * float(np.trace(w))

    shape, rate = LS_PRIOR
    value -= float(np.sum(shape * theta[:d] - rate * ls))
    grad[:d] -= shape - rate * ls
    mu, sd = LOG_SN2_PRIOR
    value += 0.5 * ((theta[d + 1] - mu) / sd) ** 2
    grad[d + 1] += (theta[d + 1] - mu) / sd**2
    return value, grad


def fit_surrogate(
    trials: Sequence[tuple[Configuration, AggregateResult]],
    space: HyperparameterSpace,
    seed: int = 0,
    n_starts: int = 16,
    fixed_noise: float | None = None,
) -> SurrogateModel:
    """Fit the GP to the feasible trials.

    Hyperparameters are a MAP estimate under weak priors, found by bounded
    L-BFGS-B with analytic gradients from several seeded starts.
    ``fixed_noise`` (standardized units) pins the noise variance instead
    of fitting it.
    """
    feasible = [(c, r) for c, r in trials if r is not None and r.feasible]
    if len({c.values for c, _ in feasible}) < 2:
        raise InsufficientFeasibleTrials(
            f"need >= 2 feasible trials with distinct configurations, got {len(feasible)}"
        )
    x = np.array([encode_config(space, c) for c, _ in feasible])
    y_raw = np.array([r.weighted_mean for _, r in feasible])
    return _fit_gp(space, x, y_raw, seed, n_starts, fixed_noise)


def _fit_gp(space, x, y_raw, seed, n_starts, fixed_noise) -> SurrogateModel:
    y_mean = float(y_raw.mean())
    y_std = float(y_raw.std())
    if not y_std > 0:
        y_std = 1.0
    y = (y_raw - y_mean) / y_std
    d = x.shape[1]

    bounds = np.array(_bounds(d))
    rng = np.random.default_rng(seed)
    starts = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n_starts, d + 2))
    if fixed_noise is not None:
        log_noise = math.log(max(fixed_noise, NOISE_FLOOR))
        starts[:, -1] = log_noise
        free = slice(0, d + 1)

        def objective(t):
            return _neg_log_posterior(np.append(t, log_noise), x, y, d)

        def with_grad(t):
            v, g = _neg_log_posterior_grad(np.append(t, log_noise), x, y, d)
            return v, (None if g is None else g[:-1])

    else:
        free = slice(0, d + 2)

        def objective(t):
            return _neg_log_posterior(t, x, y, d)

        def with_grad(t):
            return _neg_log_posterior_grad(t, x, y, d)

    free_bounds = [tuple(b) for b in bounds[free]]
    width = free.stop
    start_vals = np.array([objective(s[free]) for s in starts])

    def finite(t):
        # non-PD Gram matrices give inf; keep the line search numeric
        v, g = with_grad(t)
        if g is None or not math.isfinite(v):
            return 1e10, np.zeros(width)
        return v, g

    refined = []
    for s in starts:
        res = minimize(finite, s[free], jac=True, method="L-BFGS-B", bounds=free_bounds, options={"maxiter": 100})
        refined.append((float(objective(res.x)), tuple(res.x)))
    best_val, best_x = min(refined)
    theta = np.array(best_x)
    if fixed_noise is not None:
        theta = np.append(theta, log_noise)
    theta = np.clip(theta, bounds[:, 0], bounds[:, 1])
    ls, sf2, sn2 = _unpack(theta, d)

    gram = kernels.matern52(x, x, ls, sf2)
    jitter = JITTER
    while True:
        try:
            chol = cholesky(gram + (sn2 + jitter) * np.eye(len(y)), lower=True, check_finite=False)
            break
        except LinAlgError:
            jitter *= 10
            if jitter > MAX_JITTER * (1 + 1e-9):
                raise SingularGram("Gram matrix not positive definite at jitter 1e-4") from None
    alpha = cho_solve((chol, True), y, check_finite=False)
    return SurrogateModel(
        space=space,
        x=x,
        y=y_raw,
        y_mean=y_mean,
        y_std=y_std,
        lengthscales=ls,
        signal_variance=sf2,
        noise_variance=sn2,
        jitter=jitter,
        chol=chol,
        alpha=alpha,
        start_points=starts,
        start_nlml=start_vals,
        nlml=_nlml(theta, x, y, d),
    )


def posterior(model: SurrogateModel, config: Configuration) -> tuple[float, float]:
    mean, var = model.predict(encode_config(model.space, config)[None, :])
    return float(mean[0]), float(var[0])


# --- feasibility ----------------------------------------------------------------


@dataclass(frozen=True)
class FeasibilityModel:
    """P(feasible | theta), strictly inside (0, 1).

    With no infeasible label yet the estimate is the global rate
    ``(n_feasible + 1) / (n + 2)`` everywhere. Otherwise, when a GP of the
    constraint margin is available, it is ``Phi(mean / std)`` of that GP;
    without one, a Gaussian-kernel weighted vote of the labels shrunk toward
    the global rate with unit prior weight.
    """

    x: np.ndarray
    labels: np.ndarray
    lengthscale: float = 0.1
    margin_model: SurrogateModel | None = None

    @property
    def base_rate(self) -> float:
        return (float(self.labels.sum()) + 1.0) / (len(self.labels) + 2.0)

    def predict(self, xq: np.ndarray) -> np.ndarray:
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        prior = self.base_rate
        if len(self.labels) == 0 or self.labels.all():
            return np.full(xq.shape[0], prior)
        if self.margin_model is not None:
            mean, var = self.margin_model.predict(xq)
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(var > 0, mean / np.sqrt(var), np.sign(mean) * np.inf)
            return np.clip(norm.cdf(z), P_FLOOR, 1.0 - P_FLOOR)
        w = np.exp(-0.5 * kernels.sq_dists(xq, self.x) / self.lengthscale**2)
        return (w @ self.labels.astype(float) + prior) / (w.sum(axis=1) + 1.0)


def fit_feasibility(
    configs: Sequence[Configuration],
    feasible: Sequence[bool],
    space: HyperparameterSpace,
    margins: Sequence[float] | None = None,
    seed: int = 0,
    n_starts: int = 16,
    lengthscale: float = 0.1,
) -> FeasibilityModel:
    """Feasibility estimate from evaluated configurations.

    ``margins`` (one per config, >= 0 exactly when feasible) enable the GP
    estimate; it is fitted only once some label is false and at least two
    distinct configurations exist.
    """
    if lengthscale <= 0:
        raise ValueError("lengthscale must be positive")
    width = encoded_width(space)
    x = np.array([encode_config(space, c) for c in configs]).reshape(-1, width)
    labels = np.asarray(feasible, dtype=bool)
    margin_model = None
    if margins is not None:
        if len(margins) != len(labels):
            raise ValueError(f"{len(margins)} margins for {len(labels)} configurations")
        if not labels.all() and len({c.values for c in configs}) >= 2:
            try:
                margin_model = _fit_gp(space, x, np.asarray(margins, dtype=float), seed, n_starts, None)
            except SingularGram:
                margin_model = None
    return FeasibilityModel(x, labels, lengthscale, margin_model)


# --- acquisition ----------------------------------------------------------------


@dataclass(frozen=True)
class AcquisitionSpec:
    mc_samples: int = 256
    candidate_pool: int = 1024
    initial_design_size: int | None = None

    def __post_init__(self):
        if self.mc_samples < 1 or self.candidate_pool < 1:
            raise ValueError("mc_samples and candidate_pool must be positive")
        if self.initial_design_size is not None and self.initial_design_size < 1:
            raise ValueError("initial_design_size must be positive")

    def design_size(self, space: HyperparameterSpace) -> int:
        if self.initial_design_size is not None:
            return self.initial_design_size
        return max(5, 2 * len(space))

    def to_json(self) -> dict:
        return {
            "mc_samples": self.mc_samples,
            "candidate_pool": self.candidate_pool,
            "initial_design_size": self.initial_design_size,
        }


def _sobol(d: int, n: int, seed) -> np.ndarray:
    sampler = qmc.Sobol(d=d, scramble=True, seed=np.random.default_rng(seed))
    with warnings.catch_warnings():
        # non power-of-two sizes are fine for a candidate pool
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(n)


def normal_base_samples(n: int, seed) -> np.ndarray:
    """Scrambled-Sobol quasi-random standard normal draws."""
    u = _sobol(1, n, seed)[:, 0]
    return norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))


def candidate_pool(space: HyperparameterSpace, n: int, seed) -> list[Configuration]:
    return [config_from_unit(space, row) for row in _sobol(len(space), n, seed)]


def mc_expected_improvement(mean, variance, incumbent_best: float, z) -> np.ndarray:
    return kernels.mc_expected_improvement(
        np.asarray(mean, dtype=float), np.sqrt(np.asarray(variance, dtype=float)), z, float(incumbent_best)
    )


def acquisition_scores(
    model: SurrogateModel,
    feasibility: FeasibilityModel,
    space: HyperparameterSpace,
    incumbent_best: float,
    spec: AcquisitionSpec,
    seed: int,
):
    """Candidate pool with its EI, P(feasible) and combined score.

    The score is EI times P(feasible) for candidates with P(feasible) of at
    least ``P_CONFIDENT`` (others score 0); if nothing scores above 0, it is
    P(feasible) times the posterior std instead.
    """
    pool_seed, draw_seed = np.random.SeedSequence(seed).spawn(2)
    configs = candidate_pool(space, spec.candidate_pool, pool_seed)
    xq = np.array([encode_config(space, c) for c in configs])
    mean, var = model.predict(xq)
    ei = mc_expected_improvement(mean, var, incumbent_best, normal_base_samples(spec.mc_samples, draw_seed))
    p_feasible = feasibility.predict(xq)
    score = np.where(p_feasible >= P_CONFIDENT, ei * p_feasible, 0.0)
    if not score.max() > 0:
        # EI vanished everywhere (e.g. a flat fit): prefer likely-feasible,
        # uncertain candidates over an arbitrary first index
        score = p_feasible * np.sqrt(var)
    return configs, ei, p_feasible, score


def acquire(
    model: SurrogateModel,
    feasibility: FeasibilityModel,
    space: HyperparameterSpace,
    incumbent_best: float,
    spec: AcquisitionSpec,
    seed: int,
) -> Configuration:
    """Highest feasibility-weighted MC-EI candidate (first index on ties)."""
    configs, _, _, score = acquisition_scores(model, feasibility, space, incumbent_best, spec, seed)
    return configs[int(np.argmax(score))]
