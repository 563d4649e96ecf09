"""Exact Gaussian-process regression used as the optimizer's surrogate.

Squared-exponential ARD kernel, constant mean, zero observation noise plus an
escalating jitter, a smooth box hyperprior on the log length scales, and MAP
hyperparameter selection by random search followed by gradient ascent.
Targets are standardized internally per fit; the public posterior is in
original units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
N_RANDOM_STARTS = 50
N_REFINE = 3
MAX_GRAD_STEPS = 200


@dataclass(frozen=True)
class HyperPrior:
    """Smooth box on the log length scales: two softplus walls per dimension.

    Inside the box the density is ~flat; outside it falls off linearly with
    slope 1/width per log unit, keeping the MAP objective differentiable.
    """

    log_ell_lo: float = float(np.log(1e-2))
    log_ell_hi: float = float(np.log(10.0))
    width: float = 0.05

    def log_density(self, log_ell: np.ndarray):
        hi = (log_ell - self.log_ell_hi) / self.width
        lo = (self.log_ell_lo - log_ell) / self.width
        val = -(_softplus(hi).sum() + _softplus(lo).sum())
        grad = -(_sigmoid(hi) - _sigmoid(lo)) / self.width
        return val, grad

    def sample(self, rng, d: int) -> np.ndarray:
        return rng.uniform(self.log_ell_lo, self.log_ell_hi, d)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.log_ell_lo + self.log_ell_hi)


def _softplus(x):
    return np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def _sqdist_per_dim(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """(d, n1, n2) per-dimension squared distances."""
    diff = X1[:, None, :] - X2[None, :, :]
    return np.moveaxis(diff * diff, -1, 0)


def kernel_matrix(sq: np.ndarray, log_ell: np.ndarray, log_sf: float) -> np.ndarray:
    """SE-ARD kernel from precomputed per-dimension squared distances."""
    with np.errstate(over="ignore"):  # extreme hyperparameters yield inf,
        inv2 = np.exp(-2.0 * log_ell)  # which the LML guard maps to -inf
        expo = np.tensordot(inv2, sq, axes=(0, 0))
        return np.exp(2.0 * log_sf) * np.exp(-0.5 * expo)


class GpModel:
    """Fitted surrogate: training set, MAP hyperparameters, factorized kernel."""

    def __init__(self, X, y, theta, jitter_rel, y_shift, y_scale):
        self.X = X
        self.y = y                      # original units
        self.theta = theta              # [log_ell (d), log_sf, const_mean] (standardized space)
        self.jitter_rel = jitter_rel
        self.y_shift = y_shift
        self.y_scale = y_scale
        d = X.shape[1]
        self.log_ell = theta[:d]
        self.log_sf = theta[d]
        self.const_mean = theta[d + 1]
        sq = _sqdist_per_dim(X, X)
        K = kernel_matrix(sq, self.log_ell, self.log_sf)
        sf2 = np.exp(2.0 * self.log_sf)
        K[np.diag_indices_from(K)] += jitter_rel * sf2
        self.L = cholesky(K, lower=True)
        resid = (y - y_shift) / y_scale - self.const_mean
        self.alpha = cho_solve((self.L, True), resid)

    @property
    def hyperparams(self) -> dict:
        return {
            "log_ell": [float(v) for v in self.log_ell],
            "log_sf": float(self.log_sf),
            "mean": float(self.const_mean),
            "jitter_rel": float(self.jitter_rel),
        }

    def posterior(self, Xs: np.ndarray):
        """Posterior mean and variance (original units) at query rows."""
        Xs = np.atleast_2d(Xs)
        sq = _sqdist_per_dim(Xs, self.X)
        Ks = kernel_matrix(sq, self.log_ell, self.log_sf)
        mu_std = self.const_mean + Ks @ self.alpha
        v = solve_triangular(self.L, Ks.T, lower=True)
        var_std = np.exp(2.0 * self.log_sf) - np.sum(v * v, axis=0)
        var_std = np.maximum(var_std, 0.0)
        mu = self.y_shift + self.y_scale * mu_std
        var = self.y_scale**2 * var_std
        return mu, var


def log_marginal_likelihood(X, y_std, theta, prior: HyperPrior, jitter_rel=JITTER_START,
                            sq=None, want_grad=True):
    """MAP objective (LML + log hyperprior) and its gradient over theta.

    y_std must already be standardized. Returns (-inf, None-ish) when the
    kernel cannot be factorized at this jitter level.
    """
    n, d = X.shape
    log_ell, log_sf, c = theta[:d], theta[d], theta[d + 1]
    if sq is None:
        sq = _sqdist_per_dim(X, X)
    sf2 = np.exp(2.0 * log_sf)
    Kf = kernel_matrix(sq, log_ell, log_sf)
    K = Kf + jitter_rel * sf2 * np.eye(n)
    if not np.all(np.isfinite(K)):
        return -np.inf, np.full(d + 2, np.nan)
    try:
        L = cholesky(K, lower=True)
    except (np.linalg.LinAlgError, ValueError):
        return -np.inf, np.full(d + 2, np.nan)
    resid = y_std - c
    alpha = cho_solve((L, True), resid)
    lml = -0.5 * resid @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    p_val, p_grad = prior.log_density(log_ell)
    value = lml + p_val
    if not want_grad:
        return value, None

    Kinv = cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - Kinv
    grad = np.empty(d + 2)
    inv2 = np.exp(-2.0 * log_ell)
    for j in range(d):
        dK = Kf * (sq[j] * inv2[j])
        grad[j] = 0.5 * np.sum(A * dK) + p_grad[j]
    grad[d] = 0.5 * np.sum(A * K) * 2.0   # dK/dlog_sf = 2K (jitter scales with sf^2)
    grad[d + 1] = alpha.sum()
    return value, grad


def _factorizable(sq, theta, d, n, jitter_rel):
    K = kernel_matrix(sq, theta[:d], theta[d])
    K[np.diag_indices_from(K)] += jitter_rel * np.exp(2.0 * theta[d])
    try:
        cholesky(K, lower=True)
        return True
    except np.linalg.LinAlgError:
        return False


def fit(X, y, prior: HyperPrior | None = None, seed: int = 0,
        n_random: int = N_RANDOM_STARTS, warm_start: np.ndarray | None = None) -> GpModel:
    """MAP hyperparameters via random search plus gradient ascent.

    Deterministic for a given seed. All-start failure falls back to the
    prior-box midpoint (logged).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two observations")
    if len(np.unique(X.round(12), axis=0)) != n:
        raise ValueError("duplicate input rows must be collapsed upstream")
    prior = prior or HyperPrior()

    y_shift = float(y.mean())
    y_scale = float(y.std())
    if y_scale < 1e-12:
        y_scale = 1.0
    y_std = (y - y_shift) / y_scale
    sq = _sqdist_per_dim(X, X)

    rng = np.random.default_rng(seed)
    starts = []
    for _ in range(n_random):
        theta = np.empty(d + 2)
        theta[:d] = prior.sample(rng, d)
        theta[d] = rng.uniform(np.log(0.1), np.log(2.0))
        theta[d + 1] = rng.uniform(-1.0, 1.0)
        starts.append(theta)
    if warm_start is not None and warm_start.shape == (d + 2,):
        starts.append(warm_start.copy())

    scored = []
    for theta in starts:
        val, _ = log_marginal_likelihood(X, y_std, theta, prior, sq=sq, want_grad=False)
        if np.isfinite(val):
            scored.append((val, theta))
    if not scored:
        log.warning("GP fit: every start failed; using prior-box midpoint")
        theta = np.concatenate([np.full(d, prior.midpoint), [0.0, 0.0]])
        jit = _escalate_jitter(sq, theta, d, n)
        return GpModel(X, y, theta, jit, y_shift, y_scale)

    scored.sort(key=lambda t: -t[0])
    best_val, best_theta = scored[0]
    for val, theta in scored[:N_REFINE]:
        v, t = _gradient_ascent(X, y_std, theta, prior, sq)
        if v > best_val:
            best_val, best_theta = v, t

    jit = _escalate_jitter(sq, best_theta, d, n)
    return GpModel(X, y, best_theta, jit, y_shift, y_scale)


def _escalate_jitter(sq, theta, d, n) -> float:
    jit = JITTER_START
    while jit <= JITTER_MAX:
        if _factorizable(sq, theta, d, n, jit):
            return jit
        jit *= 10.0
    raise np.linalg.LinAlgError("kernel not factorizable at maximum jitter")


THETA_CLIP = 30.0  # |log-domain hyperparameter| cap keeps exp() finite


def _gradient_ascent(X, y_std, theta0, prior, sq, max_steps=MAX_GRAD_STEPS, tol=1e-9):
    theta = theta0.copy()
    val, grad = log_marginal_likelihood(X, y_std, theta, prior, sq=sq)
    step = 0.1
    for _ in range(max_steps):
        if not np.all(np.isfinite(grad)):
            break
        improved = False
        for _ in range(25):
            cand = np.clip(theta + step * grad, -THETA_CLIP, THETA_CLIP)
            v, g = log_marginal_likelihood(X, y_std, cand, prior, sq=sq)
            if v > val:
                if v - val < tol * (1.0 + abs(val)):
                    return v, cand
                theta, val, grad = cand, v, g
                step = min(step * 1.3, 10.0)
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return val, theta
