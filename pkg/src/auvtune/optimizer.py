"""Constrained Bayesian optimization with crash-constraint imputation.

The loop keeps an archive (A_k, J_k, G_k, L_k) of evaluated points in the
unit box. Each iteration: fit GP surrogates on the successful rows, generate
artificial targets for the crashed rows (j~ = mu + 3 sigma, g~ = mu), refit
on the augmented data, and pick the next point by constrained max-value
entropy search (feasibility-weighted MES over Gumbel samples of the
constrained minimum).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, ndtr
from scipy.stats import qmc

from .surrogate import GpModel, fit

PRFEAS_FLOOR = 1e-12
SIGMA_FLOOR = 1e-12
DUPLICATE_TOL = 1e-9


@dataclass
class Dataset:
    """Evaluation archive; rows of A live in the unit box."""

    A: np.ndarray
    J: np.ndarray
    G: np.ndarray
    L: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.zeros((0, d)), np.zeros(0), np.zeros(0), np.zeros(0, dtype=int))

    def append(self, a, j, g, l):
        self.A = np.vstack([self.A, np.asarray(a, dtype=float)[None, :]])
        self.J = np.append(self.J, j if l == 1 else np.nan)
        self.G = np.append(self.G, g if l == 1 else np.nan)
        self.L = np.append(self.L, int(l))

    @property
    def n(self) -> int:
        return len(self.L)

    @property
    def success(self) -> np.ndarray:
        return self.L == 1


@dataclass
class BoConfig:
    budget: int
    g_max: float
    n_init: int = 0                 # 0 -> max(5, 2 d)
    mode: str = "constrained"       # "constrained" | "min_g"
    n_min_value_samples: int = 10
    n_mes_candidates: int = 512
    n_acq_candidates: int = 2048   # power of two keeps the Sobol set balanced
    n_refine: int = 5
    seed: int = 0

    def init_size(self, d: int) -> int:
        n = self.n_init if self.n_init > 0 else max(5, 2 * d)
        return min(n, self.budget)


def initial_design(d: int, n: int, seed) -> np.ndarray:
    """Latin hypercube in the unit box: one point per 1/n stratum per dim."""
    if n < 2:
        raise ValueError("initial design needs n >= 2")
    rng = np.random.default_rng(seed)
    out = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        out[:, j] = (perm + rng.uniform(0.0, 1.0, n)) / n
    return out


def impute_crashes(data: Dataset, gp_j: GpModel, gp_g: GpModel) -> tuple[np.ndarray, np.ndarray]:
    """Artificial targets for failed rows from the success-only surrogates:
    j~ = mu_j + 3 sigma_j, g~ = mu_g. Successful rows pass through."""
    J_t = data.J.copy()
    G_t = data.G.copy()
    crashed = ~data.success
    if not crashed.any():
        return J_t, G_t
    if gp_j is None or gp_g is None:
        raise ValueError("no successful rows to impute from")
    X = data.A[crashed]
    mu_j, var_j = gp_j.posterior(X)
    mu_g, _ = gp_g.posterior(X)
    J_t[crashed] = mu_j + 3.0 * np.sqrt(np.maximum(var_j, 0.0))
    G_t[crashed] = mu_g
    return J_t, G_t


def feasibility_probability(gp_g: GpModel | None, X: np.ndarray, g_max: float) -> np.ndarray:
    if gp_g is None:
        return np.ones(len(np.atleast_2d(X)))
    mu, var = gp_g.posterior(X)
    sigma = np.sqrt(np.maximum(var, 0.0))
    out = np.where(sigma > SIGMA_FLOOR, ndtr((g_max - mu) / np.maximum(sigma, SIGMA_FLOOR)),
                   (mu <= g_max).astype(float))
    return np.maximum(out, PRFEAS_FLOOR)


def sample_min_values(gp_j: GpModel, gp_g: GpModel | None, g_max: float,
                      n_samples: int, candidates: np.ndarray, rng,
                      best_feasible: float | None = None) -> np.ndarray:
    """Gumbel-approximation samples of the constrained minimum value.

    The min's CDF over the candidate set is quantile-matched to a Gumbel
    (minimum form); samples are clipped at the best feasible observation,
    which the true minimum cannot exceed.
    """
    mu, var = gp_j.posterior(candidates)
    sigma = np.sqrt(np.maximum(var, 0.0))
    pf = feasibility_probability(gp_g, candidates, g_max)
    mask = pf >= 0.5
    if not mask.any():
        mask = np.ones(len(mu), dtype=bool)
    mu, sigma = mu[mask], sigma[mask]

    if np.all(sigma < SIGMA_FLOOR):
        y = float(np.min(mu))
        return np.full(n_samples, y if best_feasible is None else min(y, best_feasible))

    def cdf_min(y):
        z = (y - mu) / np.maximum(sigma, SIGMA_FLOOR)
        # Pr[min <= y] = 1 - prod(1 - Phi(z)); log1p for tail stability
        log_surv = np.sum(log_ndtr(-z))
        return -np.expm1(log_surv)

    lo = float(np.min(mu - 8.0 * sigma))
    hi = float(np.min(mu))
    while cdf_min(hi) < 0.999:
        hi += (hi - lo) * 0.5 + 1e-9

    def quantile(q):
        a, b = lo, hi
        for _ in range(80):
            m = 0.5 * (a + b)
            if cdf_min(m) < q:
                a = m
            else:
                b = m
        return 0.5 * (a + b)

    y25, y50, y75 = quantile(0.25), quantile(0.5), quantile(0.75)

    def gumbel_inv(q):
        return math.log(-math.log1p(-q))

    denom = gumbel_inv(0.75) - gumbel_inv(0.25)
    b_scale = (y75 - y25) / denom if denom != 0 else 0.0
    a_loc = y50 - b_scale * gumbel_inv(0.5)
    u = rng.uniform(1e-12, 1 - 1e-12, n_samples)
    samples = a_loc + b_scale * np.array([gumbel_inv(q) for q in u])
    if best_feasible is not None:
        samples = np.minimum(samples, best_feasible)
    return samples


def cmes_acquisition(gp_j: GpModel, gp_g: GpModel | None, X: np.ndarray,
                     g_max: float, y_star: np.ndarray) -> np.ndarray:
    """Feasibility-weighted MES information value at the query rows."""
    X = np.atleast_2d(X)
    mu, var = gp_j.posterior(X)
    sigma = np.sqrt(np.maximum(var, 0.0))
    pf = feasibility_probability(gp_g, X, g_max)
    total = np.zeros(len(X))
    active = sigma > SIGMA_FLOOR
    if active.any():
        gamma = (mu[active, None] - np.asarray(y_star)[None, :]) / sigma[active, None]
        log_phi = -0.5 * gamma**2 - 0.5 * math.log(2 * math.pi)
        log_cdf = log_ndtr(gamma)
        ratio = np.exp(log_phi - log_cdf)
        term = 0.5 * gamma * ratio - log_cdf
        total[active] = np.maximum(term.mean(axis=1), 0.0)
    return pf * total


def _sobol(d: int, n: int, seed) -> np.ndarray:
    eng = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed))
    return np.clip(eng.random(n), 0.0, 1.0)


def propose_next(gp_j: GpModel, gp_g: GpModel | None, data: Dataset,
                 cfg: BoConfig, iteration: int) -> np.ndarray:
    """Argmax of the acquisition over quasi-random candidates plus local
    refinement of the leaders; never re-proposes an evaluated point."""
    d = data.A.shape[1]
    ss = np.random.SeedSequence((cfg.seed, iteration))
    kids = ss.spawn(3)
    rng = np.random.default_rng(kids[0])

    mes_cands = np.vstack([_sobol(d, cfg.n_mes_candidates, kids[1]), data.A])
    best_feasible = _best_feasible_value(data, cfg)
    y_star = sample_min_values(gp_j, gp_g if cfg.mode == "constrained" else None,
                               cfg.g_max, cfg.n_min_value_samples, mes_cands, rng,
                               best_feasible)

    cands = _sobol(d, cfg.n_acq_candidates, kids[2])
    alpha = cmes_acquisition(gp_j, gp_g if cfg.mode == "constrained" else None,
                             cands, cfg.g_max, y_star)
    order = np.argsort(-alpha)

    pool = [(float(alpha[i]), cands[i]) for i in order[: cfg.n_refine]]
    for a0, x0 in pool[: cfg.n_refine]:
        res = minimize(
            lambda x: -float(cmes_acquisition(
                gp_j, gp_g if cfg.mode == "constrained" else None,
                x[None, :], cfg.g_max, y_star)[0]),
            x0, method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * d,
            options={"maxfev": 60 * d, "xatol": 1e-4, "fatol": 1e-9},
        )
        pool.append((-float(res.fun), np.clip(res.x, 0.0, 1.0)))

    pool.sort(key=lambda t: -t[0])
    for _, x in pool:
        if not _is_duplicate(x, data.A):
            return x
    # every leader collides with an old point: fall back to fresh space-filling
    for x in _sobol(d, 64, np.random.SeedSequence((cfg.seed, iteration, 99))):
        if not _is_duplicate(x, data.A):
            return x
    return rng.uniform(0.0, 1.0, d)


def _is_duplicate(x: np.ndarray, A: np.ndarray) -> bool:
    if len(A) == 0:
        return False
    return bool(np.min(np.linalg.norm(A - x[None, :], axis=1)) < DUPLICATE_TOL)


def _best_feasible_value(data: Dataset, cfg: BoConfig):
    if cfg.mode == "min_g":
        ok = data.success
        return float(np.nanmin(data.G[ok])) if ok.any() else None
    ok = data.success & (data.G <= cfg.g_max)
    return float(np.nanmin(data.J[ok])) if ok.any() else None


def select_best(data: Dataset, cfg: BoConfig) -> int | None:
    """Index of the incumbent: feasible minimum j; else the successful point
    closest to feasibility; min-g mode minimizes observed g."""
    ok = data.success
    if not ok.any():
        return None
    idx = np.where(ok)[0]
    if cfg.mode == "min_g":
        return int(idx[np.argmin(data.G[idx])])
    feas = idx[data.G[idx] <= cfg.g_max]
    if len(feas):
        return int(feas[np.argmin(data.J[feas])])
    return int(idx[np.argmin(data.G[idx] - cfg.g_max)])


@dataclass
class BoResult:
    best_index: int | None
    data: Dataset
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def best_point(self):
        return None if self.best_index is None else self.data.A[self.best_index]


def optimize(evaluator, d: int, cfg: BoConfig, history_path=None,
             denormalize=None, resume_from=None) -> BoResult:
    """Run the BO loop for the budget; every evaluation is appended to the
    JSON-lines history as it happens (deterministic content for a fixed
    seed; wall-clock timing lives in BoResult.meta, not in the file)."""
    data = Dataset.empty(d)
    history: list = []
    fh = None
    if history_path is not None:
        history_path = Path(history_path)
        history_path.parent.mkdir(parents=True, exist_ok=True)

    start_iter = 0
    if resume_from is not None:
        for line in Path(resume_from).read_text().splitlines():
            rec = json.loads(line)
            data.append(np.asarray(rec["a_norm"]), rec["j"], rec["g"], rec["l"])
            history.append(rec)
        start_iter = data.n

    def denorm(a):
        return a if denormalize is None else denormalize(a)

    def record(k, a, j, g, l, gp_j, gp_g, n_imputed):
        rec = {
            "iter": int(k),
            "a_norm": [float(v) for v in a],
            "a_raw": [float(v) for v in np.asarray(denorm(a))],
            "j": None if (j is None or not math.isfinite(j)) else float(j),
            "g": None if (g is None or not math.isfinite(g)) else float(g),
            "l": int(l),
            "imputed": bool(l == 0),
            "n_imputed": int(n_imputed),
            "gp_j": gp_j.hyperparams if gp_j is not None else None,
            "gp_g": gp_g.hyperparams if gp_g is not None else None,
        }
        history.append(rec)
        if fh is not None:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

    mode = "a" if resume_from is not None and str(resume_from) == str(history_path) else "w"
    if history_path is not None:
        fh = open(history_path, mode)

    try:
        n_init = cfg.init_size(d)
        if start_iter < n_init:
            design = initial_design(d, n_init, np.random.SeedSequence((cfg.seed, 0)))
            for k in range(start_iter, n_init):
                a = design[k]
                j, g, l = evaluator(a)
                data.append(a, j, g, l)
                record(k, a, j, g, l, None, None, int((~data.success).sum()))
            start_iter = n_init

        extra_fill = 0
        for k in range(max(start_iter, n_init), cfg.budget):
            succ = data.success
            if succ.sum() < 2:
                # cold start: keep space-filling until the surrogates have
                # at least two surviving observations to train on
                a = _sobol(d, 1, np.random.SeedSequence((cfg.seed, 1, extra_fill)))[0]
                extra_fill += 1
                j, g, l = evaluator(a)
                data.append(a, j, g, l)
                record(k, a, j, g, l, None, None, int((~data.success).sum()))
                continue

            gp_seed_j = np.random.SeedSequence((cfg.seed, k, 1)).generate_state(1)[0]
            gp_seed_g = np.random.SeedSequence((cfg.seed, k, 2)).generate_state(1)[0]
            obj = data.J if cfg.mode == "constrained" else data.G
            gp_j = fit(data.A[succ], obj[succ], seed=gp_seed_j)
            gp_g = fit(data.A[succ], data.G[succ], seed=gp_seed_g)

            if (~succ).any():
                if cfg.mode == "constrained":
                    J_t, G_t = impute_crashes(data, gp_j, gp_g)
                    gp_j = fit(data.A, J_t, seed=gp_seed_j)
                    gp_g = fit(data.A, G_t, seed=gp_seed_g)
                else:
                    tmp = Dataset(data.A, data.G, data.G, data.L)
                    G_t, _ = impute_crashes(tmp, gp_j, gp_g)
                    gp_j = fit(data.A, G_t, seed=gp_seed_j)
                    gp_g = fit(data.A, G_t, seed=gp_seed_g)

            a = propose_next(gp_j, gp_g, data, cfg, k)
            j, g, l = evaluator(a)
            data.append(a, j, g, l)
            record(k, a, j, g, l, gp_j, gp_g, int((~data.success).sum()))
    finally:
        if fh is not None:
            fh.close()

    best = select_best(data, cfg)
    return BoResult(best, data, history, meta={"budget": cfg.budget, "mode": cfg.mode})
