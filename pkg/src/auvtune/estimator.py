"""Classical UKF over the 14-state model: 12 vehicle states plus body-frame
current (u_c, v_c) as a random walk. Process noise Q is parameterized by four
positive scalars tuned in the log domain.

Two implementations share the same algebra: `UnscentedFilter` is the generic,
readable one (any process/measurement model, used by the oracle tests), and
`VehicleUkf` drives jitted kernels for the episode hot loop. A test pins them
to each other to 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .config import SensorConfig
from .dynamics import CMD_MAP, HydroParams, wrap_angle, wrap_vec_inplace, _deriv12
from .errors import CrashSignal
from .sensors import Measurement

UT_ALPHA = 1e-3
UT_BETA = 2.0
UT_KAPPA = 0.0

ANGLE_STATES = np.array([9, 10, 11])  # phi, theta, psi within the 14-state


@dataclass
class Belief:
    mean: np.ndarray   # (14,)
    cov: np.ndarray    # (14, 14)

    def copy(self) -> "Belief":
        return Belief(self.mean.copy(), self.cov.copy())


def build_Q(alpha1: float, alpha2: float, alpha3: float, alpha4: float) -> np.ndarray:
    """Diagonal process noise: Q_nu = [a2 I3, a2 a3 I3], Q_eta = a4 Q_nu,
    Q_uc = Q_vc = a1."""
    if min(alpha1, alpha2, alpha3, alpha4) <= 0:
        raise ValueError("alpha parameters must be positive")
    q_nu = np.array([alpha2] * 3 + [alpha2 * alpha3] * 3)
    q_eta = alpha4 * q_nu
    return np.diag(np.concatenate([q_nu, q_eta, [alpha1, alpha1]]))


def _weighted_mean(pts: np.ndarray, wm: np.ndarray) -> np.ndarray:
    """Sum in deviation form: the +/- 1/alpha^2 weight pairs cancel exactly
    around the center point, avoiding catastrophic rounding on large states."""
    return pts[0] + wm @ (pts - pts[0])


def ut_weights(n: int, alpha: float = UT_ALPHA, beta: float = UT_BETA, kappa: float = UT_KAPPA):
    lam = alpha * alpha * (n + kappa) - n
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - alpha * alpha + beta)
    return lam, wm, wc


def sigma_points(mean: np.ndarray, cov: np.ndarray, scaling=None):
    """Symmetric scaled sigma set; weighted mean/cov reproduce the inputs."""
    n = mean.shape[0]
    alpha, beta, kappa = scaling if scaling else (UT_ALPHA, UT_BETA, UT_KAPPA)
    lam, wm, wc = ut_weights(n, alpha, beta, kappa)
    try:
        L = np.linalg.cholesky((n + lam) * cov)
    except np.linalg.LinAlgError as exc:
        raise CrashSignal("covariance_not_pd", "sigma point factorization failed") from exc
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    for i in range(n):
        pts[1 + i] = mean + L[:, i]
        pts[1 + n + i] = mean - L[:, i]
    return pts, wm, wc


class UnscentedFilter:
    """Generic additive-noise UKF.

    process(points, u, dt) maps an array of sigma points one step forward.
    Measurement models are (H, b, angle_mask) triples applied as z = H x + b.
    """

    def __init__(self, process, n: int, alpha=UT_ALPHA, beta=UT_BETA, kappa=UT_KAPPA):
        self.process = process
        self.n = n
        self.scaling = (alpha, beta, kappa)
        _, self.wm, self.wc = ut_weights(n, alpha, beta, kappa)
        self.angle_states: np.ndarray = np.array([], dtype=int)

    def predict(self, belief: Belief, u, dt: float, Q: np.ndarray) -> Belief:
        pts, wm, wc = sigma_points(belief.mean, belief.cov, self.scaling)
        prop = self.process(pts, u, dt)
        mean = _weighted_mean(prop, wm)
        dev = prop - mean
        cov = (dev.T * wc) @ dev + Q * dt
        cov = 0.5 * (cov + cov.T)
        mean = self._wrap_mean(mean)
        return Belief(mean, cov)

    def correct(self, belief: Belief, z, H, b, R, angle_mask=None) -> Belief:
        pts, wm, wc = sigma_points(belief.mean, belief.cov, self.scaling)
        Z = pts @ H.T + b
        if angle_mask is not None and angle_mask.any():
            # keep the sigma images on one branch before averaging
            ref = Z[0].copy()
            for j in np.where(angle_mask)[0]:
                Z[:, j] = ref[j] + wrap_angle(Z[:, j] - ref[j])
        z_hat = _weighted_mean(Z, wm)
        dz = Z - z_hat
        dx = pts - belief.mean
        S = (dz.T * wc) @ dz + R
        C = (dx.T * wc) @ dz
        try:
            K = np.linalg.solve(S, C.T).T
        except np.linalg.LinAlgError as exc:
            raise CrashSignal("innovation_singular", "measurement update failed") from exc
        innov = np.asarray(z, dtype=float) - z_hat
        if angle_mask is not None and angle_mask.any():
            innov[angle_mask] = wrap_angle(innov[angle_mask])
        mean = self._wrap_mean(belief.mean + K @ innov)
        cov = belief.cov - K @ S @ K.T
        cov = 0.5 * (cov + cov.T)
        try:
            np.linalg.cholesky(cov + 1e-15 * np.eye(self.n))
        except np.linalg.LinAlgError as exc:
            raise CrashSignal("covariance_not_pd", "posterior covariance lost PD") from exc
        return Belief(mean, cov)

    def _wrap_mean(self, mean):
        if self.angle_states.size:
            mean[self.angle_states] = wrap_angle(mean[self.angle_states])
        return mean


# ----------------------------------------------------------------------------
# Jitted fast path for the 14-state vehicle filter
# ----------------------------------------------------------------------------


@njit(cache=True)
def _propagate_points(pts, tau, dt, Minv, mass, inertia, added, D, weight, r_b):
    """RK4 step of the lag-free vehicle model for every sigma point; the two
    trailing current states are held constant (random walk)."""
    m, n = pts.shape
    out = np.empty_like(pts)
    cur = np.empty(3)
    k1 = np.empty(12)
    k2 = np.empty(12)
    k3 = np.empty(12)
    k4 = np.empty(12)
    y = np.empty(12)
    for i in range(m):
        cur[0], cur[1], cur[2] = pts[i, 12], pts[i, 13], 0.0
        x = pts[i, :12]
        _deriv12(k1, x[:6], x[6:12], tau, cur, True, Minv, mass, inertia, added, D, weight, r_b)
        for j in range(12):
            y[j] = x[j] + 0.5 * dt * k1[j]
        _deriv12(k2, y[:6], y[6:12], tau, cur, True, Minv, mass, inertia, added, D, weight, r_b)
        for j in range(12):
            y[j] = x[j] + 0.5 * dt * k2[j]
        _deriv12(k3, y[:6], y[6:12], tau, cur, True, Minv, mass, inertia, added, D, weight, r_b)
        for j in range(12):
            y[j] = x[j] + dt * k3[j]
        _deriv12(k4, y[:6], y[6:12], tau, cur, True, Minv, mass, inertia, added, D, weight, r_b)
        for j in range(12):
            out[i, j] = x[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        out[i, 12] = pts[i, 12]
        out[i, 13] = pts[i, 13]
    return out


@njit(cache=True)
def _finite_vec(v) -> bool:
    for i in range(v.shape[0]):
        if not math.isfinite(v[i]):
            return False
    return True


@njit(cache=True)
def _sigma(mean, cov, lam):
    n = mean.shape[0]
    L = np.linalg.cholesky((n + lam) * cov)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    for i in range(n):
        for j in range(n):
            pts[1 + i, j] = mean[j] + L[j, i]
            pts[1 + n + i, j] = mean[j] - L[j, i]
    return pts


@njit(cache=True)
def _ut_moments(pts, wm, wc, Q, dt):
    m, n = pts.shape
    # deviation form around the center point for numerical stability
    mean = np.zeros(n)
    for i in range(m):
        for j in range(n):
            mean[j] += wm[i] * (pts[i, j] - pts[0, j])
    for j in range(n):
        mean[j] += pts[0, j]
    cov = np.zeros((n, n))
    for i in range(m):
        for a in range(n):
            da = pts[i, a] - mean[a]
            for bcol in range(a, n):
                cov[a, bcol] += wc[i] * da * (pts[i, bcol] - mean[bcol])
    for a in range(n):
        cov[a, a] += Q[a, a] * dt
        for bcol in range(a + 1, n):
            cov[a, bcol] += Q[a, bcol] * dt
            cov[bcol, a] = cov[a, bcol]
    return mean, cov


@njit(cache=True)
def _correct_kernel(mean, cov, z, H, b, Rm, wrap_flags, lam, wm, wc):
    n = mean.shape[0]
    mdim = z.shape[0]
    pts = _sigma(mean, cov, lam)
    npts = pts.shape[0]
    Z = np.empty((npts, mdim))
    for i in range(npts):
        for j in range(mdim):
            acc = b[j]
            for k in range(n):
                acc += H[j, k] * pts[i, k]
            Z[i, j] = acc
    for j in range(mdim):
        if wrap_flags[j]:
            ref = Z[0, j]
            for i in range(npts):
                d = Z[i, j] - ref
                d = d - 2.0 * math.pi * math.floor((d + math.pi) / (2.0 * math.pi))
                Z[i, j] = ref + d
    z_hat = np.zeros(mdim)
    for i in range(npts):
        for j in range(mdim):
            z_hat[j] += wm[i] * (Z[i, j] - Z[0, j])
    for j in range(mdim):
        z_hat[j] += Z[0, j]
    S = Rm.copy()
    C = np.zeros((n, mdim))
    for i in range(npts):
        for j in range(mdim):
            dz_j = Z[i, j] - z_hat[j]
            for k in range(j, mdim):
                S[j, k] += wc[i] * dz_j * (Z[i, k] - z_hat[k])
            for k in range(n):
                C[k, j] += wc[i] * (pts[i, k] - mean[k]) * dz_j
    for j in range(mdim):
        for k in range(j + 1, mdim):
            S[k, j] = S[j, k]
    K = np.linalg.solve(S, C.T).T
    innov = np.empty(mdim)
    for j in range(mdim):
        d = z[j] - z_hat[j]
        if wrap_flags[j]:
            d = d - 2.0 * math.pi * math.floor((d + math.pi) / (2.0 * math.pi))
        innov[j] = d
    new_mean = mean + K @ innov
    new_cov = cov - K @ S @ K.T
    for a in range(n):
        for bcol in range(a + 1, n):
            v = 0.5 * (new_cov[a, bcol] + new_cov[bcol, a])
            new_cov[a, bcol] = v
            new_cov[bcol, a] = v
    return new_mean, new_cov


class VehicleUkf:
    """Fast-path UKF bound to the vehicle model and the three sensor models."""

    def __init__(self, params: HydroParams, sensors: SensorConfig, Q: np.ndarray,
                 alpha=UT_ALPHA, beta=UT_BETA, kappa=UT_KAPPA):
        self.params = params
        self.kargs = params.kernel_args()[:7]  # Minv .. r_b (no thruster block)
        self.BgM = np.ascontiguousarray(params.Bg @ CMD_MAP)  # lag-free command map
        self.Q = Q
        n = 14
        self.n = n
        self.lam, self.wm, self.wc = ut_weights(n, alpha, beta, kappa)
        self.scaling = (alpha, beta, kappa)
        self.models = _measurement_models(sensors)

    def predict(self, belief: Belief, u_cmd: np.ndarray, dt: float) -> Belief:
        tau = self.BgM @ u_cmd
        try:
            pts = _sigma(belief.mean, belief.cov, self.lam)
        except Exception as exc:  # numba raises LinAlgError through a wrapper
            raise CrashSignal("covariance_not_pd", "sigma point factorization failed") from exc
        prop = _propagate_points(pts, tau, dt, *self.kargs)
        mean, cov = _ut_moments(prop, self.wm, self.wc, self.Q, dt)
        if not _finite_vec(mean):
            raise CrashSignal("nonfinite_state", "filter prediction diverged")
        wrap_vec_inplace(mean[9:12])
        return Belief(mean, cov)

    def correct(self, belief: Belief, meas: Measurement, R: np.ndarray | None = None) -> Belief:
        H, b, wrap_flags, R_default = self.models[meas.kind]
        Rm = R_default if R is None else np.asarray(R, dtype=float)
        try:
            mean, cov = _correct_kernel(
                belief.mean, belief.cov, np.asarray(meas.value, dtype=float),
                H, b, Rm, wrap_flags, self.lam, self.wm, self.wc,
            )
        except Exception as exc:
            raise CrashSignal("covariance_not_pd", "measurement update failed") from exc
        if not _finite_vec(mean):
            raise CrashSignal("nonfinite_state", "filter update diverged")
        wrap_vec_inplace(mean[9:12])
        return Belief(mean, cov)


def _measurement_models(cfg: SensorConfig) -> dict:
    n = 14
    H_usbl = np.zeros((3, n))
    H_usbl[0, 6] = H_usbl[1, 7] = H_usbl[2, 8] = 1.0
    H_press = np.zeros((1, n))
    H_press[0, 8] = cfg.pressure_kp
    H_ahrs = np.zeros((3, n))
    H_ahrs[0, 9] = H_ahrs[1, 10] = H_ahrs[2, 11] = 1.0
    return {
        "usbl": (H_usbl, np.zeros(3), np.zeros(3, dtype=np.bool_),
                 np.eye(3) * cfg.usbl_std**2),
        "pressure": (H_press, np.array([cfg.pressure_p0]), np.zeros(1, dtype=np.bool_),
                     np.array([[cfg.pressure_std**2]])),
        "ahrs": (H_ahrs, np.zeros(3), np.ones(3, dtype=np.bool_),
                 np.eye(3) * cfg.ahrs_std**2),
    }


def vehicle_process(params: HydroParams):
    """Process closure for the generic UnscentedFilter (reference path)."""
    kargs = params.kernel_args()[:7]

    def process(points, u_cmd, dt):
        tau = params.Bg @ (CMD_MAP @ np.asarray(u_cmd, dtype=float))
        return _propagate_points(np.ascontiguousarray(points), tau, dt, *kargs)

    return process


def initial_belief(truth_nu: np.ndarray, truth_eta: np.ndarray) -> Belief:
    """Deployment-point initialization: pose and velocities known well,
    current unknown."""
    mean = np.concatenate([truth_nu, truth_eta, [0.0, 0.0]])
    var = np.concatenate([
        np.full(6, 1e-4),
        np.full(3, 1e-2),
        np.full(3, 1e-6),
        np.full(2, 0.05**2),
    ])
    return Belief(mean, np.diag(var))
