"""6-DOF vehicle plant: rigid-body + added-mass dynamics with linear drag,
buoyancy restoring moments, current-relative velocities, five first-order-lag
thrusters, and seedable model-plant mismatch.

Frames: body velocities nu = [u, v, w, p, q, r]; earth-fixed pose
eta = [n, e, d, phi, theta, psi] with z down (depth positive). Euler angles
follow the aerospace z-y-x convention and are kept wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .config import CurrentConfig, MismatchConfig, PlantConfig
from .errors import ConfigError, CrashSignal

# Command-to-thruster routing: [surge, rl+, rl-, ud+, ud-] driven by
# [u_surge, u_rl, u_ud]; each pair shares its channel command.
CMD_MAP = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0],
    ]
)


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)


@njit(cache=True)
def wrap_vec_inplace(a):
    """In-place (-pi, pi] wrap of a 1-d array (hot-loop variant)."""
    for i in range(a.shape[0]):
        a[i] = -((-a[i] + math.pi) % (2.0 * math.pi) - math.pi)
    return a


def rotation_body_to_earth(phi, theta, psi):
    """z-y-x Euler rotation matrix R such that v_earth = R @ v_body."""
    cph, sph = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    cps, sps = np.cos(psi), np.sin(psi)
    return np.array(
        [
            [cps * cth, cps * sth * sph - sps * cph, cps * sth * cph + sps * sph],
            [sps * cth, sps * sth * sph + cps * cph, sps * sth * cph - cps * sph],
            [-sth, cth * sph, cth * cph],
        ]
    )


def euler_rate_matrix(phi, theta):
    """T mapping body rates [p, q, r] to Euler angle rates."""
    cph, sph = np.cos(phi), np.sin(phi)
    cth, tth = np.cos(theta), np.tan(theta)
    return np.array(
        [
            [1.0, sph * tth, cph * tth],
            [0.0, cph, -sph],
            [0.0, sph / cth, cph / cth],
        ]
    )


@dataclass
class VehicleState:
    """Ground-truth vehicle motion (body) and pose (earth)."""

    nu: np.ndarray = field(default_factory=lambda: np.zeros(6))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def copy(self) -> "VehicleState":
        return VehicleState(self.nu.copy(), self.eta.copy())

    @property
    def position(self) -> np.ndarray:
        return self.eta[:3]

    @property
    def attitude(self) -> np.ndarray:
        return self.eta[3:]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.nu, self.eta])


@dataclass
class ThrusterState:
    """Realized normalized thrusts of the five thrusters (first-order lag)."""

    thr: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def copy(self) -> "ThrusterState":
        return ThrusterState(self.thr.copy())


@dataclass
class HydroParams:
    """Numeric plant parameters plus derived matrices.

    drag4 holds the independent entries [D1, D2, D4, D5]; the full diagonal
    is [D1, D2, D2, D4, D5, D5] (identical sway/heave and pitch/yaw drag).
    """

    mass: float
    inertia: np.ndarray          # (3,) Ixx, Iyy, Izz
    added: np.ndarray            # (6,) diag(M_A)
    drag4: np.ndarray            # (4,) D1, D2, D4, D5
    weight: float                # = buoyancy (neutral trim), N
    r_b: np.ndarray              # (3,) CB offset in body frame, z-down
    tau_thruster: float
    lever_x: float
    pair_offset: float
    gains: np.ndarray            # (5,) per-thruster static gains, N

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.added = np.asarray(self.added, dtype=float)
        self.drag4 = np.asarray(self.drag4, dtype=float)
        self.r_b = np.asarray(self.r_b, dtype=float)
        self.gains = np.asarray(self.gains, dtype=float)
        if np.any(self.drag4 <= 0):
            raise ConfigError("drag entries must be positive")
        if self.mass <= 0 or np.any(self.inertia <= 0) or np.any(self.added <= 0):
            raise ConfigError("mass matrices must be positive definite")
        self._derive()

    def _derive(self):
        self.M_RB = np.diag(np.concatenate([[self.mass] * 3, self.inertia]))
        self.M_A = np.diag(self.added)
        M = self.M_RB + self.M_A
        if np.linalg.cond(M) > 1e12:
            raise ConfigError("singular mass matrix")
        self.Minv = np.linalg.inv(M)
        d1, d2, d4, d5 = self.drag4
        self.D_diag = np.array([d1, d2, d2, d4, d5, d5])
        self.B_thr = self._thruster_map()
        self.Bg = self.B_thr * self.gains  # columns premultiplied by gains

    def _thruster_map(self) -> np.ndarray:
        """Geometry matrix mapping unit thruster forces to generalized forces."""
        lx, off = self.lever_x, self.pair_offset
        cols = []
        layout = [
            (np.array([-lx, 0.0, 0.0]), np.array([1.0, 0.0, 0.0])),   # surge
            (np.array([-lx, 0.0, off]), np.array([0.0, 1.0, 0.0])),   # rl upper
            (np.array([-lx, 0.0, -off]), np.array([0.0, 1.0, 0.0])),  # rl lower
            (np.array([-lx, off, 0.0]), np.array([0.0, 0.0, 1.0])),   # ud stbd
            (np.array([-lx, -off, 0.0]), np.array([0.0, 0.0, 1.0])),  # ud port
        ]
        for pos, axis in layout:
            cols.append(np.concatenate([axis, np.cross(pos, axis)]))
        return np.column_stack(cols)

    @classmethod
    def from_config(cls, plant: PlantConfig) -> "HydroParams":
        return cls(
            mass=plant.mass,
            inertia=np.array(plant.inertia),
            added=np.array(plant.added_mass),
            drag4=np.array(plant.drag),
            weight=plant.mass * 9.81,
            r_b=np.array([0.0, 0.0, -plant.buoyancy_arm]),
            tau_thruster=plant.thruster_lag,
            lever_x=plant.lever_x,
            pair_offset=plant.pair_offset,
            gains=np.array(
                [plant.gain_surge, plant.gain_rl, plant.gain_rl, plant.gain_ud, plant.gain_ud]
            ),
        )

    def kernel_args(self) -> tuple:
        """Packed arrays consumed by the jitted integrators."""
        return (
            np.ascontiguousarray(self.Minv),
            self.mass,
            np.ascontiguousarray(self.inertia),
            np.ascontiguousarray(self.added),
            np.ascontiguousarray(self.D_diag),
            self.weight,
            np.ascontiguousarray(self.r_b),
            np.ascontiguousarray(self.Bg),
            self.tau_thruster,
        )


def thruster_forces(thr: ThrusterState, params: HydroParams) -> np.ndarray:
    """Generalized forces tau from realized normalized thrusts."""
    return params.Bg @ thr.thr


def derivative(
    state: VehicleState,
    thr: ThrusterState,
    current: np.ndarray,
    params: HydroParams,
) -> np.ndarray:
    """Continuous-time state derivative [d nu/dt, d eta/dt].

    `current` is the earth-frame current velocity; it is rotated into the
    body frame and subtracted from the linear velocities to form the relative
    velocity that drives added-mass, drag, and their Coriolis terms. Angular
    rates are unaffected by current.

    Implemented with dtype-generic numpy so it also supports complex-step
    differentiation (used by the controller linearization).
    """
    nu = np.asarray(state.nu)
    eta = np.asarray(state.eta)
    if not (np.all(np.isfinite(nu.real)) and np.all(np.isfinite(eta.real))):
        raise ValueError("non-finite state input")
    tau = params.Bg @ np.asarray(thr.thr)
    return _derivative_core(nu, eta, tau, np.asarray(current), params)


def _derivative_core(nu, eta, tau, current_earth, params: HydroParams):
    R = rotation_body_to_earth(eta[3], eta[4], eta[5])
    cur_b = R.T @ current_earth
    nu_r = nu.copy()
    nu_r = nu_r.astype(np.result_type(nu, cur_b))
    nu_r[:3] = nu[:3] - cur_b

    m = params.mass
    rhs = tau.astype(np.result_type(tau, nu_r, eta))
    rhs = rhs - _coriolis_product(m * nu[:3], params.inertia * nu[3:], nu)
    rhs = rhs - _coriolis_product(
        params.added[:3] * nu_r[:3], params.added[3:] * nu_r[3:], nu_r
    )
    rhs = rhs - params.D_diag * nu_r
    rhs = rhs - _restoring(R, params)

    nudot = params.Minv @ rhs
    etadot = np.concatenate(
        [R @ nu[:3], euler_rate_matrix(eta[3], eta[4]) @ nu[3:]]
    )
    return np.concatenate([nudot, etadot])


def _coriolis_product(a, b, nu):
    """C(nu) @ nu for a block mass matrix with a = M11 nu1, b = M22 nu2."""
    return np.concatenate([-np.cross(a, nu[3:]), -np.cross(a, nu[:3]) - np.cross(b, nu[3:])])


def _restoring(R, params: HydroParams):
    """g(eta) for a neutrally buoyant vehicle with CB offset r_b from the CG."""
    f_b_body = R.T @ np.array([0.0, 0.0, -params.weight])
    moment = np.cross(params.r_b, f_b_body)
    out = np.zeros(6, dtype=moment.dtype)
    out[3:] = -moment
    return out


# ----------------------------------------------------------------------------
# Jitted integration kernels (hot path of the episode loop)
# ----------------------------------------------------------------------------


@njit(cache=True)
def _rot_bte(phi, theta, psi):
    cph, sph = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cps, sps = math.cos(psi), math.sin(psi)
    R = np.empty((3, 3))
    R[0, 0] = cps * cth
    R[0, 1] = cps * sth * sph - sps * cph
    R[0, 2] = cps * sth * cph + sps * sph
    R[1, 0] = sps * cth
    R[1, 1] = sps * sth * sph + cps * cph
    R[1, 2] = sps * sth * cph - cps * sph
    R[2, 0] = -sth
    R[2, 1] = cth * sph
    R[2, 2] = cth * cph
    return R


@njit(cache=True)
def _deriv12(
    out, nu, eta, tau, cur, current_is_body,
    Minv, mass, inertia, added, D, weight, r_b,
):
    """12-state derivative shared by the plant and the estimator model.

    Fully scalarized: this sits at the bottom of every integration loop and
    must not allocate.
    """
    cph, sph = math.cos(eta[3]), math.sin(eta[3])
    cth, sth = math.cos(eta[4]), math.sin(eta[4])
    cps, sps = math.cos(eta[5]), math.sin(eta[5])
    r00 = cps * cth
    r01 = cps * sth * sph - sps * cph
    r02 = cps * sth * cph + sps * sph
    r10 = sps * cth
    r11 = sps * sth * sph + cps * cph
    r12 = sps * sth * cph - cps * sph
    r20 = -sth
    r21 = cth * sph
    r22 = cth * cph

    if current_is_body:
        cb0, cb1, cb2 = cur[0], cur[1], cur[2]
    else:
        cb0 = r00 * cur[0] + r10 * cur[1] + r20 * cur[2]
        cb1 = r01 * cur[0] + r11 * cur[1] + r21 * cur[2]
        cb2 = r02 * cur[0] + r12 * cur[1] + r22 * cur[2]

    u, v, w = nu[0], nu[1], nu[2]
    p, q, r = nu[3], nu[4], nu[5]
    ur0, ur1, ur2 = u - cb0, v - cb1, w - cb2

    # rigid-body Coriolis (a = m nu1 against nu2; m nu1 x nu1 vanishes)
    rhs0 = tau[0] + mass * (v * r - w * q)
    rhs1 = tau[1] + mass * (w * p - u * r)
    rhs2 = tau[2] + mass * (u * q - v * p)
    rhs3 = tau[3] + (inertia[1] * q * r - inertia[2] * r * q)
    rhs4 = tau[4] + (inertia[2] * r * p - inertia[0] * p * r)
    rhs5 = tau[5] + (inertia[0] * p * q - inertia[1] * q * p)
    # added-mass Coriolis at relative velocity
    a0, a1, a2 = added[0] * ur0, added[1] * ur1, added[2] * ur2
    rhs0 += a1 * r - a2 * q
    rhs1 += a2 * p - a0 * r
    rhs2 += a0 * q - a1 * p
    rhs3 += a1 * ur2 - a2 * ur1
    rhs4 += a2 * ur0 - a0 * ur2
    rhs5 += a0 * ur1 - a1 * ur0
    b0, b1, b2 = added[3] * p, added[4] * q, added[5] * r
    rhs3 += b1 * r - b2 * q
    rhs4 += b2 * p - b0 * r
    rhs5 += b0 * q - b1 * p
    # linear drag at relative velocity
    rhs0 -= D[0] * ur0
    rhs1 -= D[1] * ur1
    rhs2 -= D[2] * ur2
    rhs3 -= D[3] * p
    rhs4 -= D[4] * q
    rhs5 -= D[5] * r
    # restoring moment from the buoyancy offset (neutral trim: force cancels)
    fb0 = r20 * (-weight)
    fb1 = r21 * (-weight)
    fb2 = r22 * (-weight)
    rhs3 += r_b[1] * fb2 - r_b[2] * fb1
    rhs4 += r_b[2] * fb0 - r_b[0] * fb2
    rhs5 += r_b[0] * fb1 - r_b[1] * fb0

    out[0] = Minv[0, 0] * rhs0 + Minv[0, 1] * rhs1 + Minv[0, 2] * rhs2 \
        + Minv[0, 3] * rhs3 + Minv[0, 4] * rhs4 + Minv[0, 5] * rhs5
    out[1] = Minv[1, 0] * rhs0 + Minv[1, 1] * rhs1 + Minv[1, 2] * rhs2 \
        + Minv[1, 3] * rhs3 + Minv[1, 4] * rhs4 + Minv[1, 5] * rhs5
    out[2] = Minv[2, 0] * rhs0 + Minv[2, 1] * rhs1 + Minv[2, 2] * rhs2 \
        + Minv[2, 3] * rhs3 + Minv[2, 4] * rhs4 + Minv[2, 5] * rhs5
    out[3] = Minv[3, 0] * rhs0 + Minv[3, 1] * rhs1 + Minv[3, 2] * rhs2 \
        + Minv[3, 3] * rhs3 + Minv[3, 4] * rhs4 + Minv[3, 5] * rhs5
    out[4] = Minv[4, 0] * rhs0 + Minv[4, 1] * rhs1 + Minv[4, 2] * rhs2 \
        + Minv[4, 3] * rhs3 + Minv[4, 4] * rhs4 + Minv[4, 5] * rhs5
    out[5] = Minv[5, 0] * rhs0 + Minv[5, 1] * rhs1 + Minv[5, 2] * rhs2 \
        + Minv[5, 3] * rhs3 + Minv[5, 4] * rhs4 + Minv[5, 5] * rhs5

    # kinematics
    out[6] = r00 * u + r01 * v + r02 * w
    out[7] = r10 * u + r11 * v + r12 * w
    out[8] = r20 * u + r21 * v + r22 * w
    tth = sth / cth
    out[9] = p + sph * tth * q + cph * tth * r
    out[10] = cph * q - sph * r
    out[11] = (sph * q + cph * r) / cth


@njit(cache=True)
def _plant_deriv17(out, tau, y, cmd3, cur_e, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t):
    """Plant + thruster-lag derivative over y = [nu(6), eta(6), thr(5)]."""
    for i in range(6):
        acc = 0.0
        for j in range(5):
            acc += Bg[i, j] * y[12 + j]
        tau[i] = acc
    _deriv12(out[:12], y[:6], y[6:12], tau, cur_e, False, Minv, mass, inertia, added, D, weight, r_b)
    # first-order lag toward the routed commands
    out[12] = (cmd3[0] - y[12]) / tau_t
    out[13] = (cmd3[1] - y[13]) / tau_t
    out[14] = (cmd3[1] - y[14]) / tau_t
    out[15] = (cmd3[2] - y[15]) / tau_t
    out[16] = (cmd3[2] - y[16]) / tau_t


@njit(cache=True)
def _rk4_plant(y, cmd3, cur_e, dt, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t):
    k1 = np.empty(17)
    k2 = np.empty(17)
    k3 = np.empty(17)
    k4 = np.empty(17)
    tau = np.empty(6)
    tmp = np.empty(17)
    _plant_deriv17(k1, tau, y, cmd3, cur_e, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t)
    for i in range(17):
        tmp[i] = y[i] + 0.5 * dt * k1[i]
    _plant_deriv17(k2, tau, tmp, cmd3, cur_e, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t)
    for i in range(17):
        tmp[i] = y[i] + 0.5 * dt * k2[i]
    _plant_deriv17(k3, tau, tmp, cmd3, cur_e, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t)
    for i in range(17):
        tmp[i] = y[i] + dt * k3[i]
    _plant_deriv17(k4, tau, tmp, cmd3, cur_e, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t)
    out = np.empty(17)
    for i in range(17):
        out[i] = y[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@njit(cache=True)
def _plant_step_raw(y, cmd3, cur_e, dt, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t):
    """Raw-buffer plant step for the episode loop: integrates, wraps the
    Euler angles, and reports finiteness in one pass."""
    out = _rk4_plant(y, cmd3, cur_e, dt, Minv, mass, inertia, added, D, weight, r_b, Bg, tau_t)
    ok = True
    for i in range(17):
        if not math.isfinite(out[i]):
            ok = False
    if ok:
        for i in range(9, 12):
            a = out[i]
            out[i] = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return out, ok


def step(
    state: VehicleState,
    thr: ThrusterState,
    commands: np.ndarray,
    current: np.ndarray,
    params: HydroParams,
    dt: float,
) -> tuple[VehicleState, ThrusterState]:
    """One RK4 step of the combined vehicle + thruster-lag state.

    Deterministic in its inputs. Raises CrashSignal on numerical divergence.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.concatenate([state.nu, state.eta, thr.thr])
    cmd = np.clip(np.asarray(commands, dtype=float), -1.0, 1.0)
    y1, ok = _plant_step_raw(y, cmd, np.asarray(current, dtype=float), dt, *params.kernel_args())
    if not ok:
        raise CrashSignal("nonfinite_state", "plant integration diverged")
    return VehicleState(y1[:6], y1[6:12]), ThrusterState(y1[12:])


def perturb_params(
    nominal: HydroParams, seed: int, mismatch: MismatchConfig
) -> HydroParams:
    """Draw a perturbed copy of the plant parameters.

    Independent Gaussian relative factors per entry; the D2/D5 symmetry of
    the drag diagonal is preserved by perturbing the four independent drag
    entries. Entries whose factor would destroy positive definiteness are
    redrawn a bounded number of times.
    """
    rng = np.random.default_rng(seed)

    def factors(n, rel_std):
        f = np.ones(n)
        for i in range(n):
            for attempt in range(100):
                cand = 1.0 + rel_std * rng.standard_normal()
                if cand > 0.05:
                    f[i] = cand
                    break
            else:
                raise ConfigError("perturbation cannot satisfy positivity")
        return f

    drag = nominal.drag4 * factors(4, mismatch.drag_rel_std)
    mass_f = factors(1, mismatch.mass_rel_std)[0]
    inertia = nominal.inertia * factors(3, mismatch.mass_rel_std)
    added = nominal.added * factors(6, mismatch.added_mass_rel_std)
    gains = nominal.gains * factors(5, mismatch.thruster_gain_rel_std)

    return HydroParams(
        mass=nominal.mass * mass_f,
        inertia=inertia,
        added=added,
        drag4=drag,
        weight=nominal.weight * mass_f,  # trim stays neutral under mass error
        r_b=nominal.r_b.copy(),
        tau_thruster=nominal.tau_thruster,
        lever_x=nominal.lever_x,
        pair_offset=nominal.pair_offset,
        gains=gains,
    )


class CurrentProfile:
    """Seeded disturbance current: three low-frequency sinusoids plus
    first-order filtered noise per component, radially capped. The heave
    component is an order of magnitude smaller than the horizontal ones."""

    def __init__(self, cfg: CurrentConfig, seed: int, duration: float, dt: float):
        self.cfg = cfg
        self.dt = dt
        rng = np.random.default_rng(seed)
        n = int(math.ceil(duration / dt)) + 2
        t = np.arange(n) * dt
        comps = []
        for scale in (1.0, 1.0, cfg.heave_scale):
            wave = np.zeros(n)
            for _ in range(cfg.n_sinusoids):
                period = rng.uniform(*cfg.period_range)
                amp = rng.uniform(0.0, cfg.cap / (2.0 * cfg.n_sinusoids))
                phase = rng.uniform(0.0, 2.0 * math.pi)
                wave += amp * np.sin(2.0 * math.pi / period * t + phase)
            white = rng.normal(0.0, cfg.noise_std, n)
            a = math.exp(-dt / cfg.noise_tau)
            filt = np.empty(n)
            filt[0] = 0.0
            for k in range(1, n):
                filt[k] = a * filt[k - 1] + (1.0 - a) * white[k]
            comps.append(scale * (wave + filt))
        samples = np.column_stack(comps)
        # radial cap on the horizontal magnitude keeps the field continuous
        mag = np.hypot(samples[:, 0], samples[:, 1])
        over = mag > cfg.cap
        if np.any(over):
            shrink = cfg.cap / mag[over]
            samples[over, 0] *= shrink
            samples[over, 1] *= shrink
        np.clip(samples[:, 2], -cfg.cap * cfg.heave_scale, cfg.cap * cfg.heave_scale, out=samples[:, 2])
        self.samples = samples
        self.n = n

    def at(self, t: float) -> np.ndarray:
        """Earth-frame current at time t (linear interpolation)."""
        x = t / self.dt
        i = min(int(x), self.n - 2)
        frac = min(max(x - i, 0.0), 1.0)
        return (1.0 - frac) * self.samples[i] + frac * self.samples[i + 1]
