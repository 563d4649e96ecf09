"""Closed-loop episode orchestration.

One episode: draw scenario realization (waypoints, current, model-plant
mismatch, sensor noise) from the seed, synthesize the LQR from the tunable
parameters, run the multi-rate loop (plant and AHRS at 100 Hz, pressure and
controller at 10 Hz, USBL at 1 Hz), detect crashes, and score the run as
(j, g, l): energy cost, max 3-D path deviation, success flag.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .controller import (
    ControllerState,
    build_q_lqr,
    control_step,
    linearize_discretize,
    lqr_gain,
    shape_commands,
)
from .dynamics import CurrentProfile, HydroParams, _plant_step_raw, perturb_params
from .errors import ConfigError, CrashSignal
from .estimator import VehicleUkf, build_Q, initial_belief
from .guidance import los_pitch, los_yaw, path_pitch, sideslip_estimate
from .params import GncParams, ParamSpace, default_bounds
from .planner import PathCursor, bearing, build_reference
from .sensors import SensorSuite

IDLE_POWER = 0.025  # constant term of the thruster power model
MAX_GROUND_SPEED = 1.6  # m/s, safe upper bound incl. mismatch and current

TRACE_FIELDS = [
    "t", "n", "e", "d", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r",
    "n_hat", "e_hat", "d_hat", "psi_hat", "u_hat", "v_hat", "uc_hat", "vc_hat",
    "u_ref", "theta_d", "psi_d", "cmd_surge", "cmd_rl", "cmd_ud",
    "h_e_est", "s_true", "h_e_true", "d_err_true", "cur_n", "cur_e",
]


@dataclass
class EpisodeResult:
    j: float          # energy cost; NaN when l = 0
    g: float          # max path deviation; NaN when l = 0
    l: int            # 1 = success
    T_end: float
    reason: str       # crash reason, "" on success
    trace: dict | None

    def record(self, params: GncParams, seed: int) -> dict:
        """JSON-lines record of this episode."""
        return {
            "params": [float(v) for v in params.values],
            "seed": int(seed),
            "j": None if not math.isfinite(self.j) else self.j,
            "g": None if not math.isfinite(self.g) else self.g,
            "l": self.l,
            "reason": self.reason,
            "T_end": self.T_end,
        }


def sample_waypoints(cfg: ScenarioConfig, rng) -> list:
    """Uniform waypoints in the scenario box with a minimum horizontal leg and
    conservative glide feasibility (checked against straight-line distance,
    which lower-bounds any Dubins leg length)."""
    slope_cap = 0.8 * math.tan(cfg.glide_max)
    wps = []
    for i in range(cfg.n_waypoints):
        for _ in range(1000):
            n = rng.uniform(*cfg.box_north)
            e = rng.uniform(*cfg.box_east)
            if i == 0:
                d = rng.uniform(*cfg.depth_range)
                wps.append((n, e, d))
                break
            pn, pe, pd = wps[-1]
            horiz = math.hypot(n - pn, e - pe)
            if horiz < cfg.min_leg_horizontal:
                continue
            lo = max(cfg.depth_range[0], pd - slope_cap * horiz)
            hi = min(cfg.depth_range[1], pd + slope_cap * horiz)
            d = rng.uniform(lo, hi)
            wps.append((n, e, d))
            break
        else:
            raise ConfigError("could not sample feasible waypoints")
    return wps


def energy_cost(trace: dict, variant: str = "original") -> float:
    """Eq-style energy score from the stored command history.

    Commands are zero-order-held over each stored interval, so the discrete
    sum equals the continuous integral exactly. Power is zero only when the
    command is exactly zero; otherwise an idle term plus the actuation term
    |u| + |u|^1.5 (original) or u^2 (quadratic).
    """
    t = np.asarray(trace["t"])
    if t.size < 1:
        raise ValueError("empty trace")
    T_end = float(trace["T_end"])
    dt = np.diff(np.append(t, T_end))
    if np.any(dt < -1e-12):
        raise ValueError("trace not contiguous")
    total = T_end
    for ch in ("cmd_surge", "cmd_rl", "cmd_ud"):
        u = np.asarray(trace[ch])
        mag = np.abs(u)
        active = mag > 0.0
        if variant == "original":
            power = IDLE_POWER + mag + mag**1.5
        elif variant == "quadratic":
            power = IDLE_POWER + u**2
        else:
            raise ValueError(f"unknown cost variant {variant!r}")
        total += float(np.sum(power * active * dt))
    return total


def max_deviation(trace: dict) -> float:
    """Max 3-D distance between truth and its projection on the reference."""
    he = np.asarray(trace["h_e_true"])
    de = np.asarray(trace["d_err_true"])
    return float(np.max(np.hypot(he, de)))


def check_bounds(a: GncParams, cfg: ScenarioConfig) -> None:
    b = default_bounds(cfg)
    v = a.vector
    if np.any(v < b[:, 0] - 1e-9) or np.any(v > b[:, 1] + 1e-9):
        raise ConfigError("GNC parameters outside bounds")


def run_episode(a: GncParams, cfg: ScenarioConfig, keep_trace: bool = True) -> EpisodeResult:
    """Deterministic closed-loop episode for parameters `a` and cfg.seed."""
    cfg.validate()
    check_bounds(a, cfg)

    root = np.random.SeedSequence(cfg.seed)
    ss_mismatch, ss_waypoints, ss_current, ss_sensors = root.spawn(4)

    nominal = HydroParams.from_config(cfg.plant)
    plant = perturb_params(nominal, ss_mismatch, cfg.mismatch)
    if cfg.waypoints:
        wps = [tuple(float(v) for v in w) for w in cfg.waypoints]
    else:
        wps = sample_waypoints(cfg, np.random.default_rng(ss_waypoints))
    path = build_reference(wps, a.r_plan, a.u_ref, cfg.glide_max)
    T_max = cfg.t_max_factor * path.length / a.u_ref
    current = CurrentProfile(cfg.current, ss_current, T_max + 1.0, cfg.dt)
    suite = SensorSuite.from_seedseq(cfg.sensors, ss_sensors, cfg.sim_rate)

    dt = cfg.dt
    dt_c = 1.0 / cfg.control_rate
    steps_per_ctl = int(round(cfg.sim_rate / cfg.control_rate))

    trace = {f: [] for f in TRACE_FIELDS}
    t = 0.0
    result_l = 0
    reason = ""
    try:
        # design side: nominal model, lag-free actuator map
        A, B = linearize_discretize(nominal, 0.5, dt_c)
        K = lqr_gain(A, B, build_q_lqr(a.q), np.eye(3))
        ukf = VehicleUkf(nominal, cfg.sensors, build_Q(*a.alphas))

        psi0 = bearing(wps[0], wps[1])
        y = np.concatenate(
            [np.zeros(6), [wps[0][0], wps[0][1], wps[0][2], 0.0, 0.0, psi0], np.zeros(5)]
        )
        belief = initial_belief(y[:6], y[6:12])
        ctl = ControllerState()
        est_cursor = PathCursor(path)
        true_cursor = PathCursor(path)
        goal = path.goal()
        plant_args = plant.kernel_args()
        cur_samples = current.samples

        cmd = np.zeros(3)
        k = 0
        while True:
            t = k * dt
            if t > T_max:
                reason = "timeout"
                break
            # belief and truth are both at time t here
            for meas in suite.deliver(t):
                belief = ukf.correct(belief, meas)
            for meas in suite.sample_step(k, t, y[6:9], y[9:12]):
                belief = ukf.correct(belief, meas)

            if k % steps_per_ctl == 0:
                # exact hopelessness bound: even a straight dash at the most
                # optimistic ground speed cannot reach the goal by T_max
                dist_goal = math.hypot(y[6] - goal[0], y[7] - goal[1])
                if (T_max - t) * MAX_GROUND_SPEED < dist_goal - cfg.goal_radius:
                    reason = "timeout"
                    break
                s_est, h_e, gamma = est_cursor.project(belief.mean[6:8])
                beta = sideslip_estimate(belief.mean)
                psi_d = los_yaw(gamma, h_e, a.delta, beta)
                gamma_v = path_pitch(path.depth_slope_at(s_est))
                theta_d = los_pitch(
                    gamma_v, belief.mean[8] - path.depth_at(s_est), a.delta, cfg.glide_max
                )
                raw, ctl = control_step(belief.mean, (a.u_ref, theta_d, psi_d), ctl, K, dt_c)
                cmd, ctl.latches = shape_commands(raw, a.w_db, ctl.latches)

                s_true, h_e_true, _ = true_cursor.project(y[6:8])
                d_err_true = y[8] - path.depth_at(s_true)
                cur = cur_samples[k]
                row = (
                    t, y[6], y[7], y[8], y[9], y[10], y[11],
                    y[0], y[1], y[2], y[3], y[4], y[5],
                    belief.mean[6], belief.mean[7], belief.mean[8], belief.mean[11],
                    belief.mean[0], belief.mean[1], belief.mean[12], belief.mean[13],
                    a.u_ref, theta_d, psi_d, cmd[0], cmd[1], cmd[2],
                    h_e, s_true, h_e_true, d_err_true, cur[0], cur[1],
                )
                for f, v in zip(TRACE_FIELDS, row):
                    trace[f].append(v)

                # episode ends at the final waypoint, but only once the path
                # has actually been traversed (the waypoint net may cross
                # near the goal long before the last leg)
                near_goal = math.hypot(y[6] - goal[0], y[7] - goal[1]) < cfg.goal_radius
                at_path_end = s_true >= path.length - 4.0 * a.r_plan - cfg.goal_radius
                if near_goal and at_path_end:
                    result_l = 1
                    break
            # advance plant and filter together over [t, t+dt) with the held command
            y, ok = _plant_step_raw(y, cmd, cur_samples[k], dt, *plant_args)
            if not ok:
                raise CrashSignal("nonfinite_state", "plant integration diverged")
            belief = ukf.predict(belief, cmd, dt)
            k += 1
    except CrashSignal as crash:
        reason = crash.reason

    trace_np = {f: np.asarray(v) for f, v in trace.items()}
    trace_np["T_end"] = t
    if result_l == 1:
        j = energy_cost(trace_np, cfg.cost_variant)
        g = max_deviation(trace_np)
    else:
        j = g = float("nan")
        if not reason:
            reason = "timeout"
    return EpisodeResult(j, g, result_l, t, reason, trace_np if keep_trace else None)


def robust_aggregate(results: list[EpisodeResult]) -> tuple[float, float, int]:
    """(mean j, max g, all-success) over the per-seed results."""
    l_hat = int(all(r.l == 1 for r in results))
    if not l_hat:
        return float("nan"), float("nan"), 0
    j_hat = float(np.mean([r.j for r in results]))
    g_hat = float(np.max([r.g for r in results]))
    return j_hat, g_hat, l_hat


def episode_evaluator(cfg: ScenarioConfig, space: ParamSpace):
    """Single-seed evaluator: unit-box vector -> (j, g, l)."""

    def evaluate(unit: np.ndarray):
        params = space.to_params(unit)
        res = run_episode(params, cfg, keep_trace=False)
        return res.j, res.g, res.l

    return evaluate


def _robust_job(payload):
    params, cfg, seed = payload
    return run_episode(params, cfg.with_overrides(seed=seed), keep_trace=False)


def robust_evaluator(cfg: ScenarioConfig, space: ParamSpace, seeds=(1, 2, 3, 4, 5)):
    """Five fixed seeds per query: (mean j, max g, min l).

    Seed episodes are independent; AUVTUNE_WORKERS > 1 runs them in a
    process pool (results are ordered by seed, so aggregation is unaffected).
    """
    workers = int(os.environ.get("AUVTUNE_WORKERS", "1"))

    def evaluate(unit: np.ndarray):
        params = space.to_params(unit)
        jobs = [(params, cfg, s) for s in seeds]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
                results = list(ex.map(_robust_job, jobs))
        else:
            results = [_robust_job(j) for j in jobs]
        return robust_aggregate(results)

    return evaluate


def trace_to_csv(trace: dict, path) -> None:
    cols = [f for f in TRACE_FIELDS]
    arr = np.column_stack([np.asarray(trace[f]) for f in cols])
    header = ",".join(cols)
    np.savetxt(path, arr, delimiter=",", header=header, comments="")


def write_records(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
