"""Discrete LQR on a linearized, integral-augmented model of the controlled
channels [u, q, r, theta, psi], followed by deadband-with-hysteresis shaping
of the three thruster commands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dynamics import CMD_MAP, HydroParams, ThrusterState, VehicleState, derivative, wrap_angle
from .errors import CrashSignal

# reduced-state indices into the 12-state vector [nu, eta]
_IDX = [0, 4, 5, 10, 11]          # u, q, r, theta, psi
_ERR_ROWS = [0, 3, 4]             # which reduced states feed the integrators

INTEGRAL_CLAMP = 10.0             # anti-windup box, integrated-unit-seconds
DARE_RESIDUAL_TOL = 1e-8


@dataclass
class ControllerState:
    integrals: np.ndarray = field(default_factory=lambda: np.zeros(3))  # u_i, theta_i, psi_i
    latches: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=bool))

    def copy(self) -> "ControllerState":
        return ControllerState(self.integrals.copy(), self.latches.copy())


def _reduced_dynamics(params: HydroParams):
    """Lag-free closed-over dynamics map f(x12, cmd3) used for linearization.

    Complex-step safe: the underlying derivative is dtype-generic.
    """

    def f(x, cmd):
        state = VehicleState(np.asarray(x[:6]), np.asarray(x[6:]))
        thr = ThrusterState(CMD_MAP @ np.asarray(cmd))
        return derivative(state, thr, np.zeros(3), params)

    return f


def linearize_continuous(params: HydroParams, working_surge: float = 0.5):
    """Jacobians of the reduced dynamics at the working point (u=w, v=0,
    everything else zero) via complex-step differentiation."""
    f = _reduced_dynamics(params)
    x0 = np.zeros(12)
    x0[0] = working_surge
    u0 = np.zeros(3)
    h = 1e-200
    A_full = np.zeros((12, 12))
    for j in range(12):
        xc = x0.astype(complex)
        xc[j] += 1j * h
        A_full[:, j] = f(xc, u0).imag / h
    B_full = np.zeros((12, 3))
    for j in range(3):
        uc = u0.astype(complex)
        uc[j] += 1j * h
        B_full[:, j] = f(x0, uc).imag / h
    return A_full[np.ix_(_IDX, _IDX)], B_full[_IDX, :]


def linearize_discretize(params: HydroParams, working_surge: float, dt: float):
    """Zero-order-hold discretization of the reduced model, augmented with
    integral error states for (u, theta, psi).

    Returns (A, B) with A 8x8 and B 8x3 over
    x_fb = [u, q, r, theta, psi, u_i, theta_i, psi_i].
    """
    A5, B5 = linearize_continuous(params, working_surge)
    blk = np.zeros((8, 8))
    blk[:5, :5] = A5
    blk[:5, 5:] = B5
    M = scipy.linalg.expm(blk * dt)
    Ad, Bd = M[:5, :5], M[:5, 5:]

    A = np.zeros((8, 8))
    A[:5, :5] = Ad
    A[5:, 5:] = np.eye(3)
    for i, row in enumerate(_ERR_ROWS):
        A[5 + i, row] = dt
    B = np.zeros((8, 3))
    B[:5, :] = Bd
    return A, B


def build_q_lqr(q: np.ndarray) -> np.ndarray:
    """Q_LQR = diag[q1, q2, q2, q3, q3, q4, q5, q5] from the five weights."""
    q1, q2, q3, q4, q5 = q
    return np.diag([q1, q2, q2, q3, q3, q4, q5, q5])


def _dare_residual(P, A, B, Q, R) -> float:
    BtPB = R + B.T @ P @ B
    term = A.T @ P @ B @ np.linalg.solve(BtPB, B.T @ P @ A)
    return float(np.linalg.norm(A.T @ P @ A - term + Q - P, "fro"))


def solve_dare(A, B, Q, R, refine: int = 50) -> np.ndarray:
    """Discrete algebraic Riccati solution, polished by fixed-point sweeps."""
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CrashSignal("riccati_failure", str(exc)) from exc
    best, best_res = P, _dare_residual(P, A, B, Q, R)
    for _ in range(refine):
        if best_res < 1e-12:
            break
        BtPB = R + B.T @ P @ B
        P = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(BtPB, B.T @ P @ A) + Q
        P = 0.5 * (P + P.T)
        res = _dare_residual(P, A, B, Q, R)
        if res >= best_res:
            break
        best, best_res = P, res
    return best


def lqr_gain(A, B, Q_lqr, R_lqr) -> np.ndarray:
    """State-feedback gain K from the DARE; raises CrashSignal when the
    parametrization is infeasible (non-convergent Riccati, residual too
    large, or unstable closed loop)."""
    P = solve_dare(A, B, Q_lqr, R_lqr)
    res = _dare_residual(P, A, B, Q_lqr, R_lqr)
    if not np.isfinite(res) or res > DARE_RESIDUAL_TOL * max(1.0, np.linalg.norm(P, "fro")):
        raise CrashSignal("riccati_failure", f"DARE residual {res:.3e}")
    K = np.linalg.solve(R_lqr + B.T @ P @ B, B.T @ P @ A)
    eig = np.linalg.eigvals(A - B @ K)
    rho = float(np.max(np.abs(eig)))
    if rho >= 1.0:
        raise CrashSignal("riccati_failure", f"closed-loop spectral radius {rho:.6f}")
    return K


def control_step(
    belief_mean: np.ndarray,
    refs: tuple,
    state: ControllerState,
    K: np.ndarray,
    dt: float,
) -> tuple[np.ndarray, ControllerState]:
    """One LQR step in error coordinates.

    refs = (u_ref, theta_d, psi_d). Integral states accumulate e*dt with an
    anti-windup clamp before the feedback is computed; the output is
    saturated to [-1, 1].
    """
    u_ref, theta_d, psi_d = refs
    e = np.array(
        [
            belief_mean[0] - u_ref,
            belief_mean[10] - theta_d,
            wrap_angle(belief_mean[11] - psi_d),
        ]
    )
    nxt = state.copy()
    nxt.integrals = np.clip(nxt.integrals + e * dt, -INTEGRAL_CLAMP, INTEGRAL_CLAMP)
    x_fb = np.array(
        [
            e[0],
            belief_mean[4],
            belief_mean[5],
            e[1],
            e[2],
            nxt.integrals[0],
            nxt.integrals[1],
            nxt.integrals[2],
        ]
    )
    u = np.clip(-K @ x_fb, -1.0, 1.0)
    return u, nxt


def deadband_hysteresis(u: float, w_db: float, latch: bool) -> tuple[float, bool]:
    """Suppress small commands: pass only above w_db, release below w_db/2."""
    if w_db <= 0.0:
        return u, True
    if latch:
        if abs(u) < 0.5 * w_db:
            return 0.0, False
        return u, True
    if abs(u) > w_db:
        return u, True
    return 0.0, False


def shape_commands(u: np.ndarray, w_db: float, latches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    out = np.empty(3)
    new = latches.copy()
    for i in range(3):
        out[i], new[i] = deadband_hysteresis(float(u[i]), w_db, bool(latches[i]))
    return out, new
