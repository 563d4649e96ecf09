"""Line-of-sight guidance with adaptive sideslip compensation.

Yaw reference: psi_d = gamma_p + atan(-h_e / Delta) - beta_est, wrapped.
The vertical channel mirrors it on the depth error without a sideslip term
and is clamped to the planner's glide limit.
"""

from __future__ import annotations

import math

from .dynamics import wrap_angle

U_FLOOR = 0.05  # m/s; below this surge speed the sideslip estimate is noise


def los_yaw(gamma_p: float, h_e: float, delta: float, beta_est: float) -> float:
    """Heading reference from path tangent, crosstrack error and sideslip."""
    if delta <= 0:
        raise ValueError("lookahead must be positive")
    return float(wrap_angle(gamma_p + math.atan(-h_e / delta) - beta_est))


def sideslip_estimate(belief_mean, u_floor: float = U_FLOOR) -> float:
    """beta = atan(v/u) from estimated velocities; zero below the surge floor."""
    u, v = float(belief_mean[0]), float(belief_mean[1])
    if abs(u) < u_floor:
        return 0.0
    return math.atan2(v, u)


def los_pitch(gamma_v: float, depth_err: float, delta: float, glide_max: float) -> float:
    """Pitch reference from the vertical channel.

    depth_err = estimated depth minus reference depth (positive when too
    deep); gamma_v is the pitch that follows the reference depth slope.
    """
    if delta <= 0:
        raise ValueError("lookahead must be positive")
    theta = gamma_v + math.atan(depth_err / delta)
    return float(min(max(theta, -glide_max), glide_max))


def path_pitch(depth_slope: float) -> float:
    """Pitch angle that tracks a reference depth slope d(depth)/d(arclength)."""
    return -math.atan(depth_slope)
