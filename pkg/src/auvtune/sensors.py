"""Sensor simulation: USBL position fixes with acoustic transport delay,
pressure-based depth, and AHRS attitude, each with configured Gaussian noise.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .config import SensorConfig
from .dynamics import wrap_angle, wrap_vec_inplace


@dataclass
class Measurement:
    kind: str                 # "usbl" | "pressure" | "ahrs"
    value: np.ndarray
    t_valid: float            # simulation time the value refers to
    t_avail: float            # time it reaches the estimator

    def __post_init__(self):
        assert self.t_avail >= self.t_valid


def sample_pressure(true_depth: float, cfg: SensorConfig, rng, t: float = 0.0) -> Measurement:
    """Absolute pressure reading: k_p * d + p0 + noise."""
    noise = rng.normal(0.0, cfg.pressure_std)
    value = cfg.pressure_kp * true_depth + cfg.pressure_p0 + noise
    return Measurement("pressure", np.array([value]), t, t)


def sample_usbl(true_position: np.ndarray, cfg: SensorConfig, rng, t: float = 0.0) -> Measurement:
    """Position fix delayed by twice the one-way acoustic travel time."""
    rng_range = float(np.linalg.norm(np.asarray(true_position) - np.asarray(cfg.usbl_base)))
    noise = rng.normal(0.0, cfg.usbl_std, 3)
    delay = 2.0 * rng_range / cfg.sound_speed
    return Measurement("usbl", np.asarray(true_position, dtype=float) + noise, t, t + delay)


def sample_ahrs(true_attitude: np.ndarray, cfg: SensorConfig, rng, t: float = 0.0) -> Measurement:
    """Attitude solution: truth plus noise, wrapped to (-pi, pi]."""
    noise = rng.normal(0.0, cfg.ahrs_std, 3)
    value = np.asarray(true_attitude) + noise
    return Measurement("ahrs", wrap_vec_inplace(value), t, t)


class MeasurementQueue:
    """Orders measurements by availability time; delivery never precedes it."""

    def __init__(self):
        self._heap = []
        self._counter = 0  # stable tiebreak for equal availability times

    def push(self, meas: Measurement):
        heapq.heappush(self._heap, (meas.t_avail, self._counter, meas))
        self._counter += 1

    def pop_available(self, t: float) -> list[Measurement]:
        out = []
        while self._heap and self._heap[0][0] <= t + 1e-12:
            out.append(heapq.heappop(self._heap)[2])
        return out

    def __len__(self):
        return len(self._heap)


@dataclass
class SensorSuite:
    """Cadence bookkeeping for one episode: which sensor fires on which
    simulation step, with an isolated RNG stream per sensor."""

    cfg: SensorConfig
    rng_usbl: np.random.Generator
    rng_pressure: np.random.Generator
    rng_ahrs: np.random.Generator
    sim_rate: float
    queue: MeasurementQueue = field(default_factory=MeasurementQueue)

    @classmethod
    def from_seedseq(cls, cfg: SensorConfig, seedseq: np.random.SeedSequence, sim_rate: float):
        kids = seedseq.spawn(3)
        return cls(cfg, np.random.default_rng(kids[0]), np.random.default_rng(kids[1]),
                   np.random.default_rng(kids[2]), sim_rate)

    def __post_init__(self):
        self._every_ahrs = int(round(self.sim_rate / self.cfg.ahrs_rate))
        self._every_press = int(round(self.sim_rate / self.cfg.pressure_rate))
        self._every_usbl = int(round(self.sim_rate / self.cfg.usbl_rate))

    def sample_step(self, k: int, t: float, position, attitude) -> list[Measurement]:
        """Generate whatever fires on step k; immediately-available readings
        are returned, delayed ones (USBL transport) go through the queue."""
        now = []
        if k % self._every_ahrs == 0:
            now.append(sample_ahrs(attitude, self.cfg, self.rng_ahrs, t))
        if k % self._every_press == 0:
            now.append(sample_pressure(position[2], self.cfg, self.rng_pressure, t))
        if k % self._every_usbl == 0:
            m = sample_usbl(position, self.cfg, self.rng_usbl, t)
            if m.t_avail <= t:
                now.append(m)
            else:
                self.queue.push(m)
        return now

    def deliver(self, t: float) -> list[Measurement]:
        """Delayed measurements that have become available by time t."""
        if self.queue._heap and self.queue._heap[0][0] <= t + 1e-12:
            return self.queue.pop_available(t)
        return []
