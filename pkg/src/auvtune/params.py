"""The 13-entry tunable GNC parameter vector, its box bounds, subset masks,
and unit-box normalization for the optimizer.

Filter noise scales (alpha) and LQR weights (q) live in log10 domain; the
planner/guidance entries (u_ref, r_plan, Delta) and the deadband width are
linear. Optimizer-facing values are always in this (possibly log) domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .errors import ConfigError

PARAM_NAMES = [
    "log10_alpha1", "log10_alpha2", "log10_alpha3", "log10_alpha4",
    "u_ref", "r_plan", "delta",
    "log10_q1", "log10_q2", "log10_q3", "log10_q4", "log10_q5",
    "w_db",
]

MASKS = {
    "filter": [0, 1, 2, 3],
    "plan": [4, 5, 6],
    "control": [7, 8, 9, 10, 11, 12],
    "all": list(range(13)),
}


def default_bounds(cfg: ScenarioConfig) -> np.ndarray:
    """(13, 2) box in optimizer domain; r_plan's cap comes from the scenario."""
    return np.array([
        [-8.0, 0.0], [-8.0, 0.0], [-8.0, 0.0], [-8.0, 0.0],
        [0.3, 0.9],
        [1.5, cfg.r_plan_max],
        [1.0, 100.0],
        [-5.0, 3.0], [-5.0, 3.0], [-5.0, 3.0], [-5.0, 3.0], [-5.0, 3.0],
        [0.0, 0.3],
    ])


@dataclass(frozen=True)
class GncParams:
    """Full 13-vector in optimizer domain plus derived runtime accessors."""

    values: tuple

    def __post_init__(self):
        if len(self.values) != 13:
            raise ConfigError("GncParams needs exactly 13 entries")

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.values)

    @property
    def alphas(self) -> np.ndarray:
        return 10.0 ** np.array(self.values[0:4])

    @property
    def u_ref(self) -> float:
        return self.values[4]

    @property
    def r_plan(self) -> float:
        return self.values[5]

    @property
    def delta(self) -> float:
        return self.values[6]

    @property
    def q(self) -> np.ndarray:
        return 10.0 ** np.array(self.values[7:12])

    @property
    def w_db(self) -> float:
        return self.values[12]

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, self.values))

    @classmethod
    def from_dict(cls, d: dict) -> "GncParams":
        return cls(tuple(float(d[name]) for name in PARAM_NAMES))

    @classmethod
    def from_defaults(cls, cfg: ScenarioConfig) -> "GncParams":
        return cls.from_dict(cfg.defaults)

    def replace_active(self, mask: list[int], active_values) -> "GncParams":
        vec = list(self.values)
        for i, v in zip(mask, active_values):
            vec[i] = float(v)
        return GncParams(tuple(vec))


class ParamSpace:
    """Active-subset view with unit-box normalization for the optimizer."""

    def __init__(self, cfg: ScenarioConfig, mask_name: str = "all"):
        if mask_name not in MASKS:
            raise ConfigError(f"unknown mask {mask_name!r}")
        self.mask_name = mask_name
        self.mask = MASKS[mask_name]
        self.bounds_full = default_bounds(cfg)
        self.bounds = self.bounds_full[self.mask]
        self.defaults = GncParams.from_defaults(cfg)
        self.d = len(self.mask)
        self.names = [PARAM_NAMES[i] for i in self.mask]

    def normalize(self, raw_active: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (np.asarray(raw_active, dtype=float) - lo) / (hi - lo)

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + np.asarray(unit, dtype=float) * (hi - lo)

    def to_params(self, unit: np.ndarray) -> GncParams:
        return self.defaults.replace_active(self.mask, self.denormalize(unit))

    def active_of(self, params: GncParams) -> np.ndarray:
        return params.vector[self.mask]

    def contains(self, params: GncParams, tol: float = 1e-9) -> bool:
        v = self.active_of(params)
        return bool(np.all(v >= self.bounds[:, 0] - tol) and np.all(v <= self.bounds[:, 1] + tol))
