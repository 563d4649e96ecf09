"""Exception types shared across the simulation stack."""


class CrashSignal(Exception):
    """Raised when a closed-loop episode becomes numerically infeasible.

    Carries a machine-readable reason so the harness can record why an
    episode returned l = 0 (e.g. "covariance_not_pd", "riccati_failure",
    "nonfinite_state"). Never swallowed silently: the episode runner turns
    it into a failed EpisodeResult.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ConfigError(ValueError):
    """Invalid scenario or plant configuration (distinct from a crash)."""
