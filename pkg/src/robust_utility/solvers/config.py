"""Numerical settings shared by every solver in the package."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration limits.

    Every report embeds ``as_dict()`` so that a number can be traced back to
    the settings that produced it.
    """

    grad_tol: float = 1e-9
    max_iter: int = 500
    mu_schedule: tuple[float, ...] = (1.0, 10.0, 100.0, 1e3, 1e4)
    backtrack: float = 0.5
    sufficient_decrease: float = 1e-4
    lp_pivot_tol: float = 1e-10
    # interior-point settings for the log-sum-exp programs
    barrier_gap: float = 1e-10
    barrier_growth: float = 20.0
    position_bound: float = 1e6
    # relative dual error above which a run counts as stalled off the central path
    barrier_dual_tol: float = 1e-4
    # acceptance tolerances
    tol_mass: float = 1e-12
    tol_martingale: float = 1e-9
    tol_lp_slack: float = 1e-10
    kl_rel_tol: float = 1e-11
    grid_m: int = 2
    seed: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def with_overrides(self, **kwargs) -> "SolverConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})

    def as_dict(self) -> dict:
        out = asdict(self)
        out["mu_schedule"] = list(self.mu_schedule)
        out.pop("extra")
        return out


DEFAULT_CONFIG = SolverConfig()
