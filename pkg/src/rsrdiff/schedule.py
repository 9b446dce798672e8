"""Shifting schedule for the residual diffusion process.

The forward process is driven by a monotone sequence ``beta_1 < ... < beta_T``
with per-step increments ``alpha_t = beta_t - beta_{t-1}``.  ``beta_0 = 0`` is
defined explicitly so the final reverse step is well-posed (its posterior
variance vanishes and the mean collapses onto the denoiser estimate).

``sqrt(beta_t)`` follows a geometric-in-log rule with growth exponent ``p``:

    sqrt(beta_t) = sqrt(beta_1) * exp(((t-1)/(T-1))**p * log(sqrt(beta_T/beta_1)))

which reproduces both endpoints exactly, so one code path covers t = 1..T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ScheduleConfig", "Schedule", "SubSchedule", "build_schedule", "sub_schedule"]

# gamma*sqrt(beta_1) must stay in the small-perturbation regime for the first
# step to be a near-identity kernel.
MAX_GAMMA_SQRT_BETA1 = 0.05


@dataclass(frozen=True)
class ScheduleConfig:
    """Hyper-parameters of the shifting schedule."""

    T: int = 15
    gamma: float = 2.0
    p: float = 0.3
    beta_1: float = field(default=(0.04 / 2.0) ** 2)
    beta_T: float = 0.9999

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.p <= 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if not (0.0 < self.beta_1 < self.beta_T < 1.0):
            raise ValueError(
                f"need 0 < beta_1 < beta_T < 1, got beta_1={self.beta_1}, beta_T={self.beta_T}"
            )
        if self.gamma * math.sqrt(self.beta_1) > MAX_GAMMA_SQRT_BETA1:
            raise ValueError(
                f"gamma*sqrt(beta_1) = {self.gamma * math.sqrt(self.beta_1):.4g} exceeds "
                f"{MAX_GAMMA_SQRT_BETA1}; the first step would not be a small perturbation"
            )


@dataclass(frozen=True)
class Schedule:
    """Built schedule: ``betas[0..T]`` with ``betas[0] = 0`` and increments ``alphas[1..T]``.

    ``betas`` has length T+1 and is indexed directly by time step;
    ``alphas`` has length T and ``alphas[t-1]`` corresponds to step t
    (use :meth:`alpha` to avoid the off-by-one).
    """

    betas: np.ndarray
    alphas: np.ndarray
    gamma: float

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    def beta(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"step t={t} out of range [0, {self.T}]")
        return float(self.betas[t])

    def alpha(self, t: int) -> float:
        if not 1 <= t <= self.T:
            raise ValueError(f"step t={t} out of range [1, {self.T}]")
        return float(self.alphas[t - 1])


@dataclass(frozen=True)
class SubSchedule:
    """K reduced timesteps ``taus[0] < ... < taus[K-1] = T`` for few-step sampling.

    ``betas_at_taus`` has length K+1 with a leading 0, so the k-th reverse step
    uses the pair (betas_at_taus[k], betas_at_taus[k-1]).
    """

    taus: tuple[int, ...]
    betas_at_taus: np.ndarray

    @property
    def K(self) -> int:
        return len(self.taus)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("sub-schedule must contain at least one step")
        if len(self.betas_at_taus) != self.K + 1 or self.betas_at_taus[0] != 0.0:
            raise ValueError("betas_at_taus must be the tau betas prefixed by 0")
        if np.any(np.diff(self.betas_at_taus) <= 0):
            raise ValueError("sub-schedule beta increments must all be positive")


def build_schedule(config: ScheduleConfig) -> Schedule:
    """Construct the shifting schedule from its config.

    The geometric rule is evaluated in 64-bit precision for every t in 1..T;
    it hits ``beta_1`` and ``beta_T`` exactly at the endpoints.
    """
    T = config.T
    t = np.arange(1, T + 1, dtype=np.float64)
    log_ratio = math.log(math.sqrt(config.beta_T / config.beta_1))
    sqrt_betas = math.sqrt(config.beta_1) * np.exp(((t - 1.0) / (T - 1.0)) ** config.p * log_ratio)
    betas = np.concatenate([[0.0], sqrt_betas**2])
    alphas = np.diff(betas)
    if np.any(alphas <= 0):  # cannot happen for a valid config; guard anyway
        raise ValueError("schedule is not strictly increasing")
    betas.setflags(write=False)
    alphas.setflags(write=False)
    return Schedule(betas=betas, alphas=alphas, gamma=config.gamma)


def sub_schedule(schedule: Schedule, K: int, method: str = "uniform") -> SubSchedule:
    """Select K of the T training steps for sampling, always keeping tau_K = T.

    ``method="uniform"`` places taus uniformly in t with round-half-up,
    ``method="geometric"`` places them uniformly in log-sqrt(beta) space.
    Duplicate indices (possible for K close to T) are dropped.
    """
    T = schedule.T
    if not 1 <= K <= T:
        raise ValueError(f"K must be in [1, {T}], got {K}")
    if method == "uniform":
        taus = [math.floor(k * T / K + 0.5) for k in range(1, K + 1)]
    elif method == "geometric":
        # targets geometrically spaced in sqrt(beta); snap to nearest index
        log_s = np.log(np.sqrt(schedule.betas[1:]))
        targets = log_s[0] + (np.arange(1, K + 1) / K) * (log_s[-1] - log_s[0])
        taus = [int(np.argmin(np.abs(log_s - x))) + 1 for x in targets]
        taus[-1] = T
    else:
        raise ValueError(f"unknown sub-schedule method {method!r}")

    deduped: list[int] = []
    for tau in taus:
        if not deduped or tau > deduped[-1]:
            deduped.append(tau)
    deduped[-1] = T  # dedup keeps order, endpoint is pinned

    betas_at_taus = np.concatenate([[0.0], schedule.betas[deduped]])
    betas_at_taus.setflags(write=False)
    return SubSchedule(taus=tuple(deduped), betas_at_taus=betas_at_taus)
