"""Linear noise schedule.

Timesteps are 1-based everywhere: ``t`` runs over ``1..T`` and the arrays
below are indexed with ``t - 1``. ``t = 0`` means clean data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_T = 100
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_step(self, t) -> None:
        ts = np.asarray(t)
        if ts.size == 0 or ts.min() < 1 or ts.max() > self.T:
            raise ValueError(f"timestep out of range [1, {self.T}]: {t}")

    def at(self, t):
        """(beta, alpha, alpha_bar) at 1-based step(s) ``t``."""
        self.check_step(t)
        i = np.asarray(t) - 1
        return self.beta[i], self.alpha[i], self.alpha_bar[i]


def linear_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                    beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    T = int(T)
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        steps = np.arange(T, dtype=np.float64)
        beta = beta_start + steps / (T - 1) * (beta_end - beta_start)
        # keep the endpoint exact
        beta[-1] = beta_end
    alpha = 1.0 - beta
    alpha_bar = np.empty(T, dtype=np.float64)
    acc = 1.0
    for i in range(T):
        acc = acc * alpha[i]
        alpha_bar[i] = acc
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)
