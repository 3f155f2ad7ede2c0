"""Forward noising, the reverse step, guided noise mixing and the sampling chain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .mathcore import substream
from .schedule import NoiseSchedule

PURE_NOISE = "pure_noise"
NOISED_GUIDANCE = "noised_guidance"
SAMPLE_STARTS = (PURE_NOISE, NOISED_GUIDANCE)

# (x_t, guidance, t) -> predicted noise; t is an int or one step per row
Denoiser = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DiffusionConfig:
    schedule: NoiseSchedule
    guidance_weight: float = 0.0
    sample_start: str = NOISED_GUIDANCE
    start_step: int | None = None  # None -> schedule.T

    def __post_init__(self):
        if self.sample_start not in SAMPLE_STARTS:
            raise ConfigError(f"sample_start must be one of {SAMPLE_STARTS}, got {self.sample_start!r}")
        if not np.isfinite(self.guidance_weight) or self.guidance_weight < 0:
            raise ConfigError(f"guidance_weight must be finite and >= 0, got {self.guidance_weight}")
        s = self.first_step
        if not 1 <= s <= self.schedule.T:
            raise ConfigError(f"start_step must lie in [1, {self.schedule.T}], got {s}")

    @property
    def first_step(self) -> int:
        return self.schedule.T if self.start_step is None else int(self.start_step)


def _per_row(values, n_rows: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 0:
        return v
    if v.shape != (n_rows,):
        raise ValueError(f"expected one timestep per row ({n_rows}), got shape {v.shape}")
    return v[:, None]


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Jump straight to step ``t``: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.

    ``t`` may be a scalar or hold one step per row of ``x0``.
    """
    if x0.shape != eps.shape:
        raise ValueError(f"q_sample: x0 {x0.shape} vs eps {eps.shape}")
    _, _, abar = sched.at(t)
    abar = _per_row(abar, x0.shape[0])
    out = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    return out.astype(x0.dtype, copy=False)


def p_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, z: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """One reverse transition x_t -> x_{t-1} with fixed variance beta_t."""
    if not (x_t.shape == eps_hat.shape == z.shape):
        raise ValueError(f"p_step: shapes differ: x_t {x_t.shape}, eps_hat {eps_hat.shape}, z {z.shape}")
    beta, alpha, abar = sched.at(t)
    if t == 1 and np.any(z != 0):
        raise ValueError("p_step: z must be zero at t=1")
    mean = (x_t - (beta / np.sqrt(1.0 - abar)) * eps_hat) / np.sqrt(alpha)
    return mean + np.sqrt(beta) * z


def guided_eps(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """(1 + w) * eps_cond - w * eps_uncond, written so equal inputs come back unchanged."""
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(f"guided_eps: {eps_cond.shape} vs {eps_uncond.shape}")
    if w == 0:
        return eps_cond
    return eps_cond + w * (eps_cond - eps_uncond)


def _user_noise(gens: Sequence[np.random.Generator], n_cols: int) -> np.ndarray:
    return np.stack([g.standard_normal(n_cols) for g in gens])


def sample(
    denoiser: Denoiser,
    guidance: np.ndarray,
    cfg: DiffusionConfig,
    seed: int,
    user_ids: Sequence[int] | None = None,
) -> np.ndarray:
    """Run the reverse chain from ``cfg.first_step`` down to 1.

    Each row draws its noise from its own substream keyed by ``user_ids``
    (defaults to the row index), so the output for a user does not depend
    on how users are batched. Returns the final x_0 estimate, one score per
    item.
    """
    guidance = np.asarray(guidance, dtype=np.float64)
    B, N = guidance.shape
    if user_ids is None:
        user_ids = range(B)
    if len(user_ids) != B:
        raise ValueError(f"{len(user_ids)} user ids for {B} guidance rows")
    gens = [substream(seed, u) for u in user_ids]
    sched = cfg.schedule
    start = cfg.first_step
    w = cfg.guidance_weight
    null = np.zeros_like(guidance)

    noise = _user_noise(gens, N)
    if cfg.sample_start == NOISED_GUIDANCE:
        x = q_sample(guidance, start, noise, sched)
    else:
        x = noise
    for t in range(start, 0, -1):
        eps = denoiser(x, guidance, t)
        if w != 0:
            eps = guided_eps(eps, denoiser(x, null, t), w)
        z = _user_noise(gens, N) if t > 1 else np.zeros_like(x)
        x = p_step(x, t, eps, z, sched)
    return x
