"""Dense arithmetic helpers, seeded sampling and the Adam update.

Matrices are plain 2-D ``numpy.ndarray`` values. Every stochastic draw goes
through a ``numpy.random.Generator`` backed by PCG64, so a seed fixes the
whole stream. Parallel consumers take per-key substreams (``substream``)
instead of sharing one generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

RNG_ALGORITHM = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def substream(seed: int, key: int) -> np.random.Generator:
    """Independent generator for ``key`` (e.g. a user id) derived from ``seed``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(key),))
    return np.random.Generator(np.random.PCG64(ss))


def gaussian(rng: np.random.Generator, rows: int, cols: int, dtype=np.float64) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError(f"gaussian needs rows, cols >= 1, got {rows}x{cols}")
    return rng.standard_normal((rows, cols), dtype=dtype)


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericError(f"{name}: {bad} non-finite entries")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Inputs are left untouched; new parameter arrays and a new state are
    returned. Arrays keep the dtype of the parameters.
    """
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ValueError("adam_step: parameter, gradient and state keys differ")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for {k}: param {p.shape}, grad {g.shape}, moment {state.m[k].shape}")
        g = g.astype(p.dtype, copy=False)
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[k] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state
