"""Conditional noise-prediction network.

    g   = guidance / ||guidance||_2          (zero rows stay zero)
    h   = tanh([g | x_t | temb(t)] @ W1 + b1)
    eps = h @ W2 + b2

Forward and backward are written out by hand; nothing flows back into the
inputs, only into the four parameter arrays.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .mathcore import check_finite

INPUT_LAYOUT = ("guidance", "x_t", "time")
PARAM_NAMES = ("W1", "b1", "W2", "b2")
DEFAULT_HIDDEN = 1000
DEFAULT_TIME_DIM = 16
TIME_BASE = 10000.0

MAGIC = b"DRCFG1\0"
_HEADER = struct.Struct("<4I")


@dataclass(frozen=True)
class DenoiserParams:
    W1: np.ndarray  # (2N + d_t, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, N)
    b2: np.ndarray  # (N,)
    d_t: int

    def __post_init__(self):
        N, H = self.W2.shape[1], self.W2.shape[0]
        if self.d_t < 2 or self.d_t % 2:
            raise ValueError(f"time embedding width must be even and >= 2, got {self.d_t}")
        expected = {"W1": (2 * N + self.d_t, H), "b1": (H,), "W2": (H, N), "b2": (N,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def N(self) -> int:
        return self.W2.shape[1]

    @property
    def H(self) -> int:
        return self.W2.shape[0]

    @property
    def dtype(self):
        return self.W1.dtype

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], d_t: int) -> "DenoiserParams":
        return cls(d_t=d_t, **{name: arrays[name] for name in PARAM_NAMES})

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams.from_arrays({k: v.astype(dtype) for k, v in self.arrays().items()}, self.d_t)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())


@dataclass(frozen=True)
class ForwardCache:
    params: DenoiserParams
    inputs: np.ndarray  # [g | x_t | temb]
    hidden: np.ndarray


def time_embedding(t, d_t: int) -> np.ndarray:
    """Sinusoidal features of 1-based steps ``t``: all sines, then all cosines.

    Returns shape (len(t), d_t), or (1, d_t) for a scalar step.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = d_t // 2
    freqs = TIME_BASE ** (-2.0 * np.arange(half, dtype=np.float64) / d_t)
    args = ts[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def normalize_rows(guidance: np.ndarray) -> np.ndarray:
    """Unit L2 rows; zero rows stay zero.

    Rows are first divided by their largest magnitude, which makes the result
    bitwise independent of a positive rescaling for multi-hot rows.
    """
    peak = np.max(np.abs(guidance), axis=1, keepdims=True)
    g = guidance / np.where(peak > 0, peak, 1.0)
    norms = np.sqrt(np.sum(g * g, axis=1, keepdims=True))
    return g / np.where(norms > 0, norms, 1.0)


def init(rng: np.random.Generator, N: int, H: int = DEFAULT_HIDDEN, d_t: int = DEFAULT_TIME_DIM,
         dtype=np.float64) -> DenoiserParams:
    """Glorot-uniform weights, zero biases."""
    if N < 1 or H < 1:
        raise ValueError(f"need N, H >= 1, got N={N}, H={H}")

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)

    d_in = 2 * N + d_t
    return DenoiserParams(
        W1=glorot(d_in, H),
        b1=np.zeros(H, dtype=dtype),
        W2=glorot(H, N),
        b2=np.zeros(N, dtype=dtype),
        d_t=d_t,
    )


def forward(params: DenoiserParams, x_t: np.ndarray, guidance: np.ndarray, t) -> tuple[np.ndarray, ForwardCache]:
    N = params.N
    if x_t.ndim != 2 or x_t.shape[1] != N or guidance.shape != x_t.shape:
        raise ValueError(f"forward: expected x_t and guidance of shape (B, {N}), got {x_t.shape} and {guidance.shape}")
    check_finite("x_t", x_t)
    check_finite("guidance", guidance)
    B = x_t.shape[0]
    temb = time_embedding(t, params.d_t)
    if temb.shape[0] == 1 and B != 1:
        temb = np.broadcast_to(temb, (B, params.d_t))
    elif temb.shape[0] != B:
        raise ValueError(f"forward: {temb.shape[0]} timesteps for {B} rows")
    dtype = params.dtype
    inputs = np.concatenate([normalize_rows(guidance), x_t, temb], axis=1).astype(dtype, copy=False)
    hidden = np.tanh(inputs @ params.W1 + params.b1)
    eps_hat = hidden @ params.W2 + params.b2
    return eps_hat, ForwardCache(params=params, inputs=inputs, hidden=hidden)


def backward(params: DenoiserParams, cache: ForwardCache, d_eps_hat: np.ndarray) -> dict[str, np.ndarray]:
    if cache.params is not params:
        raise ValueError("backward: cache was produced with different parameters")
    B = cache.hidden.shape[0]
    if d_eps_hat.shape != (B, params.N):
        raise ValueError(f"backward: output gradient {d_eps_hat.shape}, expected {(B, params.N)}")
    d_eps_hat = d_eps_hat.astype(params.dtype, copy=False)
    h = cache.hidden
    dW2 = h.T @ d_eps_hat
    db2 = d_eps_hat.sum(axis=0)
    dpre = (d_eps_hat @ params.W2.T) * (1.0 - h * h)
    dW1 = cache.inputs.T @ dpre
    db1 = dpre.sum(axis=0)
    return {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def mse_loss(eps_hat: np.ndarray, eps_true: np.ndarray) -> tuple[float, np.ndarray]:
    if eps_hat.shape != eps_true.shape:
        raise ValueError(f"mse_loss: {eps_hat.shape} vs {eps_true.shape}")
    diff = eps_hat - eps_true
    n = diff.size
    return float(np.mean(diff * diff)), (2.0 / n) * diff


def make_denoiser(params: DenoiserParams):
    """Adapt ``params`` to the ``(x_t, guidance, t) -> eps`` callable used by sampling."""

    def fn(x_t, guidance, t):
        return forward(params, x_t, guidance, t)[0]

    return fn


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, params: DenoiserParams, T: int, manifest: dict | None = None) -> None:
    """Write the binary checkpoint (and optional JSON sidecar) atomically.

    Layout: magic, little-endian u32 [N, H, d_t, T], then W1, b1, W2, b2 as
    little-endian f32 in row-major order.
    """
    path = os.fspath(path)
    blob = bytearray(MAGIC)
    blob += _HEADER.pack(params.N, params.H, params.d_t, T)
    for name in PARAM_NAMES:
        blob += np.ascontiguousarray(getattr(params, name), dtype="<f4").tobytes()
    _atomic_write(path, bytes(blob))
    if manifest is not None:
        text = json.dumps({**manifest, "input_layout": list(INPUT_LAYOUT)}, indent=2, sort_keys=True)
        _atomic_write(manifest_path(path), (text + "\n").encode())


def load_checkpoint(path) -> tuple[DenoiserParams, int]:
    """Returns (params as float32, T)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    off = len(MAGIC)
    N, H, d_t, T = _HEADER.unpack_from(blob, off)
    off += _HEADER.size
    shapes = {"W1": (2 * N + d_t, H), "b1": (H,), "W2": (H, N), "b2": (N,)}
    arrays = {}
    for name in PARAM_NAMES:
        count = int(np.prod(shapes[name]))
        if off + 4 * count > len(blob):
            raise DataError(f"{path}: truncated checkpoint at {name}")
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shapes[name]).astype(np.float32)
        off += 4 * count
    if off != len(blob):
        raise DataError(f"{path}: {len(blob) - off} trailing bytes")
    return DenoiserParams.from_arrays(arrays, d_t), T


def manifest_path(checkpoint_path) -> str:
    return os.fspath(checkpoint_path) + ".json"


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
