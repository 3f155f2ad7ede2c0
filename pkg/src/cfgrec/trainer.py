"""Classifier-free guidance training with model selection on nDCG@10."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import denoiser as dn
from .data import MultiHotMatrix
from .diffusion import NOISED_GUIDANCE, DiffusionConfig, q_sample, sample
from .errors import ConfigError, NumericError
from .evaluation import DEFAULT_KS, MetricsReport, metrics, rank
from .mathcore import AdamState, adam_init, adam_step, gaussian, make_rng
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T, NoiseSchedule, linear_schedule

log = logging.getLogger(__name__)

SELECTION_METRIC = ("ndcg", 10)
CHECKPOINT_NAME = "best.ckpt"
LOG_NAME = "train_log.jsonl"


@dataclass
class TrainConfig:
    p_uncond: float = 0.2
    batch_size: int = 400
    max_steps: int = 10000
    eval_every: int = 500
    log_every: int = 50
    seed: int = 0
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    H: int = dn.DEFAULT_HIDDEN
    d_t: int = dn.DEFAULT_TIME_DIM
    dtype: str = "float32"
    eval_batch_size: int = 1024
    ks: tuple[int, ...] = DEFAULT_KS

    def validate(self) -> None:
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")
        for name in ("batch_size", "eval_every", "log_every", "H", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.d_t < 2 or self.d_t % 2:
            raise ConfigError(f"d_t must be even and >= 2, got {self.d_t}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")
        if SELECTION_METRIC[1] not in self.ks:
            raise ConfigError(f"ks must include {SELECTION_METRIC[1]} for model selection")
        linear_schedule(self.T, self.beta_start, self.beta_end)

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d["ks"] = list(self.ks)
        return d


@dataclass
class TrainData:
    """Matrices the trainer needs; all share the same user and item space."""

    train: MultiHotMatrix
    selection: MultiHotMatrix
    selection_split: str = "valid"
    fingerprint: str | None = None


@dataclass
class FitResult:
    params: dn.DenoiserParams
    manifest: dict
    history: list[dict] = field(default_factory=list)
    report: MetricsReport | None = None
    losses: list[float] = field(default_factory=list)


def mask_guidance(guidance: np.ndarray, p_uncond: float, rng: np.random.Generator):
    """Swap each row for the all-zeros null token with probability ``p_uncond``.

    Returns (masked copy, boolean mask of replaced rows).
    """
    if not 0.0 <= p_uncond <= 1.0:
        raise ValueError(f"p_uncond must lie in [0, 1], got {p_uncond}")
    mask = rng.random(guidance.shape[0]) < p_uncond
    out = guidance.copy()
    out[mask] = 0.0
    return out, mask


def loss_and_grads(params, x0, guidance, t, eps, sched):
    x_t = q_sample(x0, t, eps, sched)
    eps_hat, cache = dn.forward(params, x_t, guidance, t)
    loss, d_eps = dn.mse_loss(eps_hat, eps)
    return loss, dn.backward(params, cache, d_eps)


def train_step(params: dn.DenoiserParams, adam: AdamState, batch_x0: np.ndarray, cfg: TrainConfig,
               sched: NoiseSchedule, rng: np.random.Generator):
    """One optimizer step; returns (params, adam state, loss).

    The clean batch doubles as its own guidance, with rows dropped to the
    null token at rate ``cfg.p_uncond``.
    """
    B, N = batch_x0.shape
    x0 = batch_x0.astype(params.dtype, copy=False)
    t = rng.integers(1, sched.T + 1, size=B)
    eps = gaussian(rng, B, N, dtype=params.dtype)
    guidance, _ = mask_guidance(x0, cfg.p_uncond, rng)
    loss, grads = loss_and_grads(params, x0, guidance, t, eps, sched)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} at optimizer step {adam.step + 1} (batch {B}x{N}, t range {t.min()}..{t.max()})")
    arrays, adam = adam_step(params.arrays(), grads, adam)
    return dn.DenoiserParams.from_arrays(arrays, params.d_t), adam, loss


def sample_scores(params: dn.DenoiserParams, guidance: MultiHotMatrix, user_ids, dcfg: DiffusionConfig,
                  seed: int, batch_size: int = 1024) -> np.ndarray:
    """Sampled item scores for ``user_ids`` conditioned on their guidance rows."""
    user_ids = np.asarray(user_ids, dtype=np.int64)
    fn = dn.make_denoiser(params)
    out = np.empty((len(user_ids), guidance.n_cols))
    for lo in range(0, len(user_ids), batch_size):
        ids = user_ids[lo:lo + batch_size]
        out[lo:lo + len(ids)] = sample(fn, guidance.dense(ids), dcfg, seed, ids)
    return out


def evaluate(params, guidance: MultiHotMatrix, exclude: MultiHotMatrix, truth: MultiHotMatrix,
             dcfg: DiffusionConfig, seed: int, ks=DEFAULT_KS, batch_size: int = 1024) -> MetricsReport:
    """Sample, rank with ``exclude`` masked, and score against ``truth`` for users with ground truth."""
    users = np.flatnonzero(truth.row_counts() > 0)
    scores = sample_scores(params, guidance, users, dcfg, seed, batch_size)
    report = metrics(rank(scores, exclude, max(ks), users), truth, ks)
    report.n_skipped = truth.n_rows - len(users)
    return report


def fit(data: TrainData, cfg: TrainConfig, out_dir=None, extra_manifest: dict | None = None) -> FitResult:
    """Train for ``cfg.max_steps`` steps, evaluating every ``cfg.eval_every``.

    A checkpoint is written to ``out_dir`` each time the selection nDCG@10
    strictly improves; the best parameters are returned.
    """
    cfg.validate()
    started = time.time()
    if data.selection_split == "test":
        log.warning("no validation split: model selection runs on the test split")
    sched = cfg.schedule()
    dtype = np.dtype(cfg.dtype)
    rng = make_rng(cfg.seed)
    N = data.train.n_cols
    params = dn.init(rng, N, cfg.H, cfg.d_t, dtype=dtype)
    adam = adam_init(params.arrays(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    dcfg = DiffusionConfig(sched, guidance_weight=0.0, sample_start=NOISED_GUIDANCE)
    eval_seed = cfg.seed
    rows = np.flatnonzero(data.train.row_counts() > 0)
    if len(rows) == 0:
        raise ConfigError("training split is empty")

    log_fh = None
    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
        log_fh = open(os.path.join(out_dir, LOG_NAME), "w")

    best = {"score": -np.inf, "step": None, "params": params, "report": None}
    history: list[dict] = []

    def manifest() -> dict:
        return {
            "config": cfg.snapshot(),
            "best_ndcg@10": best["score"],
            "best_step": best["step"],
            "dataset_fingerprint": data.fingerprint,
            "selection_split": data.selection_split,
            "schedule": {"T": cfg.T, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end},
            "p_uncond": cfg.p_uncond,
            "seed": cfg.seed,
            "rng": "PCG64",
            "checkpoints": history,
            "wall_clock_seconds": round(time.time() - started, 3),
            **(extra_manifest or {}),
        }

    def write(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

    def run_eval(step, params):
        report = evaluate(params, data.train, data.train, data.selection, dcfg, eval_seed, cfg.ks,
                          cfg.eval_batch_size)
        score = report.mean[SELECTION_METRIC[0]][SELECTION_METRIC[1]]
        write({"step": step, "eval": report.to_dict()["metrics"]})
        log.info("step %d: %s nDCG@10 = %.4f", step, data.selection_split, score)
        if score > best["score"]:
            best.update(score=score, step=step, params=params, report=report)
            history.append({"step": step, "ndcg@10": score})
            if ckpt_path is not None:
                dn.save_checkpoint(ckpt_path, params, cfg.T, manifest())

    losses: list[float] = []
    try:
        run_eval(0, params)
        step = 0
        while step < cfg.max_steps:
            order = rng.permutation(rows)
            for lo in range(0, len(order), cfg.batch_size):
                if step >= cfg.max_steps:
                    break
                batch = data.train.dense(order[lo:lo + cfg.batch_size], dtype=dtype)
                params, adam, loss = train_step(params, adam, batch, cfg, sched, rng)
                step += 1
                losses.append(loss)
                if step % cfg.log_every == 0:
                    write({"step": step, "loss": float(np.mean(losses[-cfg.log_every:]))})
                if step % cfg.eval_every == 0:
                    run_eval(step, params)
        if cfg.max_steps % cfg.eval_every:
            run_eval(cfg.max_steps, params)
    finally:
        if log_fh is not None:
            log_fh.close()

    return FitResult(params=best["params"], manifest=manifest(), history=history, report=best["report"],
                     losses=losses)
