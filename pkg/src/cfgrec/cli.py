"""Command line entry point: ``cfgrec <command> [--config run.ini] [overrides]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Human-readable tables go to stdout; machine outputs only to files.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import secrets
import sys
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from . import data as D
from . import denoiser as dn
from . import trainer as tr
from .diffusion import NOISED_GUIDANCE, SAMPLE_STARTS, DiffusionConfig
from .errors import ConfigError, DataError, NumericError
from .evaluation import DEFAULT_KS, rank
from .schedule import linear_schedule
from .synthetic import two_block_reviews, write_csv

log = logging.getLogger("cfgrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    # [data]
    path: str | None = None
    format: str = D.CSV_RATED
    delimiter: str = ","
    mode: str = D.CLEAN
    ratios: str = "80:20"
    cache_dir: str = "cache"
    # [schedule]
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # [model]
    H: int = dn.DEFAULT_HIDDEN
    d_t: int = dn.DEFAULT_TIME_DIM
    # [train]
    p_uncond: float = 0.2
    lr: float = 1e-3
    batch_size: int = 400
    max_steps: int = 10000
    eval_every: int = 500
    seed: int | None = None
    dtype: str = "float32"
    out_dir: str = "run"
    # [sample]
    guidance_weight: list[float] = field(default_factory=lambda: [0.0])
    sample_start: str = NOISED_GUIDANCE
    start_step: int | None = None
    # [eval]
    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))
    report_dir: str | None = None

    def validate(self) -> None:
        if self.format not in D.FORMATS:
            raise ConfigError(f"format must be one of {D.FORMATS}")
        if self.mode not in D.MODES:
            raise ConfigError(f"mode must be one of {D.MODES}")
        if self.ratios not in D.RATIOS:
            raise ConfigError(f"ratios must be one of {tuple(D.RATIOS)}")
        if self.sample_start not in SAMPLE_STARTS:
            raise ConfigError(f"sample_start must be one of {SAMPLE_STARTS}")
        if any(w < 0 or not np.isfinite(w) for w in self.guidance_weight):
            raise ConfigError(f"guidance weights must be finite and >= 0: {self.guidance_weight}")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError(f"ks must be positive: {self.ks}")
        sched = linear_schedule(self.T, self.beta_start, self.beta_end)
        if self.start_step is not None and not 1 <= self.start_step <= sched.T:
            raise ConfigError(f"start_step must lie in [1, {sched.T}]")
        self.train_config().validate()

    def train_config(self) -> tr.TrainConfig:
        return tr.TrainConfig(
            p_uncond=self.p_uncond, batch_size=self.batch_size, max_steps=self.max_steps,
            eval_every=self.eval_every, seed=0 if self.seed is None else self.seed, T=self.T,
            beta_start=self.beta_start, beta_end=self.beta_end, lr=self.lr, H=self.H, d_t=self.d_t,
            dtype=self.dtype, ks=tuple(self.ks),
        )

    def snapshot(self) -> dict:
        return dataclasses.asdict(self)


# section each key lives in, for the INI file
SECTIONS = {
    "data": ("path", "format", "delimiter", "mode", "ratios", "cache_dir"),
    "schedule": ("T", "beta_start", "beta_end"),
    "model": ("H", "d_t"),
    "train": ("p_uncond", "lr", "batch_size", "max_steps", "eval_every", "seed", "dtype", "out_dir"),
    "sample": ("guidance_weight", "sample_start", "start_step"),
    "eval": ("ks", "report_dir"),
}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind.startswith("list[float]"):
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind.startswith("list[int]"):
            return [int(v) for v in raw.split(",") if v.strip()]
        if raw.strip().lower() in ("", "none") and "None" in kind:
            return None
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def load_config(path: str | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (T, H)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            setattr(cfg, key, _coerce(key, raw))
    return cfg


def write_config(cfg: RunConfig, path: str) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, keys in SECTIONS.items():
        parser[section] = {}
        for key in keys:
            val = getattr(cfg, key)
            if val is None:
                continue
            parser[section][key] = ",".join(map(str, val)) if isinstance(val, list) else str(val)
    with open(path, "w") as fh:
        parser.write(fh)


def resolve_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        cfg.seed = secrets.randbits(63)
        print(f"no seed given; using {cfg.seed}")
    return cfg.seed


# -- commands --------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> dict:
    if not cfg.path:
        raise ConfigError("data path is not set")
    cfg.validate()
    reviews, malformed = D.ingest(cfg.path, cfg.format, cfg.delimiter)
    iset = D.split(D.preprocess(reviews, cfg.mode), cfg.ratios)
    meta = D.save_cache(iset, cfg.cache_dir, D.file_checksum(cfg.path))
    print(f"{cfg.path} ({cfg.mode}, {cfg.ratios})")
    print(f"  users        {meta['users']:>10,}")
    print(f"  items        {meta['items']:>10,}")
    print(f"  interactions {meta['interactions']:>10,}")
    print(f"  malformed rows skipped: {len(malformed)}; users too short to split: {meta['short_users']}; "
          f"items only in held-out splits: {meta['items_only_in_heldout']}")
    print(f"cache written to {cfg.cache_dir}")
    return meta


def _load_split(cfg: RunConfig):
    iset, meta = D.load_cache(cfg.cache_dir)
    train = D.to_multihot(iset, "train")
    return iset, meta, train


def cmd_train(cfg: RunConfig) -> tr.FitResult:
    resolve_seed(cfg)
    cfg.validate()
    iset, meta, train = _load_split(cfg)
    selection_split = "valid" if iset.ratios == "70:20:10" else "test"
    data = tr.TrainData(train, D.to_multihot(iset, selection_split), selection_split, meta["fingerprint"])
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out_dir}: {exc}") from exc
    result = tr.fit(data, cfg.train_config(), cfg.out_dir, extra_manifest={"run_config": cfg.snapshot()})
    ckpt = os.path.join(cfg.out_dir, tr.CHECKPOINT_NAME)
    print(f"best {selection_split} nDCG@10 = {result.manifest['best_ndcg@10']:.4f} at step {result.manifest['best_step']}")
    print(result.report.to_table(f"{selection_split}"))
    print(f"checkpoint: {ckpt}")
    return result


def _load_model(checkpoint: str, cfg: RunConfig, n_items: int | None = None, fingerprint: str | None = None,
                force: bool = False):
    try:
        params, T = dn.load_checkpoint(checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {checkpoint}: {exc}") from exc
    if n_items is not None and params.N != n_items:
        raise DataError(f"checkpoint N={params.N} vs cache N={n_items}: item counts differ")
    manifest = {}
    mpath = dn.manifest_path(checkpoint)
    if os.path.exists(mpath):
        with open(mpath) as fh:
            manifest = json.load(fh)
    trained_on = manifest.get("dataset_fingerprint")
    if trained_on and fingerprint and trained_on != fingerprint and not force:
        raise DataError("checkpoint was trained on a different dataset (fingerprint mismatch); use --force to override")
    sched_cfg = manifest.get("schedule", {"T": cfg.T, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end})
    if sched_cfg["T"] != T:
        raise DataError(f"checkpoint T={T} vs schedule T={sched_cfg['T']}")
    return params, linear_schedule(T, sched_cfg["beta_start"], sched_cfg["beta_end"])


def _fmt_w(w: float) -> str:
    return f"{w:g}"


def cmd_evaluate(cfg: RunConfig, checkpoint: str, force: bool = False) -> dict:
    seed = resolve_seed(cfg)
    cfg.validate()
    iset, meta, train = _load_split(cfg)
    params, sched = _load_model(checkpoint, cfg, iset.n_items, meta["fingerprint"], force)
    history = ("train", "valid") if iset.ratios == "70:20:10" else "train"
    exclude = D.to_multihot(iset, history)
    test = D.to_multihot(iset, "test")
    report_dir = cfg.report_dir or os.path.dirname(os.path.abspath(checkpoint))
    os.makedirs(report_dir, exist_ok=True)
    reports = {}
    for w in cfg.guidance_weight:
        dcfg = DiffusionConfig(sched, w, cfg.sample_start, cfg.start_step)
        report = tr.evaluate(params, train, exclude, test, dcfg, seed, tuple(cfg.ks))
        stem = os.path.join(report_dir, f"report_w{_fmt_w(w)}")
        with open(stem + ".json", "w") as fh:
            fh.write(report.to_json(per_user=True))
        with open(stem + ".txt", "w") as fh:
            fh.write(report.to_table(f"w={_fmt_w(w)}"))
        print(report.to_table(f"w={_fmt_w(w)}"))
        reports[w] = report
    return reports


def cmd_recommend(cfg: RunConfig, checkpoint: str, history: list[int], k: int, force: bool = False):
    seed = resolve_seed(cfg)
    cfg.validate()
    params, sched = _load_model(checkpoint, cfg, force=force)
    N = params.N
    items = sorted(set(int(i) for i in history))
    unknown = [i for i in items if not 0 <= i < N]
    if unknown:
        raise DataError(f"unknown item ids {unknown} (valid ids are 0..{N - 1})")
    if len(items) >= N:
        raise DataError("history covers every item; nothing left to recommend")
    row = np.zeros((1, N))
    row[0, items] = 1.0
    history_mh = D.MultiHotMatrix(sp.csr_matrix(row))
    w = cfg.guidance_weight[0]
    dcfg = DiffusionConfig(sched, w, cfg.sample_start, cfg.start_step)
    scores = tr.sample_scores(params, history_mh, [0], dcfg, seed)
    ranked = rank(scores, history_mh, k, [0])
    top = ranked.top(0)
    print(f"{'item':>8} {'score':>12}")
    for item in top:
        print(f"{item:>8} {scores[0, item]:>12.6f}")
    return [(int(i), float(scores[0, i])) for i in top]


def cmd_synth(out: str, seed: int, n_users: int, n_items: int) -> None:
    write_csv(two_block_reviews(n_users=n_users, n_items=n_items, seed=seed), out)
    print(f"wrote {out}")


# -- argument parsing ----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


OVERRIDES = {
    "path": "--data", "format": "--format", "delimiter": "--delimiter", "mode": "--mode",
    "ratios": "--ratios", "cache_dir": "--cache-dir", "T": "--T", "beta_start": "--beta-start",
    "beta_end": "--beta-end", "H": "--hidden", "d_t": "--time-dim", "p_uncond": "--p-uncond",
    "lr": "--lr", "batch_size": "--batch-size", "max_steps": "--max-steps", "eval_every": "--eval-every",
    "seed": "--seed", "dtype": "--dtype", "out_dir": "--out-dir", "guidance_weight": "--guidance-weight",
    "sample_start": "--sample-start", "start_step": "--start-step", "ks": "--ks", "report_dir": "--report-dir",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run config; flags override its values")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, flag in OVERRIDES.items():
        common.add_argument(flag, dest=f"opt_{name}", default=None, metavar=name.upper())

    parser = _Parser(prog="cfgrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("preprocess", parents=[common], help="ingest, filter, split and cache a review file")
    sub.add_parser("train", parents=[common], help="train and keep the best checkpoint by nDCG@10")
    for name in ("evaluate", "sweep"):
        p = sub.add_parser(name, parents=[common], help="sample test users and write metric reports"
                           if name == "evaluate" else "evaluate once per --guidance-weight value")
        p.add_argument("checkpoint")
        p.add_argument("--force", action="store_true", help="skip the dataset fingerprint check")
    p = sub.add_parser("recommend", parents=[common], help="top-k items for one interaction history")
    p.add_argument("checkpoint")
    p.add_argument("--history", default="", help="comma-separated item ids")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--force", action="store_true", help="skip the dataset fingerprint check")
    p = sub.add_parser("synth", help="write the synthetic two-cluster review file")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=40)
    p = sub.add_parser("init-config", help="write a config file holding the defaults")
    p.add_argument("out")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    for name in OVERRIDES:
        raw = getattr(args, f"opt_{name}", None)
        if raw is not None:
            setattr(cfg, name, _coerce(name, raw))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "synth":
            cmd_synth(args.out, args.seed, args.users, args.items)
            return EXIT_OK
        if args.command == "init-config":
            write_config(RunConfig(), args.out)
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "preprocess":
            cmd_preprocess(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command in ("evaluate", "sweep"):
            cmd_evaluate(cfg, args.checkpoint, args.force)
        elif args.command == "recommend":
            try:
                history = [int(v) for v in args.history.split(",") if v.strip()]
            except ValueError as exc:
                raise ConfigError(f"--history must be comma-separated integers: {args.history!r}") from exc
            cmd_recommend(cfg, args.checkpoint, history, args.k, args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
