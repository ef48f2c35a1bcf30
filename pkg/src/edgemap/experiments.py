"""Experiment configuration, seed sweeps and CSV output.

A config is a flat ``key = value`` text file.  Every run writes
``<out>/<name>/<seed>/slots.csv`` (one row per slot), and each experiment gets
``summary.csv`` (per-run means) and ``config.resolved`` next to the seed
directories.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .chanfit import FrozenMarkovFit, PointPredictor
from .channel import Channel, RegimeModel, rate_palette, two_state_matrix
from .data import FrameSource, SynthParams
from .env import EnvConfig, MapEnv, Timeline, slot_cardinalities
from .mbrl import AMMHyper, amm_run
from .policies import SCHEMES, make_policy
from .udt import UserTwin, trace_samples

log = logging.getLogger(__name__)

ENV_PREFIX = "EDGEMAP_"

SLOT_COLUMNS = ["run_id", "seed", "scheme", "interval", "slot", "rate_mbps", "budget",
                "n_upload", "n_evict", "map_size", "upsilon_k", "reward",
                "cum_discounted_return"]
SUMMARY_COLUMNS = ["run_id", "seed", "scheme", "slots", "mean_upsilon", "final_interval_upsilon",
                   "mean_reward", "discounted_return"]
UDT_COLUMNS = ["seed", "method", "N", "interval", "matrix_error"]
UDT_METHODS = ("udt", "lstm_point", "markov_fit")


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    scheme: str = "adapt"
    seeds: tuple = (0,)
    out: str = "out"
    frames: str = ""              # frame file; empty = synthetic
    # map / uplink
    alpha: float = 5.0
    d_req: float = 0.5
    v_max: int = 25
    F: int = 60
    gamma: float = 0.9
    penalty_factor: float = 10.0
    # timeline
    K: int = 100
    intervals: int = 3
    tau: int = 7
    # channel
    N: int = 2
    palette: tuple = ()           # empty = evenly spaced on [40, 80]
    regimes: int = 3              # random Dirichlet regimes when high_ratio is empty
    high_ratio: tuple = ()        # two-state regimes, one per listed ratio
    persistence: float = 0.8
    # synthetic frames
    P: int = 2000
    window: int = 150
    stride: int = 2
    jitter: float = 0.05
    # twin
    Z: int = 8
    W: int = 50
    J: int = 5
    udt_hidden: int = 32
    udt_steps: int = 100
    udt_lr: float = 3e-3
    kl_weight: float = 0.01
    # actor-critic
    batch: int = 32
    I: int = 16
    noise_start: float = 0.3
    noise_end: float = 0.05
    updates_per_slot: int = 8
    critic_steps: int = 3
    soft_update: float = 0.01
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    # udt evaluation
    capacity: int = 0             # training window; 0 = K
    calib: int = 0                # markov calibration length; 0 = K
    eval_steps: int = 80
    methods: tuple = UDT_METHODS

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme: unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if self.high_ratio and self.N != 2:
            raise ConfigError("high_ratio: two-state regimes need N = 2")
        if self.palette and len(self.palette) != self.N:
            raise ConfigError("palette: needs exactly N values")
        bad = set(self.methods) - set(UDT_METHODS)
        if bad:
            raise ConfigError(f"methods: unknown {sorted(bad)}")
        for key in ("v_max", "F", "K", "intervals", "N", "regimes", "W", "batch"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be positive")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_LOWER = {k.lower(): k for k in _FIELDS}


def _coerce(key: str, text: str):
    default = _FIELDS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if key == "seeds":
                return tuple(_seed_list(items))
            if key == "methods":
                return tuple(items)
            return tuple(float(t) for t in items)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc
    return text


def _seed_list(items):
    out = []
    for it in items:
        if ".." in it:
            lo, hi = it.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(it))
    return out


def canonical_key(key: str) -> str:
    k = _LOWER.get(key.strip().lower())
    if k is None:
        raise ConfigError(f"{key.strip()}: unknown config key")
    return k


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[canonical_key(key)] = value.strip()
    return values


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            out[canonical_key(name[len(ENV_PREFIX):])] = value
    return out


def build_config(*layers: dict) -> ExperimentConfig:
    """Later layers override earlier ones; values are raw strings or typed."""
    merged = {}
    for layer in layers:
        for key, value in layer.items():
            merged[canonical_key(key)] = value
    typed = {k: _coerce(k, v) if isinstance(v, str) else v for k, v in merged.items()}
    return ExperimentConfig(**typed)


def resolved_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def parse_sweep(spec: str):
    """``key=a..b:step`` -> (key, values)."""
    try:
        key, rng = spec.split("=", 1)
        bounds, _, step = rng.partition(":")
        lo, hi = bounds.split("..")
        key = canonical_key(key)
        kind = type(_FIELDS[key].default)
        lo, hi = kind(lo), kind(hi)
        step = kind(step) if step else kind(1)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"sweep: expected key=a..b:step, got {spec!r}") from exc
    if step <= 0 or hi < lo:
        raise ConfigError("sweep: need a positive step and a..b with a <= b")
    vals, v = [], lo
    while v <= hi + (1e-9 if kind is float else 0):
        vals.append(v)
        v = v + step
    return key, vals


def sweep_configs(cfg: ExperimentConfig, sweep: str | None):
    if not sweep:
        return [cfg]
    key, vals = parse_sweep(sweep)
    return [cfg.replace(name=f"{cfg.name}_{key}{v}", **{key: v}) for v in vals]


# ---- wiring -------------------------------------------------------------------

def make_channel_model(cfg: ExperimentConfig, seed: int) -> RegimeModel:
    if cfg.high_ratio:
        return RegimeModel([two_state_matrix(r, cfg.persistence) for r in cfg.high_ratio])
    return RegimeModel.random(cfg.N, cfg.regimes, np.random.default_rng(seed + 2000))


def palette_of(cfg: ExperimentConfig) -> np.ndarray:
    return np.asarray(cfg.palette, dtype=float) if cfg.palette else rate_palette(cfg.N)


def build_env(cfg: ExperimentConfig, seed: int) -> MapEnv:
    channel = Channel(make_channel_model(cfg, seed), palette_of(cfg), cfg.K,
                      np.random.default_rng(seed + 1000))
    if cfg.frames:
        frames = FrameSource.from_file(cfg.frames)
    else:
        frames = FrameSource.synthetic(SynthParams(cfg.P, cfg.window, cfg.stride, cfg.jitter),
                                       seed=seed)
    env_cfg = EnvConfig(cfg.alpha, cfg.d_req, cfg.v_max, cfg.gamma,
                        penalty_factor=cfg.penalty_factor)
    return MapEnv(env_cfg, Timeline(cfg.F, cfg.K, cfg.intervals, cfg.tau), frames, channel)


def make_twin(cfg: ExperimentConfig, env: MapEnv, seed: int) -> UserTwin:
    return UserTwin(cfg.N, cfg.tau + 1, env.channel.palette, latent_dim=cfg.Z,
                    hidden=cfg.udt_hidden, lr=cfg.udt_lr, steps=cfg.udt_steps,
                    kl_weight=cfg.kl_weight, seed=seed)


def make_hyper(cfg: ExperimentConfig) -> AMMHyper:
    return AMMHyper(W=cfg.W, J=cfg.J, batch=cfg.batch, real=cfg.I, gamma=cfg.gamma,
                    noise_start=cfg.noise_start, noise_end=cfg.noise_end,
                    updates_per_slot=cfg.updates_per_slot, critic_steps=cfg.critic_steps,
                    soft_update=cfg.soft_update,
                    actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _SlotWriter:
    """Row-at-a-time CSV writer so a failing run still leaves its rows."""

    def __init__(self, path: Path, run_id: str, seed: int, scheme: str, gamma: float):
        path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(SLOT_COLUMNS)
        self.run_id, self.seed, self.scheme, self.gamma = run_id, seed, scheme, gamma
        self.ret = 0.0
        self.rows = []

    def add(self, k, interval, rate, budget, n_up, n_ev, size, ups, reward):
        self.ret += reward * self.gamma ** k
        row = [self.run_id, self.seed, self.scheme, interval, k, float(rate), budget, n_up, n_ev,
               size, float(ups), float(reward), self.ret]
        self.rows.append(row)
        self.w.writerow([_fmt(v) for v in row])
        self.fh.flush()

    def close(self):
        self.fh.close()


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """One run; writes its slots.csv and returns the summary row."""
    run_id = f"{cfg.name}-{cfg.scheme}-{seed}"
    path = Path(cfg.out) / cfg.name / str(seed) / "slots.csv"
    writer = _SlotWriter(path, run_id, seed, cfg.scheme, cfg.gamma)
    try:
        env = build_env(cfg, seed)
        s = env.reset()
        if cfg.scheme == "mbrl":
            twin = make_twin(cfg, env, seed)
            _, records = amm_run(env, twin, make_hyper(cfg), seed=seed)
            for r in records:
                writer.add(r.slot, r.interval, r.rate, r.budget, r.n_upload, r.n_evict,
                           r.map_size, r.upsilon, r.reward)
        else:
            policy = make_policy(cfg.scheme, env.config)
            while not env.done:
                a = policy(s)
                budget, _ = slot_cardinalities(s, env.config)
                nxt, reward, xi = env.step(a)
                writer.add(s.slot, s.interval, s.rate, budget, len(a.upload), len(a.evict),
                           len(nxt.map), xi.upsilon, reward)
                s = nxt
    except Exception as exc:
        raise RunError(f"run {run_id} failed after {len(writer.rows)} slots: {exc}") from exc
    finally:
        writer.close()
    return summarize(writer.rows, cfg.K, env.penalty)


def summarize(rows, k, penalty) -> dict:
    ups = np.array([r[10] for r in rows], dtype=float)
    ups = np.where(np.isinf(ups), penalty, ups)
    rewards = np.array([r[11] for r in rows], dtype=float)
    first = rows[0]
    return {
        "run_id": first[0], "seed": first[1], "scheme": first[2], "slots": len(rows),
        "mean_upsilon": float(ups.mean()), "final_interval_upsilon": float(ups[-k:].mean()),
        "mean_reward": float(rewards.mean()), "discounted_return": float(rows[-1][12]),
    }


def _run_seed_star(args):
    return run_seed(*args)


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    """All seeds of one experiment; returns the summary rows (seed order)."""
    base = Path(cfg.out) / cfg.name
    base.mkdir(parents=True, exist_ok=True)
    (base / "config.resolved").write_text(resolved_text(cfg))
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_seed_star, jobs))
    else:
        summaries = [run_seed(*j) for j in jobs]
    write_csv(base / "summary.csv", SUMMARY_COLUMNS, summaries)
    return summaries


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_slots(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---- channel-model evaluation ----------------------------------------------------

def udt_eval_rows(cfg: ExperimentConfig, seed: int) -> list[dict]:
    """Rolling comparison of channel estimators on a raw rate trace.

    Every W slots the learned estimators refit on the most recent ``capacity``
    (history, next) samples; at the end of each interval every method's
    matrix is compared with the interval's true matrix (mean absolute
    entrywise error).  The Markov fit is frozen after ``calib`` slots.
    """
    n, k, tau = cfg.N, cfg.K, cfg.tau
    capacity = cfg.capacity or k
    calib = cfg.calib or k
    channel = Channel(make_channel_model(cfg, seed), palette_of(cfg), k,
                      np.random.default_rng(seed + 7))
    states, mats = [channel.state], [channel.matrix]
    for _ in range(cfg.intervals * k):
        states.append(channel.advance())
        mats.append(channel.matrix)
    states = np.asarray(states)
    hist, nxt = trace_samples(states, tau)
    cur = np.arange(len(nxt)) + tau      # slot of the last history entry
    learned = {}
    if "udt" in cfg.methods:
        learned["udt"] = UserTwin(n, tau + 1, palette_of(cfg), latent_dim=cfg.Z,
                                  hidden=cfg.udt_hidden, lr=cfg.udt_lr, steps=cfg.eval_steps,
                                  kl_weight=cfg.kl_weight, seed=seed)
    if "lstm_point" in cfg.methods:
        learned["lstm_point"] = PointPredictor(n, hidden=cfg.udt_hidden, lr=cfg.udt_lr,
                                               steps=cfg.eval_steps, seed=seed)
    markov = FrozenMarkovFit(states[:calib + 1], n)
    rows = []
    for slot in range(cfg.intervals * k):
        if slot % cfg.W == cfg.W - 1:
            sel = np.where(cur < slot)[0][-capacity:]
            if len(sel):
                for m in learned.values():
                    m.fit(hist[sel], nxt[sel])
        if slot % k == k - 1:
            t = slot // k
            ref = hist[np.where((cur >= t * k) & (cur < slot))[0]]
            for name in cfg.methods:
                if name == "markov_fit":
                    est = markov.matrix
                elif name == "udt":
                    est = learned[name].transition_matrix(ref)
                else:
                    est = learned[name].transition_matrix(tau + 1, ref)
                rows.append({"seed": seed, "method": name, "N": n, "interval": t,
                             "matrix_error": float(np.abs(est - mats[slot]).mean())})
    return rows


def run_udt_eval(cfg: ExperimentConfig, workers: int = 1) -> list[dict]:
    base = Path(cfg.out) / cfg.name
    base.mkdir(parents=True, exist_ok=True)
    (base / "config.resolved").write_text(resolved_text(cfg))
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_udt_star, jobs))
    else:
        per_seed = [udt_eval_rows(*j) for j in jobs]
    rows = []
    for seed, seed_rows in zip(cfg.seeds, per_seed):
        d = base / str(seed)
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "udt_eval.csv", UDT_COLUMNS, seed_rows)
        rows.extend(seed_rows)
    summary = []
    for name in cfg.methods:
        errs = [r["matrix_error"] for r in rows if r["method"] == name]
        summary.append({"method": name, "N": cfg.N, "mean_error": float(np.mean(errs))})
    write_csv(base / "summary.csv", ["method", "N", "mean_error"], summary)
    return rows


def _udt_star(args):
    return udt_eval_rows(*args)


def mean_error(rows, method: str) -> float:
    vals = [r["matrix_error"] for r in rows if r["method"] == method]
    return float(np.mean(vals)) if vals else math.nan
