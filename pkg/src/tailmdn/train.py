"""Preprocessing, Adam and the staged training schedule, plus ensembles.

A single training run is single-threaded (BLAS is pinned to one thread)
and a pure function of the dataset, the two configs and the seed.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .datasets import Dataset
from .errors import ConfigError, TrainingAborted
from .model import (ModelConfig, ModelWeights, PreprocessStats, grad_nll, init_weights)

log = logging.getLogger(__name__)

DEFAULT_ROUNDS = ((200, 1e-2), (200, 1e-3), (200, 1e-4), (200, 1e-5))
NOISE_MODES = ("fixed", "per_epoch")


@dataclass(frozen=True)
class TrainConfig:
    rounds: tuple = DEFAULT_ROUNDS
    batch_fraction: float = 1.0 / 8.0
    noise_std_ms: float = 0.0
    noise_mode: str = "fixed"
    ensemble_size: int = 10
    seed: int = 0
    latency_scale: float = 1.0

    def __post_init__(self):
        rounds = tuple((int(e), float(lr)) for e, lr in self.rounds)
        object.__setattr__(self, "rounds", rounds)
        if not rounds:
            raise ConfigError("at least one training round is required")
        lrs = [lr for _, lr in rounds]
        if any(e < 0 for e, _ in rounds) or any(lr <= 0 for lr in lrs):
            raise ConfigError("epochs must be >= 0 and learning rates positive")
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ConfigError("learning rates must be nonincreasing across rounds")
        if not 0.0 < self.batch_fraction <= 1.0:
            raise ConfigError("batch_fraction must lie in (0, 1]")
        if self.noise_std_ms < 0:
            raise ConfigError("noise_std_ms must be nonnegative")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size must be >= 1")
        if not self.latency_scale > 0:
            raise ConfigError("latency_scale must be positive")

    @property
    def total_epochs(self) -> int:
        return sum(e for e, _ in self.rounds)

    def batch_size(self, n: int) -> int:
        return max(1, math.ceil(n * self.batch_fraction))

    def to_dict(self) -> dict:
        return {
            "rounds": [list(r) for r in self.rounds],
            "batch_fraction": self.batch_fraction,
            "noise_std_ms": self.noise_std_ms,
            "noise_mode": self.noise_mode,
            "ensemble_size": self.ensemble_size,
            "seed": self.seed,
            "latency_scale": self.latency_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad training config: {exc}") from exc


@dataclass(frozen=True)
class NormalizedData:
    X: np.ndarray
    y: np.ndarray


def _streams(seed):
    init, shuffle, noise = np.random.SeedSequence(seed).spawn(3)
    return init, np.random.default_rng(shuffle), np.random.default_rng(noise)


def preprocess(dataset: Dataset, noise_std_ms: float = 0.0, seed=None,
               latency_scale: float = 1.0, rng=None):
    """Center latencies (ms) on their mean, min-max the conditions to [0, 1].

    Gaussian noise with standard deviation ``noise_std_ms`` is added to the
    latencies once, before the statistics are taken. The input dataset is
    never modified.
    """
    if len(dataset) == 0:
        raise ValueError("cannot preprocess an empty dataset")
    y = np.array(dataset.latency, dtype=np.float64)
    if noise_std_ms > 0:
        if rng is None:
            rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, noise_std_ms, size=y.size)
    cmin = dataset.conditions.min(axis=0) if dataset.condition_names else np.empty(0)
    cmax = dataset.conditions.max(axis=0) if dataset.condition_names else np.empty(0)
    for name, lo, hi in zip(dataset.condition_names, cmin, cmax):
        if lo == hi:
            warnings.warn(f"condition {name!r} is constant ({lo}); mapping it to 0.5")
    stats = PreprocessStats(
        latency_mean=float(np.mean(y)),
        latency_scale=float(latency_scale),
        condition_names=dataset.condition_names,
        condition_min=tuple(cmin.tolist()),
        condition_max=tuple(cmax.tolist()),
    )
    X = stats.normalize_conditions(dataset.conditions) if dataset.condition_names \
        else np.zeros((len(dataset), 0))
    return NormalizedData(X, stats.normalize_latency(y)), stats


# -- Adam ----------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    step: int
    m: tuple
    v: tuple

    @classmethod
    def fresh(cls, params) -> "AdamState":
        return cls(0, tuple(np.zeros_like(p) for p in params), tuple(np.zeros_like(p) for p in params))


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigError("parameter, gradient and state lists differ in length")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingAborted("non-finite gradient", diagnostics={"step": t})
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, tuple(new_m), tuple(new_v))


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    weights: ModelWeights
    trace: list = field(default_factory=list)  # (epoch, round, lr, mean_nll)

    @property
    def final_loss(self) -> float:
        return self.trace[-1][3] if self.trace else float("nan")


def config_for(dataset: Dataset, head_kind: str = "gmevm", **kwargs) -> ModelConfig:
    return ModelConfig(input_dim=len(dataset.condition_names), head_kind=head_kind, **kwargs)


def train(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
          seed: Optional[int] = None, callback=None) -> TrainResult:
    """Fit one model with the staged schedule.

    ``seed`` overrides ``train_config.seed`` (ensembles pass member seeds).
    ``callback(epoch, round, lr, mean_nll)`` is called after each epoch.
    """
    seed = train_config.seed if seed is None else seed
    if model_config.input_dim != len(dataset.condition_names):
        raise ConfigError(
            f"model expects {model_config.input_dim} conditions, dataset has {len(dataset.condition_names)}"
        )
    init_ss, shuffle_rng, noise_rng = _streams(seed)
    fixed_noise = train_config.noise_std_ms if train_config.noise_mode == "fixed" else 0.0
    data, stats = preprocess(dataset, fixed_noise, latency_scale=train_config.latency_scale, rng=noise_rng)
    w = init_weights(model_config, int(init_ss.generate_state(1)[0]), data.y, stats)
    w = replace(w, seed=seed)

    n = data.y.size
    bs = train_config.batch_size(n)
    redraw = train_config.noise_mode == "per_epoch" and train_config.noise_std_ms > 0
    noise_scale = train_config.noise_std_ms / stats.latency_scale
    params = [p.copy() for p in w.params]
    state = AdamState.fresh(params)
    trace = []
    epoch = 0
    with threadpool_limits(limits=1):
        for rnd, (epochs, lr) in enumerate(train_config.rounds):
            for _ in range(epochs):
                y_ep = data.y + noise_rng.normal(0.0, noise_scale, size=n) if redraw else data.y
                perm = shuffle_rng.permutation(n)
                total = 0.0
                for start in range(0, n, bs):
                    idx = perm[start:start + bs]
                    current = w.with_params(params)
                    try:
                        loss, grads = grad_nll(data.X[idx], y_ep[idx], current)
                        new_params, state = adam_step(params, grads, state, lr)
                    except TrainingAborted as exc:
                        raise TrainingAborted(
                            f"training diverged at epoch {epoch} (round {rnd}): {exc}",
                            last_good=current,
                            diagnostics={**exc.diagnostics, "epoch": epoch, "round": rnd, "seed": seed},
                        ) from exc
                    params = new_params
                    total += loss * idx.size
                mean_nll = total / n
                trace.append((epoch, rnd, lr, mean_nll))
                if callback is not None:
                    callback(epoch, rnd, lr, mean_nll)
                epoch += 1
    return TrainResult(w.with_params(params), trace)


def member_seed(seed: int, index: int) -> int:
    """Derived seed of ensemble member ``index``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


@dataclass
class EnsembleResult:
    members: list  # TrainResult per successful member, in index order
    seeds: list
    failures: list  # (index, seed, message)
    indices: list = field(default_factory=list)  # member index of each entry in members
    checkpoints: dict = field(default_factory=dict)  # index -> last good weights of aborted members

    @property
    def ok(self) -> bool:
        return not self.failures


def _member(args):
    dataset, model_config, train_config, index, seed = args
    try:
        return index, seed, train(dataset, model_config, train_config, seed=seed), None
    except TrainingAborted as exc:
        return index, seed, exc.last_good, str(exc)


def train_ensemble(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig,
                   jobs: int = 1) -> EnsembleResult:
    """Train ``ensemble_size`` independent members; ``jobs > 1`` uses worker processes.

    Results do not depend on ``jobs``: every member is single-threaded and
    seeded from ``(seed, index)`` alone.
    """
    k = train_config.ensemble_size
    tasks = [(dataset, model_config, train_config, i, member_seed(train_config.seed, i)) for i in range(k)]
    if jobs > 1 and k > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, k)) as pool:
            results = list(pool.map(_member, tasks))
    else:
        results = [_member(t) for t in tasks]
    out = EnsembleResult([], [], [])
    for index, seed, res, err in sorted(results, key=lambda r: r[0]):
        out.seeds.append(seed)
        if err is None:
            out.members.append(res)
            out.indices.append(index)
        else:
            log.error("ensemble member %d (seed %d) aborted: %s", index, seed, err)
            out.failures.append((index, seed, err))
            if res is not None:
                out.checkpoints[index] = res
    return out


def write_loss_trace(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "round", "lr", "mean_nll"])
        for epoch, rnd, lr, value in trace:
            w.writerow([epoch, rnd, repr(lr), repr(value)])
