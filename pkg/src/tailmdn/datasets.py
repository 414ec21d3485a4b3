"""Latency datasets: CSV ingestion, splitting and a synthetic ground-truth generator.

CSV convention: a ``latency_ms`` column plus one numeric column per
condition, UTF-8 with a header row. Synthetic datasets keep the analytic
spliced-mixture parameters of every condition in ``meta`` so exact tail
probabilities are available at any latency.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dist import GmmParams, SplicedMixtureParams, TailParams, gmm_sf, spliced_sample
from .errors import FormatError, IngestionError, ParameterError

log = logging.getLogger(__name__)

LATENCY_COLUMN = "latency_ms"
SPEC_FORMAT_VERSION = 1
DEFAULT_PROFILE = {"packet_length_bytes": 172, "period_ms": 10.0}


@dataclass(frozen=True)
class Dataset:
    """Latencies in ms with one row of condition values per sample."""

    latency: np.ndarray
    conditions: np.ndarray
    condition_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lat = np.array(self.latency, dtype=np.float64).reshape(-1)
        names = tuple(str(n) for n in self.condition_names)
        cond = np.array(self.conditions, dtype=np.float64).reshape(lat.size, len(names))
        if not np.all(np.isfinite(lat)) or not np.all(np.isfinite(cond)):
            raise IngestionError("dataset contains non-finite values")
        if np.any(lat <= 0.0):
            raise IngestionError(f"latencies must be positive (row {int(np.argmin(lat))})")
        if len(set(names)) != len(names) or LATENCY_COLUMN in names:
            raise IngestionError(f"invalid condition names {names}")
        lat.setflags(write=False)
        cond.setflags(write=False)
        object.__setattr__(self, "latency", lat)
        object.__setattr__(self, "conditions", cond)
        object.__setattr__(self, "condition_names", names)

    def __len__(self):
        return self.latency.size

    def subset(self, index) -> "Dataset":
        return Dataset(self.latency[index], self.conditions[index], self.condition_names, dict(self.meta))

    def groups(self):
        """Yield ``(condition_row, Dataset)`` for every distinct condition vector."""
        if not self.condition_names:
            yield (), self
            return
        uniq = np.unique(self.conditions, axis=0)
        for row in uniq:
            mask = np.all(self.conditions == row, axis=1)
            yield tuple(float(v) for v in row), self.subset(mask)


def load_csv(path, schema: Optional[Sequence[str]] = None) -> Dataset:
    """Read a latency CSV.

    ``schema`` names the condition columns to keep; ``None`` keeps every
    column besides ``latency_ms``. Columns outside the schema are ignored
    with a warning.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file, header row expected") from None
        if LATENCY_COLUMN not in header:
            raise IngestionError(f"{path}: missing column {LATENCY_COLUMN!r}")
        if schema is None:
            names = [h for h in header if h != LATENCY_COLUMN]
        else:
            names = list(schema)
            missing = [n for n in names if n not in header]
            if missing:
                raise IngestionError(f"{path}: missing condition column(s) {missing}")
            ignored = [h for h in header if h != LATENCY_COLUMN and h not in names]
            if ignored:
                log.warning("%s: ignoring column(s) %s", path, ignored)
        lat_idx = header.index(LATENCY_COLUMN)
        cond_idx = [header.index(n) for n in names]
        lat, cond = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                y = float(row[lat_idx])
                xs = [float(row[i]) for i in cond_idx]
            except ValueError as exc:
                raise IngestionError(f"{path}: row {lineno}: {exc}") from None
            if not math.isfinite(y) or not all(math.isfinite(v) for v in xs):
                raise IngestionError(f"{path}: row {lineno}: non-finite value")
            if y <= 0.0:
                raise IngestionError(f"{path}: row {lineno}: latency must be positive, got {y!r}")
            lat.append(y)
            cond.append(xs)
    log.info("%s: read %d rows", path, len(lat))
    return Dataset(np.array(lat), np.array(cond).reshape(len(lat), len(names)), tuple(names),
                   {"source": str(path)})


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([LATENCY_COLUMN, *dataset.condition_names])
        for y, xs in zip(dataset.latency.tolist(), dataset.conditions.tolist()):
            w.writerow([repr(y), *(repr(v) for v in xs)])


def split(dataset: Dataset, train_fraction: float, seed) -> tuple:
    """Uniform random split without replacement into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction!r}")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


# -- synthetic ground truth ----------------------------------------------------

@dataclass(frozen=True)
class SyntheticGroup:
    condition: tuple
    n: int
    theta: SplicedMixtureParams


@dataclass(frozen=True)
class SyntheticSpec:
    condition_names: tuple
    groups: tuple
    seed: int = 0
    profile: dict = field(default_factory=lambda: dict(DEFAULT_PROFILE))

    def __post_init__(self):
        object.__setattr__(self, "condition_names", tuple(self.condition_names))
        object.__setattr__(self, "groups", tuple(self.groups))
        for g in self.groups:
            if len(g.condition) != len(self.condition_names):
                raise ParameterError(f"group condition {g.condition} does not match {self.condition_names}")
            if g.n < 0:
                raise ParameterError("sample count must be nonnegative")
            if not isinstance(g.theta, SplicedMixtureParams):
                raise ParameterError("group theta must be SplicedMixtureParams")

    def theta_for(self, condition) -> SplicedMixtureParams:
        cond = tuple(float(c) for c in condition)
        for g in self.groups:
            if tuple(float(c) for c in g.condition) == cond:
                return g.theta
        raise KeyError(f"no ground truth for condition {cond}")

    def to_dict(self) -> dict:
        return {
            "format_version": SPEC_FORMAT_VERSION,
            "condition_names": list(self.condition_names),
            "seed": self.seed,
            "profile": dict(self.profile),
            "groups": [
                {"condition": list(g.condition), "n": g.n, "theta": g.theta.to_dict()}
                for g in self.groups
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        if d.get("format_version") != SPEC_FORMAT_VERSION:
            raise FormatError(f"unsupported synthetic spec format_version {d.get('format_version')!r}")
        try:
            groups = [
                SyntheticGroup(tuple(float(c) for c in g["condition"]), int(g["n"]),
                               SplicedMixtureParams.from_dict(g["theta"]))
                for g in d["groups"]
            ]
            return cls(tuple(d["condition_names"]), tuple(groups), int(d.get("seed", 0)),
                       dict(d.get("profile", DEFAULT_PROFILE)))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed synthetic spec: {exc}") from exc


def load_spec(path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            return SyntheticSpec.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc


def save_spec(spec: SyntheticSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(spec.to_dict(), fh, indent=1)
        fh.write("\n")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw every group's samples from its analytic spliced mixture."""
    lat, cond = [], []
    for i, g in enumerate(spec.groups):
        ys = spliced_sample(g.n, g.theta, np.random.SeedSequence([spec.seed, i]))
        if np.any(ys <= 0.0):
            raise ParameterError(f"group {i} produced nonpositive latencies; shift the bulk up")
        lat.append(ys)
        cond.append(np.tile(np.array(g.condition, dtype=np.float64), (g.n, 1)))
    k = len(spec.condition_names)
    latency = np.concatenate(lat) if lat else np.empty(0)
    conditions = np.concatenate(cond) if cond else np.empty((0, k))
    meta = {"source": "synthetic", "spec": spec.to_dict(), "profile": dict(spec.profile)}
    return Dataset(latency, conditions.reshape(latency.size, k), spec.condition_names, meta)


def heavy_tail_theta(load: float = 0.5) -> SplicedMixtureParams:
    """Default ground-truth family in ms, parameterised by a load in [0, 1].

    Two-component bulk whose location and spread grow with load; the GPD tail
    starts one bulk scale above the upper component and gets heavier with
    load (``xi`` from 0.1 to 0.4, ``beta`` from 0.8 to 2.0).
    """
    if not 0.0 <= load <= 1.0:
        raise ParameterError(f"load must lie in [0, 1], got {load!r}")
    mu1 = 6.0 + 2.0 * load
    spread = 1.0 + 0.5 * load
    locations = [mu1, mu1 + 2.0]
    scales = [0.5 * spread, 1.0 * spread]
    u = locations[1] + scales[1]
    return SplicedMixtureParams(
        GmmParams([0.6, 0.4], locations, scales),
        TailParams(threshold=u, scale=0.8 + 1.2 * load, shape=0.1 + 0.3 * load),
    )


def benchmark_theta() -> SplicedMixtureParams:
    """Unconditional heavy-tail benchmark with xi = 0.3."""
    return SplicedMixtureParams(
        GmmParams([0.6, 0.4], [8.0, 10.0], [0.6, 1.2]),
        TailParams(threshold=11.5, scale=1.0, shape=0.3),
    )


def default_spec(kind: str = "length", values: Optional[Sequence[float]] = None,
                 n: int = 10000, seed: int = 0) -> SyntheticSpec:
    """A conditional spec over packet length (tails heavier with length) or MCS
    (tails lighter with higher index); ``kind="none"`` gives the unconditional
    benchmark."""
    if kind == "none":
        return SyntheticSpec((), (SyntheticGroup((), n, benchmark_theta()),), seed)
    if kind == "length":
        values = list(values or (172, 3440, 6880))
        lo, hi = 172.0, 10320.0
        loads = [(v - lo) / (hi - lo) for v in values]
        name = "length"
    elif kind == "mcs":
        values = list(values or (3, 5, 7))
        loads = [(15.0 - v) / 15.0 for v in values]
        name = "mcs"
    else:
        raise ValueError(f"unknown synthetic family {kind!r}")
    groups = tuple(SyntheticGroup((float(v),), n, heavy_tail_theta(ld)) for v, ld in zip(values, loads))
    profile = dict(DEFAULT_PROFILE)
    return SyntheticSpec((name,), groups, seed, profile)


def tail_mass(theta: SplicedMixtureParams) -> float:
    """Probability assigned above the threshold (0 without a tail)."""
    if theta.tail is None:
        return 0.0
    return float(gmm_sf(theta.tail.threshold, theta.bulk))
