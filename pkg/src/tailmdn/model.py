"""Fully connected mixture density network with a GMM or GMM+GPD head.

The network maps a normalized condition vector to the raw head vector::

    [ logits(K) | locations(K) | scales(K) | beta, xi, u ]   (GMEVM)
    [ logits(K) | locations(K) | scales(K) ]                 (GMM)

and the head squashing turns it into a valid ``SplicedMixtureParams``:
softmax for weights, identity for locations and ``u``, softplus plus a floor
for scales and ``beta``, softplus for ``xi``. Hidden layers are affine
followed by softplus. Everything runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .dist import BETA_FLOOR, SCALE_FLOOR, GmmParams, SplicedMixtureParams, TailParams
from .errors import ConfigError, FormatError, TrainingAborted

FORMAT_VERSION = 1
HEAD_KINDS = ("gmm", "gmevm")
ACTIVATIONS = ("softplus",)
HEAD_INIT_GAIN = 0.1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 0
    hidden_sizes: tuple = (10, 100, 100, 80)
    num_centers: int = 15
    head_kind: str = "gmevm"
    activation: str = "softplus"
    scale_floor: float = SCALE_FLOOR
    beta_floor: float = BETA_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}, got {self.head_kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if int(self.input_dim) < 0 or int(self.num_centers) < 1:
            raise ConfigError("input_dim must be >= 0 and num_centers >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden layer sizes must be positive")
        if self.scale_floor <= 0 or self.beta_floor <= 0:
            raise ConfigError("scale floors must be positive")

    @property
    def has_tail(self) -> bool:
        return self.head_kind == "gmevm"

    @property
    def output_dim(self) -> int:
        return 3 * self.num_centers + (3 if self.has_tail else 0)

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "num_centers": self.num_centers,
            "head_kind": self.head_kind,
            "activation": self.activation,
            "scale_floor": self.scale_floor,
            "beta_floor": self.beta_floor,
            "output_dim": self.output_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        out_dim = d.pop("output_dim", None)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise FormatError(f"bad model config: {exc}") from exc
        if out_dim is not None and out_dim != cfg.output_dim:
            raise FormatError(f"config output_dim {out_dim} disagrees with head ({cfg.output_dim})")
        return cfg


@dataclass(frozen=True)
class PreprocessStats:
    """Affine maps between raw units and the network's normalized space.

    Latency: ``(y_ms - latency_mean) / latency_scale``.
    Conditions: min-max to [0, 1]; a constant column maps to 0.5.
    """

    latency_mean: float = 0.0
    latency_scale: float = 1.0
    condition_names: tuple = ()
    condition_min: tuple = ()
    condition_max: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "condition_names", tuple(self.condition_names))
        object.__setattr__(self, "condition_min", tuple(float(v) for v in self.condition_min))
        object.__setattr__(self, "condition_max", tuple(float(v) for v in self.condition_max))
        if not self.latency_scale > 0:
            raise ConfigError("latency_scale must be positive")
        n = len(self.condition_names)
        if len(self.condition_min) != n or len(self.condition_max) != n:
            raise ConfigError("condition statistics do not match condition names")

    def normalize_latency(self, y_ms):
        return (np.asarray(y_ms, dtype=np.float64) - self.latency_mean) / self.latency_scale

    def denormalize_latency(self, y):
        return np.asarray(y, dtype=np.float64) * self.latency_scale + self.latency_mean

    def normalize_conditions(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != len(self.condition_names):
            raise ConfigError(
                f"expected {len(self.condition_names)} condition values, got {x.shape[-1]}"
            )
        lo = np.array(self.condition_min)
        hi = np.array(self.condition_max)
        span = hi - lo
        flat = span == 0
        out = (x - lo) / np.where(flat, 1.0, span)
        return np.where(flat, 0.5, out)

    def to_dict(self) -> dict:
        return {
            "latency_mean": self.latency_mean,
            "latency_scale": self.latency_scale,
            "condition_names": list(self.condition_names),
            "condition_min": list(self.condition_min),
            "condition_max": list(self.condition_max),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessStats":
        try:
            return cls(**d)
        except TypeError as exc:
            raise FormatError(f"bad normalization block: {exc}") from exc


@dataclass(frozen=True)
class ModelWeights:
    config: ModelConfig
    weights: tuple  # per layer, shape (fan_in, fan_out)
    biases: tuple
    normalization: PreprocessStats = field(default_factory=PreprocessStats)
    seed: Optional[int] = None

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigError("layer count does not match config")
        ws, bs = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.array(W, dtype=np.float64).reshape(sizes[i], sizes[i + 1])
            b = np.array(b, dtype=np.float64).reshape(sizes[i + 1])
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ConfigError(f"layer {i} has non-finite entries")
            W.setflags(write=False)
            b.setflags(write=False)
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))
        if len(self.normalization.condition_names) != self.config.input_dim:
            raise ConfigError("normalization condition count differs from input_dim")

    @property
    def params(self) -> list:
        """Flat list ``[W0, b0, W1, b1, ...]`` (the optimizer's view)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "ModelWeights":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)


def _softplus_inv(v):
    v = float(v)
    return v + np.log(-np.expm1(-v))


def init_weights(config: ModelConfig, seed: int, latency_init=None,
                 normalization: Optional[PreprocessStats] = None) -> ModelWeights:
    """Fan-in scaled uniform initialization with a data-aware head bias.

    When ``latency_init`` (normalized training latencies) is given, the head
    biases start from the data: locations at bulk quantiles, ``u`` at the 90th
    percentile, ``beta`` at the mean excess over ``u`` and ``xi`` at 0.1.
    """
    rng = np.random.default_rng(seed)
    sizes = config.layer_sizes
    ws, bs = [], []
    for i in range(len(sizes) - 1):
        bound = 1.0 / np.sqrt(max(sizes[i], 1))
        W = rng.uniform(-bound, bound, size=(sizes[i], sizes[i + 1]))
        b = rng.uniform(-bound, bound, size=sizes[i + 1])
        ws.append(W)
        bs.append(b)
    ws[-1] *= HEAD_INIT_GAIN
    bs[-1] = _head_bias(config, latency_init)
    if normalization is None:
        normalization = PreprocessStats(
            condition_names=tuple(f"x{i}" for i in range(config.input_dim)),
            condition_min=(0.0,) * config.input_dim,
            condition_max=(1.0,) * config.input_dim,
        )
    return ModelWeights(config, tuple(ws), tuple(bs), normalization, seed)


def _head_bias(config, latency_init):
    k = config.num_centers
    b = np.zeros(config.output_dim)
    if latency_init is None or len(latency_init) == 0:
        b[2 * k:3 * k] = _softplus_inv(1.0)
        if config.has_tail:
            b[3 * k] = _softplus_inv(1.0)
            b[3 * k + 1] = _softplus_inv(0.1)
        return b
    y = np.asarray(latency_init, dtype=np.float64)
    u = float(np.quantile(y, 0.9)) if config.has_tail else float(np.max(y))
    bulk = y[y <= u] if config.has_tail else y
    b[k:2 * k] = np.quantile(bulk, (np.arange(k) + 0.5) / k)
    spread = max(0.5 * float(np.std(bulk)), 2.0 * config.scale_floor)
    b[2 * k:3 * k] = _softplus_inv(spread - config.scale_floor)
    if config.has_tail:
        excess = y[y > u] - u
        mean_excess = float(excess.mean()) if excess.size else 1.0
        b[3 * k] = _softplus_inv(max(mean_excess, 2.0 * config.beta_floor) - config.beta_floor)
        b[3 * k + 1] = _softplus_inv(0.1)
        b[3 * k + 2] = u
    return b


# -- forward / backward -------------------------------------------------------

def _check_inputs(X, w):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != w.config.input_dim:
        raise ConfigError(f"condition vector has {X.shape[1]} entries, model expects {w.config.input_dim}")
    return X


def forward_raw(X, w: ModelWeights, keep=False):
    """Raw head outputs for a batch of normalized conditions, shape (B, D).

    With ``keep`` also returns the per-layer inputs and activation
    derivatives needed by the backward pass.
    """
    h = _check_inputs(X, w)
    inputs, derivs = [], []
    last = len(w.weights) - 1
    for i, (W, b) in enumerate(zip(w.weights, w.biases)):
        inputs.append(h)
        z = h @ W
        z += b
        if i == last:
            h = z
        else:
            h, d = _kernels.softplus_grad(z)
            derivs.append(d)
    if keep:
        return h, inputs, derivs
    return h


def head_params(raw, config: ModelConfig) -> SplicedMixtureParams:
    """Squash one raw head vector into distribution parameters."""
    r = np.asarray(raw, dtype=np.float64)
    k = config.num_centers
    a = r[:k] - r[:k].max()
    wts = np.exp(a)
    wts /= wts.sum()
    sig = np.logaddexp(0.0, r[2 * k:3 * k]) + config.scale_floor
    bulk = GmmParams(wts, r[k:2 * k], sig)
    tail = None
    if config.has_tail:
        tail = TailParams(
            threshold=r[3 * k + 2],
            scale=np.logaddexp(0.0, r[3 * k]) + config.beta_floor,
            shape=np.logaddexp(0.0, r[3 * k + 1]),
        )
    return SplicedMixtureParams(bulk, tail)


def forward(x, w: ModelWeights) -> SplicedMixtureParams:
    """Distribution parameters for a single normalized condition vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return head_params(forward_raw(x[None, :], w)[0], w.config)


def forward_batch(X, w: ModelWeights) -> list:
    raw = forward_raw(X, w)
    return [head_params(r, w.config) for r in raw]


def _batch(X, y, w):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ValueError("batch must not be empty")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1 and w.config.input_dim == 0:
        X = np.zeros((y.size, 0))
    X = _check_inputs(X, w)
    if X.shape[0] != y.size:
        raise ConfigError(f"{X.shape[0]} condition rows for {y.size} latencies")
    return X, y


def _unique_rows(X):
    """Distinct condition rows and the row index of every sample.

    Latency datasets usually carry a handful of discrete conditions, so the
    network only has to run once per distinct row.
    """
    if X.shape[1] == 0:
        return X[:1], np.zeros(X.shape[0], dtype=np.int64)
    rows, inverse = np.unique(X, axis=0, return_inverse=True)
    return rows, inverse.reshape(-1).astype(np.int64)


def sample_nll(X, y, w: ModelWeights) -> np.ndarray:
    """Per-sample negative log-likelihood in normalized latency units."""
    X, y = _batch(X, y, w)
    cfg = w.config
    rows, group = _unique_rows(X)
    loss, _ = _kernels.head_nll(forward_raw(rows, w), group, y, cfg.num_centers, cfg.has_tail,
                                cfg.scale_floor, cfg.beta_floor, False)
    return loss


def nll(X, y, w: ModelWeights) -> float:
    """Mean negative log-likelihood of the batch."""
    loss = sample_nll(X, y, w)
    value = float(np.mean(loss))
    if not np.isfinite(value):
        bad = int(np.flatnonzero(~np.isfinite(loss))[0])
        raise TrainingAborted("non-finite loss", diagnostics={"first_bad_sample": bad})
    return value


def grad_nll(X, y, w: ModelWeights):
    """Mean NLL and its exact gradient, as ``(loss, [dW0, db0, dW1, db1, ...])``.

    The bulk/tail branch of each sample is fixed by the current ``u``; the
    gradient flows through ``1 - F(u)`` and the GPD density only. Samples
    sharing a condition row share one network pass, and their head
    gradients are summed before backpropagation.
    """
    X, y = _batch(X, y, w)
    cfg = w.config
    rows, group = _unique_rows(X)
    raw, inputs, derivs = forward_raw(rows, w, keep=True)
    loss, g = _kernels.head_nll(raw, group, y, cfg.num_centers, cfg.has_tail,
                                cfg.scale_floor, cfg.beta_floor, True)
    value = float(np.mean(loss))
    if not np.isfinite(value) or not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(loss))
        raise TrainingAborted(
            "non-finite loss or gradient",
            diagnostics={"first_bad_sample": int(bad[0]) if bad.size else None},
        )
    delta = g / y.size
    grads = [None] * (2 * len(w.weights))
    for i in range(len(w.weights) - 1, -1, -1):
        grads[2 * i] = inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ w.weights[i].T
            delta *= derivs[i - 1]
    return value, grads


# -- serialization ------------------------------------------------------------

_TOP_KEYS = {"format_version", "config", "normalization", "layers", "head_kind", "seed"}


def to_document(w: ModelWeights) -> dict:
    layers = [
        {"rows": W.shape[0], "cols": W.shape[1], "weights": W.reshape(-1).tolist(), "bias": b.tolist()}
        for W, b in zip(w.weights, w.biases)
    ]
    return {
        "format_version": FORMAT_VERSION,
        "config": w.config.to_dict(),
        "normalization": w.normalization.to_dict(),
        "layers": layers,
        "head_kind": w.config.head_kind,
        "seed": w.seed,
    }


def serialize(w: ModelWeights) -> str:
    """JSON text; floats are written with repr so the roundtrip is bit-exact."""
    return json.dumps(to_document(w), indent=1) + "\n"


def deserialize(text) -> ModelWeights:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"model file is not valid JSON: {exc}") from exc
    return from_document(doc)


def from_document(doc: dict) -> ModelWeights:
    if not isinstance(doc, dict):
        raise FormatError("model document must be a JSON object")
    keys = set(doc)
    if keys != _TOP_KEYS:
        raise FormatError(
            f"model document keys mismatch: missing {sorted(_TOP_KEYS - keys)}, "
            f"unexpected {sorted(keys - _TOP_KEYS)}"
        )
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {doc['format_version']!r}")
    config = ModelConfig.from_dict(doc["config"])
    if doc["head_kind"] != config.head_kind:
        raise FormatError("head_kind disagrees with config")
    sizes = config.layer_sizes
    layers = doc["layers"]
    if not isinstance(layers, list) or len(layers) != len(sizes) - 1:
        raise FormatError("layer count does not match config")
    ws, bs = [], []
    for i, layer in enumerate(layers):
        if set(layer) != {"rows", "cols", "weights", "bias"}:
            raise FormatError(f"layer {i} has unexpected fields {sorted(layer)}")
        rows, cols = layer["rows"], layer["cols"]
        if (rows, cols) != (sizes[i], sizes[i + 1]):
            raise FormatError(f"layer {i} is {rows}x{cols}, config implies {sizes[i]}x{sizes[i + 1]}")
        try:
            W = np.array(layer["weights"], dtype=np.float64)
            b = np.array(layer["bias"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"layer {i}: {exc}") from None
        if W.size != rows * cols or b.size != cols:
            raise FormatError(f"layer {i} payload length mismatch")
        ws.append(W.reshape(rows, cols))
        bs.append(b)
    seed = doc["seed"]
    if seed is not None and not isinstance(seed, int):
        raise FormatError("seed must be an integer or null")
    try:
        return ModelWeights(config, tuple(ws), tuple(bs),
                            PreprocessStats.from_dict(doc["normalization"]), seed)
    except ConfigError as exc:
        raise FormatError(str(exc)) from exc


def save(w: ModelWeights, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(w))


def load(path) -> ModelWeights:
    with open(path, encoding="utf-8") as fh:
        return deserialize(fh.read())
