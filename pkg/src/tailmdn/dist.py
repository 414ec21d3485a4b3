"""Gaussian mixture, generalized Pareto and spliced bulk/tail densities.

The spliced density keeps the Gaussian mixture below the threshold ``u`` and
hands the mixture's upper mass ``1 - F(u)`` to a GPD above it::

    p(y) = f(y)                      y <= u
    p(y) = (1 - F(u)) * g(y | u)     y >  u

All functions accept a scalar or an array for ``y`` and return the same
shape. Nothing here holds state; sampling takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from . import _kernels
from .errors import DomainError, ParameterError

SCALE_FLOOR = 1e-3
BETA_FLOOR = 1e-3
XI_EXP_SWITCH = 1e-9
BISECT_TOL = 1e-12
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _as_vector(values, name):
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ParameterError(f"{name} must have at least one component")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights, locations and scales of a K-component Gaussian mixture."""

    weights: np.ndarray
    locations: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        w = _as_vector(self.weights, "weights")
        mu = _as_vector(self.locations, "locations")
        sig = _as_vector(self.scales, "scales")
        if not (w.size == mu.size == sig.size):
            raise ParameterError(
                f"component count mismatch: {w.size} weights, {mu.size} locations, {sig.size} scales"
            )
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise ParameterError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        if np.any(sig < SCALE_FLOOR):
            raise ParameterError(f"scales must be >= {SCALE_FLOOR} (min={sig.min()!r})")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "locations", mu)
        object.__setattr__(self, "scales", sig)

    @property
    def k(self) -> int:
        return self.weights.size

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "locations": self.locations.tolist(),
            "scales": self.scales.tolist(),
        }


@dataclass(frozen=True)
class TailParams:
    """GPD tail above ``threshold`` with scale ``scale`` (beta) and shape ``shape`` (xi)."""

    threshold: float
    scale: float
    shape: float

    def __post_init__(self):
        u, beta, xi = float(self.threshold), float(self.scale), float(self.shape)
        if not (np.isfinite(u) and np.isfinite(beta) and np.isfinite(xi)):
            raise ParameterError("tail parameters must be finite")
        if beta < BETA_FLOOR:
            raise ParameterError(f"tail scale must be >= {BETA_FLOOR} (got {beta!r})")
        if xi < 0.0:
            raise ParameterError(f"tail shape must be nonnegative (got {xi!r})")
        object.__setattr__(self, "threshold", u)
        object.__setattr__(self, "scale", beta)
        object.__setattr__(self, "shape", xi)

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "scale": self.scale, "shape": self.shape}


@dataclass(frozen=True)
class SplicedMixtureParams:
    bulk: GmmParams
    tail: Optional[TailParams] = None

    def __post_init__(self):
        if not isinstance(self.bulk, GmmParams):
            raise ParameterError("bulk must be GmmParams")
        if self.tail is not None and not isinstance(self.tail, TailParams):
            raise ParameterError("tail must be TailParams or None")

    def to_dict(self) -> dict:
        d = self.bulk.to_dict()
        d["tail"] = None if self.tail is None else self.tail.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplicedMixtureParams":
        try:
            bulk = GmmParams(d["weights"], d["locations"], d["scales"])
            tail = d.get("tail")
            if tail is not None:
                tail = TailParams(tail["threshold"], tail["scale"], tail["shape"])
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed mixture parameters: {exc}") from exc
        return cls(bulk, tail)


def _check_gmm(phi):
    if not isinstance(phi, GmmParams):
        raise ParameterError(f"expected GmmParams, got {type(phi).__name__}")


def _check_theta(theta):
    if not isinstance(theta, SplicedMixtureParams):
        raise ParameterError(f"expected SplicedMixtureParams, got {type(theta).__name__}")


def _out(y, arr):
    return float(arr) if np.ndim(y) == 0 else arr


# -- Gaussian mixture ---------------------------------------------------------

def gmm_logpdf(y, phi: GmmParams):
    _check_gmm(phi)
    ya = np.asarray(y, dtype=np.float64)
    t = (ya[..., None] - phi.locations) / phi.scales
    lc = np.log(phi.weights) - LOG_SQRT_2PI - np.log(phi.scales) - 0.5 * t * t
    return _out(y, logsumexp(lc, axis=-1))


def gmm_pdf(y, phi: GmmParams):
    return _out(y, np.exp(gmm_logpdf(y, phi)))


def gmm_cdf(y, phi: GmmParams):
    _check_gmm(phi)
    ya = np.asarray(y, dtype=np.float64)
    z = (ya[..., None] - phi.locations) / phi.scales
    return _out(y, np.clip((phi.weights * ndtr(z)).sum(axis=-1), 0.0, 1.0))


def gmm_logsf(y, phi: GmmParams):
    """log(1 - F(y)), computed from the upper tails so it stays finite far out."""
    _check_gmm(phi)
    ya = np.asarray(y, dtype=np.float64)
    z = (ya[..., None] - phi.locations) / phi.scales
    with np.errstate(divide="ignore"):
        return _out(y, logsumexp(np.log(phi.weights) + log_ndtr(-z), axis=-1))


def gmm_sf(y, phi: GmmParams):
    _check_gmm(phi)
    ya = np.asarray(y, dtype=np.float64)
    z = (ya[..., None] - phi.locations) / phi.scales
    return _out(y, np.clip((phi.weights * ndtr(-z)).sum(axis=-1), 0.0, 1.0))


# -- Generalized Pareto -------------------------------------------------------

def _excess(y, tail, strict):
    ya = np.asarray(y, dtype=np.float64)
    bad = ya <= tail.threshold if strict else ya < tail.threshold
    if np.any(bad):
        op = ">" if strict else ">="
        raise DomainError(f"GPD evaluated outside its support: need y {op} u={tail.threshold!r}")
    return ya, (ya - tail.threshold) / tail.scale


def gpd_logpdf(y, tail: TailParams):
    ya, z = _excess(y, tail, strict=True)
    if tail.shape < XI_EXP_SWITCH:
        out = -np.log(tail.scale) - z
    else:
        out = -np.log(tail.scale) - (1.0 / tail.shape + 1.0) * np.log1p(tail.shape * z)
    return _out(y, out)


def gpd_pdf(y, tail: TailParams):
    return _out(y, np.exp(gpd_logpdf(y, tail)))


def gpd_logccdf(y, tail: TailParams):
    ya, z = _excess(y, tail, strict=False)
    if tail.shape < XI_EXP_SWITCH:
        out = -z
    else:
        out = -np.log1p(tail.shape * z) / tail.shape
    return _out(y, out)


def gpd_ccdf(y, tail: TailParams):
    return _out(y, np.exp(gpd_logccdf(y, tail)))


def gpd_isf(q, tail: TailParams):
    """Inverse of ``gpd_ccdf``: the y above u whose exceedance probability is q."""
    qa = np.asarray(q, dtype=np.float64)
    if np.any((qa <= 0.0) | (qa > 1.0)):
        raise DomainError("GPD exceedance level must lie in (0, 1]")
    if tail.shape < XI_EXP_SWITCH:
        z = -np.log(qa)
    else:
        z = np.expm1(-tail.shape * np.log(qa)) / tail.shape
    return _out(q, tail.threshold + tail.scale * z)


# -- Spliced mixture ----------------------------------------------------------

def log_spliced_pdf(y, theta: SplicedMixtureParams):
    _check_theta(theta)
    ya = np.asarray(y, dtype=np.float64)
    out = np.asarray(gmm_logpdf(ya, theta.bulk), dtype=np.float64)
    if theta.tail is not None:
        above = ya > theta.tail.threshold
        if np.any(above):
            out = np.array(out, copy=True)
            lmass = gmm_logsf(theta.tail.threshold, theta.bulk)
            out[above] = lmass + gpd_logpdf(ya[above], theta.tail)
    return _out(y, out)


def spliced_pdf(y, theta: SplicedMixtureParams):
    return _out(y, np.exp(log_spliced_pdf(y, theta)))


def spliced_ccdf(y, theta: SplicedMixtureParams):
    """P[Y > y]."""
    _check_theta(theta)
    ya = np.asarray(y, dtype=np.float64)
    out = np.asarray(gmm_sf(ya, theta.bulk), dtype=np.float64)
    if theta.tail is not None:
        above = ya > theta.tail.threshold
        if np.any(above):
            out = np.array(out, copy=True)
            mass = gmm_sf(theta.tail.threshold, theta.bulk)
            out[above] = mass * gpd_ccdf(ya[above], theta.tail)
    return _out(y, out)


def spliced_cdf(y, theta: SplicedMixtureParams):
    _check_theta(theta)
    ya = np.asarray(y, dtype=np.float64)
    if theta.tail is None:
        return gmm_cdf(y, theta.bulk)
    out = np.asarray(gmm_cdf(ya, theta.bulk), dtype=np.float64)
    above = ya > theta.tail.threshold
    if np.any(above):
        out = np.array(out, copy=True)
        out[above] = 1.0 - spliced_ccdf(ya[above], theta)
    return _out(y, out)


def _bracket(theta):
    mu, sig = theta.bulk.locations, theta.bulk.scales
    lo = float(np.min(mu - 40.0 * sig))
    if theta.tail is not None:
        return min(lo, theta.tail.threshold - 1.0), theta.tail.threshold
    return lo, float(np.max(mu + 40.0 * sig))


def _bulk_solve(levels, upper, theta):
    lo, hi = _bracket(theta)
    b = theta.bulk
    return _kernels.gmm_bisect(levels, upper, b.weights, b.locations, b.scales, lo, hi, BISECT_TOL)


def spliced_isf(q, theta: SplicedMixtureParams):
    """Inverse survival function: y with P[Y > y] = q, for q in (0, 1).

    Works directly in exceedance probability so tiny tail levels keep their
    precision.
    """
    _check_theta(theta)
    qa = np.asarray(q, dtype=np.float64)
    if np.any(~((qa > 0.0) & (qa < 1.0))):
        raise DomainError("exceedance level must lie strictly inside (0, 1)")
    return _out(q, _isf(qa, theta))


def _isf(qa, theta):
    out = np.empty(qa.shape)
    if theta.tail is not None:
        mass = gmm_sf(theta.tail.threshold, theta.bulk)
        in_tail = qa < mass
        if np.any(in_tail):
            out[in_tail] = gpd_isf(qa[in_tail] / mass, theta.tail)
    else:
        in_tail = np.zeros(qa.shape, dtype=bool)
    # solve on whichever side of the median keeps the target representable
    hi_side = ~in_tail & (qa <= 0.5)
    lo_side = ~in_tail & (qa > 0.5)
    if np.any(hi_side):
        out[hi_side] = _bulk_solve(qa[hi_side], True, theta)
    if np.any(lo_side):
        out[lo_side] = _bulk_solve(1.0 - qa[lo_side], False, theta)
    return out


def spliced_quantile(p, theta: SplicedMixtureParams):
    """y with P[Y <= y] = p, for p in (0, 1)."""
    _check_theta(theta)
    pa = np.asarray(p, dtype=np.float64)
    if np.any(~((pa > 0.0) & (pa < 1.0))):
        raise DomainError("probability level must lie strictly inside (0, 1)")
    out = np.empty(pa.shape)
    low = pa < 0.5
    if theta.tail is not None:
        low &= (1.0 - pa) >= gmm_sf(theta.tail.threshold, theta.bulk)
    if np.any(low):
        # below the median solve the cdf directly, no 1 - p round trip
        out[low] = _bulk_solve(pa[low], False, theta)
    if np.any(~low):
        out[~low] = _isf(1.0 - pa[~low], theta)
    return _out(p, out)


def spliced_sample(n: int, theta: SplicedMixtureParams, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. samples by inverting the cdf at uniform variates."""
    _check_theta(theta)
    n = int(n)
    if n < 0:
        raise ValueError("sample count must be nonnegative")
    rng = np.random.default_rng(seed)
    # 1 - U lies in (0, 1]; the (measure-zero) endpoint maps to the bracket edge
    q = 1.0 - rng.random(n)
    q = np.clip(q, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return _isf(q, theta)
