"""Pure-numpy reference kernels.

Every function here has a numba twin in ``_kernels_numba`` with the same
signature; ``tests/test_kernels.py`` keeps the two in agreement.
"""

import numpy as np
from scipy.special import log_ndtr, ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
XI_EXP_SWITCH = 1e-9
XI_SERIES_SWITCH = 1e-4


def softplus_grad(z):
    """Return ``(softplus(z), sigmoid(z))`` for an array of pre-activations."""
    e = np.exp(-np.abs(z))
    h = np.log1p(e)
    h += np.maximum(z, 0.0)
    d = np.where(z > 0.0, 1.0, e)
    d /= 1.0 + e
    return h, d


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z > 0.0, 1.0, e) / (1.0 + e)


def _lse(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def head_nll(raw, group, y, k, has_tail, scale_floor, beta_floor, want_grad):
    """Negative log-likelihood of ``y[i]`` under head row ``raw[group[i]]``.

    Returns ``(loss, gsum)``: the per-sample losses and, per head row, the
    gradient summed over that row's samples, ``gsum[g] = sum_{i: group[i]=g}
    d loss[i] / d raw[g]`` (``None`` when ``want_grad`` is false).
    """
    loss, grad = _head_nll_samples(raw[group], y, k, has_tail, scale_floor, beta_floor, want_grad)
    if not want_grad:
        return loss, None
    gsum = np.zeros_like(raw)
    np.add.at(gsum, group, grad)
    return loss, gsum


def _head_nll_samples(raw, y, k, has_tail, scale_floor, beta_floor, want_grad):
    raw = np.asarray(raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = raw[:, :k]
    mu = raw[:, k:2 * k]
    s_raw = raw[:, 2 * k:3 * k]

    logw = a - _lse(a)[:, None]
    w = np.exp(logw)
    sig = _softplus(s_raw) + scale_floor
    t = (y[:, None] - mu) / sig
    lc = logw - LOG_SQRT_2PI - np.log(sig) - 0.5 * t * t
    lbulk = _lse(lc)

    if not has_tail:
        loss = -lbulk
        if not want_grad:
            return loss, None
        gam = np.exp(lc - lbulk[:, None])
        grad = np.empty_like(raw)
        grad[:, :k] = -(gam - w)
        grad[:, k:2 * k] = -gam * t / sig
        grad[:, 2 * k:3 * k] = -gam * (t * t - 1.0) / sig * _sigmoid(s_raw)
        return loss, grad

    b_raw = raw[:, 3 * k]
    x_raw = raw[:, 3 * k + 1]
    u = raw[:, 3 * k + 2]
    beta = _softplus(b_raw) + beta_floor
    xi = _softplus(x_raw)
    in_tail = y > u

    zq = (u[:, None] - mu) / sig
    lsf = log_ndtr(-zq)
    ls = logw + lsf
    lmass = _lse(ls)

    zt = np.where(in_tail, y - u, 0.0) / beta
    expo = xi < XI_EXP_SWITCH
    xi_safe = np.where(expo, 1.0, xi)
    l1p = np.log1p(xi * zt)
    logg = -np.log(beta) - np.where(expo, zt, (1.0 / xi_safe + 1.0) * l1p)

    loss = -np.where(in_tail, lmass + logg, lbulk)
    if not want_grad:
        return loss, None

    gam = np.exp(lc - lbulk[:, None])
    rho = np.exp(ls - lmass[:, None])
    haz = np.exp(-0.5 * zq * zq - LOG_SQRT_2PI - lsf)
    dsig = _sigmoid(s_raw)

    g_bulk_a = gam - w
    g_bulk_mu = gam * t / sig
    g_bulk_s = gam * (t * t - 1.0) / sig

    g_tail_a = rho - w
    g_tail_mu = rho * haz / sig
    g_tail_s = rho * haz * zq / sig

    one_p = 1.0 + xi * zt
    d_beta = -1.0 / beta + (1.0 + xi) * zt / (beta * one_p)
    d_u = (1.0 + xi) / (beta * one_p) - (rho * haz / sig).sum(axis=1)
    xz = xi * zt
    series = zt * zt / 2.0 - zt + xi * (zt * zt - 2.0 * zt ** 3 / 3.0) \
        + xi * xi * (0.75 * zt ** 4 - zt ** 3)
    direct = l1p / (xi_safe * xi_safe) - (1.0 / xi_safe + 1.0) * zt / one_p
    d_xi = np.where(expo | (xz < XI_SERIES_SWITCH), series, direct)

    m = in_tail[:, None]
    grad = np.zeros_like(raw)
    grad[:, :k] = -np.where(m, g_tail_a, g_bulk_a)
    grad[:, k:2 * k] = -np.where(m, g_tail_mu, g_bulk_mu)
    grad[:, 2 * k:3 * k] = -np.where(m, g_tail_s, g_bulk_s) * dsig
    grad[:, 3 * k] = -np.where(in_tail, d_beta * _sigmoid(b_raw), 0.0)
    grad[:, 3 * k + 1] = -np.where(in_tail, d_xi * _sigmoid(x_raw), 0.0)
    grad[:, 3 * k + 2] = -np.where(in_tail, d_u, 0.0)
    return loss, grad


def gmm_bisect(targets, upper, w, mu, sig, lo, hi, tol, max_iter):
    """Solve ``cdf(y) = target`` (or ``sf(y) = target`` when ``upper``) on [lo, hi].

    Plain bisection, vectorised over ``targets``; the GMM cdf is monotone so
    every bracket shrinks. Stops at ``hi - lo <= tol`` or ``max_iter``.
    """
    targets = np.asarray(targets, dtype=np.float64)
    lo_v = np.full(targets.shape, lo)
    hi_v = np.full(targets.shape, hi)
    sign = 1.0 if upper else -1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo_v + hi_v)
        z = (mid[..., None] - mu) / sig
        val = (w * ndtr(sign * -z)).sum(axis=-1)
        # cdf increases with y, sf decreases
        go_right = (val > targets) if upper else (val < targets)
        lo_v = np.where(go_right, mid, lo_v)
        hi_v = np.where(go_right, hi_v, mid)
        if np.all(hi_v - lo_v <= tol):
            break
    return 0.5 * (lo_v + hi_v)
