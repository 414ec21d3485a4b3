"""numba twins of the kernels in ``_kernels_numpy``."""

import math

import numpy as np
from numba import njit

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
INV_SQRT2 = 1.0 / math.sqrt(2.0)
XI_EXP_SWITCH = 1e-9
XI_SERIES_SWITCH = 1e-4


@njit(cache=True)
def _log_sf(z):
    # log of the standard normal survival function, accurate in both tails
    if z < 0.0:
        return math.log1p(-0.5 * math.erfc(-z * INV_SQRT2))
    if z < 35.0:
        return math.log(0.5 * math.erfc(z * INV_SQRT2))
    r = 1.0 / (z * z)
    s = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r * (1.0 - 11.0 * r)))))
    return -0.5 * z * z - math.log(z) - LOG_SQRT_2PI + math.log(s)


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def _sigmoid(x):
    if x > 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def softplus_grad(z):
    h = np.empty_like(z)
    d = np.empty_like(z)
    zf = z.reshape(-1)
    hf = h.reshape(-1)
    df = d.reshape(-1)
    for i in range(zf.size):
        x = zf[i]
        e = math.exp(-abs(x))
        ope = 1.0 + e
        if x > 0.0:
            hf[i] = x + math.log1p(e)
            df[i] = 1.0 / ope
        else:
            hf[i] = math.log1p(e)
            df[i] = e / ope
    return h, d


@njit(cache=True)
def head_nll(raw, group, y, k, has_tail, scale_floor, beta_floor, want_grad):
    g_rows = raw.shape[0]
    d_out = raw.shape[1]
    n = y.size
    loss = np.empty(n)
    gsum = np.zeros((g_rows, d_out)) if want_grad else np.zeros((0, d_out))

    # per-row squashed parameters, shared by every sample of the row
    logw = np.empty((g_rows, k))
    wts = np.empty((g_rows, k))
    sig = np.empty((g_rows, k))
    lsig = np.empty((g_rows, k))
    dsig = np.empty((g_rows, k))
    beta = np.empty(g_rows)
    xi = np.empty(g_rows)
    lmass = np.empty(g_rows)
    mass_grad = np.zeros((g_rows, d_out))  # d log(1 - F(u)) / d raw, per row
    n_tail = np.zeros(g_rows, dtype=np.int64)
    tmp = np.empty(k)
    for g in range(g_rows):
        r = raw[g]
        amax = r[0]
        for j in range(1, k):
            if r[j] > amax:
                amax = r[j]
        acc = 0.0
        for j in range(k):
            acc += math.exp(r[j] - amax)
        lnorm = amax + math.log(acc)
        for j in range(k):
            logw[g, j] = r[j] - lnorm
            wts[g, j] = math.exp(logw[g, j])
            s = r[2 * k + j]
            sig[g, j] = _softplus(s) + scale_floor
            lsig[g, j] = math.log(sig[g, j])
            dsig[g, j] = _sigmoid(s)
        if not has_tail:
            continue
        u = r[3 * k + 2]
        beta[g] = _softplus(r[3 * k]) + beta_floor
        xi[g] = _softplus(r[3 * k + 1])
        cmax = -np.inf
        for j in range(k):
            tmp[j] = logw[g, j] + _log_sf((u - r[k + j]) / sig[g, j])
            if tmp[j] > cmax:
                cmax = tmp[j]
        acc = 0.0
        for j in range(k):
            acc += math.exp(tmp[j] - cmax)
        lm = cmax + math.log(acc)
        lmass[g] = lm
        if want_grad:
            d_u = 0.0
            for j in range(k):
                zq = (u - r[k + j]) / sig[g, j]
                rho = math.exp(tmp[j] - lm)
                haz = math.exp(-0.5 * zq * zq - LOG_SQRT_2PI - _log_sf(zq))
                mass_grad[g, j] = rho - wts[g, j]
                mass_grad[g, k + j] = rho * haz / sig[g, j]
                mass_grad[g, 2 * k + j] = rho * haz * zq / sig[g, j] * dsig[g, j]
                d_u -= rho * haz / sig[g, j]
            mass_grad[g, 3 * k + 2] = d_u

    for i in range(n):
        g = group[i]
        r = raw[g]
        yi = y[i]
        if has_tail and yi > r[3 * k + 2]:
            u = r[3 * k + 2]
            b = beta[g]
            x = xi[g]
            zt = (yi - u) / b
            l1p = math.log1p(x * zt)
            expo = x < XI_EXP_SWITCH
            if expo:
                logg = -math.log(b) - zt
            else:
                logg = -math.log(b) - (1.0 / x + 1.0) * l1p
            loss[i] = -(lmass[g] + logg)
            if want_grad:
                n_tail[g] += 1
                one_p = 1.0 + x * zt
                d_beta = -1.0 / b + (1.0 + x) * zt / (b * one_p)
                if expo or x * zt < XI_SERIES_SWITCH:
                    z2 = zt * zt
                    z3 = z2 * zt
                    d_xi = z2 / 2.0 - zt + x * (z2 - 2.0 * z3 / 3.0) + x * x * (0.75 * z3 * zt - z3)
                else:
                    d_xi = l1p / (x * x) - (1.0 / x + 1.0) * zt / one_p
                gsum[g, 3 * k] -= d_beta * _sigmoid(r[3 * k])
                gsum[g, 3 * k + 1] -= d_xi * _sigmoid(r[3 * k + 1])
                gsum[g, 3 * k + 2] -= (1.0 + x) / (b * one_p)
            continue

        cmax = -np.inf
        for j in range(k):
            t = (yi - r[k + j]) / sig[g, j]
            tmp[j] = logw[g, j] - LOG_SQRT_2PI - lsig[g, j] - 0.5 * t * t
            if tmp[j] > cmax:
                cmax = tmp[j]
        acc = 0.0
        for j in range(k):
            tmp[j] = math.exp(tmp[j] - cmax)
            acc += tmp[j]
        loss[i] = -(cmax + math.log(acc))
        if want_grad:
            for j in range(k):
                gam = tmp[j] / acc
                t = (yi - r[k + j]) / sig[g, j]
                gsum[g, j] -= gam - wts[g, j]
                gsum[g, k + j] -= gam * t / sig[g, j]
                gsum[g, 2 * k + j] -= gam * (t * t - 1.0) / sig[g, j] * dsig[g, j]

    if want_grad and has_tail:
        for g in range(g_rows):
            if n_tail[g] > 0:
                for c in range(d_out):
                    gsum[g, c] -= n_tail[g] * mass_grad[g, c]
    return loss, gsum


@njit(cache=True)
def _gmm_tail_value(x, upper, w, mu, sig):
    acc = 0.0
    for j in range(w.size):
        z = (x - mu[j]) / sig[j]
        if upper:
            acc += w[j] * 0.5 * math.erfc(z * INV_SQRT2)
        else:
            acc += w[j] * 0.5 * math.erfc(-z * INV_SQRT2)
    return acc


@njit(cache=True)
def gmm_bisect(targets, upper, w, mu, sig, lo, hi, tol, max_iter):
    flat = targets.reshape(-1)
    out = np.empty(flat.size)
    for i in range(flat.size):
        a = lo
        b = hi
        tgt = flat[i]
        for _ in range(max_iter):
            if b - a <= tol:
                break
            mid = 0.5 * (a + b)
            val = _gmm_tail_value(mid, upper, w, mu, sig)
            if upper:
                right = val > tgt
            else:
                right = val < tgt
            if right:
                a = mid
            else:
                b = mid
        out[i] = 0.5 * (a + b)
    return out.reshape(targets.shape)
