import numpy as np
import pytest

from tailmdn.dist import GmmParams, SplicedMixtureParams, TailParams


def random_theta(rng, k=None, tail=True, xi_max=0.9):
    k = int(rng.integers(1, 6)) if k is None else k
    w = rng.dirichlet(np.ones(k))
    mu = rng.normal(0.0, 2.0, k)
    sig = rng.uniform(0.2, 2.0, k)
    bulk = GmmParams(w, mu, sig)
    if not tail:
        return SplicedMixtureParams(bulk)
    u = float(np.quantile(mu, 0.5) + rng.uniform(0.0, 2.5))
    return SplicedMixtureParams(bulk, TailParams(u, rng.uniform(0.2, 3.0), rng.uniform(0.0, xi_max)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def total_mass(theta, top=1 - 1e-8):
    """Quadrature of the density up to the ``top`` quantile plus the analytic remainder."""
    from scipy import integrate

    from tailmdn.dist import gmm_pdf, spliced_ccdf, spliced_pdf, spliced_quantile

    mu, sig = theta.bulk.locations, theta.bulk.scales
    u = theta.tail.threshold if theta.tail is not None else np.inf
    hi = spliced_quantile(top, theta)
    lo = float(np.min(mu - 40 * sig))
    bulk_end = min(u, hi)
    pts = [m for m in mu if lo < m < bulk_end]
    mass = integrate.quad(lambda t: gmm_pdf(t, theta.bulk), lo, bulk_end, points=pts or None,
                          limit=500, epsabs=1e-12)[0]
    if hi > u:
        # geometric segments keep each piece well resolved for heavy tails
        edges = [u]
        step = theta.tail.scale
        while edges[-1] < hi:
            edges.append(min(hi, u + step))
            step *= 2.0
        for a, b in zip(edges, edges[1:]):
            mass += integrate.quad(lambda t: spliced_pdf(t, theta), a, b, limit=200, epsabs=1e-14)[0]
    return mass + spliced_ccdf(max(hi, bulk_end), theta)


def random_problem(rng, head="gmevm", input_dim=2, batch=48, hidden=(10, 100, 100, 80), k=15):
    """Random (X, y, weights) with perturbed head outputs and no sample near a threshold."""
    from tailmdn.model import ModelConfig, PreprocessStats, forward_batch, init_weights

    cfg = ModelConfig(input_dim=input_dim, hidden_sizes=hidden, num_centers=k, head_kind=head)
    names = tuple(f"c{i}" for i in range(input_dim))
    stats = PreprocessStats(0.0, 1.0, names, (0.0,) * input_dim, (1.0,) * input_dim)
    y0 = rng.standard_t(4, size=500)
    w = init_weights(cfg, int(rng.integers(2**31)), y0, stats)
    params = [p + rng.normal(0.0, 0.15, p.shape) for p in w.params]
    w = w.with_params(params)
    X = rng.choice([0.0, 0.5, 1.0], size=(batch, input_dim)) if input_dim else np.zeros((batch, 0))
    y = rng.standard_t(4, size=batch)
    if cfg.has_tail:
        us = np.array([t.tail.threshold for t in forward_batch(X, w)])
        near = np.abs(y - us) < 1e-3
        y[near] += 1e-2
    return X, y, w


def fd_check(X, y, w, coords, h=1e-5):
    """Worst relative error between grad_nll and central differences at ``coords``.

    Relative error is |g - fd| / max(|g|, |fd|, 1e-6); the floor keeps
    vanishing coordinates from dividing by rounding noise.
    """
    from tailmdn.model import grad_nll, nll

    _, grads = grad_nll(X, y, w)
    params = [p.copy() for p in w.params]
    worst = 0.0
    for layer, flat in coords:
        orig = params[layer].flat[flat]
        params[layer].flat[flat] = orig + h
        up = nll(X, y, w.with_params(params))
        params[layer].flat[flat] = orig - h
        down = nll(X, y, w.with_params(params))
        params[layer].flat[flat] = orig
        fd = (up - down) / (2 * h)
        g = grads[layer].flat[flat]
        worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-6))
    return worst


def random_coords(rng, w, n):
    params = w.params
    sizes = np.array([p.size for p in params], dtype=float)
    # oversample the small head layers so tail outputs are always exercised
    layers = rng.choice(len(params), size=n, p=np.sqrt(sizes) / np.sqrt(sizes).sum())
    return [(int(i), int(rng.integers(params[i].size))) for i in layers]


# -- acceptance bookkeeping ------------------------------------------------------

ACCEPTANCE = {}


def record(number, title, ok, detail):
    ACCEPTANCE[number] = (title, bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")


@pytest.fixture(scope="session")
def benchmark_data():
    from tailmdn import datasets as ds
    return ds.generate_synthetic(ds.default_spec("none", n=100_000, seed=1))


@pytest.fixture(scope="session")
def benchmark_models(benchmark_data):
    """GMEVM and GMM trained with default settings on 1e5 benchmark samples."""
    from tailmdn.train import TrainConfig, config_for, train
    return {head: train(benchmark_data, config_for(benchmark_data, head), TrainConfig(seed=3))
            for head in ("gmevm", "gmm")}
