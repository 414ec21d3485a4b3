"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so ``TAILMDN_BACKEND`` does not
matter here. Compilation happens in a warm-up call outside the timings.
"""

import argparse
import timeit

import numpy as np

from tailmdn._kernels import numba_impl, numpy_impl


def cases(rng):
    k = 15
    raw = rng.normal(0.0, 1.0, (3, 3 * k + 3))
    group = rng.integers(0, 3, 12_500)
    y = rng.standard_t(4, 12_500)
    w = rng.dirichlet(np.ones(k))
    mu = rng.normal(0.0, 2.0, k)
    sig = rng.uniform(0.3, 2.0, k)
    q = 10.0 ** rng.uniform(-8, np.log10(0.5), 100_000)
    z = rng.normal(0.0, 3.0, (500, 100))
    return {
        "head_nll gmevm, 12500 samples, grad": lambda m: m.head_nll(raw, group, y, k, True, 1e-3, 1e-3, True),
        "head_nll gmm, 12500 samples, grad": lambda m: m.head_nll(raw[:, :3 * k], group, y, k, False,
                                                                  1e-3, 1e-3, True),
        "softplus_grad 500x100": lambda m: m.softplus_grad(z),
        "gmm_bisect 1e5 levels": lambda m: m.gmm_bisect(q, True, w, mu, sig, -100.0, 100.0, 1e-12, 200),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if numba_impl is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        fn(numba_impl)  # compile
        times = []
        for mod in (numpy_impl, numba_impl):
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times.append(best * 1e3)
        print(f"{name:40s} {times[0]:10.3f} {times[1]:10.3f} {times[0] / times[1]:8.1f}x")


if __name__ == "__main__":
    main()
