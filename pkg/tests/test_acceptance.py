"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the "acceptance
criteria" section of the pytest summary.
"""

import hashlib
import math
import time

import numpy as np

from conftest import fd_check, random_coords, random_problem, random_theta, record, total_mass
from tailmdn import datasets as ds
from tailmdn.cli import main
from tailmdn.dist import spliced_ccdf, spliced_isf, spliced_quantile, spliced_sample
from tailmdn.evaluate import emit_report, evaluate, predict_ccdf, predict_quantile, read_report
from tailmdn.model import ModelConfig, forward_raw, init_weights
from tailmdn.train import TrainConfig, _streams, config_for, preprocess, train, train_ensemble

BENCH = ds.benchmark_theta()


def test_01_gradient_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, coords = {}, 0
    for head in ("gmevm", "gmm"):
        worst[head] = 0.0
        for _ in range(20):
            X, y, w = random_problem(rng, head)
            picks = random_coords(rng, w, 10)
            coords += len(picks)
            worst[head] = max(worst[head], fd_check(X, y, w, picks, h=1e-5))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    record(1, "gradient vs finite differences", ok,
           f"{coords} coords, worst rel err gmevm {worst['gmevm']:.2e}, gmm {worst['gmm']:.2e}, {elapsed:.1f}s")
    assert ok


def test_02_density_validity():
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    worst, monotone = 0.0, True
    for _ in range(100):
        theta = random_theta(rng, xi_max=0.9)
        worst = max(worst, abs(total_mass(theta) - 1.0))
        lo, hi = spliced_quantile(1e-9, theta), spliced_isf(1e-9, theta)
        c = spliced_ccdf(np.linspace(lo, hi, 10_000), theta)
        monotone &= bool(np.all(np.diff(c) <= 0))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and monotone and elapsed < 60
    record(2, "density validity", ok, f"max |mass - 1| = {worst:.2e}, ccdf monotone: {monotone}, {elapsed:.1f}s")
    assert ok


def test_03_quantile_ccdf_consistency():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(50):
        theta = random_theta(rng)
        for q in (1e-2, 1e-4, 1e-6):
            worst = max(worst, abs(spliced_ccdf(spliced_quantile(1 - q, theta), theta) - q))
    ok = worst <= 1e-9
    record(3, "quantile/ccdf consistency", ok, f"max error {worst:.2e} over 50 thetas x 3 levels")
    assert ok


def _log10_error(weights, q, theta=BENCH):
    y = spliced_isf(q, theta)
    return float(np.log10(predict_ccdf(weights, (), [y]).probs[0] / spliced_ccdf(y, theta)))


def test_04_tail_recovery(benchmark_models):
    gmevm = {q: _log10_error(benchmark_models["gmevm"].weights, q) for q in (1e-2, 1e-3, 1e-4)}
    gmm = _log10_error(benchmark_models["gmm"].weights, 1e-5)
    ok = all(abs(e) <= 0.5 for e in gmevm.values()) and gmm <= -1.0
    detail = ", ".join(f"gmevm@{q:g} {e:+.3f}" for q, e in gmevm.items()) + f", gmm@1e-05 {gmm:+.3f}"
    record(4, "tail recovery gmevm vs gmm", ok, detail)
    assert ok


def test_05_sample_size_sensitivity(benchmark_data):
    sizes = (1_000, 10_000, 100_000)
    errors = {n: [] for n in sizes}
    for rep in range(5):
        full = benchmark_data if rep == 0 else ds.generate_synthetic(ds.default_spec("none", n=100_000,
                                                                                     seed=500 + rep))
        for n in sizes:
            sub = full.subset(np.arange(n))
            res = train(sub, config_for(sub, "gmevm"), TrainConfig(seed=50 + rep))
            errors[n].append(abs(_log10_error(res.weights, 1e-3)))
    mean = {n: float(np.mean(v)) for n, v in errors.items()}
    ok = mean[100_000] <= mean[1_000]
    detail = ", ".join(f"n={n:g}: mean |err| {mean[n]:.3f}" for n in sizes)
    detail += f"; per rep 1e5 <= 1e3 in {sum(a <= b for a, b in zip(errors[100_000], errors[1_000]))}/5"
    record(5, "sample-size sensitivity", ok, detail)
    assert ok


def test_06_conditional_ordering():
    base = ds.default_spec("length", n=5_000)
    truth = [spliced_quantile(1 - 1e-3, g.theta) for g in base.groups]
    truth_sign = np.sign(np.diff(truth))
    assert abs(truth_sign.sum()) == len(truth) - 1  # generator is strictly monotone
    hits = 0
    for s in range(5):
        spec = ds.SyntheticSpec(base.condition_names, base.groups, seed=600 + s)
        data = ds.generate_synthetic(spec)
        res = train(data, config_for(data, "gmevm"), TrainConfig(seed=60 + s))
        pred = [predict_quantile(res.weights, [g.condition[0]], 1 - 1e-3) for g in base.groups]
        hits += bool(np.all(np.sign(np.diff(pred)) == truth_sign))
    ok = hits >= 4
    record(6, "conditional ordering", ok, f"ordering matches generator for {hits}/5 seeds")
    assert ok


def test_07_ensemble_protocol(tmp_path):
    held_out = ds.Dataset(spliced_sample(1_000_000, BENCH, 7000), np.empty((1_000_000, 0)))
    covered, ordered, worst = 0, True, []
    for rep in range(5):
        data = ds.generate_synthetic(ds.default_spec("none", n=10_000, seed=700 + rep))
        result = train_ensemble(data, config_for(data), TrainConfig(seed=70 + rep))
        assert result.ok and len(result.members) == 10
        report = evaluate([m.weights for m in result.members], dataset=held_out)
        back = read_report(emit_report(report, tmp_path / f"rep{rep}"))
        cond = back.conditions[0]
        lo, avg, hi = cond.band
        ordered &= bool(np.all(lo.probs <= avg.probs) and np.all(avg.probs <= hi.probs))
        truth = cond.truth.probs
        keep = truth >= 1e-3
        outside = keep & ((truth < lo.probs) | (truth > hi.probs))
        covered += not outside.any()
        gap = np.maximum(lo.probs - truth, truth - hi.probs)[keep] / truth[keep]
        worst.append(float(gap.max()))
    ok = ordered and covered >= 4
    record(7, "ensemble protocol", ok,
           f"bands ordered: {ordered}; truth inside [min, max] at all levels >= 1e-3 in {covered}/5 reps "
           f"(largest relative miss per rep {', '.join(f'{g:.3f}' for g in worst)})")
    assert ok


def test_08_noise_plumbing(tmp_path):
    n = 100_000
    data = ds.generate_synthetic(ds.default_spec("none", n=n, seed=8))
    clean = data.latency.copy()
    normalized, stats = preprocess(data, noise_std_ms=1.0, seed=80)
    noised = stats.denormalize_latency(normalized.y)
    delta = np.var(noised, ddof=1) - np.var(clean, ddof=1)
    se = math.sqrt(2.0 / n + 4.0 * np.var(clean) / n)
    variance_ok = abs(delta - 1.0) <= 3 * se and np.array_equal(data.latency, clean)

    # the trainer sees the same noised sample and leaves the dataset alone
    tc = TrainConfig(rounds=((1, 1e-2),), noise_std_ms=1.0, seed=81)
    small = data.subset(np.arange(2_000))
    res = train(small, config_for(small), tc)
    _, expected = preprocess(small, 1.0, rng=_streams(81)[2])
    trainer_ok = (res.weights.normalization.latency_mean == expected.latency_mean
                  != float(np.mean(small.latency)))

    # held-out file written by the CLI is byte-identical to a noise-free split
    src = tmp_path / "all.csv"
    ds.write_csv(small, src)
    digest = hashlib.sha256(src.read_bytes()).hexdigest()
    rc = main(["train", str(src), "--noise-std-ms", "1", "--train-fraction", "0.8", "--seed", "9",
               "--rounds", "1:1e-2", "--ensemble", "1", "--out", str(tmp_path / "run")])
    _, test_ref = ds.split(ds.load_csv(src), 0.8, 9)
    ds.write_csv(test_ref, tmp_path / "ref.csv")
    eval_ok = (rc == 0 and (tmp_path / "run" / "test.csv").read_bytes() == (tmp_path / "ref.csv").read_bytes()
               and hashlib.sha256(src.read_bytes()).hexdigest() == digest)
    ok = variance_ok and trainer_ok and eval_ok
    record(8, "noise regularization plumbing", ok,
           f"variance gain {delta:.4f} ms^2 (3 SE = {3 * se:.4f}), trainer stream ok: {trainer_ok}, "
           f"evaluation data byte-identical: {eval_ok}")
    assert ok


def test_09_determinism(tmp_path):
    data = tmp_path / "d.csv"
    assert main(["generate", "--family", "mcs", "--n", "1000", "--seed", "9", "--out", str(data)]) == 0
    common = ["train", str(data), "--seed", "11", "--ensemble", "4", "--rounds", "20:1e-2,10:1e-3"]
    runs = {}
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "4")):
        assert main(common + ["--jobs", jobs, "--out", str(tmp_path / name)]) == 0
        runs[name] = {p.name: p.read_bytes() for p in sorted((tmp_path / name).glob("model_*.json"))}
    sequential = runs["a"] == runs["b"]
    parallel = runs["a"] == runs["c"]
    distinct = len(set(runs["a"].values())) == 4
    ok = sequential and parallel and distinct and len(runs["a"]) == 4
    record(9, "determinism", ok, f"rerun identical: {sequential}, --jobs 4 == --jobs 1: {parallel}, "
                                 f"{len(runs['a'])} distinct members: {distinct}")
    assert ok


def test_10_architecture_conformance(monkeypatch):
    dims = {}
    for head in ("gmevm", "gmm"):
        cfg = ModelConfig(input_dim=1, head_kind=head)
        w = init_weights(cfg, 0, normalization=_one_condition_stats())
        dims[head] = forward_raw(np.zeros((1, 1)), w).shape[1]
        assert cfg.hidden_sizes == (10, 100, 100, 80) and cfg.num_centers == 15

    from tailmdn import train as train_mod
    sizes = []
    real = train_mod.grad_nll
    monkeypatch.setattr(train_mod, "grad_nll", lambda X, y, w: (sizes.append(y.size), real(X, y, w))[1])
    n = 83
    data = ds.generate_synthetic(ds.default_spec("none", n=n, seed=10))
    res = train(data, config_for(data), TrainConfig(seed=1))
    stages = sorted({(r, lr) for _, r, lr, _ in res.trace})
    per_stage = [sum(1 for t in res.trace if t[1] == r) for r, _ in stages]
    batch = math.ceil(n / 8)
    epoch_batches = sizes[:8]
    ok = (dims == {"gmevm": 48, "gmm": 45} and len(res.trace) == 800 and per_stage == [200] * 4
          and [lr for _, lr in stages] == [1e-2, 1e-3, 1e-4, 1e-5]
          and epoch_batches == [batch] * 7 + [n - 7 * batch] and len(sizes) == 800 * 8)
    record(10, "architecture conformance", ok,
           f"raw outputs {dims}, {len(res.trace)} epochs in stages {per_stage}, batch {batch} for N={n}")
    assert ok


def _one_condition_stats():
    from tailmdn.model import PreprocessStats
    return PreprocessStats(0.0, 1.0, ("c",), (0.0,), (1.0,))
