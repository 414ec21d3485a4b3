import json
import subprocess
import sys

import pytest

from tailmdn import datasets as ds
from tailmdn.cli import main
from tailmdn.errors import TrainingAborted
from tailmdn.evaluate import predict_ccdf, read_report
from tailmdn.model import load

FAST = "4:1e-2,2:1e-3"
SMALL_MODEL = {"model": {"hidden_sizes": [6, 6], "num_centers": 3}}


@pytest.fixture
def data(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["generate", "--family", "mcs", "--n", "3000", "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL_MODEL))
    return p


def _train(data, out, *extra, cfg=None):
    argv = ["train", str(data), "--rounds", FAST, "--ensemble", "2", "--seed", "3", "--out", str(out)]
    if cfg is not None:
        argv += ["--config", str(cfg)]
    return main(argv + list(extra))


def test_generate_writes_csv_and_sidecar(tmp_path, data):
    assert data.read_text().splitlines()[0] == "latency_ms,mcs"
    side = tmp_path / "d.truth.json"
    spec = ds.load_spec(side)
    counts = {c: len(s) for c, s in ds.load_csv(data).groups()}
    assert counts == {(g.condition[0],): g.n for g in spec.groups}


def test_generate_from_spec_file_is_idempotent(tmp_path):
    spec = ds.SyntheticSpec((), (ds.SyntheticGroup((), 50, ds.benchmark_theta()),), seed=2)
    ds.save_spec(spec, tmp_path / "spec.json")
    for name in ("a", "b"):
        assert main(["generate", "--config", str(tmp_path / "spec.json"), "--out", str(tmp_path / f"{name}.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 51


def test_generate_errors(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{")
    assert main(["generate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["generate", "--config", "a.json", "--family", "mcs", "--out", "x.csv"]) == 2
    assert "error" in capsys.readouterr().err


def test_train_outputs(tmp_path, data, small_cfg):
    out = tmp_path / "run"
    assert _train(data, out, "--train-fraction", "0.8", cfg=small_cfg) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["loss_00.csv", "loss_01.csv", "model_00.json", "model_01.json", "test.csv",
                     "train.csv", "train_config.json"]
    assert (out / "loss_00.csv").read_text().splitlines()[0] == "epoch,round,lr,mean_nll"
    assert len((out / "loss_00.csv").read_text().splitlines()) == 7
    assert len(ds.load_csv(out / "train.csv")) == 7200


def test_train_default_ensemble_size_and_gmm_head(tmp_path, data, small_cfg):
    out = tmp_path / "g"
    assert main(["train", str(data), "--rounds", "1:1e-2", "--head", "gmm", "--config", str(small_cfg),
                 "--out", str(out)]) == 0
    models = sorted(out.glob("model_*.json"))
    assert len(models) == 10
    doc = json.loads(models[0].read_text())
    assert doc["head_kind"] == "gmm" and doc["config"]["head_kind"] == "gmm"


def test_train_default_head_reports_48_and_gmm_45(tmp_path, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"rounds": [[1, 0.01]], "ensemble_size": 1}}))
    for head, dim in (("gmevm", 48), ("gmm", 45)):
        assert main(["train", str(data), "--config", str(cfg), "--head", head, "--out", str(tmp_path / head)]) == 0
        assert json.loads((tmp_path / head / "model_00.json").read_text())["config"]["output_dim"] == dim


def test_config_precedence(tmp_path, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"hidden_sizes": [4], "num_centers": 2, "head_kind": "gmm"},
                               "train": {"rounds": [[1, 0.01]], "ensemble_size": 1, "seed": 8}}))
    assert main(["train", str(data), "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    echo = json.loads((tmp_path / "o" / "train_config.json").read_text())
    assert echo["train"]["seed"] == 9  # flag beats file
    assert echo["model"]["head_kind"] == "gmm" and echo["model"]["hidden_sizes"] == [4]  # file beats default
    assert echo["train"]["batch_fraction"] == 0.125  # default


def test_config_errors(tmp_path, data):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"optimizer": {}}))
    assert main(["train", str(data), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"train": {"rounds": [[1, 1e-4], [1, 1e-2]]}}))
    assert main(["train", str(data), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit):
        main(["train", str(data), "--jobs", "0", "--out", str(tmp_path / "o")])
    with pytest.raises(SystemExit):
        main(["train", str(data), "--rounds", "ten", "--out", str(tmp_path / "o")])


def test_train_is_byte_reproducible(tmp_path, data, small_cfg):
    assert _train(data, tmp_path / "a", cfg=small_cfg) == 0
    assert _train(data, tmp_path / "b", cfg=small_cfg) == 0
    for name in ("model_00.json", "model_01.json", "loss_01.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_abort_keeps_checkpoint(tmp_path, data, small_cfg, monkeypatch):
    from tailmdn import train as train_mod
    real = train_mod.train

    def abort_member_one(dataset, mc, tc, seed=None, callback=None):
        if seed == train_mod.member_seed(tc.seed, 1):
            res = real(dataset, mc, tc, seed=seed)
            raise TrainingAborted("diverged", last_good=res.weights)
        return real(dataset, mc, tc, seed=seed)

    monkeypatch.setattr(train_mod, "train", abort_member_one)
    out = tmp_path / "run"
    assert _train(data, out, cfg=small_cfg) == 1
    assert (out / "model_00.json").exists() and not (out / "model_01.json").exists()
    load(out / "checkpoint_01.json")


def test_evaluate_against_sidecar(tmp_path, data, small_cfg):
    _train(data, tmp_path / "run", cfg=small_cfg)
    models = [str(p) for p in sorted((tmp_path / "run").glob("model_*.json"))]
    assert main(["evaluate", *models, "--truth", str(tmp_path / "d.truth.json"), "--out", str(tmp_path / "rep")]) == 0
    doc = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert len(doc["conditions"]) == 3 and len(doc["seeds"]) == 2
    for c in doc["conditions"]:
        last = c["metrics"]["band_avg"][-1]
        assert last["level"] == 1e-5 and last["available"]
        b = c["band"]
        assert all(lo <= av <= hi for lo, av, hi in zip(b["min"], b["avg"], b["max"]))
    read_report(tmp_path / "rep" / "report.json")


def test_evaluate_against_empirical(tmp_path, small_cfg):
    data = tmp_path / "d.csv"
    main(["generate", "--family", "none", "--n", "10000", "--seed", "4", "--out", str(data)])
    _train(data, tmp_path / "run", cfg=small_cfg)
    assert main(["evaluate", str(tmp_path / "run" / "model_00.json"), "--data", str(data),
                 "--out", str(tmp_path / "rep")]) == 0
    doc = json.loads((tmp_path / "rep" / "report.json").read_text())
    avail = {m["level"]: m["available"] for m in doc["conditions"][0]["metrics"]["band_avg"]}
    assert avail == {1e-2: True, 1e-3: True, 1e-4: True, 1e-5: False}


def test_evaluate_schema_mismatch(tmp_path, data, small_cfg):
    _train(data, tmp_path / "run", cfg=small_cfg)
    other = tmp_path / "o.csv"
    main(["generate", "--family", "length", "--n", "10", "--out", str(other)])
    rc = main(["evaluate", str(tmp_path / "run" / "model_00.json"), "--truth", str(tmp_path / "o.truth.json"),
               "--out", str(tmp_path / "rep")])
    assert rc == 2
    assert main(["evaluate", str(tmp_path / "run" / "model_00.json"), "--out", str(tmp_path / "rep")]) == 2


def test_predict(tmp_path, data, small_cfg, capsys):
    _train(data, tmp_path / "run", cfg=small_cfg)
    model = str(tmp_path / "run" / "model_00.json")
    capsys.readouterr()
    assert main(["predict", model, "--condition", "mcs=5", "--level", "0.5"]) == 0
    y = float(capsys.readouterr().out)
    assert main(["predict", model, "--condition", "mcs=5", "--latency", repr(y)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.5, abs=1e-9)
    assert main(["predict", model, "--condition", "mcs=5", "--latency", "12.0"]) == 0
    p = float(capsys.readouterr().out)
    assert p == predict_ccdf(load(model), {"mcs": 5.0}, [12.0]).probs[0]
    assert main(["predict", model, "--condition", "sinr=5", "--level", "0.5"]) == 2
    assert main(["predict", model, "--condition", "mcs=5"]) == 2
    assert main(["predict", model, "--condition", "mcs=5", "--level", "1.5"]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "tailmdn", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "generate" in r.stdout
