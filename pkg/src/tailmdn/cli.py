"""Command line: ``tailmdn generate | train | evaluate | predict``.

Settings resolve as flag > ``--config`` file > built-in default. All
randomness comes from ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import datasets as ds
from .errors import ConfigError, FormatError, IngestionError, ParameterError, TrainingAborted
from .evaluate import DEFAULT_LEVELS, emit_report, evaluate, predict_ccdf, predict_quantile, read_report
from .model import ModelConfig, load, save
from .train import TrainConfig, train_ensemble, write_loss_trace

log = logging.getLogger("tailmdn")

USER_ERRORS = (ConfigError, FormatError, IngestionError, ParameterError, ValueError, KeyError, OSError)


class CliError(Exception):
    pass


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from None


def _parse_rounds(text):
    rounds = []
    for part in text.split(","):
        try:
            epochs, lr = part.split(":")
            rounds.append((int(epochs), float(lr)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad round {part!r}; expected EPOCHS:LR") from None
    return rounds


def _parse_condition(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(f"bad condition {item!r}; expected NAME=VALUE")
        name, value = item.split("=", 1)
        if name in out:
            raise CliError(f"condition {name!r} given twice")
        try:
            out[name] = float(value)
        except ValueError:
            raise CliError(f"condition {name!r}: {value!r} is not a number") from None
    return out


# -- generate -----------------------------------------------------------------

def cmd_generate(args):
    if args.config and args.family:
        raise CliError("--config and --family are mutually exclusive")
    if args.config:
        spec = ds.load_spec(args.config)
        if args.seed is not None:
            spec = ds.SyntheticSpec(spec.condition_names, spec.groups, args.seed, spec.profile)
    else:
        spec = ds.default_spec(args.family or "none", n=args.n, seed=args.seed or 0)
    data = ds.generate_synthetic(spec)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    ds.write_csv(data, args.out)
    sidecar = truth_path(args.out)
    ds.save_spec(spec, sidecar)
    ds.load_csv(args.out)  # validate what was written
    print(f"wrote {len(data)} rows to {args.out} and ground truth to {sidecar}")


def truth_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + ".truth.json"


# -- train --------------------------------------------------------------------

def _train_settings(args, n_conditions):
    file_cfg = _read_json(args.config) if args.config else {}
    unknown = set(file_cfg) - {"model", "train"}
    if unknown:
        raise CliError(f"config file has unknown sections {sorted(unknown)}")
    model_d = dict(file_cfg.get("model", {}))
    train_d = dict(file_cfg.get("train", {}))
    if args.head is not None:
        model_d["head_kind"] = args.head
    model_d.setdefault("head_kind", "gmevm")
    model_d["input_dim"] = n_conditions
    for flag, key in ((args.seed, "seed"), (args.noise_std_ms, "noise_std_ms"),
                      (args.ensemble, "ensemble_size"), (args.rounds, "rounds"),
                      (args.noise_mode, "noise_mode")):
        if flag is not None:
            train_d[key] = flag
    return ModelConfig(**model_d), TrainConfig.from_dict(train_d)


def cmd_train(args):
    data = ds.load_csv(args.data, args.schema.split(",") if args.schema else None)
    mcfg, tcfg = _train_settings(args, len(data.condition_names))
    os.makedirs(args.out, exist_ok=True)
    if args.train_fraction is not None:
        train_set, test_set = ds.split(data, args.train_fraction, tcfg.seed)
        ds.write_csv(train_set, os.path.join(args.out, "train.csv"))
        ds.write_csv(test_set, os.path.join(args.out, "test.csv"))
    else:
        train_set = data
    with open(os.path.join(args.out, "train_config.json"), "w", encoding="utf-8") as fh:
        json.dump({"model": mcfg.to_dict(), "train": tcfg.to_dict(), "data": os.path.basename(args.data)},
                  fh, indent=1)
        fh.write("\n")
    log.info("training %d member(s) on %d samples, %d epochs each",
             tcfg.ensemble_size, len(train_set), tcfg.total_epochs)
    result = train_ensemble(train_set, mcfg, tcfg, jobs=args.jobs)
    for i, member in zip(result.indices, result.members):
        path = os.path.join(args.out, f"model_{i:02d}.json")
        save(member.weights, path)
        write_loss_trace(member.trace, os.path.join(args.out, f"loss_{i:02d}.csv"))
        load(path)  # validate what was written
    if result.failures:
        for index, seed, message in result.failures:
            print(f"member {index} (seed {seed}) aborted: {message}", file=sys.stderr)
            if index in result.checkpoints:
                ckpt = os.path.join(args.out, f"checkpoint_{index:02d}.json")
                save(result.checkpoints[index], ckpt)
                print(f"last good parameters saved to {ckpt}", file=sys.stderr)
        return 1
    print(f"wrote {len(result.members)} model(s) to {args.out}")
    return 0


# -- evaluate -----------------------------------------------------------------

def cmd_evaluate(args):
    if bool(args.data) == bool(args.truth):
        raise CliError("pass exactly one of --data or --truth")
    models = [load(p) for p in args.models]
    levels = tuple(float(v) for v in args.levels.split(",")) if args.levels else DEFAULT_LEVELS
    if args.data:
        schema = list(models[0].normalization.condition_names)
        report = evaluate(models, dataset=ds.load_csv(args.data, schema), levels=levels,
                          config={"models": args.models, "data": args.data})
    else:
        report = evaluate(models, spec=ds.load_spec(args.truth), levels=levels,
                          config={"models": args.models, "truth": args.truth})
    path = emit_report(report, args.out)
    read_report(path)  # validate what was written
    print(f"wrote {path}")


# -- predict ------------------------------------------------------------------

def cmd_predict(args):
    if (args.latency is None) == (args.level is None):
        raise CliError("pass exactly one of --latency or --level")
    model = load(args.model)
    cond = _parse_condition(args.condition)
    if args.latency is not None:
        curve = predict_ccdf(model, cond, [args.latency])
        print(repr(float(curve.probs[0])))
    else:
        if not 0.0 < args.level < 1.0:
            raise CliError("--level must lie strictly between 0 and 1")
        print(repr(predict_quantile(model, cond, args.level)))


def build_parser():
    p = argparse.ArgumentParser(prog="tailmdn", description="Conditional latency tail prediction with MDNs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a synthetic dataset with known ground truth")
    g.add_argument("--config", help="synthetic spec JSON")
    g.add_argument("--family", choices=["none", "length", "mcs"], help="built-in spec instead of --config")
    g.add_argument("--n", type=int, default=10000, help="samples per condition for --family")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="CSV path; ground truth goes to <out>.truth.json")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an ensemble of MDNs")
    t.add_argument("data", help="latency CSV")
    t.add_argument("--config", help="JSON with optional 'model' and 'train' sections")
    t.add_argument("--schema", help="comma separated condition columns (default: all)")
    t.add_argument("--seed", type=int)
    t.add_argument("--head", choices=["gmm", "gmevm"])
    t.add_argument("--noise-std-ms", type=float, dest="noise_std_ms")
    t.add_argument("--noise-mode", choices=["fixed", "per_epoch"], dest="noise_mode")
    t.add_argument("--ensemble", type=int)
    t.add_argument("--rounds", type=_parse_rounds, help="e.g. 200:1e-2,200:1e-3")
    t.add_argument("--train-fraction", type=float, dest="train_fraction")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="compare models against empirical or analytic truth")
    e.add_argument("models", nargs="+")
    e.add_argument("--data", help="held-out latency CSV (empirical truth)")
    e.add_argument("--truth", help="ground-truth sidecar JSON (analytic truth)")
    e.add_argument("--levels", help="comma separated exceedance levels")
    e.add_argument("--out", required=True, help="report directory")
    e.set_defaults(func=cmd_evaluate)

    q = sub.add_parser("predict", help="P[Y > y | x] or the latency at a reliability level")
    q.add_argument("model")
    q.add_argument("--condition", action="append", metavar="NAME=VALUE")
    q.add_argument("--latency", type=float, help="latency in ms")
    q.add_argument("--level", type=float, help="reliability level, e.g. 0.99999")
    q.set_defaults(func=cmd_predict)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        rc = args.func(args)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CliError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
