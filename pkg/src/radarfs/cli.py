"""Command-line entry point (``radarfs``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ConsistencyViolation, InapplicableStrategy, NoApplicableStrategy

log = logging.getLogger("radarfs")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INAPPLICABLE = 3
EXIT_CONSISTENCY = 4


def _cmd_gen_trainset(args):
    from .workload import generate_training_grid, write_grid_csv

    samples = generate_training_grid()
    write_grid_csv(samples, args.out)
    print(f"{len(samples)} samples -> {args.out}")


def _grid_for(name):
    from .strategies import Preset, preset, strategy_grid

    if name == "expanded":
        return strategy_grid()
    names = [n.strip() for n in name.split(",") if n.strip()]
    if names == ["presets"]:
        names = [p.value for p in Preset]
    try:
        return [preset(n) for n in names]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown strategy set {name!r}") from None


def _cmd_label(args):
    from .harness.config import parse_size
    from .policy import Oracle, label_samples
    from .workload import read_grid_csv, write_grid_csv

    samples = read_grid_csv(args.grid)
    oracle = Oracle(_grid_for(args.strategies), parse_size(args.budget))
    out = label_samples(samples, oracle, progress=lambda i, n: log.info("labelled %d/%d", i, n))
    write_grid_csv(out, args.out)
    print(f"labelled {len(out)} samples over {len(oracle.grid)} tuples -> {args.out}")


def _train_config(path, seed):
    from dataclasses import fields

    from .harness.config import read_config
    from .policy import TrainConfig

    kw = {}
    if path:
        d = read_config(path)
        types = {f.name: f.type for f in fields(TrainConfig)}
        for k, v in d.items():
            if k not in types:
                raise ConfigError(f"unknown training key {k!r}")
            if k == "hidden":
                kw[k] = tuple(int(x) for x in v.split(","))
            elif k == "activation":
                kw[k] = v
            elif k in ("learning_rate", "init_scale", "holdout_fraction"):
                kw[k] = float(v)
            else:
                kw[k] = int(v)
    if seed is not None:
        kw["seed"] = seed
    return TrainConfig(**kw)


def _cmd_train(args):
    from .policy import save_model, train
    from .workload import read_grid_csv

    samples = read_grid_csv(args.data)
    if any(s.label is None for s in samples):
        raise ConfigError(f"{args.data} has unlabelled rows; run `label` first")
    cfg = _train_config(args.config, args.seed)
    model, report = train(None, samples, cfg)
    save_model(model, args.out)
    if args.report:
        report.write_csv(args.report)
    last = report.rows[-1]
    print(f"model -> {args.out} (loss {last['loss']:.4f}, held-out accuracy {last['heldout_acc']:.3f})")


def _cmd_predict(args):
    from .harness.config import read_config, timing_from, workload_from
    from .policy import load_model, predict_for_workload
    from .workload import HardwareContext

    d = read_config(args.workload)
    wl = workload_from(d, args.seed)
    model = load_model(args.model)
    t = predict_for_workload(model, wl, HardwareContext(timing=timing_from(d)))
    print(t)


def _cmd_simulate(args):
    from .harness.config import read_config, run_config_from
    from .harness.engine import run_simulation

    cfg = run_config_from(read_config(args.config), args.seed)
    rep = run_simulation(cfg)
    if args.out:
        rep.to_json(args.out)
    print(f"{rep.strategy}: mu={rep.mu:.6g} throughput={rep.throughput_mb_s:.4g} MB/s "
          f"files={rep.files_written} overflow={rep.overflow_events} [{rep.engine}]")


def _cmd_benchmark(args):
    from .harness.benchmark import benchmark_suite
    from .harness.config import read_config, timing_from

    timing = timing_from(read_config(args.timing)) if args.timing else None
    kw = {"timing": timing} if timing else {}
    if args.seed is not None:
        kw["seed"] = args.seed
    table = benchmark_suite(model_path=args.model, **kw)
    table.write_csv(args.out)
    for row in table.rows:
        cells = ["/" if table.mu(row, m) is None else f"{table.mu(row, m):.4g}" for m in table.methods]
        print(f"{row:34s} " + " ".join(f"{c:>10s}" for c in cells))


def _cmd_calibrate(args):
    from fractions import Fraction

    from .harness.calibrate import calibrate
    from .harness.config import timing_to, write_config

    acpa = None if args.mu_acpa.lower() == "none" else Fraction(args.mu_acpa)
    res = calibrate(Fraction(args.mu_original), acpa)
    header = f"calibrated: original-FAT mu {res.mu_original:.4f}"
    if res.mu_acpa is not None:
        header += f", ACPA mu {res.mu_acpa:.4f}"
    write_config(timing_to(res.timing), args.out, header=header)
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{header} -> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radarfs", description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="seed for random arrivals / training")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("gen-trainset", help="write the training grid CSV")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_gen_trainset)

    s = sub.add_parser("label", help="label a grid with the simulation oracle")
    s.add_argument("--grid", required=True)
    s.add_argument("--strategies", default="expanded",
                   help="'expanded', 'presets' or a comma list of preset names")
    s.add_argument("--budget", default="64MB")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_label)

    s = sub.add_parser("train", help="train the selector network")
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--report", default=None, help="per-epoch CSV")
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("predict", help="predict a strategy for a workload")
    s.add_argument("--model", required=True)
    s.add_argument("--workload", required=True)
    s.set_defaults(fn=_cmd_predict)

    s = sub.add_parser("simulate", help="run one simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=_cmd_simulate)

    s = sub.add_parser("benchmark", help="run the six-workload comparison table")
    s.add_argument("--model", required=True)
    s.add_argument("--timing", default=None, help="timing config from `calibrate`")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_benchmark)

    s = sub.add_parser("calibrate", help="solve timing parameters from target mu values")
    s.add_argument("--mu-original", default="102.2")
    s.add_argument("--mu-acpa", default="0.32", help="'none' to keep the volume capacity")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=_cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (InapplicableStrategy, NoApplicableStrategy) as e:
        print(f"inapplicable strategy: {e}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except ConsistencyViolation as e:
        print(f"consistency violation: {e}", file=sys.stderr)
        if e.dump is not None:
            dump = Path("consistency_dump.json")
            dump.write_text(json.dumps(e.dump, indent=1, default=str))
            print(f"volume state written to {dump}", file=sys.stderr)
        return EXIT_CONSISTENCY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
