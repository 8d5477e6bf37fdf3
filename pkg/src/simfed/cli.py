"""Command-line entry points: ``simfed run``, ``simfed preset``, ``simfed bench``.

Exit codes: 0 success; 1 usage or configuration error; 2 numeric divergence
during training; 3 strict-mode failure (an acceptance check or artifact
checksum did not hold). The ``SIMFED_THREADS`` environment variable caps
the worker threads used for repeat-parallel analyses.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .bench import format_bench, run_bench
from .config import build_dataset, build_model, parse_config
from .errors import (ConfigError, ContractError, DivergenceError,
                     NumericalError, SchemaError)
from .federation import run_training
from .metrics import RunManifest, write_metrics
from .models import save_weights
from .presets import PRESET_NAMES, run_preset
from .seeds import stream_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_STRICT = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; we reserve 2 for
    numeric divergence, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="simfed",
        description="Federated ensemble simulator with a closed-form oracle.",
        epilog="Set SIMFED_THREADS to cap repeat-level parallelism and "
               "SIMFED_BACKEND=numpy to disable the compiled kernels.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    run_p = sub.add_parser("run", help="run one training job from a config file")
    run_p.add_argument("--config", help="YAML config path (defaults apply if omitted)")
    run_p.add_argument("--algo", choices=("fed_ensemble", "fedavg", "fedprox"))
    run_p.add_argument("--k", type=int, help="number of ensemble modes")
    run_p.add_argument("--ages", type=int, help="training ages (K rounds each)")
    run_p.add_argument("--seed", type=int, help="master seed")
    run_p.add_argument("--out", help="output directory (overrides config)")
    run_p.add_argument("--strict", action="store_true",
                       help="re-verify artifact checksums after the run")
    run_p.set_defaults(func=_cmd_run)

    pre_p = sub.add_parser("preset", help="run a named published-table experiment")
    pre_p.add_argument("name", choices=PRESET_NAMES)
    pre_p.add_argument("--out", required=True, help="output directory")
    pre_p.add_argument("--seed", type=int, default=0, help="master seed")
    pre_p.add_argument("--repeats", type=int,
                       help="override Monte-Carlo repeats (statistical presets)")
    pre_p.add_argument("--strict", action="store_true",
                       help="exit 3 unless every preset check passes")
    pre_p.set_defaults(func=_cmd_preset)

    bench_p = sub.add_parser("bench", help="compare kernel backends")
    bench_p.add_argument("--ages", type=int, default=20)
    bench_p.add_argument("--runs", type=int, default=3)
    bench_p.set_defaults(func=_cmd_bench)
    return parser


def _cmd_run(args) -> int:
    overrides = {"algo": args.algo, "k": args.k, "ages": args.ages,
                 "seed": args.seed, "out": args.out}
    cfg = parse_config(args.config, overrides)
    out_dir = cfg.out or "simfed_run"
    os.makedirs(out_dir, exist_ok=True)

    labels = ("data", "model") if cfg.dataset.kind == "toy_sine" \
        else ("data", "split", "partition")
    manifest = RunManifest(
        config=cfg.to_dict(), master_seed=cfg.seed,
        seed_labels={lab: [int(e) for e in stream_seed(cfg.seed, lab).entropy]
                     for lab in labels})
    manifest.write(out_dir)

    fed, _ = build_dataset(cfg)
    model = build_model(cfg, fed)
    t0 = time.perf_counter()
    run = run_training(
        model, fed, algo=cfg.algo, n_modes=cfg.k, ages=cfg.ages,
        n_strata=cfg.strata, clients_per_stratum=cfg.clients_per_stratum,
        local_epochs=cfg.local_epochs, lr=cfg.lr,
        lr_decay_factor=cfg.lr_decay.factor,
        lr_decay_interval=cfg.lr_decay.interval, prox_mu=cfg.prox_mu,
        l2_prior=cfg.l2_prior, batch_size=cfg.batch_size,
        weighting=cfg.weighting, init=cfg.init, master_seed=cfg.seed)
    wallclock = time.perf_counter() - t0

    files = ["metrics.csv"]
    write_metrics(run.records, os.path.join(out_dir, "metrics.csv"))
    for k, w in enumerate(run.ensemble.modes):
        name = f"mode_{k}.bin"
        save_weights(os.path.join(out_dir, name), w)
        files.append(name)
    manifest.finalize(out_dir, wallclock, files)

    print(f"{out_dir}: {cfg.algo} K={cfg.k} finished {run.n_rounds} rounds "
          f"in {wallclock:.1f}s, final train loss {run.final_train_loss:.6g}")
    if args.strict:
        bad = RunManifest.read(out_dir).verify_files(out_dir)
        if bad:
            print(f"checksum mismatch: {', '.join(bad)}", file=sys.stderr)
            return EXIT_STRICT
        print("checksums verified")
    return EXIT_OK


def _cmd_preset(args) -> int:
    report = run_preset(args.name, args.out, master_seed=args.seed,
                        n_repeats=args.repeats)
    print(f"{report.name} -> {report.out_dir} ({', '.join(report.files)})")
    for check, ok in report.checks.items():
        print(f"  {'PASS' if ok else 'FAIL'}  {check}")
    if args.strict and report.passed is False:
        return EXIT_STRICT
    return EXIT_OK


def _cmd_bench(args) -> int:
    results, deviation = run_bench(ages=args.ages, runs=args.runs)
    print(format_bench(results, deviation))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, ContractError) as exc:
        print(f"simfed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NumericalError) as exc:
        print(f"simfed: numeric failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    raise SystemExit(main())
