"""Command-line interface.

Subcommands: ``run`` (one config), ``sweep`` (directory of configs),
``metrics`` (recompute from a trace CSV), ``compare`` (metrics files),
``bench`` (kernel/episode throughput, numba vs numpy backends).
Exit codes: 0 success, 2 config error, 3 divergence.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import subprocess
import sys
import time

import numpy as np

from .errors import ConfigError
from .harness import (
    EXIT_CONFIG,
    EXIT_OK,
    MetricsRecord,
    compare_runs,
    compute_metrics,
    parse_config,
    render_comparison,
    run_matrix,
)


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = args.out if args.out is not None else (cfg.output or "out")
    return run_matrix([cfg], out, jobs=args.jobs)


def _cmd_sweep(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.configs, "*.json")))
    if not paths:
        raise ConfigError(f"no *.json configs found in {args.configs}")
    configs = [parse_config(p) for p in paths]
    return run_matrix(configs, args.out, jobs=args.jobs)


def _cmd_metrics(args) -> int:
    from .sim import read_trace_csv

    trace = read_trace_csv(args.trace)
    rec = compute_metrics(trace, settle_time=args.settle)
    print(json.dumps(rec.to_dict(), indent=2))
    return EXIT_OK


def _cmd_compare(args) -> int:
    entries = []
    for path in args.metrics:
        with open(path, "r", encoding="utf-8") as fh:
            m = json.load(fh)
        label = os.path.basename(os.path.dirname(path)) or path
        entries.append(
            (
                label,
                MetricsRecord(
                    tip_mae=tuple(m["tip_mae"]),
                    residual_mae=tuple(m["residual_mae"]),
                    residual_norm_mean=m["residual_norm_mean"],
                    mean_abs_torque=m["mean_abs_torque"],
                    mean_abs_torque_per_joint=tuple(m["mean_abs_torque_per_joint"]),
                    peak_torque=m["peak_torque"],
                    peak_total_torque=m["peak_total_torque"],
                    total_torque_consumption=m["total_torque_consumption"],
                    smoothness=m["smoothness"],
                    settle_time=m["settle_time"],
                ),
            )
        )
    table = compare_runs(entries)
    print(render_comparison(table))
    return EXIT_OK


def _bench_payload(ticks: int) -> dict:
    """Time the hot kernels and a short closed-loop episode on this backend."""
    from . import kernels
    from .backend import backend_name
    from .controllers import GainSet
    from .robot import DEFAULT_HOME, load_default_model
    from .sim import ControlSetup, Scenario, SimConfig, run_episode

    model = load_default_model()
    q = DEFAULT_HOME.copy()
    qd = 0.1 * np.ones(model.n)

    def timeit(fn, repeat):
        fn()  # warm-up (includes JIT compilation on the numba backend)
        start = time.perf_counter()
        for _ in range(repeat):
            fn()
        return (time.perf_counter() - start) / repeat * 1e6  # microseconds

    kernel_times = {
        "fk_jac": timeit(lambda: kernels.fk_jac(model.dh, model.flange, q, model.l_tool), 2000),
        "crba": timeit(lambda: kernels.crba(model.dh, q, model.masses, model.coms, model.inertias), 2000),
        "rnea": timeit(
            lambda: kernels.rnea(
                model.dh, q, qd, np.zeros(model.n), model.gravity,
                model.masses, model.coms, model.inertias,
            ),
            2000,
        ),
    }

    control = ControlSetup(gains=GainSet.from_proportional(n_joints=model.n))
    scenario = Scenario(alpha=0.5)
    duration = ticks * 1e-3
    sim = SimConfig(dt=1e-3, duration=duration)
    run_episode(model, control, scenario, sim)  # warm-up
    start = time.perf_counter()
    trace = run_episode(model, control, scenario, sim)
    elapsed = time.perf_counter() - start
    return {
        "backend": backend_name(),
        "kernel_us": kernel_times,
        "episode_ticks": trace.filled,
        "episode_seconds": elapsed,
        "ticks_per_second": trace.filled / elapsed,
    }


def _cmd_bench(args) -> int:
    if args.json:
        print(json.dumps(_bench_payload(args.ticks)))
        return EXIT_OK

    payloads = [_bench_payload(args.ticks)]
    if args.both:
        from .backend import ENV_FLAG, JIT_ENABLED

        other = "0" if JIT_ENABLED else "1"
        env = dict(os.environ, **{ENV_FLAG: other})
        out = subprocess.run(
            [sys.executable, "-m", "rcmsim.cli", "bench", "--json", "--ticks", str(args.ticks)],
            env=env,
            capture_output=True,
            text=True,
            check=True,
        )
        payloads.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"{'backend':<8} {'fk_jac us':>10} {'crba us':>10} {'rnea us':>10} "
          f"{'episode ticks/s':>16}")
    for p in payloads:
        k = p["kernel_us"]
        print(f"{p['backend']:<8} {k['fk_jac']:>10.2f} {k['crba']:>10.2f} "
              f"{k['rnea']:>10.2f} {p['ticks_per_second']:>16.0f}")
    if len(payloads) == 2:
        speedup = payloads[0]["ticks_per_second"] / payloads[1]["ticks_per_second"]
        a, b = payloads[0]["backend"], payloads[1]["backend"]
        print(f"\n{a} runs the closed loop {speedup:.1f}x the speed of {b}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcmsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one run config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None,
                       help="output directory (default: config 'output' or ./out)")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="execute every *.json config in a directory")
    p_sweep.add_argument("--configs", required=True)
    p_sweep.add_argument("--out", default="out")
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_metrics = sub.add_parser("metrics", help="recompute metrics from a trace CSV")
    p_metrics.add_argument("--trace", required=True)
    p_metrics.add_argument("--settle", type=float, default=1.0)
    p_metrics.set_defaults(func=_cmd_metrics)

    p_cmp = sub.add_parser("compare", help="tabulate metrics files against the first")
    p_cmp.add_argument("--metrics", nargs="+", required=True)
    p_cmp.set_defaults(func=_cmd_compare)

    p_bench = sub.add_parser("bench", help="kernel and episode throughput benchmark")
    p_bench.add_argument("--ticks", type=int, default=2000)
    p_bench.add_argument("--both", action="store_true",
                         help="also benchmark the other backend in a subprocess")
    p_bench.add_argument("--json", action="store_true", help=argparse.SUPPRESS)
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
