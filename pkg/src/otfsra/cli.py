"""Command-line entry points: Monte-Carlo runs, the SISO oracle check,
and benchmarks (algorithm scaling and kernel backends)."""

import argparse
import dataclasses
import math
import sys
import time

import numpy as np
import yaml

from . import kernels
from .channel import ChannelConfig
from .frame import OtfsGrid, build_pilot_operator, generate_pilots
from .gamp import GampConfig, run_convsbl_gamp
from .harness import (ExperimentConfig, aggregate, desk_profile,
                      export_results, run_experiment, table1_profile)
from .measurement import siso_delay_doppler, siso_time_domain
from .sbl import TdsblConfig


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def _load_config_file(path):
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path!r} must hold a mapping")
    nested = {}
    for key, cls in (("channel", ChannelConfig), ("tdsbl", TdsblConfig),
                     ("gamp", GampConfig)):
        if key in raw:
            section = raw.pop(key)
            if "delay_range_s" in section:
                section["delay_range_s"] = tuple(section["delay_range_s"])
            if "doppler_range_hz" in section:
                section["doppler_range_hz"] = tuple(section["doppler_range_hz"])
            nested[key] = cls(**section)
    for key in ("snr_db", "algorithms"):
        if key in raw and isinstance(raw[key], list):
            raw[key] = tuple(raw[key])
    raw.update(nested)
    return raw


def _build_configs(args):
    overrides = {}
    if args.config:
        overrides.update(_load_config_file(args.config))
    if args.algos:
        overrides["algorithms"] = tuple(args.algos.split(","))
    if args.snr:
        overrides["snr_db"] = _floats(args.snr)
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    factory = desk_profile if args.profile == "desk" else table1_profile

    antennas = _ints(args.antennas) if args.antennas else (None,)
    overheads = _floats(args.overhead) if args.overhead else (None,)
    configs = []
    for n_a in antennas:
        for ov in overheads:
            point = dict(overrides)
            if n_a is not None:
                side = int(round(math.sqrt(n_a)))
                if side * side != n_a:
                    raise ValueError(f"antenna count {n_a} is not a square")
                point.update(n_y=side, n_z=side)
            if ov is not None:
                point.update(overhead=ov, m_tau=None)
            configs.append(factory(**point))
    return configs


def cmd_run(args):
    configs = _build_configs(args)
    results = []
    for cfg in configs:
        print(f"# profile={cfg.profile} hash={cfg.hash()} "
              f"antennas={cfg.n_y * cfg.n_z} overhead={cfg.grid().overhead:.4f} "
              f"U={cfg.U} U_a={cfg.U_a} trials={cfg.trials}")
        results.extend(run_experiment(cfg))
    for row in aggregate(results):
        print("  {algorithm:>6s}  snr={snr_db:6.1f} dB  antennas={n_antennas:3d}  "
              "overhead={overhead:.3f}  NMSE={nmse_db:7.2f} dB  Pe={pe:.4f}  "
              "({trials} trials, {failures} failed)".format(**row))
    if args.out:
        export_results(results, args.out, configs[0])
        print(f"wrote {args.out} (+ .meta.json)")
    return 0


def cmd_oracle_check(args):
    """Random SISO instances: the sample-level chain must reproduce the
    closed-form delay-Doppler relation."""
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    tic = time.perf_counter()
    for _ in range(args.instances):
        m = int(rng.integers(8, 33))
        n = int(rng.integers(2, 9))
        m_cp = int(rng.integers(4, m + 1))
        grid = OtfsGrid(M=m, N=n, M_cp=m_cp, delta_f=float(rng.uniform(1e3, 1e6)),
                        M_tau=min(4, m))
        n_paths = int(rng.integers(1, 5))
        taps = rng.choice(m_cp + 1, size=n_paths, replace=False)
        delays = taps * grid.T_s
        dopplers = rng.uniform(-1.5, 1.5, n_paths) * n / (n * grid.T_sym)
        gains = rng.standard_normal(n_paths) + 1j * rng.standard_normal(n_paths)
        x = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        y_chain = siso_time_domain(x, gains, delays, dopplers, grid)
        y_formula = siso_delay_doppler(x, gains, delays, dopplers, grid)
        rel = np.linalg.norm(y_chain - y_formula) / np.linalg.norm(y_formula)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - tic
    ok = worst <= args.tol
    print(f"oracle-check: {args.instances} instances, max relative error "
          f"{worst:.3e} (tol {args.tol:.1e}), {elapsed:.1f} s -> "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _bench_scaling(args):
    print("# per-iteration ConvSBL-GAMP wall time vs device count")
    times = {}
    for u in args.devices:
        grid = OtfsGrid(M=32, N=8, M_cp=8, delta_f=330e3, M_tau=10)
        rng = np.random.default_rng(1)
        pilots = np.stack([generate_pilots(d, grid, 5) for d in range(u)])
        X = build_pilot_operator(pilots)
        n_col = 16
        y = rng.standard_normal((X.dim_out, n_col)) \
            + 1j * rng.standard_normal((X.dim_out, n_col))
        cfg = GampConfig(max_iters=args.iters, tol=0.0)
        run_convsbl_gamp(X, y, cfg)                   # warm-up
        tic = time.perf_counter()
        res = run_convsbl_gamp(X, y, cfg)
        per_iter = (time.perf_counter() - tic) / max(res.iterations, 1)
        times[u] = per_iter
        print(f"  U={u:3d}: {per_iter * 1e3:8.3f} ms/iter")
    base_u = args.devices[0]
    ok = True
    for u in args.devices[1:]:
        ratio = (times[u] / times[base_u]) * (base_u / u)
        ok &= 0.5 <= ratio <= 2.0
        print(f"  U={u:3d}: time ratio vs linear = {ratio:.2f}")
    print(f"scaling {'consistent with linear growth' if ok else 'NOT linear'}")
    return 0 if ok else 1


def _bench_kernels(args):
    print(f"# window/conv kernel backends (active: {kernels.backend_name()})")
    rng = np.random.default_rng(0)
    x = rng.random((1280, 64))
    ker = np.full((3, 3), 0.125)
    ker[1, 1] = 1.0
    beta = kernels.beta_from_support_numpy(rng.random((1280, 64)) > 0.5, 1)
    pairs = [
        ("conv2d_same", kernels.conv2d_same_numpy, kernels.conv2d_same_numba,
         (x, ker)),
        ("precision_window_sum", kernels.precision_window_sum_numpy,
         kernels.precision_window_sum_numba, (x, beta)),
        ("moment_window_sum", kernels.moment_window_sum_numpy,
         kernels.moment_window_sum_numba, (x, beta)),
    ]
    for name, f_np, f_nb, arg in pairs:
        f_nb(*arg)                                    # JIT warm-up
        reps = args.reps
        tic = time.perf_counter()
        for _ in range(reps):
            ref = f_np(*arg)
        t_np = (time.perf_counter() - tic) / reps
        tic = time.perf_counter()
        for _ in range(reps):
            out = f_nb(*arg)
        t_nb = (time.perf_counter() - tic) / reps
        err = float(np.abs(ref - out).max())
        print(f"  {name:22s} numpy {t_np * 1e3:7.3f} ms | numba "
              f"{t_nb * 1e3:7.3f} ms | speedup {t_np / t_nb:5.2f}x | "
              f"max diff {err:.2e}")
    return 0


def cmd_bench(args):
    code = 0
    if args.kind in ("scaling", "all"):
        code |= _bench_scaling(args)
    if args.kind in ("kernels", "all"):
        code |= _bench_kernels(args)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="otfsra",
        description="Grant-free random access over massive MIMO-OTFS: "
                    "simulation and recovery experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Monte-Carlo experiment")
    p_run.add_argument("config", nargs="?", help="YAML config file")
    p_run.add_argument("--profile", choices=("desk", "table1"), default="desk")
    p_run.add_argument("--algos", help="comma list: tdsbl,conv2d,conv1d,delta")
    p_run.add_argument("--snr", help="comma list of SNR values in dB")
    p_run.add_argument("--antennas", help="comma list of square antenna counts")
    p_run.add_argument("--overhead", help="comma list of pilot overheads")
    p_run.add_argument("--trials", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--out", help="CSV output path")
    p_run.set_defaults(func=cmd_run)

    p_oracle = sub.add_parser("oracle-check",
                              help="sample-level vs closed-form SISO relation")
    p_oracle.add_argument("--instances", type=int, default=100)
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.add_argument("--tol", type=float, default=1e-9)
    p_oracle.set_defaults(func=cmd_oracle_check)

    p_bench = sub.add_parser("bench", help="scaling and kernel benchmarks")
    p_bench.add_argument("kind", nargs="?", default="all",
                         choices=("scaling", "kernels", "all"))
    p_bench.add_argument("--devices", type=_ints, default=(4, 8, 16))
    p_bench.add_argument("--iters", type=int, default=40)
    p_bench.add_argument("--reps", type=int, default=20)
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
