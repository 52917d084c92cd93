"""Command-line front end: training, evaluation, data export, cell analysis.

Every run writes CSV and/or checkpoint outputs to user-chosen paths plus a
small JSON metadata record (resolved options, seed, package version, wall
time) sufficient to replay it, prints a one-line summary, and exits 0 on
success. Identical flags and seeds give byte-identical CSVs apart from
wall-time fields.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import (MnistData, SampleSpec, load_mnist, make_benchmark,
                         synthetic_digit_images)
from .dynamics import (ScalarCellConfig, bifurcation_sweep,
                       check_pitchfork_conditions, find_fixed_points,
                       simulate_scalar_cell, trace_layers,
                       write_bifurcation_csv, write_layer_trace_csv,
                       write_trajectory_csv)
from .gradcheck import check_cell_kind
from .network import NetworkSpec, load_checkpoint, save_checkpoint
from .numerics import ContractError, Rng
from .training import TrainConfig, evaluate, train

CELL_CHOICES = ("brc", "nbrc", "gru", "lstm", "rnn")
BENCH_CHOICES = ("copy_first", "denoising", "sparse_copy", "seq_mnist")

# Fallback values applied after CLI flags and any --config file.
TRAIN_DEFAULTS = {
    "cell": "brc", "benchmark": "copy_first", "T": 50, "N": 0, "n_black": 0,
    "layers": "2x100", "iters": 30000, "batch": 100, "lr": 1e-3,
    "eval_every": 500, "test_size": 2000, "seed": 0, "clip_norm": 5.0,
    "mnist_images": None, "mnist_labels": None, "pad32": False,
    "downsample": None, "synthetic_mnist": None,
}


def parse_layers(text: str) -> list[int]:
    """`NxM` -> N layers of M neurons; `60,30` -> explicit widths."""
    text = text.strip().lower()
    try:
        if "x" in text:
            n, m = text.split("x")
            return [int(m)] * int(n)
        return [int(tok) for tok in text.split(",")]
    except ValueError:
        raise ContractError(f"cannot parse layer spec {text!r}; use NxM or a "
                            "comma-separated width list") from None


def parse_kv_file(path) -> dict[str, str]:
    """Plain key=value config file; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(key: str, value: str):
    default = TRAIN_DEFAULTS[key]
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if key in ("downsample",):
        return int(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def resolve_train_options(args) -> dict:
    """Merge precedence: explicit CLI flags > config file > built-in defaults."""
    opts = dict(TRAIN_DEFAULTS)
    if getattr(args, "config", None):
        for key, value in parse_kv_file(args.config).items():
            if key not in TRAIN_DEFAULTS:
                raise ContractError(f"unknown config key {key!r}")
            opts[key] = _coerce(key, value)
    for key in TRAIN_DEFAULTS:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            opts[key] = cli_val
    return opts


def write_metadata(path, command: str, options: dict, seed, wall_seconds: float) -> None:
    skip = ("func", "command", "config")
    record = {
        "command": command,
        "options": {k: v for k, v in sorted(options.items()) if k not in skip},
        "seed": seed,
        "version": __version__,
        "wall_seconds": round(wall_seconds, 3),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=2)
        f.write("\n")


def _load_benchmark(opts: dict):
    spec = SampleSpec(benchmark=opts["benchmark"], T=opts["T"], N=opts["N"],
                      n_black=opts["n_black"])
    mnist = None
    if opts["benchmark"] == "seq_mnist":
        if opts.get("synthetic_mnist"):
            mnist = synthetic_digit_images(opts["synthetic_mnist"],
                                           Rng(opts["seed"] + 9000))
        elif opts.get("mnist_images") and opts.get("mnist_labels"):
            mnist = load_mnist(opts["mnist_images"], opts["mnist_labels"])
        else:
            raise ContractError("seq_mnist needs --mnist-images/--mnist-labels "
                                "or --synthetic-mnist N")
    return make_benchmark(spec, mnist=mnist, pad32=opts["pad32"],
                          downsample=opts["downsample"])


def cmd_train(args) -> int:
    opts = resolve_train_options(args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    bench = _load_benchmark(opts)
    netspec = NetworkSpec(cell_kind=opts["cell"],
                          layer_sizes=parse_layers(opts["layers"]),
                          input_dim=bench.input_dim,
                          output_dim=bench.output_dim,
                          output_head="softmax" if bench.loss == "cross_entropy"
                          else "linear")
    config = TrainConfig(iterations=opts["iters"], batch_size=opts["batch"],
                         eval_every=opts["eval_every"], seed=opts["seed"],
                         lr=opts["lr"], test_size=opts["test_size"],
                         clip_norm=opts["clip_norm"])
    t0 = time.perf_counter()

    def progress(rec):
        print(f"iter {rec.iteration:>7d}  train_loss {rec.train_loss:.6f}  "
              f"test_{bench.metric} {rec.test_metric:.6f}")

    net, log = train(netspec, bench, config, log_hook=progress)
    log.to_csv(outdir / "log.csv")
    save_checkpoint(net, outdir / "model.ckpt", seed=opts["seed"],
                    iteration=opts["iters"])
    write_metadata(outdir / "meta.json", "train", opts, opts["seed"],
                   time.perf_counter() - t0)
    print(f"train: {opts['cell']} on {opts['benchmark']} done; final "
          f"test_{bench.metric}={log.final.test_metric:.6f} -> {outdir}/")
    return 0


def cmd_eval(args) -> int:
    opts = resolve_train_options(args)
    net, meta = load_checkpoint(args.ckpt)
    bench = _load_benchmark(opts)
    if bench.input_dim != net.spec.input_dim or bench.output_dim != net.spec.output_dim:
        raise ContractError("checkpoint and benchmark dimensions do not match")
    x, y = bench.sample_batch(opts["test_size"], Rng(opts["seed"]))
    metric = evaluate(net, x, y, bench.metric)
    print(f"eval: {bench.metric}={metric:.6f} over {opts['test_size']} samples "
          f"(checkpoint iteration {meta['iteration']})")
    return 0


def cmd_gen_data(args) -> int:
    opts = resolve_train_options(args)
    if opts["benchmark"] == "seq_mnist":
        raise ContractError("gen-data covers the synthetic benchmarks; "
                            "sequential MNIST is ingested from IDX files")
    bench = _load_benchmark(opts)
    t0 = time.perf_counter()
    x, y = bench.sample_batch(args.n, Rng(opts["seed"]))
    with open(args.out, "w", encoding="utf-8") as f:
        d = bench.input_dim
        cols = [f"x_t{t}_d{k}" for t in range(bench.T) for k in range(d)]
        cols += [f"target_{i}" for i in range(bench.output_dim)]
        f.write(",".join(["sample"] + cols) + "\n")
        for i in range(args.n):
            row = [str(i)]
            row += [repr(float(v)) for v in x[i].ravel()]
            row += [repr(float(v)) for v in y[i]]
            f.write(",".join(row) + "\n")
    write_metadata(str(args.out) + ".meta.json", "gen-data",
                   {**opts, "n": args.n}, opts["seed"], time.perf_counter() - t0)
    print(f"gen-data: wrote {args.n} {opts['benchmark']} samples to {args.out}")
    return 0


def cmd_fixed_points(args) -> int:
    report = find_fixed_points(ScalarCellConfig(a=args.a, c=args.c, drive=args.drive))
    for p in report.points:
        print(f"h* = {p.h:+.12f}   multiplier = {p.multiplier:+.9f}   {p.stability}")
    print(f"fixed-points: {len(report.points)} point(s) for "
          f"a={args.a}, c={args.c}, drive={args.drive}")
    return 0


def cmd_bifurcation(args) -> int:
    t0 = time.perf_counter()
    a_values = np.linspace(args.a_min, args.a_max, args.steps)
    rows = bifurcation_sweep(a_values, c=args.c, drive=args.drive)
    write_bifurcation_csv(rows, args.out)
    write_metadata(str(args.out) + ".meta.json", "bifurcation", vars(args) | {},
                   None, time.perf_counter() - t0)
    print(f"bifurcation: {len(rows)} branch points over {args.steps} gains -> {args.out}")
    return 0


def cmd_pitchfork_check(args) -> int:
    worst_zero = 0.0
    worst_gap = 0.0
    for c in args.c:
        rep = check_pitchfork_conditions(c)
        worst_zero = max(worst_zero, rep.max_zero_violation())
        worst_gap = max(worst_gap, rep.max_genericity_gap())
        print(f"c={c}: zero-conditions <= {rep.max_zero_violation():.3e}, "
              f"d3G/dh3 = {rep.closed['d3G_dh3']!r} (fd {rep.numeric['d3G_dh3']:.9f}), "
              f"d2G/dhda = {rep.closed['d2G_dhda']!r} (fd {rep.numeric['d2G_dhda']:.9f})")
    ok = worst_zero < 1e-9 and worst_gap < 1e-6
    print(f"pitchfork-check: {'ok' if ok else 'FAILED'} "
          f"(max zero violation {worst_zero:.3e}, max fd gap {worst_gap:.3e})")
    return 0 if ok else 1


def cmd_simulate_cell(args) -> int:
    t0 = time.perf_counter()
    T = args.T
    inputs = np.zeros(T)
    inputs[:min(args.pulse_steps, T)] = args.pulse
    traj = simulate_scalar_cell(np.full(T, args.a), np.full(T, args.c),
                                inputs, h0=args.h0)
    write_trajectory_csv(traj, args.out)
    write_metadata(str(args.out) + ".meta.json", "simulate-cell", vars(args) | {},
                   None, time.perf_counter() - t0)
    print(f"simulate-cell: a={args.a}, c={args.c}, final h = {traj[-1]:+.9f} -> {args.out}")
    return 0


def cmd_trace(args) -> int:
    opts = resolve_train_options(args)
    net, _ = load_checkpoint(args.ckpt)
    bench = _load_benchmark(opts)
    x, _ = bench.sample_batch(1, Rng(opts["seed"]))
    t0 = time.perf_counter()
    trace = trace_layers(net, x[0])
    write_layer_trace_csv(trace, args.out)
    write_metadata(str(args.out) + ".meta.json", "trace", opts, opts["seed"],
                   time.perf_counter() - t0)
    print(f"trace: {trace.mean_c.shape[0]} steps x {trace.mean_c.shape[1]} layers "
          f"-> {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    err = check_cell_kind(args.cell, args.samples, seed=args.seed,
                          max_hidden=args.hidden, max_T=args.T)
    ok = err <= args.tol
    print(f"grad-check: {args.cell} max relative error {err:.3e} over "
          f"{args.samples} instances ({'ok' if ok else 'FAILED'}, tol {args.tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bistablernn",
        description="Bistable recurrent cells: training, benchmarks and "
                    "fixed-point analysis.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_bench_flags(p, with_config=True):
        p.add_argument("--cell", choices=CELL_CHOICES)
        p.add_argument("--benchmark", choices=BENCH_CHOICES)
        p.add_argument("--T", type=int, help="sequence length")
        p.add_argument("--N", type=int, help="denoising forgetting period")
        p.add_argument("--n-black", dest="n_black", type=int,
                       help="trailing black pixels for seq_mnist")
        p.add_argument("--layers", help="NxM (N layers of M neurons) or list")
        p.add_argument("--iters", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--eval-every", dest="eval_every", type=int)
        p.add_argument("--test-size", dest="test_size", type=int)
        p.add_argument("--clip-norm", dest="clip_norm", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--mnist-images", dest="mnist_images")
        p.add_argument("--mnist-labels", dest="mnist_labels")
        p.add_argument("--pad32", action="store_const", const=True, default=None,
                       help="pad MNIST images to 32x32 (1024-step sequences)")
        p.add_argument("--downsample", type=int,
                       help="area-average MNIST images to this side length")
        p.add_argument("--synthetic-mnist", dest="synthetic_mnist", type=int,
                       help="use N procedurally generated digit images")
        if with_config:
            p.add_argument("--config", help="key=value file; flags win")

    p = sub.add_parser("train", help="train a network on a benchmark")
    add_bench_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on fresh data")
    add_bench_flags(p)
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-data", help="emit a fixed benchmark set as CSV")
    add_bench_flags(p)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fixed-points", help="fixed points of the scalar cell")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--drive", type=float, default=0.0)
    p.set_defaults(func=cmd_fixed_points)

    p = sub.add_parser("bifurcation", help="sweep fixed points over the gain a")
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--a-min", dest="a_min", type=float, default=0.2)
    p.add_argument("--a-max", dest="a_max", type=float, default=1.8)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--drive", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bifurcation)

    p = sub.add_parser("pitchfork-check", help="verify the pitchfork conditions")
    p.add_argument("--c", type=float, nargs="+", default=[0.1, 0.5, 0.9])
    p.set_defaults(func=cmd_pitchfork_check)

    p = sub.add_parser("simulate-cell", help="scalar-cell trajectory for a pulse input")
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--pulse", type=float, default=1.0)
    p.add_argument("--pulse-steps", dest="pulse_steps", type=int, default=5)
    p.add_argument("--h0", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_cell)

    p = sub.add_parser("trace", help="per-layer gate statistics on one sample")
    add_bench_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("grad-check", help="finite-difference check of BPTT")
    p.add_argument("--cell", choices=CELL_CHOICES, required=True)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
