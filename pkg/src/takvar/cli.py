"""Command-line entry point (``takvar``).

Exit codes: 0 success; 1 bad input (unreadable bundle, bad arguments); for
``check``, 2 when padding Q would make the inverse subset exact and 3 when it
would not; for ``variances``, 2 when the condition check fails and 3 when the
precision is not positive definite.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from takvar import bench
from takvar.cholesky import NotPositiveDefiniteError
from takvar.conditions import check_theorem, pad_Q
from takvar.model import load_bundle, save_bundle
from takvar.variance import METHODS, ConditionCheckFailed, compute_variances

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PADDABLE = 2
EXIT_UNFIXABLE = 3


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with 1 so that 2 and 3 keep their meaning."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _counts(values: list[str]) -> list[int]:
    out = []
    for v in values:
        for part in v.split(","):
            if part.strip():
                x = float(part)
                if x != int(x) or x <= 0:
                    raise argparse.ArgumentTypeError(f"not a positive count: {part}")
                out.append(int(x))
    return out


def _load(path: str):
    try:
        return load_bundle(path)
    except Exception as exc:  # noqa: BLE001 - any read failure is an input error
        print(f"error: cannot read bundle {path}: {exc}", file=sys.stderr)
        return None


def cmd_simulate_car1d(args) -> int:
    grid = bench.ExperimentGrid(
        n_values=tuple(_counts(args.n)),
        N_values=tuple(_counts(args.N)),
        m=args.m,
        methods=tuple(args.method),
        M=args.M,
        seed=args.seed,
        repetitions=args.reps,
    )
    rows = bench.run_car1d_grid(
        grid,
        ordering=args.ordering,
        full=args.full,
        memory_limit=int(args.memory_limit_gb * 2**30),
        parallel_cells=args.parallel_cells,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_rows(out / "timings.csv", rows, bench.TIMING_COLUMNS)
    summary = bench.summarize_timings(rows)
    bench.write_rows(out / "summary.csv", summary, bench.SUMMARY_COLUMNS)
    for s in summary:
        print(f"n={s['n']:>6} N={s['N']:>6} {s['method']:<10} {s['median_s']:.5f}s  {s['dominant_phase']}")
    return EXIT_OK


def cmd_relerr_study(args) -> int:
    if args.bundle:
        loaded = _load(args.bundle)
        if loaded is None:
            return EXIT_INPUT
        model = loaded[0]
    else:
        model = bench.car1d_model(args.n, args.N, args.m, seed=args.seed)
    rows = bench.relerr_study(model, _counts(args.M), seed=args.seed, incremental=args.incremental)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    bench.write_rows(
        out,
        [{"M": M, "r_hat": r, "s_hat": s} for M, r, s in rows],
        ["M", "r_hat", "s_hat"],
    )
    for M, r, s in rows:
        print(f"M={M:>4}  r_hat={r:+.5f}  s_hat={s:.5f}")
    return EXIT_OK


def cmd_check(args) -> int:
    loaded = _load(args.bundle)
    if loaded is None:
        return EXIT_INPUT
    model, _ = loaded
    report = check_theorem(model.A, model.B, model.Q)
    payload = report.to_dict()
    if report.theorem:
        code = EXIT_OK
    else:
        padded = model.Q if report.padding_required == 0 else pad_Q(model.Q, model.A)
        fixed = check_theorem(model.A, model.B, padded).theorem
        code = EXIT_PADDABLE if fixed else EXIT_UNFIXABLE
    payload["exit_code"] = code
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return code


def cmd_variances(args) -> int:
    loaded = _load(args.bundle)
    if loaded is None:
        return EXIT_INPUT
    model, manifest = loaded
    try:
        report = compute_variances(
            model,
            args.method,
            ordering=args.ordering,
            M=args.M,
            seed=args.seed,
            pad=args.pad,
            unsafe_skip_check=args.unsafe_skip_check,
        )
    except ConditionCheckFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PADDABLE
    except NotPositiveDefiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNFIXABLE
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out.with_suffix(".csv"))
    report.extra["bundle"] = str(args.bundle)
    report.extra["padded"] = bool(args.pad or manifest.get("padded", False))
    report.write_telemetry(out.with_suffix(".json"))
    print(f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.json')}")
    return EXIT_OK


def cmd_gen_bundle(args) -> int:
    if args.kind == "car1d":
        model = bench.car1d_model(args.n, args.N, args.m, seed=args.seed)
        extra = {"kind": "car1d", "rho": 1 / 12, "tau": 12.0}
    elif args.kind == "nested-aggregation":
        model = bench.nested_aggregation_model(side=args.side, seed=args.seed)
        extra = {"kind": "nested-aggregation", "side": args.side}
    else:
        model = bench.frk_car_model(args.n_xi, args.n_basis, seed=args.seed, pad=args.pad)
        extra = {"kind": "frk-car", "n_xi": args.n_xi, "n_basis": args.n_basis}
    save_bundle(model, args.out, padded=bool(args.pad), seed=args.seed, **extra)
    print(f"wrote {args.kind} bundle to {args.out} (n={model.n}, m={model.m}, N={model.N})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="takvar", description="Prediction variances from sparse precision models.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate-car1d", help="time all methods on the 1-D CAR grid")
    s.add_argument("--n", nargs="+", default=["100,1000,10000"], help="latent sizes")
    s.add_argument("--N", nargs="+", default=["10,100,1000,10000"], help="prediction counts")
    s.add_argument("--m", type=int, default=10_000, help="observation count")
    s.add_argument("--method", nargs="+", choices=METHODS, default=list(METHODS))
    s.add_argument("--M", type=int, default=50, help="simulations for cond_sim")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--reps", type=int, default=1, help="repetitions per cell")
    s.add_argument("--ordering", choices=("natural", "rcm"), default="rcm")
    s.add_argument("--full", action="store_true", help="allow cells beyond desk scale")
    s.add_argument("--memory-limit-gb", type=float, default=4.0)
    s.add_argument("--parallel-cells", type=int, default=1, help="concurrent cells (distorts timings)")
    s.add_argument("--out", default="results/car1d")
    s.set_defaults(func=cmd_simulate_car1d)

    s = sub.add_parser("relerr-study", help="bias and spread of simulated standard errors")
    s.add_argument("--bundle", help="model bundle (default: synthetic 1-D CAR model)")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--N", type=int, default=1000)
    s.add_argument("--m", type=int, default=10_000)
    s.add_argument("--M", nargs="+", default=["10,20,30,40,50,60,70,80,90,100"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--incremental", action="store_true", help="reuse one ensemble across M")
    s.add_argument("--out", default="results/relerr.csv")
    s.set_defaults(func=cmd_relerr_study)

    s = sub.add_parser("check", help="report whether the inverse subset gives exact variances")
    s.add_argument("bundle")
    s.add_argument("--out", help="also write the JSON report here")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("variances", help="compute prediction variances for a bundle")
    s.add_argument("bundle")
    s.add_argument("--method", choices=METHODS, default="sparse_inv")
    s.add_argument("--M", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ordering", choices=("natural", "rcm"), default="rcm")
    s.add_argument("--pad", action="store_true", help="pad Q before assembly")
    s.add_argument("--unsafe-skip-check", action="store_true")
    s.add_argument("--out", default="variances", help="output prefix (.csv and .json)")
    s.set_defaults(func=cmd_variances)

    s = sub.add_parser("gen-bundle", help="write a synthetic model bundle")
    s.add_argument("kind", choices=("car1d", "nested-aggregation", "frk-car"))
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--N", type=int, default=500)
    s.add_argument("--m", type=int, default=1000)
    s.add_argument("--side", type=int, default=16, help="lattice side (nested-aggregation)")
    s.add_argument("--n-xi", type=int, default=400, help="fine cells (frk-car)")
    s.add_argument("--n-basis", type=int, default=20, help="basis functions (frk-car)")
    s.add_argument("--pad", action="store_true", help="store Q already padded (frk-car)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_bundle)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
