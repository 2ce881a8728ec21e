"""Command-line entry point ``selfnorm``.

Exit codes: 0 on success, 2 on configuration errors, 3 when the
concentration suite reports a failed verdict, 1 on any other library error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from ..errors import ConfigError, SelfNormError
from . import runner
from .config import load_config, resolve_seed

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_VERDICT = 0, 1, 2, 3
COMMANDS = ("ratio-curve", "bounds", "tail", "concentration", "kernel-check", "decompose")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML experiment configuration")
    common.add_argument("--seed", type=_u64, metavar="U64",
                        help="master seed (overrides SELFNORM_SEED and the config)")
    common.add_argument("--workers", type=_positive, metavar="N", help="worker processes")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), help="output format")

    parser = argparse.ArgumentParser(
        prog="selfnorm",
        description="Moderate-deviation experiments for self-normalized statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "ratio-curve": "estimate P(T >= x) / (1 - Phi(x)) on the (n, x) grid",
        "bounds": "delta, L, I, side conditions and envelopes, with the fitted constant",
        "tail": "raw tail-probability estimates",
        "concentration": "run the randomized concentration inequality suite",
        "kernel-check": "check the kernel domination condition on random tuples",
        "decompose": "Hoeffding decomposition of one simulated sample",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_seed(load_config(args.config), args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    out_dir = Path(args.out if args.out else cfg.output_dir)
    started = time.perf_counter()
    try:
        return _dispatch(args, cfg, out_dir, started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SelfNormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def _dispatch(args, cfg, out_dir: Path, started: float) -> int:
    cmd = args.command
    fmt = args.format

    if cmd == "ratio-curve":
        fmt = fmt or "csv"
        ests = ("plain", "tilted") if cfg.estimator == "both" else (cfg.estimator,)
        all_rows = {}
        for est in ests:
            rows = runner.run_ratio_curve(cfg, est)
            all_rows[est] = rows
            if fmt == "csv":
                name = "ratio_curve.csv" if len(ests) == 1 else f"ratio_curve_{est}.csv"
                path = _write(out_dir, name, runner.ratio_csv(rows))
                print(f"wrote {path}")
        if fmt == "json":
            results = {est: [dataclasses.asdict(r) for r in rows] for est, rows in all_rows.items()}
            fitted = {est: runner.fitted_constants(rows) for est, rows in all_rows.items()}
            path = _write(out_dir, "ratio_curve.json",
                          runner.json_report(cfg, results, fitted, None, started))
            print(f"wrote {path}")
        return EXIT_OK

    if cmd == "bounds":
        rep = runner.run_bound_report(cfg)
        if fmt == "csv":
            rows = [{k: v for k, v in r.items() if not isinstance(v, dict) and k != "extras"}
                    for r in rep["reports"]]
            path = _write(out_dir, "bounds.csv", runner.rows_csv(rows))
        else:
            path = _write(out_dir, "bounds.json",
                          runner.json_report(cfg, rep["reports"], rep["fitted"], None, started))
        print(f"wrote {path}")
        return EXIT_OK

    if cmd == "tail":
        rows = runner.run_tail(cfg)
        if fmt == "json":
            path = _write(out_dir, "tail.json", runner.json_report(cfg, rows, None, None, started))
        else:
            path = _write(out_dir, "tail.csv", runner.rows_csv(rows))
        print(f"wrote {path}")
        return EXIT_OK

    if cmd == "concentration":
        rep = runner.run_concentration_suite(cfg)
        if fmt == "csv":
            path = _write(out_dir, "concentration.csv", runner.rows_csv(rep["results"]))
        else:
            path = _write(out_dir, "concentration.json",
                          runner.json_report(cfg, rep["results"], None, rep["verdicts"], started))
        print(f"wrote {path}")
        failed = [k for k, v in rep["verdicts"].items() if not v]
        for k in failed:
            print(f"verdict failed: {k}", file=sys.stderr)
        return EXIT_VERDICT if failed else EXIT_OK

    if cmd == "kernel-check":
        res = runner.run_kernel_check(cfg)
        verdicts = {"no_violations": res["violations"] == 0}
        if fmt == "csv":
            path = _write(out_dir, "kernel_check.csv", runner.rows_csv([
                {k: v for k, v in res.items() if k != "witness"}]))
        else:
            path = _write(out_dir, "kernel_check.json",
                          runner.json_report(cfg, res, None, verdicts, started))
        print(f"wrote {path}")
        return EXIT_OK

    if cmd == "decompose":
        res = runner.run_decompose(cfg)
        if fmt == "csv":
            flat = {k: v for k, v in res.items() if k != "identity_residuals"}
            flat.update({f"residual_{k}": v for k, v in res["identity_residuals"].items()})
            path = _write(out_dir, "decompose.csv", runner.rows_csv([flat]))
        else:
            path = _write(out_dir, "decompose.json", runner.json_report(cfg, res, None, None, started))
        print(f"wrote {path}")
        return EXIT_OK

    raise AssertionError(f"unhandled command {cmd}")  # argparse restricts the choices


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
