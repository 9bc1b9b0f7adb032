"""Command-line entry point: ``saga-attn {check,gradcheck,rank,flops,bench}``.

Exit codes: 0 pass, 1 check failure, 2 usage/config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from .analysis import block_rank_trace, flop_model, measured_flops
from .attention import AttnConfig, SagaParams
from .checks import gradcheck_suite, hadamard_identity, oracle_equivalence, reduction_identities
from .errors import ContractError, DimensionError
from .linalg import FLOAT_MODES
from .svg import line_chart

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

DEFAULTS: dict[str, dict] = {
    "check": {
        "seed": 0,
        "n_list": [1, 2, 4, 8, 32, 128],
        "dim_list": [1, 2, 8, 16],
        "n_seeds": 200,
        "tol": 1e-10,
        "hadamard_dims": [1, 2, 8, 64, 256],
        "hadamard_draws": 1000,
        "hadamard_tol": 1e-12,
        "reduction_tol": 1e-12,
        "inject_fault": False,
        "float_mode": "f64",
    },
    "gradcheck": {
        "seed": 0,
        "n_seeds": 3,
        "n_tokens": 16,
        "model_dim": 8,
        "heads": 2,
        "grid_h": 4,
        "grid_w": 4,
        "dwc_kernel": 3,
        "step": 1e-5,
        "threshold": 1e-4,
        "float_mode": "f64",
    },
    "rank": {
        "seed": 0,
        "n_tokens": 32,
        "model_dim": 16,
        "heads": 1,
        "grid_h": 4,
        "grid_w": 8,
        "n_distinct_list": [1, 2, 4, 8, 16, 32],
        "rel_tol": 1e-8,
        "gate_source": "random",
        "float_mode": "f64",
        "out": None,
        "svg": None,
    },
    "flops": {
        "seed": 0,
        "n_list": [196, 1024],
        "d_list": [64, 128],
        "dwc_kernel": 3,
        "heads": 1,
        "float_mode": "f32",
        "out": None,
    },
    "bench": {
        "seed": 0,
        "kernels": list(bench_mod.KERNELS),
        "n_list": [256, 1024, 4096, 16384],
        "d": 64,
        "heads": 2,
        "dwc_kernel": 3,
        "repeats": 5,
        "warmup": 2,
        "parallel": False,
        "float_mode": "f32",
        "out": None,
        "svg": None,
    },
}
for _cfg in DEFAULTS.values():
    # every command accepts the common flags
    _cfg.setdefault("out", None)
    _cfg.setdefault("svg", None)


class UsageError(Exception):
    pass


def load_config(command: str, path: str | None, overrides: dict) -> dict:
    """Defaults, then the JSON file, then command-line overrides."""
    cfg = dict(DEFAULTS[command])
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"config {path}: top level must be an object")
        for key, value in doc.items():
            if key not in cfg:
                raise UsageError(f"config {path}: unknown key {key!r} for '{command}'")
            cfg[key] = value
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    if cfg["float_mode"] not in FLOAT_MODES:
        raise UsageError(f"float_mode must be one of {sorted(FLOAT_MODES)}, got {cfg['float_mode']!r}")
    return cfg


def _echo(cfg: dict, stream) -> None:
    print("# config: " + json.dumps(cfg, sort_keys=True), file=stream)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _emit_csv(cfg: dict, header: list[str], rows: list[list]) -> None:
    text = _csv_text(header, rows)
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as fh:
            fh.write(text)
        _echo(cfg, sys.stdout)
        print(f"wrote {len(rows)} rows to {cfg['out']}")
    else:
        _echo(cfg, sys.stderr)
        sys.stdout.write(text)


def _svg_path(cfg: dict, command: str) -> Path | None:
    svg = cfg["svg"]
    if not svg:
        return None
    if isinstance(svg, str):
        return Path(svg)
    if cfg["out"]:
        return Path(cfg["out"]).with_suffix(".svg")
    return Path(f"{command}.svg")


def _report(results, cfg: dict) -> int:
    _echo(cfg, sys.stdout)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max_error={r.max_error:.3e} tol={r.tol:.1e}")
    failed = [r for r in results if not r.passed]
    if failed:
        first = failed[0]
        print(f"first failure: {first.name} at {first.failing_case or 'tolerance exceeded'}")
        return EXIT_FAIL
    return EXIT_OK


def cmd_check(cfg: dict) -> int:
    dtype = FLOAT_MODES[cfg["float_mode"]]
    results = [
        hadamard_identity(cfg["hadamard_dims"], cfg["hadamard_draws"], cfg["seed"], cfg["hadamard_tol"], dtype),
        oracle_equivalence(
            cfg["n_list"], cfg["dim_list"], cfg["n_seeds"], cfg["seed"], cfg["tol"], cfg["inject_fault"], dtype
        ),
        *reduction_identities(cfg["n_list"], cfg["dim_list"], min(cfg["n_seeds"], 20), cfg["seed"],
                              cfg["reduction_tol"], dtype),
    ]
    return _report(results, cfg)


def cmd_gradcheck(cfg: dict) -> int:
    if cfg["step"] <= 0:
        raise UsageError("step must be positive")
    attn_cfg = AttnConfig(cfg["n_tokens"], cfg["model_dim"], cfg["heads"], cfg["grid_h"], cfg["grid_w"],
                          cfg["dwc_kernel"])
    res = gradcheck_suite(cfg["n_seeds"], cfg["seed"], attn_cfg, cfg["step"], cfg["threshold"],
                          FLOAT_MODES[cfg["float_mode"]])
    return _report([res], cfg)


def cmd_rank(cfg: dict) -> int:
    sweep = cfg["n_distinct_list"]
    if not sweep:
        raise UsageError("n_distinct_list is empty")
    attn_cfg = AttnConfig(cfg["n_tokens"], cfg["model_dim"], cfg["heads"], cfg["grid_h"], cfg["grid_w"])
    params = SagaParams.init(attn_cfg, cfg["seed"])
    rows = []
    for n_distinct in sweep:
        trace = block_rank_trace(n_distinct, attn_cfg, params, cfg["seed"], cfg["rel_tol"], cfg["gate_source"])
        for e in trace.entries:
            rows.append([n_distinct, e.head, e.rank_ungated, e.rank_gated, e.full_rank_bound])
    _emit_csv(cfg, ["n_distinct", "head", "rank_ungated", "rank_gated", "full_rank_bound"], rows)
    svg = _svg_path(cfg, "rank")
    if svg:
        series = {}
        for r in rows:
            series.setdefault(f"head {r[1]} ungated", []).append((r[0], r[2]))
            series.setdefault(f"head {r[1]} gated", []).append((r[0], r[3]))
        svg.write_text(line_chart(series, "KV state rank vs distinct tokens", "distinct tokens", "numerical rank"))
    return EXIT_OK


def cmd_flops(cfg: dict) -> int:
    rows = []
    all_match = True
    for n in cfg["n_list"]:
        for d in cfg["d_list"]:
            attn_cfg = AttnConfig(n, d, cfg["heads"], dwc_kernel=cfg["dwc_kernel"])
            model = flop_model(attn_cfg)
            measured = measured_flops(attn_cfg, cfg["seed"], FLOAT_MODES[cfg["float_mode"]])
            match = measured["total"] == model.total and all(
                measured[t] == v for t, v in model.terms().items()
            )
            all_match &= match
            rows.append([n, d, cfg["dwc_kernel"], model.proj_flops, model.hadamard_flops, model.attn_flops,
                         model.dwc_flops, model.gate_aug_flops, model.total, measured["total"], match])
    _emit_csv(cfg, ["N", "d", "k", "proj", "hadamard", "attn", "dwc", "gate_aug", "total_model",
                    "total_measured", "match"], rows)
    return EXIT_OK if all_match else EXIT_FAIL


def cmd_bench(cfg: dict) -> int:
    dtype = FLOAT_MODES[cfg["float_mode"]]
    runs = []
    for kernel in cfg["kernels"]:
        if kernel not in bench_mod.KERNELS:
            raise UsageError(f"unknown kernel {kernel!r}; choose from {list(bench_mod.KERNELS)}")
        run = bench_mod.BenchRun(kernel, list(cfg["n_list"]), cfg["d"], cfg["heads"], cfg["dwc_kernel"],
                                 cfg["repeats"], cfg["warmup"], cfg["seed"])
        runs.append(bench_mod.run_bench(run, dtype, cfg["parallel"]))
    rows = [[r.kernel, n, r.median_ns[n], r.exponent, r.workspace[n]] for r in runs for n in sorted(r.n_list)]
    _emit_csv(cfg, ["kernel", "N", "median_ns", "fitted_exponent", "workspace_elements"], rows)
    summary = sys.stdout if cfg["out"] else sys.stderr
    by_kernel = {r.kernel: r for r in runs}
    if "saga_decomposed" in by_kernel and "softmax" in by_kernel:
        print(bench_mod.crossover_report(by_kernel["saga_decomposed"], by_kernel["softmax"]), file=summary)
    svg = _svg_path(cfg, "bench")
    if svg:
        series = {r.kernel: r.reliable_points() for r in runs if r.reliable_points()}
        svg.write_text(line_chart(series, "forward time vs tokens", "N (tokens)", "median ns", logx=True, logy=True))
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "gradcheck": cmd_gradcheck,
    "rank": cmd_rank,
    "flops": cmd_flops,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its values")
    common.add_argument("--seed", type=int, help="root seed (u64)")
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--svg", nargs="?", const=True, default=None, metavar="PATH",
                        help="also write an SVG chart (rank, bench)")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--f32", dest="float_mode", action="store_const", const="f32")
    mode.add_argument("--f64", dest="float_mode", action="store_const", const="f64")

    parser = argparse.ArgumentParser(prog="saga-attn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="gated oracle vs decomposed path and identities")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of block gradients")
    gc.add_argument("--step", type=float)
    sub.add_parser("rank", parents=[common], help="KV state rank sweep over duplicated tokens")
    sub.add_parser("flops", parents=[common], help="cost model vs instrumented multiply counts")
    sub.add_parser("bench", parents=[common], help="wall-clock scaling benchmarks")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    overrides = {k: getattr(args, k, None) for k in ("seed", "out", "svg", "float_mode", "step")}
    overrides = {k: v for k, v in overrides.items() if k in DEFAULTS[args.command]}
    try:
        cfg = load_config(args.command, args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (UsageError, DimensionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
