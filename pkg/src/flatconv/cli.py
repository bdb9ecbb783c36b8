"""``flatconv`` command line: verify, count, bench, table.

Exit codes: 0 success, 1 verification or benchmark failure, 2 usage error.
Options may also come from a JSON file given with ``--config``; explicit
flags win over file values. ``FLATCONV_SEED`` overrides the default seed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .bench import count_rows, emit_count_table, emit_table, read_records, run_bench, write_atomic
from .blocks import ALL_VARIANTS, BlockConfig, Variant, build_block
from .errors import FlatConvError
from .network import NetSpec
from .tensor import VideoShape
from .verify import SUITE_GROUPS, SUITES, resolve_suites, run_all_suites

DEFAULTS = {
    "verify": {"suite": "all", "seed": 0, "jsonl": None},
    "count": {"net": "eco-lite", "frames": 16, "classes": 400, "batch": 1,
              "variants": None, "format": "csv", "out": None},
    "bench": {"block": None, "shape": "1,16,28,28,96", "out_channels": 128, "stride": 1,
              "reps": 20, "warmup": 3, "threads": 1, "seed": 0, "out": None, "format": "csv"},
    "table": {"input": None, "format": "md", "out": None},
}


def _default_seed() -> int:
    raw = os.environ.get("FLATCONV_SEED")
    return int(raw) if raw not in (None, "") else 0


def _parse_shape(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(","))


def _parse_variants(value) -> list[Variant]:
    if value is None:
        return list(ALL_VARIANTS)
    if isinstance(value, str):
        value = [value]
    names = [n for item in value for n in str(item).split(",") if n]
    if any(n.lower() == "all" for n in names):
        return list(ALL_VARIANTS)
    return [Variant.parse(n) for n in names]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flatconv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, argument_default=S)
        p.set_defaults(parser=p)
        p.add_argument("--config", help="JSON file with option values")
        return p

    p = add("verify", "run the equivalence and property suites")
    p.add_argument("--suite", choices=sorted({*SUITES, *SUITE_GROUPS}))
    p.add_argument("--seed", type=int)
    p.add_argument("--jsonl", metavar="PATH", help="write one JSON line per case")

    p = add("count", "analytic params/FLOPs of the ECO-Lite 3D-Net per variant")
    p.add_argument("--net", choices=["eco-lite"])
    p.add_argument("--frames", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--variants", action="append", metavar="V[,V...]")
    p.add_argument("--format", choices=["csv", "md"])
    p.add_argument("--out", metavar="PATH")

    p = add("bench", "time block forward passes")
    p.add_argument("--block", action="append", metavar="V[,V...]", help="variant(s); default all")
    p.add_argument("--shape", metavar="B,T,X,Y,C")
    p.add_argument("--out-channels", dest="out_channels", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=["csv", "md"])

    p = add("table", "re-render a benchmark CSV")
    p.add_argument("--in", dest="input", metavar="PATH")
    p.add_argument("--format", choices=["csv", "md"])
    p.add_argument("--out", metavar="PATH")
    return parser


def resolve_options(parser: argparse.ArgumentParser, argv=None) -> dict:
    """Merge defaults, then the --config file, then explicit flags."""
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command")
    sub_parser = ns.pop("parser")
    opts = dict(DEFAULTS[command])
    if "seed" in opts:
        opts["seed"] = _default_seed()
    config_path = ns.pop("config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            sub_parser.error(f"cannot read config {config_path}: {exc}")
        unknown = set(from_file) - set(opts)
        if unknown:
            sub_parser.error(f"unknown config keys for {command}: {sorted(unknown)}")
        opts.update(from_file)
    opts.update(ns)
    opts["command"] = command
    opts["parser"] = sub_parser
    return opts


def _emit(text: str, out: str | None) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def cmd_verify(opts: dict, parser) -> int:
    try:
        names = resolve_suites(opts["suite"])
    except KeyError:
        parser.error(f"unknown suite {opts['suite']!r}")
    reports = run_all_suites(int(opts["seed"]), names)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<14} {r.cases_run:4d} cases  {len(r.failures):3d} failed  {r.wall_time:7.2f}s")
        for f in r.failures[:5]:
            print(f"    {json.dumps(f.config)} diff={f.max_diff} tol={f.tol} {f.detail}")
    if opts["jsonl"]:
        _emit("".join(r.jsonl() for r in reports), opts["jsonl"])
    ok = all(r.passed for r in reports)
    print("all suites passed" if ok else "verification FAILED")
    return 0 if ok else 1


def cmd_count(opts: dict, parser) -> int:
    try:
        spec = NetSpec(frames=int(opts["frames"]), classes=int(opts["classes"]))
        variants = _parse_variants(opts["variants"])
    except (ValueError, FlatConvError) as exc:
        parser.error(str(exc))
    if int(opts["batch"]) < 1 or spec.classes < 1:
        parser.error("--batch and --classes must be >= 1")
    _emit(emit_count_table(count_rows(spec, variants, int(opts["batch"])), opts["format"]), opts["out"])
    return 0


def cmd_bench(opts: dict, parser) -> int:
    try:
        variants = _parse_variants(opts["block"])
        shape = _parse_shape(opts["shape"])
    except ValueError as exc:
        parser.error(str(exc))
    if len(shape) != 5 or min(shape) < 1:
        parser.error(f"--shape needs five positive extents B,T,X,Y,C, got {opts['shape']}")
    for key in ("reps", "threads", "out_channels", "stride"):
        if int(opts[key]) < 1:
            parser.error(f"--{key.replace('_', '-')} must be >= 1")
    if int(opts["warmup"]) < 0:
        parser.error("--warmup must be >= 0")
    for v in variants:
        try:
            build_block(BlockConfig(v, shape[4], int(opts["out_channels"]),
                                    stride=int(opts["stride"]))).output_shape(shape)
        except FlatConvError as exc:
            parser.error(f"{v.value}: {exc}")
    records = run_bench(variants, VideoShape(*shape), out_channels=int(opts["out_channels"]),
                        stride=int(opts["stride"]), reps=int(opts["reps"]),
                        warmup=int(opts["warmup"]), seed=int(opts["seed"]),
                        threads=int(opts["threads"]))
    try:
        _emit(emit_table(records, opts["format"]), opts["out"])
    except OSError as exc:
        print(f"flatconv bench: cannot write {opts['out']}: {exc}", file=sys.stderr)
        return 1
    return 0


def cmd_table(opts: dict, parser) -> int:
    if not opts["input"]:
        parser.error("table needs --in PATH")
    try:
        rows = read_records(opts["input"])
    except (OSError, ValueError) as exc:
        print(f"flatconv table: {exc}", file=sys.stderr)
        return 1
    _emit(emit_table(rows, opts["format"]), opts["out"])
    return 0


COMMANDS = {"verify": cmd_verify, "count": cmd_count, "bench": cmd_bench, "table": cmd_table}


def main(argv=None) -> int:
    parser = build_parser()
    opts = resolve_options(parser, argv)
    try:
        return COMMANDS[opts["command"]](opts, opts["parser"])
    except OSError as exc:
        print(f"flatconv: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
