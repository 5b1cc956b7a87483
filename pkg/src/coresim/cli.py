"""
Command-line front end.

Verbs: assemble, run, scenario, inject.  Exit code 0 when every scenario
assertion passes, 1 on an assertion failure, 2 on a configuration error.
"""

import argparse
import json
import sys

from . import asm, harness, scenarios
from .asm import AsmError
from .harness import ConfigValidationError
from .memory import ConfigError
from .mpu import MpuConfigError
from .nvic import NvicError

EXIT_PASS = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


def make_parser():
    p = argparse.ArgumentParser(
        prog="coresim",
        description="Cycle-accounting embedded core simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("assemble", help="assemble a source file")
    pa.add_argument("source")
    pa.add_argument("--mode", choices=("pool", "movw"), default="pool")
    pa.add_argument("--base", type=lambda s: int(s, 0), default=0)
    pa.add_argument("-o", "--output", default=None,
                    help="image path (sidecar written alongside as .json)")

    pr = sub.add_parser("run", help="run a scenario configuration")
    pr.add_argument("config")
    pr.add_argument("--trace", default=None, help="trace output path")
    pr.add_argument("--report", default=None, help="report output path")

    ps = sub.add_parser("scenario", help="run a built-in scenario")
    ps.add_argument("name", nargs="?", default=None)
    ps.add_argument("--list", action="store_true", dest="list_scenarios")
    ps.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                    help="config override, dotted path (e.g. cycle_limit=100)")
    ps.add_argument("--report", default=None)
    ps.add_argument("--seed", type=int, default=1234)
    ps.add_argument("--count", type=int, default=100)

    pi = sub.add_parser("inject", help="run a soft-error campaign")
    pi.add_argument("--seed", type=int, required=True)
    pi.add_argument("--count", type=int, required=True)
    pi.add_argument("--target", default="mixed",
                    choices=("mixed", "icache", "dcache", "tcm"))
    pi.add_argument("--report", default=None)
    return p


def parse_overrides(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigValidationError("--set", f"expected KEY=VAL, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def _write_or_print(text, path):
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_assemble(args):
    with open(args.source) as f:
        source = f.read()
    image = asm.assemble(source, mode=args.mode, base=args.base)
    out = args.output or (args.source.rsplit(".", 1)[0] + ".bin")
    asm.save_image(image, out)
    sizes = image.size_report()
    print(f"assembled {sizes['count16'] + sizes['count32']} instructions, "
          f"{sizes['total_bytes']} bytes "
          f"({sizes['count16']}x16-bit, {sizes['count32']}x32-bit, "
          f"{sizes['pool_bytes']} pool bytes) -> {out}")
    return EXIT_PASS


def cmd_run(args):
    report, sim = harness.run(args.config, return_sim=True)
    _write_or_print(harness.report_to_json(report), args.report)
    if args.trace:
        with open(args.trace, "w") as f:
            f.write(sim.trace.to_jsonl() + "\n")
    return EXIT_PASS if report["passed"] or not report["assertions"] \
        else EXIT_ASSERTION


def cmd_scenario(args):
    if args.list_scenarios or args.name is None:
        for name in sorted(scenarios.SCENARIOS):
            print(name)
        return EXIT_PASS
    fn = scenarios.SCENARIOS.get(args.name)
    if fn is None:
        print(f"unknown scenario {args.name!r}; try --list", file=sys.stderr)
        return EXIT_CONFIG
    overrides = parse_overrides(args.set)
    if args.name == "soft_error":
        report = fn(seed=args.seed, count=args.count, overrides=overrides)
    else:
        report = fn(overrides=overrides)
    _write_or_print(harness.report_to_json(report), args.report)
    return EXIT_PASS if report["passed"] else EXIT_ASSERTION


def cmd_inject(args):
    report = scenarios.scenario_soft_error(seed=args.seed, count=args.count,
                                           target=args.target)
    _write_or_print(harness.report_to_json(report), args.report)
    return EXIT_PASS if report["passed"] else EXIT_ASSERTION


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        if args.command == "assemble":
            return cmd_assemble(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "scenario":
            return cmd_scenario(args)
        if args.command == "inject":
            return cmd_inject(args)
    except (ConfigValidationError, ConfigError, MpuConfigError, NvicError,
            AsmError, FileNotFoundError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
