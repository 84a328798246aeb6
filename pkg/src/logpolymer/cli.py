"""Command line entry point: ``logpolymer <experiment> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import sys

from .config import ConfigFileError, load_config, parse_value, split_settings
from .experiments import DEFAULTS, ConfigError, ExperimentConfig, run_experiment

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sizes(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="logpolymer", description="Log-gamma polymer experiments.")
    p.add_argument("experiment", choices=list(DEFAULTS) + ["all"])
    p.add_argument("--config", help="key = value file; command line flags take precedence")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--sizes", type=_sizes, help="comma-separated, strictly increasing")
    p.add_argument("--out", help="output path (stdout when omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the JSON payload")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one parameter")
    return p


def make_config(name: str, args, file_values: dict) -> ExperimentConfig:
    run, params = split_settings(file_values)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = parse_value(v)
    unknown = set(params) - set(DEFAULTS[name]["params"])
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {', '.join(sorted(unknown))}")
    for key in ("seed", "replicas", "sizes", "threads"):
        val = getattr(args, key)
        if val is not None:
            run[key] = val
    return ExperimentConfig.default(name, params=params, output_path=args.out, **run)


def write_csv(reports, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["experiment", "size", "replica", "statistic", "value"])
    for rep in reports:
        for size, replica, stat, value in rep.raw:
            w.writerow([rep.config["name"], size, replica, stat, repr(value) if isinstance(value, float) else value])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = load_config(args.config) if args.config else {}
        names = list(DEFAULTS) if args.experiment == "all" else [args.experiment]
        if args.experiment == "all" and (args.set or split_settings(file_values)[1]):
            raise ConfigError("parameter overrides are per experiment; run them one at a time")
        configs = [make_config(n, args, file_values) for n in names]
        reports = []
        for cfg in configs:
            reports.append(run_experiment(cfg))
            for k, v in reports[-1].timings.items():
                print(f"[{cfg.name}] {k}: {v:.3f}s", file=sys.stderr)
    except (ConfigError, ConfigFileError, OSError) as exc:
        print(f"logpolymer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        if args.format == "csv":
            write_csv(reports, out)
        else:
            payloads = [r.payload(args.timings) for r in reports]
            doc = payloads[0] if len(payloads) == 1 else {"schema_version": 1, "experiments": payloads,
                                                           "passed": all(p["passed"] for p in payloads)}
            json.dump(doc, out, sort_keys=True, indent=2)
            out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    for r in reports:
        for name, ok in sorted(r.verdicts.items()):
            if not ok:
                print(f"[{r.config['name']}] FAIL {name}", file=sys.stderr)
        for w in r.statistics.get("warnings", []):
            print(f"[{r.config['name']}] warning: {w}", file=sys.stderr)
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
