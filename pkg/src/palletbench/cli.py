"""Command-line entry point.

Exit codes: 0 run completed (a failure verdict is still a completed run),
1 usage or input error, 2 integrity or numeric error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    ValidationThresholds,
    load_params,
    load_schema,
    parse_params_json,
    parse_ranges_json,
)
from .errors import ConfigError, FatalNumeric, IntegrityFailure, PalletbenchError
from .runner import (
    EXPORT_FORMATS,
    canonical_json,
    emit_report_json,
    load_ndjson_trace,
    make_sink,
    run_campaign,
    run_simulation,
)
from .validation import WrapStrainTrace, classify

EXIT_OK, EXIT_USAGE, EXIT_ENGINE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="palletbench", description="Palletized-load acceleration test simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one simulation from a parameter file")
    s.add_argument("--params", required=True, help="parameter JSON")
    s.add_argument("--export", choices=EXPORT_FORMATS, help="also write frames in this format")
    s.add_argument("--out", default=".", help="output directory (default: .)")

    c = sub.add_parser("campaign", help="run a randomized batch of simulations")
    c.add_argument("--schema", required=True, help="palletizing schema XML")
    c.add_argument("--ranges", required=True, help="parameter ranges JSON")
    c.add_argument("--runs", type=int, required=True)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--parallel", type=int, default=1)
    c.add_argument("--params", help="base parameter JSON (defaults otherwise)")
    c.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="re-classify an exported poses-ndjson trace")
    v.add_argument("--trace", required=True)
    v.add_argument("--thresholds", help="thresholds JSON (defaults otherwise)")

    sc = sub.add_parser("schema", help="schema utilities")
    ssub = sc.add_subparsers(dest="schema_command", required=True, parser_class=_Parser)
    chk = ssub.add_parser("check", help="parse and check a schema XML")
    chk.add_argument("xml")
    return p


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _thresholds(path: str | None) -> ValidationThresholds:
    if path is None:
        return ValidationThresholds()
    try:
        data = json.loads(_read(path))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("thresholds"), dict):
        data = data["thresholds"]
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    known = ValidationThresholds.__dataclass_fields__
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise UsageError(f"{path}: unknown threshold keys {unknown}")
    return ValidationThresholds(**{k: float(v) for k, v in data.items()})


def cmd_simulate(args) -> int:
    if not Path(args.params).is_file():
        raise UsageError(f"parameter file not found: {args.params}")
    params = load_params(args.params)
    out = Path(args.out)
    sink = make_sink(args.export, out) if args.export else None
    try:
        result = run_simulation(params, sink=sink)
    finally:
        files = sink.close() if sink is not None else []
    result.manifest.extend(files)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(emit_report_json(result))
    r = result.report
    print(f"outcome: {r.outcome}")
    for v in r.violations:
        print(f"  {v.criterion}: {','.join(v.ids)} frame {v.frame} value {v.value:.6g} "
              f"threshold {v.threshold:.6g}")
    print(f"report: {out / 'report.json'}")
    return EXIT_OK


def cmd_campaign(args) -> int:
    if args.runs < 1:
        raise UsageError("--runs must be at least 1")
    schema = load_schema(args.schema)
    ranges = parse_ranges_json(_read(args.ranges))
    base = None
    if args.params:
        base = parse_params_json(_read(args.params), base_dir=str(Path(args.params).parent),
                                 schema=schema)
        base = replace(base, schema_file=None)
    stats, _ = run_campaign(schema, ranges, args.runs, args.seed, args.parallel, base=base,
                            out_dir=args.out)
    print(f"runs {stats.runs}: {stats.successes} success, {stats.failures} failure, "
          f"{stats.inconclusive} inconclusive (success rate {stats.success_rate:.3f})")
    return EXIT_OK


def cmd_validate(args) -> int:
    th = _thresholds(args.thresholds)
    try:
        meta, trace, strains = load_ndjson_trace(args.trace)
    except OSError as exc:
        raise UsageError(f"cannot read {args.trace}: {exc.strerror or exc}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.trace}: malformed trace ({exc})") from None
    tear = meta.get("tear_threshold")
    report = classify(trace, strains if tear is not None else None, th, meta["unit_height_m"],
                      t_stop=meta["t_stop"], tear_threshold=tear if tear is not None else float("inf"))
    doc = {"outcome": report.outcome, "measurements": report.measurements,
           "violations": [v.to_dict() for v in report.violations]}
    sys.stdout.write(canonical_json(doc).decode() + "\n")
    return EXIT_OK


def cmd_schema_check(args) -> int:
    schema = load_schema(args.xml)
    print(f"{schema.name or Path(args.xml).name}: {len(schema.layers)} layers, "
          f"{schema.n_packages} packages, total mass {schema.total_mass:g} kg, "
          f"unit height {schema.unit_height:g} mm")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "campaign":
            return cmd_campaign(args)
        if args.command == "validate":
            return cmd_validate(args)
        return cmd_schema_check(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"palletbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrityFailure, FatalNumeric) as exc:
        print(f"palletbench: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except PalletbenchError as exc:
        print(f"palletbench: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except OSError as exc:
        print(f"palletbench: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
