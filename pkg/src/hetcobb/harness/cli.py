"""Command-line interface.

::

    hetcobb simulate   --out firms.csv [--with-truth]
    hetcobb estimate   --data firms.csv --out estimates.csv [--report summary.json]
    hetcobb montecarlo --json report.json --csv report.csv
    hetcobb diagnose   --data firms.csv --out locality.csv
    hetcobb report     --input report.json --format csv --out report.csv

Every subcommand takes ``--config FILE`` (flat ``key = value``),
repeated ``--set key=value`` overrides, ``--seed``, ``--variant`` and
``--oracle-mode``. Exit status: 0 success, 1 usage or configuration error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..dataset import write_columns_csv
from ..exceptions import ConfigError, DataError, DomainError, NumericalError, PreconditionError
from ..identification import OracleExpectations, locality_diagnostic, run_pipeline
from ..simulator import simulate_cross_section
from .config import (
    DEFAULTS,
    estimator_config_from,
    experiment_config_from,
    format_config,
    load_config,
    resolve_config,
    simulation_config_from,
    technology_from,
)
from .ingest import drop_summary, ingest_csv
from .montecarlo import emit_report, load_report, run_montecarlo

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int, help="seed (simulation.seed and experiment.seed)")
    p.add_argument("--variant", help="model variant (technology.variant)")
    p.add_argument("--oracle-mode", action="store_true",
                   help="replace conditional expectations by their analytic values (needs a known technology)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetcobb", description="Firm-level heterogeneous Cobb-Douglas recovery.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic cross-section")
    _common(p)
    p.add_argument("--out", required=True, help="CSV file to write")
    p.add_argument("--n-firms", type=int, help="simulation.n_firms")
    p.add_argument("--with-truth", action="store_true", help="also write hidden true_* columns")
    p.add_argument("--echo-config", help="write the resolved configuration here")

    p = sub.add_parser("estimate", help="estimate firm-level coefficients from a CSV file")
    _common(p)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--out", required=True, help="per-firm estimates CSV")
    p.add_argument("--report", help="JSON summary with configuration echo and flag counts")

    p = sub.add_parser("montecarlo", help="run a recovery experiment")
    _common(p)
    p.add_argument("--json", help="JSON report path (experiment.output_json)")
    p.add_argument("--csv", help="CSV report path (experiment.output_csv)")
    p.add_argument("--replications", type=int, help="experiment.n_replications")
    p.add_argument("--sizes", help="experiment.sample_sizes, comma separated")
    p.add_argument("--include-runtime", action="store_true",
                   help="add wall-clock timings to the JSON report (makes it non-reproducible)")

    p = sub.add_parser("diagnose", help="locality-of-identification diagnostic")
    _common(p)
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--out", required=True, help="per-firm diagnostic CSV")
    p.add_argument("--report", help="JSON summary")

    p = sub.add_parser("report", help="convert or summarize a saved JSON report")
    p.add_argument("--input", required=True, help="JSON report from montecarlo")
    p.add_argument("--format", choices=("json", "csv", "text"), default="text")
    p.add_argument("--out", help="output path (default: standard output for text)")

    sub.add_parser("config", help="print every configuration key with its default and meaning")
    return parser


def _resolved(args) -> dict[str, str]:
    overrides = load_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        overrides[k] = v
    if args.seed is not None:
        overrides["simulation.seed"] = str(args.seed)
        overrides["experiment.seed"] = str(args.seed)
    if args.variant is not None:
        overrides["technology.variant"] = args.variant
    if args.oracle_mode:
        overrides["experiment.oracle_mode"] = "true"
    for attr, key in (("n_firms", "simulation.n_firms"), ("replications", "experiment.n_replications"),
                      ("sizes", "experiment.sample_sizes"), ("json", "experiment.output_json"),
                      ("csv", "experiment.output_csv")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = str(value)
    return resolve_config(overrides)


def _oracle(cfg):
    """Analytic expectations for data drawn from the configured technology."""
    if cfg["experiment.oracle_mode"].lower() not in ("true", "yes", "1", "on"):
        return None
    return OracleExpectations(technology_from(cfg), float(cfg["simulation.eta_sigma"]))


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _cmd_simulate(args) -> int:
    cfg = _resolved(args)
    ds = simulate_cross_section(simulation_config_from(cfg))
    ds.to_csv(args.out, with_truth=args.with_truth)
    if args.echo_config:
        Path(args.echo_config).write_text(format_config(cfg))
    print(f"wrote {len(ds)} firms to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_estimate(args) -> int:
    cfg = _resolved(args)
    config = estimator_config_from(cfg)
    ds = ingest_csv(args.data, config.model_variant)
    print(drop_summary(ds), file=sys.stderr)
    est = run_pipeline(ds, config, oracle=_oracle(cfg))
    cols = {}
    if "firm_id" in ds:
        cols["firm_id"] = ds["firm_id"]
    cols.update(est.to_columns())
    write_columns_csv(args.out, cols)
    summary = {
        "config": cfg,
        "n_firms": len(est),
        "flag_counts": est.flag_counts(),
        "ingest": ds.meta["ingest"],
    }
    if args.report:
        _write_json(args.report, summary)
    print(json.dumps(summary["flag_counts"]), file=sys.stderr)
    return EXIT_OK


def _cmd_montecarlo(args) -> int:
    cfg = _resolved(args)
    exp = experiment_config_from(cfg)
    report = run_montecarlo(exp)
    if exp.output_json:
        emit_report(report, "json", exp.output_json, include_runtime=args.include_runtime)
    if exp.output_csv:
        emit_report(report, "csv", exp.output_csv)
    if not (exp.output_json or exp.output_csv):
        _print_table(report, sys.stdout)
    print(f"{report.runtime['runs']} runs in {report.runtime['total_seconds']:.1f} s; "
          f"oracle check {'passed' if report.oracle_passed else 'FAILED'}", file=sys.stderr)
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    cfg = _resolved(args)
    config = estimator_config_from(cfg)
    ds = ingest_csv(args.data, config.model_variant)
    print(drop_summary(ds), file=sys.stderr)
    rep = locality_diagnostic(ds, config)
    cols = {}
    if "firm_id" in ds:
        cols["firm_id"] = ds["firm_id"]
    cols["density"] = rep.density
    for j, s in enumerate(config.variant.state):
        cols[f"spread_{s}"] = rep.spread[:, j]
    cols["low_density"] = rep.low_density.astype(float)
    cols["low_spread"] = rep.low_spread.astype(float)
    cols["flagged"] = rep.flagged.astype(float)
    write_columns_csv(args.out, cols)
    summary = {"config": cfg, **rep.summary()}
    if args.report:
        _write_json(args.report, summary)
    print(json.dumps(rep.summary()), file=sys.stderr)
    return EXIT_OK


def _print_table(report, fh) -> None:
    fh.write(f"{'coef':>6} {'n':>7} {'median_bias':>12} {'median_rmse':>12} {'trimmed':>8}\n")
    for c in report.cells:
        fh.write(f"{c.coefficient:>6} {c.n:>7d} {c.median_bias:>12.5f} {c.median_rmse:>12.5f} "
                 f"{c.trimmed_rate:>8.3f}\n")
    fh.write(f"oracle check: {'passed' if report.oracle_passed else 'FAILED'}\n")


def _cmd_report(args) -> int:
    if args.format != "text" and not args.out:
        raise ConfigError("--out is required for json and csv output")
    report = load_report(args.input)
    if args.format == "text":
        if args.out:
            with open(args.out, "w") as fh:
                _print_table(report, fh)
        else:
            _print_table(report, sys.stdout)
        return EXIT_OK
    emit_report(report, args.format, args.out, include_runtime=bool(report.runtime))
    return EXIT_OK


def _cmd_config(args) -> int:
    for key, (default, doc) in DEFAULTS.items():
        print(f"{key} = {default}    # {doc}")
    print("technology.beta_<name> = a, b[, b2]    # affine: a + b*omega (+ b2*omega_2); "
          "logistic: a + b*expit(kappa*(omega - center))")
    print("technology.kappa, technology.center    # logistic family parameters")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "montecarlo": _cmd_montecarlo,
    "diagnose": _cmd_diagnose,
    "report": _cmd_report,
    "config": _cmd_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, PreconditionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
