"""Command line entry point: ``run``, ``partition-report`` and ``compare``.

Configuration comes from an optional flat ``key = value`` file, overridden by
``--set key=value`` flags. Exit codes: 0 ok, 1 configuration error, 2 runtime
error. The output directory is ``--out``, else ``$HETFL_OUTPUT_DIR``, else
``./hetfl-out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import typing
from datetime import datetime, timezone
from pathlib import Path

from hetfl import __version__
from hetfl.data import partition_dirichlet, partition_report_csv
from hetfl.errors import ConfigError, HetFLError
from hetfl.federation import ExperimentConfig, make_datasets, partition_spec, run_experiment
from hetfl.metrics import EvalReport, RoundRecord, format_percent

OUTPUT_ENV = "HETFL_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
ROUNDS_HEADER = ("round", "global_acc", "distilled_mean", "personalised_mean", "gap")
SEED_KEYS = ("seed", "data_seed", "dropout_seed")

# compare ignores these when checking that two runs differ only by method
_METHOD_AXIS = {"method", "beta", "rho"}


# ---------------------------------------------------------------- config

def _field_types() -> dict[str, object]:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str, kind) -> object:
    raw = raw.strip()
    optional = type(None) in typing.get_args(kind)
    if optional:
        if raw.lower() in ("", "none", "null"):
            return None
        kind = next(a for a in typing.get_args(kind) if a is not type(None))
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if typing.get_origin(kind) is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def parse_pairs(pairs: dict[str, str]) -> dict[str, object]:
    """Typed values for raw string pairs; unknown keys are rejected."""
    types = _field_types()
    out = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"{key}: unknown configuration key")
        out[key] = _coerce(key, raw, types[key])
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def _split_flags(flags: list[str] | None) -> dict[str, str]:
    pairs = {}
    for item in flags or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value
    return pairs


def parse_config(path: str | Path | None = None, flags: list[str] | None = None) -> ExperimentConfig:
    """File values first, then flags; every unset key keeps its default."""
    pairs = read_config_file(path) if path else {}
    pairs.update(_split_flags(flags))
    return ExperimentConfig(**parse_pairs(pairs))


def serialize_config(config: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config` for the flat text format."""
    lines = []
    for key, value in dataclasses.asdict(config).items():
        if value is None:
            text = "none"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_to_json(config: ExperimentConfig) -> dict:
    d = dataclasses.asdict(config)
    if d["client_depths"] is not None:
        d["client_depths"] = list(d["client_depths"])
    return d


def config_from_json(d: dict) -> ExperimentConfig:
    d = dict(d)
    unknown = set(d) - set(_field_types())
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown configuration key")
    if d.get("client_depths") is not None:
        d["client_depths"] = tuple(d["client_depths"])
    return ExperimentConfig(**d)


# ---------------------------------------------------------------- outputs

def rounds_csv(records: list[RoundRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROUNDS_HEADER)
    for r in records:
        writer.writerow([r.round_index, format_percent(r.global_acc),
                         format_percent(r.distilled_acc_mean),
                         format_percent(r.personalised_acc_mean), format_percent(r.gap)])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def resolve_output_dir(explicit: str | None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV) or "hetfl-out")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_to_dir(config: ExperimentConfig, out_dir: Path, log=None) -> EvalReport:
    """Run one experiment and write rounds.csv, summary.json and manifest.json."""
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _now()

    def progress(rec: RoundRecord) -> None:
        if log is not None:
            print(f"round {rec.round_index}: global {format_percent(rec.global_acc)} "
                  f"distilled {format_percent(rec.distilled_acc_mean)} "
                  f"personalised {format_percent(rec.personalised_acc_mean)}", file=log)

    records, report = run_experiment(config, on_round=progress)
    paths = {name: str(out_dir / name) for name in ("rounds.csv", "summary.json", "manifest.json")}
    _write(out_dir / "rounds.csv", rounds_csv(records))
    _write(out_dir / "summary.json", _dump_json(report.to_dict()))
    manifest = {
        "config": config_to_json(config),
        "seeds": {k: getattr(config, k) for k in SEED_KEYS},
        "started": started,
        "finished": _now(),
        "outputs": paths,
        "version": __version__,
    }
    _write(out_dir / "manifest.json", _dump_json(manifest))
    return report


def load_manifest(path: str | Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"manifest: cannot load {path}: {e}") from None
    if "config" not in data:
        raise ConfigError("manifest: missing 'config' section")
    return config_from_json(data["config"])


def _load_run(path: str) -> tuple[EvalReport, dict | None]:
    p = Path(path)
    summary = p / "summary.json" if p.is_dir() else p
    try:
        report = EvalReport.from_dict(json.loads(summary.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, TypeError, KeyError) as e:
        raise ConfigError(f"compare: cannot load run summary {summary}: {e}") from None
    manifest = summary.parent / "manifest.json"
    config = json.loads(manifest.read_text(encoding="utf-8"))["config"] if manifest.exists() else None
    return report, config


COMPARE_METRICS = (
    ("initial", "initial_mean"),
    ("global", "global_final"),
    ("distilled", "distilled_final_mean"),
    ("personalised", "personalised_final_mean"),
    ("gap", "gap_final"),
)


def compare_reports(a: EvalReport, b: EvalReport, tail: int | None = None) -> list[dict]:
    """Signed deltas ``b - a`` in percentage points, with a direction marker.

    With ``tail`` set, round metrics use the mean over the last ``tail`` rounds
    instead of the final round.
    """
    round_attr = {"global_final": "global_acc", "distilled_final_mean": "distilled_acc_mean",
                  "personalised_final_mean": "personalised_acc_mean", "gap_final": "gap"}
    rows = []
    for name, attr in COMPARE_METRICS:
        if tail and attr in round_attr and a.per_round and b.per_round:
            va, vb = a.tail_mean(round_attr[attr], tail), b.tail_mean(round_attr[attr], tail)
        else:
            va, vb = getattr(a, attr), getattr(b, attr)
        if va is None or vb is None:
            rows.append(dict(metric=name, a=va, b=vb, delta=None, direction="n/a"))
            continue
        delta = 100.0 * (vb - va)
        direction = "up" if delta > 0 else "down" if delta < 0 else "same"
        rows.append(dict(metric=name, a=va, b=vb, delta=delta, direction=direction))
    return rows


def format_compare_row(row: dict) -> str:
    def pct(v):
        return "-" if v is None else format_percent(v)
    delta = "-" if row["delta"] is None else f"{row['delta']:+.2f}"
    return f"{row['metric']:<13}{pct(row['a']):>9}{pct(row['b']):>9}{delta:>9}  {row['direction']}"


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    if args.manifest:
        if args.config or args.set:
            raise ConfigError("run: --manifest cannot be combined with --config or --set")
        config = load_manifest(args.manifest)
    else:
        config = parse_config(args.config, args.set)
    out = resolve_output_dir(args.out)
    report = run_to_dir(config, out, log=None if args.quiet else sys.stderr)
    print(f"wrote {out / 'rounds.csv'}")
    if report.global_final is not None:
        print(f"final: global {format_percent(report.global_final)} "
              f"distilled {format_percent(report.distilled_final_mean)} "
              f"personalised {format_percent(report.personalised_final_mean)} "
              f"gap {format_percent(report.gap_final)}")
    return EXIT_OK


def cmd_partition_report(args) -> int:
    config = parse_config(args.config, args.set)
    _, local_train, _ = make_datasets(config)
    shards = partition_dirichlet(local_train, partition_spec(config))
    out = resolve_output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "partition.csv", partition_report_csv(shards))
    print(f"wrote {out / 'partition.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    (a, ca), (b, cb) = _load_run(args.run_a), _load_run(args.run_b)
    if ca is not None and cb is not None:
        differing = sorted(k for k in set(ca) | set(cb)
                           if k not in _METHOD_AXIS and ca.get(k) != cb.get(k))
        if differing:
            print(f"warning: runs also differ in {', '.join(differing)}", file=sys.stderr)
    rows = compare_reports(a, b, args.tail)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"{'metric':<13}{'A':>9}{'B':>9}{'B-A':>9}")
        for row in rows:
            print(format_compare_row(row))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetfl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one configuration key (repeatable)")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./hetfl-out)")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--manifest", help="rerun exactly the configuration in a manifest.json")
    run.add_argument("--quiet", action="store_true", help="no per-round progress on stderr")
    run.set_defaults(func=cmd_run)

    part = sub.add_parser("partition-report", help="write per-client class counts")
    common(part)
    part.set_defaults(func=cmd_partition_report)

    cmp_ = sub.add_parser("compare", help="signed deltas between two completed runs")
    cmp_.add_argument("run_a", help="run directory or summary.json (baseline)")
    cmp_.add_argument("run_b", help="run directory or summary.json")
    cmp_.add_argument("--tail", type=int, default=None,
                      help="average round metrics over the last N rounds")
    cmp_.add_argument("--json", action="store_true")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except HetFLError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
