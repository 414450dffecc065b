"""Command-line front end: experiment files, sweeps, trace and summary writers.

Experiment files are YAML::

    output_dir: out/robustness
    format: csv            # or json
    threshold: 0.1         # distance used for iterations/bits-to-threshold
    defaults:              # merged under every run and the sweep base
      T: 300
    runs:
      trimmed:
        compressor: {kind: l1qsgd}
        aggregator: {kind: norm_trim, beta: 0.15}
        alpha: 0.1
        attack: {kind: gaussian, noise_var: 10}
    sweep:
      name: beta
      base: {alpha: 0.2, attack: {kind: gaussian}}
      axes:
        aggregator.beta: [0.15, 0.2, 0.25]

Exit status is 0 on success, 2 for an invalid configuration and 3 for I/O errors.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import itertools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from byzgd import __version__, problems, theory
from byzgd.aggregation import AggregatorSpec
from byzgd.byzantine import AttackSpec
from byzgd.compressors import CompressorSpec, message_bits
from byzgd.engine import RunConfig, RunResult, TraceRecord, run
from byzgd.errors import InvalidInput, InvalidSpec
from byzgd.problems import ProblemSpec

TRACE_COLUMNS = ("t", "dist_to_opt", "loss", "grad_norm", "trimmed", "byz_caught", "cum_bits", "delta_norm")
FORMATS = ("csv", "json")
_NESTED = {"problem": ProblemSpec, "compressor": CompressorSpec, "aggregator": AggregatorSpec, "attack": AttackSpec}
_RUN_EXTRAS = ("data_csv",)


@dataclass
class RunEntry:
    name: str
    config: RunConfig
    data_csv: str | None = None


@dataclass
class Experiment:
    runs: list[RunEntry]
    output_dir: str = "out"
    format: str = "csv"
    threshold: float = 0.1
    max_runs: int = 256
    raw: dict = field(default_factory=dict)


def _strict(cls, data, where: str):
    if not isinstance(data, dict):
        raise InvalidSpec(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise InvalidSpec(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise InvalidSpec(f"{where}: {exc}") from None


def config_from_dict(data: dict, where: str = "run") -> RunConfig:
    """Build and validate a :class:`RunConfig`; unknown fields are errors."""
    if not isinstance(data, dict):
        raise InvalidSpec(f"{where}: expected a mapping")
    data = dict(data)
    for key, cls in _NESTED.items():
        if key in data:
            data[key] = _strict(cls, data[key] if data[key] is not None else {}, f"{where}.{key}")
    if data.get("w0") is not None:
        data["w0"] = tuple(float(v) for v in data["w0"])
    cfg = _strict(RunConfig, data, where)
    try:
        cfg.validate()
    except InvalidInput as exc:
        raise InvalidSpec(f"{where}: {exc}") from None
    except InvalidSpec as exc:
        raise InvalidSpec(f"{where}: {exc}") from None
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain-data form of a config; ``config_from_dict`` inverts it."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            value = dataclasses.asdict(value)
        elif isinstance(value, tuple):
            value = list(value)
        out[f.name] = value
    return out


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (over or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_path(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise InvalidSpec(f"sweep axis {dotted}: {part} is not a mapping")
    node[parts[-1]] = value


def _split_extras(raw: dict) -> tuple[dict, dict]:
    raw = dict(raw)
    extras = {k: raw.pop(k) for k in _RUN_EXTRAS if k in raw}
    return raw, extras


def parse_experiment(data: dict) -> Experiment:
    if not isinstance(data, dict):
        raise InvalidSpec("experiment file must be a mapping")
    allowed = {"output_dir", "format", "threshold", "max_runs", "defaults", "runs", "sweep"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InvalidSpec(f"experiment: unknown field(s) {', '.join(unknown)}")
    fmt = data.get("format", "csv")
    if fmt not in FORMATS:
        raise InvalidSpec(f"format must be one of {FORMATS}, got {fmt!r}")
    max_runs = data.get("max_runs", 256)
    if not isinstance(max_runs, int) or max_runs < 1:
        raise InvalidSpec("max_runs must be a positive integer")
    threshold = data.get("threshold", 0.1)
    if not isinstance(threshold, (int, float)) or threshold < 0:
        raise InvalidSpec("threshold must be a nonnegative number")
    defaults = data.get("defaults") or {}
    named: list[tuple[str, dict]] = []
    runs = data.get("runs") or {}
    if not isinstance(runs, dict):
        raise InvalidSpec("runs must map run names to configurations")
    for name, body in runs.items():
        named.append((str(name), _deep_merge(defaults, body or {})))
    sweep = data.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) - {"name", "base", "axes"}:
            raise InvalidSpec("sweep takes only name, base and axes")
        axes = sweep.get("axes") or {}
        if not isinstance(axes, dict) or not axes:
            raise InvalidSpec("sweep.axes must map dotted field paths to value lists")
        for key, values in axes.items():
            if not isinstance(values, list) or not values:
                raise InvalidSpec(f"sweep axis {key} needs a nonempty list")
        total = 1
        for values in axes.values():
            total *= len(values)
        if total + len(named) > max_runs:
            raise InvalidSpec(f"experiment expands to {total + len(named)} runs, above max_runs={max_runs}")
        base = _deep_merge(defaults, sweep.get("base") or {})
        prefix = sweep.get("name", "sweep")
        for combo in itertools.product(*axes.values()):
            body = copy.deepcopy(base)
            label = []
            for key, value in zip(axes, combo):
                _set_path(body, key, value)
                label.append(f"{key.split('.')[-1]}={value}")
            named.append((f"{prefix}-{'-'.join(label)}", body))
    if not named:
        raise InvalidSpec("experiment defines no runs")
    if len(named) > max_runs:
        raise InvalidSpec(f"experiment has {len(named)} runs, above max_runs={max_runs}")
    seen = set()
    entries = []
    for name, body in named:
        if name in seen:
            raise InvalidSpec(f"duplicate run name {name!r}")
        seen.add(name)
        body, extras = _split_extras(body)
        entries.append(RunEntry(name, config_from_dict(body, f"runs.{name}"), extras.get("data_csv")))
    return Experiment(entries, str(data.get("output_dir", "out")), fmt, float(threshold), max_runs, data)


def load_experiment(path: str | Path) -> Experiment:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise InvalidSpec(f"{path}: not valid YAML ({exc})") from None
    exp = parse_experiment(data)
    out = Path(exp.output_dir)
    if not out.is_absolute():
        exp.output_dir = os.path.normpath(Path(path).parent / out)
    for entry in exp.runs:
        if entry.data_csv and not Path(entry.data_csv).is_absolute():
            entry.data_csv = str(Path(path).parent / entry.data_csv)
    return exp


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_row(rec: TraceRecord) -> dict:
    row = dataclasses.asdict(rec)
    row["trimmed"] = list(rec.trimmed)
    return row


def trace_text(records: list[TraceRecord], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([_record_row(r) for r in records], indent=1) + "\n"
    if fmt != "csv":
        raise InvalidSpec(f"format must be one of {FORMATS}, got {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in records:
        writer.writerow([r.t, _fmt(r.dist_to_opt), _fmt(r.loss), _fmt(r.grad_norm),
                         ";".join(str(i) for i in r.trimmed), r.byz_caught, r.cum_bits, _fmt(r.delta_norm)])
    return buf.getvalue()


def emit_trace(records: list[TraceRecord], fmt: str, path: str | Path) -> None:
    Path(path).write_text(trace_text(records, fmt))


def read_trace_csv(path: str | Path) -> list[TraceRecord]:
    """Parse a CSV written by :func:`emit_trace` back into records."""
    def num(s):
        return None if s == "" else float(s)

    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [TraceRecord(int(r["t"]), num(r["dist_to_opt"]), float(r["loss"]), float(r["grad_norm"]),
                        tuple(int(i) for i in r["trimmed"].split(";") if i), int(r["byz_caught"]),
                        int(r["cum_bits"]), num(r["delta_norm"])) for r in rows]


def _load_shards(entry: RunEntry):
    X, y = problems.load_csv(entry.data_csv)
    spec = entry.config.problem
    if spec.kind == "least_squares":
        w_star = np.linalg.lstsq(X, y, rcond=None)[0]
        return problems.split(X, y, spec.m, "least_squares", w_star)
    return problems.split(X, y.astype(np.int64), spec.m, "logistic", None, spec.num_classes)


def theory_verdict(cfg: RunConfig, result: RunResult) -> dict | None:
    """Feasibility of the run's (alpha, beta, smallest observed delta) under its option."""
    if cfg.aggregator.kind != "norm_trim" or result.min_delta is None:
        return None
    option = "ef" if cfg.algorithm == 2 else str(cfg.option)
    return theory.check(cfg.alpha, cfg.aggregator.beta, result.min_delta, option)


def summarize(entry: RunEntry, result: RunResult, threshold: float) -> dict:
    hit = next((r for r in result.records if r.dist_to_opt is not None and r.dist_to_opt <= threshold), None)
    last = result.records[-1]
    verdict = theory_verdict(entry.config, result)
    return {
        "run": entry.name,
        "final_dist": last.dist_to_opt,
        "final_loss": last.loss,
        "iterations": last.t,
        "cum_bits": last.cum_bits,
        "converged": hit is not None,
        "iterations_to_threshold": None if hit is None else hit.t,
        "bits_to_threshold": None if hit is None else hit.cum_bits,
        "min_delta": result.min_delta,
        "theory_option": None if verdict is None else verdict["option"],
        "theory_feasible": None if verdict is None else verdict["feasible"],
        "theory_margin": None if verdict is None else verdict["margin"],
    }


def summary_text(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=1) + "\n"
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(rows[0].keys())
        for row in rows:
            writer.writerow([_fmt(v) for v in row.values()])
    return buf.getvalue()


def execute(entry: RunEntry) -> RunResult:
    shards = _load_shards(entry) if entry.data_csv else None
    return run(entry.config, shards=shards)


def run_experiment(exp: Experiment, threads: int | None = None) -> list[dict]:
    """Execute every run, write ``<name>.<format>`` traces and ``summary.<format>``."""
    out = Path(exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if threads is None:
        threads = int(os.environ.get("BYZGD_THREADS", "1") or 1)
    threads = max(1, threads)

    def one(entry: RunEntry) -> dict:
        result = execute(entry)
        emit_trace(result.records, exp.format, out / f"{entry.name}.{exp.format}")
        return summarize(entry, result, exp.threshold)

    if threads == 1:
        rows = [one(e) for e in exp.runs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, exp.runs))
    (out / f"summary.{exp.format}").write_text(summary_text(rows, exp.format))
    return rows


def _cmd_run(args) -> int:
    exp = load_experiment(args.file)
    if args.output_dir:
        exp.output_dir = args.output_dir
    rows = run_experiment(exp)
    for row in rows:
        dist = row["final_dist"]
        shown = "n/a" if dist is None else f"{dist:.6g}"
        print(f"{row['run']}: final_dist={shown} converged={row['converged']} "
              f"iterations_to_threshold={row['iterations_to_threshold']}")
    print(f"wrote {len(rows)} trace(s) and summary.{exp.format} to {exp.output_dir}")
    return 0


def _cmd_check(args) -> int:
    if not 0 <= args.alpha < 0.5 or not 0 <= args.beta < 0.5:
        raise InvalidSpec("alpha and beta must lie in [0, 1/2)")
    if not 0 < args.delta <= 1:
        raise InvalidSpec("delta must lie in (0, 1]")
    if args.lambda0 < 0:
        raise InvalidSpec("lambda0 must be nonnegative")
    res = theory.check(args.alpha, args.beta, args.delta, args.option, args.lambda0)
    if args.option == "ef":
        print(f"condition value: {res['value']!r} (limit {res['limit']})")
    else:
        print(f"delta threshold (option {args.option}): {res['threshold']!r}")
        print(f"delta: {args.delta!r}")
    print(f"margin: {res['margin']!r}")
    print(f"feasible: {'yes' if res['feasible'] else 'no'}")
    if not res["beta_covers_alpha"]:
        print("warning: beta < alpha, trimming cannot remove every Byzantine worker")
    print("note: error-floor bounds are reported up to the universal constant c_univ")
    return 0


def _cmd_bits(args) -> int:
    spec = CompressorSpec(args.compressor, k=args.k, s=args.s)
    spec.check_dim(args.d)
    print(message_bits(spec, args.d, with_norm=args.with_norm))
    return 0


def _cmd_version(args) -> int:
    print(__version__)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="byzgd", description="Byzantine-robust compressed gradient descent simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment file")
    p.add_argument("file")
    p.add_argument("--output-dir", help="override the file's output_dir")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check", help="compression/adversary feasibility check")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--option", choices=("1", "2", "ef"), required=True)
    p.add_argument("--lambda0", type=float, default=1e-2)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("bits", help="bits per message for a compressor")
    p.add_argument("--compressor", required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--with-norm", action="store_true")
    p.set_defaults(func=_cmd_bits)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=_cmd_version)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidSpec, InvalidInput) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
