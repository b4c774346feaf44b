"""Command-line front end: configuration, task pipelines, report emission.

Subcommands: prob, quantile, cvar, strata.  Every flag can also come from a
JSON config file (--config); explicit flags win.  Reports are emitted as an
aligned table, JSON, or CSV, and are byte-identical for identical (config,
seed) at any worker count.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .core import RngStream
from .cvar import estimate_cvar
from .errors import (BudgetExhausted, ConfigError, MaxLevelsExceeded,
                     SimulatorError, TailshiftError)
from .model import ModelSpec, SimulatorPool
from .multilevel import LadderConfig, estimate_to_precision, run_ladder
from .quantile import estimate_quantile
from .stratified import strata_from_shift, stratified_estimate

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_SIMULATOR = 4
EXIT_LADDER = 5

WORKERS_ENV = "TAILSHIFT_WORKERS"

_TASKS = ("prob", "quantile", "cvar", "strata")
_FORMATS = ("table", "json", "csv")


@dataclass
class RunConfig:
    task: str = "prob"
    model: str = "builtin:identity"
    dim: int = 1
    tail: str = "right"
    gamma: float | None = None
    p: float | None = None
    batch: int = 1000
    precision: float = 0.10
    confidence: float = 0.95
    rho: float = 0.10
    n_per_level: int = 1000
    max_levels: int = 30
    budget: int = 1_000_000
    seed: int = 0
    workers: int = 1
    dimred: str = "auto"
    dimred_max: int = 200
    dimred_energy: float = 0.99
    strata: int = 20
    pilot: float = 0.2
    n_total: int = 10_000
    format: str = "table"
    out: str | None = None

    def validate(self):
        if self.task not in _TASKS:
            raise ConfigError(f"task: must be one of {_TASKS}, got {self.task!r}")
        if self.dim < 1:
            raise ConfigError(f"dim: must be >= 1, got {self.dim}")
        if self.tail not in ("right", "left"):
            raise ConfigError(f"tail: must be 'right' or 'left', got {self.tail!r}")
        if self.batch < 1:
            raise ConfigError(f"batch: must be >= 1, got {self.batch}")
        if not 0.0 < self.precision < 1.0:
            raise ConfigError(f"precision: must lie in (0, 1), got {self.precision}")
        if not 0.0 < self.confidence < 1.0:
            raise ConfigError(f"confidence: must lie in (0, 1), got {self.confidence}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError(f"rho: must lie in (0, 1), got {self.rho}")
        if self.n_per_level < 100:
            raise ConfigError(f"n_per_level: must be >= 100, got {self.n_per_level}")
        if self.max_levels < 1:
            raise ConfigError(f"max_levels: must be >= 1, got {self.max_levels}")
        if self.budget < 1:
            raise ConfigError(f"budget: must be >= 1, got {self.budget}")
        if self.seed < 0:
            raise ConfigError(f"seed: must be >= 0, got {self.seed}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.dimred not in ("auto", "on", "off"):
            raise ConfigError(f"dimred: must be auto/on/off, got {self.dimred!r}")
        if self.strata < 2:
            raise ConfigError(f"strata: must be >= 2, got {self.strata}")
        if not 0.0 < self.pilot < 1.0:
            raise ConfigError(f"pilot: must lie in (0, 1), got {self.pilot}")
        if self.n_total < 2 * self.strata:
            raise ConfigError(
                f"n_total: must be >= 2 * strata, got {self.n_total}")
        if self.format not in _FORMATS:
            raise ConfigError(f"format: must be one of {_FORMATS}, got {self.format!r}")
        if self.task == "quantile":
            if self.p is None or not 0.0 < self.p < 1.0:
                raise ConfigError("p: quantile task needs p in (0, 1)")
        else:
            if self.gamma is None or not math.isfinite(self.gamma):
                raise ConfigError(f"gamma: {self.task} task needs a finite gamma")

    def build_model(self):
        spec = self.model
        if spec.startswith("builtin:"):
            name = spec.split(":", 1)[1]
            if name == "identity":
                return ModelSpec.identity(self.dim, tail=self.tail)
            if name == "linear":
                return ModelSpec.linear_family(self.dim, tail=self.tail)
            if name == "skewed":
                return ModelSpec.skewed(self.dim, tail=self.tail)
            raise ConfigError(f"model: unknown builtin {name!r}")
        if spec.startswith("exec:"):
            return ModelSpec.external(spec.split(":", 1)[1], self.dim,
                                      tail=self.tail)
        raise ConfigError(
            f"model: expected builtin:<name> or exec:<path>, got {spec!r}")

    def ladder_config(self):
        dimred = {"auto": "auto", "on": True, "off": False}[self.dimred]
        return LadderConfig(
            gamma=self.gamma,
            n_per_level=self.n_per_level,
            rho=self.rho,
            max_levels=self.max_levels,
            dimred=dimred,
            dimred_max=self.dimred_max,
            dimred_energy=self.dimred_energy,
        )


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _report_dict(report):
    theta = report.theta
    return {
        "estimate": _json_safe(report.estimate),
        "ci_rel": _json_safe(report.rel_half_width),
        "confidence": report.confidence,
        "runs_exploration": report.runs_exploration,
        "runs_final": report.runs_final,
        "runs_total": report.runs_total,
        "speedup": _json_safe(report.speedup),
        "converged": report.converged,
        "zero_hits": report.zero_hits,
        "gamma": _json_safe(report.gamma),
        "theta_norm": (None if theta is None
                       else _json_safe(float(np.linalg.norm(theta)))),
    }


def _quantile_dict(report):
    return {
        "quantile": _json_safe(report.quantile),
        "ci_rel": _json_safe(report.rel_half_width),
        "confidence": report.confidence,
        "p": report.p,
        "runs_exploration": report.runs_exploration,
        "runs_final": report.runs_final,
        "runs_total": report.runs_total,
        "speedup": _json_safe(report.speedup),
        "converged": report.converged,
        "theta_norm": (None if report.theta is None
                       else _json_safe(float(np.linalg.norm(report.theta)))),
    }


def _cvar_dict(report, speedup=None):
    # the speedup column repeats the probability estimator's figure; both
    # numbers come from the same final-phase runs
    return {
        "gamma": _json_safe(report.gamma),
        "cvar": _json_safe(report.cvar),
        "ci_rel": _json_safe(report.rel_half_width),
        "sigma_sq": _json_safe(report.sigma_sq),
        "runs": report.runs,
        "speedup": _json_safe(speedup),
    }


def _trace_rows(trace):
    if trace is None:
        return []
    return [{k: _json_safe(v) for k, v in row.items()} for row in trace.rows()]


def _selection_list(trace):
    if trace is None or trace.selection is None:
        return None
    return [int(i) for i in trace.selection.indices]


def _bundle(config, status):
    return {
        "task": config.task,
        "model": config.model,
        "tail": config.tail,
        "seed": config.seed,
        "status": status,
        "config": {f.name: getattr(config, f.name) for f in fields(config)},
    }


def run(config):
    """Execute the configured task; returns (exit_code, report bundle)."""
    config.validate()
    model = config.build_model()
    rng = RngStream(config.seed)
    pool = None
    try:
        if model.kind == "external":
            pool = SimulatorPool(model.command, model.dimension,
                                 workers=config.workers)
        return _dispatch(config, model, rng, pool)
    except BudgetExhausted as exc:
        bundle = _bundle(config, "budget_exhausted")
        if exc.report is not None:
            key = "quantile" if config.task == "quantile" else "report"
            bundle[key] = (_quantile_dict(exc.report)
                           if config.task == "quantile"
                           else _report_dict(exc.report))
        bundle["trace"] = _trace_rows(exc.trace)
        return EXIT_BUDGET, bundle
    except MaxLevelsExceeded as exc:
        bundle = _bundle(config, "ladder_failed")
        bundle["trace"] = _trace_rows(exc.trace)
        return EXIT_LADDER, bundle
    except SimulatorError as exc:
        bundle = _bundle(config, "simulator_failed")
        bundle["error"] = str(exc)
        bundle["failed_indices"] = list(exc.indices)
        return EXIT_SIMULATOR, bundle
    finally:
        if pool is not None:
            pool.close()


def _dispatch(config, model, rng, pool):
    ladder_cfg = config.ladder_config()
    if config.task in ("prob", "cvar"):
        report, trace, sample = estimate_to_precision(
            model, config.gamma, ladder_cfg, config.precision, config.batch,
            rng, budget=config.budget, confidence=config.confidence, pool=pool)
        status = "ok" if report.converged else "zero_hits"
        bundle = _bundle(config, status)
        bundle["report"] = _report_dict(report)
        bundle["selected"] = _selection_list(trace)
        if config.task == "cvar" and not report.zero_hits:
            bundle["cvar"] = _cvar_dict(
                estimate_cvar(sample, confidence=config.confidence,
                              tail=config.tail),
                speedup=report.speedup)
        bundle["trace"] = _trace_rows(trace)
        return (EXIT_OK if report.converged else EXIT_BUDGET), bundle
    if config.task == "quantile":
        report, trace = estimate_quantile(
            model, config.p, ladder_cfg, rng, m0=config.batch,
            precision=config.precision, budget=config.budget,
            confidence=config.confidence, pool=pool)
        bundle = _bundle(config, "ok")
        bundle["quantile"] = _quantile_dict(report)
        bundle["selected"] = _selection_list(trace)
        bundle["trace"] = _trace_rows(trace)
        return EXIT_OK, bundle
    # strata: ladder for the direction, then the stratified pass
    theta, trace = run_ladder(model, ladder_cfg, rng, pool,
                              confidence=config.confidence)
    spec = strata_from_shift(theta, config.strata)
    report, rows = stratified_estimate(
        model, config.gamma, spec, config.pilot, config.n_total, rng,
        confidence=config.confidence, pool=pool,
        runs_exploration=trace.exploration_runs)
    bundle = _bundle(config, "ok" if report.converged else "zero_hits")
    bundle["report"] = _report_dict(report)
    bundle["strata"] = [{k: _json_safe(v) for k, v in row.items()}
                        for row in rows]
    bundle["trace"] = _trace_rows(trace)
    return (EXIT_OK if report.converged else EXIT_BUDGET), bundle


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _table_block(title, columns, rows):
    lines = [title]
    widths = [max(len(c), *(len(_fmt(r[c])) for r in rows)) if rows else len(c)
              for c in columns]
    lines.append(" | ".join(c.ljust(w) for c, w in zip(columns, widths)))
    lines.append("-+-".join("-" * w for w in widths))
    for r in rows:
        lines.append(" | ".join(_fmt(r[c]).ljust(w)
                                for c, w in zip(columns, widths)))
    return lines


def _emit_table(bundle):
    lines = [f"task={bundle['task']} model={bundle['model']} "
             f"tail={bundle['tail']} seed={bundle['seed']} status={bundle['status']}"]
    if "report" in bundle:
        r = bundle["report"]
        row = {"measure": bundle["model"], "tail": bundle["tail"],
               "prob": r["estimate"], "ci_rel": r["ci_rel"],
               "runs": r["runs_total"], "speedup": r["speedup"]}
        lines += _table_block("estimate",
                              ["measure", "tail", "prob", "ci_rel", "runs",
                               "speedup"], [row])
    if "quantile" in bundle:
        q = bundle["quantile"]
        row = {"measure": bundle["model"], "p": q["p"],
               "quantile": q["quantile"], "ci_rel": q["ci_rel"],
               "runs": q["runs_total"], "speedup": q["speedup"]}
        lines += _table_block("quantile",
                              ["measure", "p", "quantile", "ci_rel", "runs",
                               "speedup"], [row])
    if "cvar" in bundle:
        c = bundle["cvar"]
        row = {"gamma": c["gamma"], "cvar": c["cvar"], "ci_rel": c["ci_rel"],
               "runs": c["runs"], "speedup": c["speedup"]}
        lines += _table_block("cvar",
                              ["gamma", "cvar", "ci_rel", "runs", "speedup"],
                              [row])
    if bundle.get("strata"):
        lines += _table_block("strata", ["prob", "count", "pilot_dev", "mean"],
                              bundle["strata"])
    if bundle.get("trace"):
        lines += _table_block("trace",
                              ["iteration", "runs", "gamma", "estimate",
                               "ci95_rel"], bundle["trace"])
    return ("\n".join(lines) + "\n").encode()


def _emit_csv(bundle):
    lines = []
    if "report" in bundle:
        r = bundle["report"]
        lines.append("measure,tail,prob,ci_rel,runs,speedup")
        lines.append(",".join(_fmt(v) for v in (
            bundle["model"], bundle["tail"], r["estimate"], r["ci_rel"],
            r["runs_total"], r["speedup"])))
    if "quantile" in bundle:
        q = bundle["quantile"]
        lines.append("measure,p,quantile,ci_rel,runs,speedup")
        lines.append(",".join(_fmt(v) for v in (
            bundle["model"], q["p"], q["quantile"], q["ci_rel"],
            q["runs_total"], q["speedup"])))
    if "cvar" in bundle:
        c = bundle["cvar"]
        lines.append("gamma,cvar,ci_rel,runs,speedup")
        lines.append(",".join(_fmt(v) for v in (
            c["gamma"], c["cvar"], c["ci_rel"], c["runs"], c["speedup"])))
    if bundle.get("strata"):
        lines.append("")
        lines.append("prob,count,pilot_dev,mean")
        for row in bundle["strata"]:
            lines.append(",".join(_fmt(row[k])
                                  for k in ("prob", "count", "pilot_dev", "mean")))
    if bundle.get("trace"):
        lines.append("")
        lines.append("iteration,runs,gamma,estimate,ci95_rel")
        for row in bundle["trace"]:
            lines.append(",".join(_fmt(row[k]) for k in (
                "iteration", "runs", "gamma", "estimate", "ci95_rel")))
    return ("\n".join(lines) + "\n").encode()


def emit_report(bundle, fmt):
    """Serialize a report bundle; identical bundles give identical bytes."""
    if fmt == "json":
        return (json.dumps(bundle, indent=2) + "\n").encode()
    if fmt == "csv":
        return _emit_csv(bundle)
    if fmt == "table":
        return _emit_table(bundle)
    raise ConfigError(f"format: unknown output format {fmt!r}")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="tailshift",
        description="Rare-event tail estimation by adaptive mean-shift "
                    "importance sampling")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in _TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--model", help="builtin:<identity|linear|skewed> or exec:<command>")
        p.add_argument("--dim", type=int)
        p.add_argument("--tail", choices=("right", "left"))
        p.add_argument("--gamma", type=float)
        p.add_argument("--p", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--precision", type=float)
        p.add_argument("--confidence", type=float)
        p.add_argument("--rho", type=float)
        p.add_argument("--n-per-level", dest="n_per_level", type=int)
        p.add_argument("--max-levels", dest="max_levels", type=int)
        p.add_argument("--budget", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--dimred", choices=("auto", "on", "off"))
        p.add_argument("--dimred-max", dest="dimred_max", type=int)
        p.add_argument("--dimred-energy", dest="dimred_energy", type=float)
        p.add_argument("--strata", type=int)
        p.add_argument("--pilot", type=float)
        p.add_argument("--n-total", dest="n_total", type=int)
        p.add_argument("--format", choices=_FORMATS)
        p.add_argument("--out")
    return parser


def load_config(args):
    """Resolve the run configuration: defaults, then file, then flags."""
    values = {"task": args.task}
    if args.config:
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config!r}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON in {args.config!r}: {exc}")
        if not isinstance(file_values, dict):
            raise ConfigError("config: file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)}
        for key, value in file_values.items():
            if key not in known:
                raise ConfigError(f"config: unknown field {key!r}")
            values[key] = value
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None and f.name != "task":
            values[f.name] = flag
    if "workers" not in values and os.environ.get(WORKERS_ENV):
        try:
            values["workers"] = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"workers: bad {WORKERS_ENV} value "
                              f"{os.environ[WORKERS_ENV]!r}")
    try:
        config = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}")
    config.validate()
    return config


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        code, bundle = run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TailshiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    payload = emit_report(bundle, config.format)
    if config.out:
        with open(config.out, "wb") as fh:
            fh.write(payload)
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.buffer.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
