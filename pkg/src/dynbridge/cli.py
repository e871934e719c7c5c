"""Command-line runner: ``dynbridge <suite> --scenario FILE [options]``.

Writes ``<out>/<suite>/<table>.csv``, ``<out>/<suite>/verdicts.json``,
``<out>/summary.json`` and ``<out>/report.txt``. Exit status is 0 when
every selected suite passes, 1 on a suite failure and 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import os
import sys
import time

from . import __version__
from ._core import BACKEND
from .errors import AssumptionViolation, BackendMismatch, DomainError, ScenarioError
from .model import load_scenario
from .suites import SCHEMA_VERSION, SUITES, ExperimentConfig, run_suite

log = logging.getLogger("dynbridge")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _cell(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace('"', '""') + '"' if ("," in v or '"' in v) else v
    try:
        return format(float(v), ".17g")
    except (TypeError, ValueError):
        return str(v)


def write_table(path, table, cfg, suite):
    """CSV with a one-line comment naming suite, seed and config digest."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# suite={suite} seed={cfg.seed} config_digest={cfg.digest}\n")
        fh.write(",".join(table.columns) + "\n")
        for row in table.rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


def _suite_json(res, cfg):
    return {"schema_version": SCHEMA_VERSION, "suite": res.name, "pass": res.passed,
            "seed": cfg.seed, "config": cfg.digest_fields(), "config_digest": cfg.digest,
            "verdicts": [v.to_dict() for v in res.verdicts],
            "tables": {k: {"file": f"{k}.csv", "columns": list(t.columns), "doc": t.doc}
                       for k, t in res.tables.items()},
            "info": res.info}


def _report(results, cfg, elapsed):
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    out = [f"dynbridge {__version__} report, generated {stamp}",
           f"scenario {cfg.scenario}, seed {cfg.seed}, config digest {cfg.digest}",
           f"backend {BACKEND}, workers {cfg.workers}", ""]
    for res in results:
        out.append(f"[{'PASS' if res.passed else 'FAIL'}] {res.name} ({elapsed[res.name]:.2f} s)")
        for v in res.verdicts:
            tag = "pass" if v.passed else ("FAIL" if v.gating else "note")
            val = "" if v.value is None or (isinstance(v.value, float) and math.isnan(v.value)) \
                else f" value={v.value:.6g}"
            thr = "" if isinstance(v.threshold, float) and math.isnan(v.threshold) \
                else f" threshold={v.threshold:.6g}"
            det = f"  {v.detail}" if v.detail else ""
            out.append(f"  {tag:4s} {v.name}{val}{thr}{det}")
        out.append("")
    return "\n".join(out)


def run(cfg):
    """Execute the configured suites; returns the exit status."""
    try:
        model = load_scenario(cfg.scenario)
    except FileNotFoundError:
        print(f"config error: scenario file {cfg.scenario} not found", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionViolation as exc:
        print(f"config error: {cfg.scenario}: sigma/c: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, val, ok in (("--paths", cfg.n_paths, cfg.n_paths >= 1),
                          ("--steps", cfg.steps, cfg.steps >= 16),
                          ("--eps-end", cfg.eps_end, 0 < cfg.eps_end < 0.1),
                          ("--workers", cfg.workers, cfg.workers >= 1),
                          ("--particles", cfg.particles, cfg.particles >= 100)):
        if not ok:
            print(f"config error: {name}={val} out of range", file=sys.stderr)
            return EXIT_CONFIG
    names = SUITES if cfg.suite == "all" else (cfg.suite,)
    try:
        os.makedirs(cfg.out, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create {cfg.out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    results, elapsed = [], {}
    for name in names:
        t0 = time.perf_counter()
        log.info("running %s", name)
        try:
            res = run_suite(name, model, cfg)
        except (BackendMismatch, DomainError) as exc:
            if cfg.suite != "all":
                print(f"config error: {name} suite: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            from .suites import SuiteResult
            res = SuiteResult(name)
            res.add("applicable", True, detail=f"skipped: {exc}", gating=False)
        elapsed[name] = time.perf_counter() - t0
        d = os.path.join(cfg.out, name)
        os.makedirs(d, exist_ok=True)
        for tname, table in res.tables.items():
            write_table(os.path.join(d, f"{tname}.csv"), table, cfg, name)
        with open(os.path.join(d, "verdicts.json"), "w", encoding="utf-8") as fh:
            json.dump(_json_safe(_suite_json(res, cfg)), fh, indent=1, sort_keys=True)
        results.append(res)
    summary = {"schema_version": SCHEMA_VERSION, "config": cfg.digest_fields(),
               "config_digest": cfg.digest, "pass": all(r.passed for r in results),
               "suites": {r.name: {"pass": r.passed,
                                   "failed": [v.name for v in r.verdicts
                                              if v.gating and not v.passed]}
                          for r in results}}
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    text = _report(results, cfg, elapsed)
    with open(os.path.join(cfg.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK if summary["pass"] else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="dynbridge",
                                description="Dynamic Markov bridge verification suites.")
    p.add_argument("suite", choices=SUITES + ("all",))
    p.add_argument("--scenario", required=True, help="scenario YAML file")
    p.add_argument("--paths", type=int, default=1000, dest="n_paths")
    p.add_argument("--steps", type=int, default=1024)
    p.add_argument("--eps-end", type=float, default=1e-3, dest="eps_end",
                   help="simulate on [0, 1 - eps_end]")
    p.add_argument("--seed", type=int, default=ExperimentConfig.seed)
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="thread pool size")
    p.add_argument("--particles", type=int, default=10000, help="particle filter size")
    p.add_argument("--inner", type=int, default=5000,
                   help="inner paths per point for the pricing check")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    cfg = ExperimentConfig(scenario=args.scenario, suite=args.suite, n_paths=args.n_paths,
                           steps=args.steps, eps_end=args.eps_end, seed=args.seed,
                           out=args.out, workers=args.workers, particles=args.particles,
                           inner=args.inner)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
