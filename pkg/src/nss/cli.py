"""Command-line experiment runner.

Every subcommand writes ``results.json`` and its CSV artifacts into ``--out``.
Settings come from an optional JSON ``--config`` file; flags given on the
command line take precedence over the file.  Exit status is 0 on success, 2 on
invalid input and 3 when a run fails.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, fields

import numpy as np

from . import metrics as _metrics
from . import tuning
from .core import RngStream
from .nested import (NsConfig, dumps_json, fmt_float, posterior_resample, read_samples_csv, run_nested,
                     write_dead_csv, write_json, write_samples_csv)
from .reflective import SAMPLERS, ReflectConfig, compare_evidence
from .smc import SmcConfig, run_smc
from .targets import TARGET_IDS, make_target

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

CONFIG_KEYS = {"target", "target_params", "seed", "out", "workers", "sampler", "n_samples",
               "ell", "widths", "n_mc", "samplers", "dims", "alphas", "reflect",
               "x", "y", "reference", "runs"}


class ConfigError(ValueError):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _merge(cfg: dict, args, keys: dict) -> dict:
    """Overlay command-line values (when given) onto a section of the config."""
    out = dict(cfg)
    for flag, key in keys.items():
        val = getattr(args, flag, None)
        if val is not None:
            out[key] = val
    return out


def _dataclass_from(cls, values: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**values)


def _target(cfg):
    name = cfg.get("target")
    if name is None:
        raise ConfigError("no target given")
    if name not in TARGET_IDS:
        raise ConfigError(f"unknown target {name!r}; choose from {TARGET_IDS}")
    params = cfg.get("target_params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("target_params must be an object")
    try:
        return make_target(name, **params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _outdir(path):
    path = path or "."
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(v) if isinstance(v, (float, np.floating)) else str(v)
                              for v in row) + "\n")


# ---------------------------------------------------------------------------


def cmd_ns_run(args, cfg):
    sampler = _merge(cfg.get("sampler", {}) or {}, args,
                     {"m": "m", "k": "k", "steps": "steps", "width": "width"})
    ns_cfg = _dataclass_from(NsConfig, sampler)
    target = _target(cfg)
    seed, workers, out = cfg.get("seed", 0), cfg.get("workers", 1), _outdir(cfg.get("out"))
    res = run_nested(target, ns_cfg, seed, workers=workers)
    st, est = res.state, res.estimate
    write_dead_csv(os.path.join(out, "dead.csv"), st)
    n_samples = int(cfg.get("n_samples", 1000))
    samples = posterior_resample(st.dead_points(), est.weights, n_samples,
                                 RngStream(seed, ("posterior",)).generator)
    write_samples_csv(os.path.join(out, "samples.csv"), samples)
    results = {
        "command": "ns-run", "seed": seed, "target": target.name,
        "log_z_mean": est.log_z_mean, "log_z_std": est.log_z_std, "ess": est.ess,
        "exact_log_z": target.exact_log_z, "eval_count": st.eval_count,
        "iterations": res.iterations, "terminated": res.terminated,
        "wall_time_s": res.wall_time_s, "config": {**cfg, "sampler": asdict(ns_cfg)},
    }
    write_json(os.path.join(out, "results.json"), results)
    return results


def cmd_smc_run(args, cfg):
    sampler = _merge(cfg.get("sampler", {}) or {}, args,
                     {"m": "m", "steps": "inner_steps", "width": "width",
                      "ess_target": "ess_target", "kernel": "kernel"})
    smc_cfg = _dataclass_from(SmcConfig, sampler)
    target = _target(cfg)
    seed, workers, out = cfg.get("seed", 0), cfg.get("workers", 1), _outdir(cfg.get("out"))
    res = run_smc(target, smc_cfg, seed, workers=workers)
    st = res.state
    write_samples_csv(os.path.join(out, "samples.csv"), st.particles)
    results = {
        "command": "smc-run", "seed": seed, "target": target.name,
        "log_z_mean": res.log_z, "log_z_std": None, "ess": float(st.ess_history[-1]) * st.m
        if st.ess_history else None,
        "exact_log_z": target.exact_log_z, "eval_count": st.eval_count, "stages": res.stages,
        "beta_ladder": st.betas, "wall_time_s": res.wall_time_s,
        "config": {**cfg, "sampler": asdict(smc_cfg)},
    }
    write_json(os.path.join(out, "results.json"), results)
    return results


def cmd_tune_validate(args, cfg):
    cfg = _merge(cfg, args, {"ell": "ell", "n_mc": "n_mc"})
    ell = float(cfg.get("ell", 10.0))
    if not ell > 0:
        raise ConfigError("ell must be positive")
    ustar = tuning.u_star()
    widths = cfg.get("widths") or [2.0, 5.0, 10.0, round(ustar * ell, 2), 20.0, 40.0]
    n = int(cfg.get("n_mc", 100_000))
    seed, out = cfg.get("seed", 0), _outdir(cfg.get("out"))
    t0 = time.perf_counter()
    rows = tuning.tune_validate_rows(ell, widths, n, RngStream(seed, ("tune",)).generator)
    _write_csv(os.path.join(out, "curves.csv"), ["w", "theory_cost", "mc_cost", "mc_std"], rows)
    results = {
        "command": "tune-validate", "seed": seed, "ell": ell, "u_star": ustar,
        "optimal_width": tuning.optimal_width_fixed(ell), "kappa_infinity": tuning.kappa_infinity(),
        "eval_count": int(n * len(widths)), "wall_time_s": time.perf_counter() - t0,
        "log_z_mean": None, "log_z_std": None, "ess": None, "config": cfg,
    }
    write_json(os.path.join(out, "results.json"), results)
    return results


def cmd_compare(args, cfg):
    cfg = _merge(cfg, args, {"samplers": "samplers", "dims": "dims", "alphas": "alphas"})
    samplers = [s.upper() for s in cfg.get("samplers", list(SAMPLERS))]
    bad = [s for s in samplers if s not in SAMPLERS]
    if bad:
        raise ConfigError(f"unknown samplers {bad}")
    dims = [int(d) for d in cfg.get("dims", [2, 4, 10])]
    alphas = [float(a) for a in cfg.get("alphas", [0.0, 0.5, 1.0])]
    sampler = _merge(cfg.get("sampler", {}) or {}, args, {"m": "m", "k": "k", "steps": "steps"})
    ns_cfg = _dataclass_from(NsConfig, sampler)
    rcfg = _dataclass_from(ReflectConfig, cfg.get("reflect", {}) or {})
    seed, workers, out = cfg.get("seed", 0), cfg.get("workers", 1), _outdir(cfg.get("out"))
    t0 = time.perf_counter()
    rows = []
    for s in samplers:
        for d in dims:
            for a in alphas:
                r = compare_evidence(s, a, d, ns_cfg, rcfg, seed=seed, workers=workers)
                rows.append((s, d, float(a), r.log_z, r.geo_std, r.oracle_log_z, r.evals))
    _write_csv(os.path.join(out, "compare.csv"),
               ["sampler", "d", "alpha", "log_z", "geo_std", "oracle_log_z", "evals"], rows)
    results = {
        "command": "compare-constrained", "seed": seed, "eval_count": int(sum(r[-1] for r in rows)),
        "wall_time_s": time.perf_counter() - t0, "log_z_mean": None, "log_z_std": None, "ess": None,
        "config": {**cfg, "sampler": asdict(ns_cfg), "reflect": asdict(rcfg)},
    }
    write_json(os.path.join(out, "results.json"), results)
    return results


def cmd_metrics(args, cfg):
    cfg = _merge(cfg, args, {"x": "x", "y": "y", "reference": "reference"})
    if "x" not in cfg:
        raise ConfigError("metrics needs --x")
    seed, out = cfg.get("seed", 0), _outdir(cfg.get("out"))
    t0 = time.perf_counter()
    x = read_samples_csv(cfg["x"])
    if cfg.get("y"):
        y = read_samples_csv(cfg["y"])
    elif cfg.get("reference"):
        target = _target({**cfg, "target": cfg["reference"]})
        if target.reference_sample is None:
            raise ConfigError(f"target {target.name!r} has no reference sampler")
        y = target.reference_sample(RngStream(seed, ("reference",)).generator, x.shape[0])
    else:
        raise ConfigError("metrics needs --y or --reference")
    n = min(x.shape[0], y.shape[0])
    results = {
        "command": "metrics", "seed": seed, "mmd": _metrics.mmd(x, y),
        "sliced_w2": _metrics.sliced_w2(x[:n], y[:n]), "n_x": x.shape[0], "n_y": y.shape[0],
        "eval_count": 0, "wall_time_s": time.perf_counter() - t0,
        "log_z_mean": None, "log_z_std": None, "ess": None, "config": cfg,
    }
    write_json(os.path.join(out, "results.json"), results)
    return results


def cmd_report(args, cfg):
    cfg = _merge(cfg, args, {"runs": "runs"})
    runs = cfg.get("runs") or []
    if not runs:
        raise ConfigError("report needs at least one run directory")
    out = _outdir(cfg.get("out"))
    t0 = time.perf_counter()
    groups: dict = {}
    for r in runs:
        path = os.path.join(r, "results.json")
        try:
            with open(path) as fh:
                res = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        key = (res.get("command"), res.get("target"))
        groups.setdefault(key, []).append(res)
    rows = []
    summary = []
    for (command, target), rs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        lz = np.array([r["log_z_mean"] for r in rs if r.get("log_z_mean") is not None], dtype=float)
        ev = np.array([r.get("eval_count", 0) for r in rs], dtype=float)
        mean = float(lz.mean()) if lz.size else float("nan")
        std = float(lz.std(ddof=1)) if lz.size > 1 else 0.0
        rows.append((command, target, len(rs), mean, std, float(ev.mean())))
        summary.append({"command": command, "target": target, "n_runs": len(rs),
                        "log_z_mean": mean, "log_z_std": std, "exact_log_z": rs[0].get("exact_log_z"),
                        "eval_count_mean": float(ev.mean())})
    _write_csv(os.path.join(out, "report.csv"),
               ["command", "target", "n_runs", "log_z_mean", "log_z_std", "eval_count_mean"], rows)
    results = {"command": "report", "seed": cfg.get("seed"), "groups": summary,
               "log_z_mean": summary[0]["log_z_mean"], "log_z_std": summary[0]["log_z_std"],
               "ess": None, "eval_count": int(sum(g["eval_count_mean"] * g["n_runs"] for g in summary)),
               "wall_time_s": time.perf_counter() - t0, "config": cfg}
    write_json(os.path.join(out, "results.json"), results)
    return results


COMMANDS = {
    "ns-run": cmd_ns_run,
    "smc-run": cmd_smc_run,
    "tune-validate": cmd_tune_validate,
    "compare-constrained": cmd_compare,
    "metrics": cmd_metrics,
    "report": cmd_report,
}


def _csv_list(kind):
    def parse(text):
        return [kind(t) for t in text.split(",") if t.strip()]
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--target")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        if name in ("ns-run", "smc-run", "compare-constrained"):
            p.add_argument("--m", type=int)
            p.add_argument("--steps", type=int)
        if name in ("ns-run", "compare-constrained"):
            p.add_argument("--k", type=int)
        if name in ("ns-run", "smc-run"):
            p.add_argument("--width", type=float)
        if name == "smc-run":
            p.add_argument("--ess-target", dest="ess_target", type=float)
            p.add_argument("--kernel", choices=["RW", "IRMH", "SS", "rw", "irmh", "ss"])
        if name == "tune-validate":
            p.add_argument("--ell", type=float)
            p.add_argument("--n-mc", dest="n_mc", type=int)
        if name == "compare-constrained":
            p.add_argument("--samplers", type=_csv_list(str))
            p.add_argument("--dims", type=_csv_list(int))
            p.add_argument("--alphas", type=_csv_list(float))
        if name == "metrics":
            p.add_argument("--x")
            p.add_argument("--y")
            p.add_argument("--reference")
        if name == "report":
            p.add_argument("runs", nargs="*")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = _merge(_load_config(args.config), args,
                     {"target": "target", "seed": "seed", "out": "out", "workers": "workers"})
        if args.command == "report" and args.runs:
            cfg["runs"] = args.runs
        if int(cfg.get("workers", 1)) < 1:
            raise ConfigError("workers must be >= 1")
        COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


__all__ = ["run", "main", "build_parser", "dumps_json"]
