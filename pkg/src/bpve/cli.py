"""Experiment runner.

``bpve run config.json [--threads N] [--out DIR]`` executes one named
experiment from a JSON config and writes three artifacts to the output
directory: ``results.json`` (machine-readable results, stamped with the
config digest), ``series.csv`` (plot-ready rows, when the experiment
produces a series), and ``resolved_config.json`` (the config with every
default made explicit; re-running it reproduces the outputs bitwise).

``bpve list-presets`` prints the named environment presets.

Exit codes: 0 success, 2 config/schema error, 3 resource or digest-mismatch
error, 4 not-applicable (the requested quantity is undefined for the given
environment).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import conditions, estimators
from .distributions import NotApplicableError, PhiFunction
from .environment import (EnvironmentSpec, PRESETS, quench)

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_RESOURCE = 3
EXIT_NOT_APPLICABLE = 4

EXPERIMENTS = ("conditions", "survival", "w_positivity", "l2", "halving",
               "flt", "tightness", "critical")


class SchemaError(ValueError):
    pass


def _require(cfg: dict, allowed: dict, context: str) -> dict:
    """Reject unknown keys; fill defaults; None default means required."""
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise SchemaError(f"{context}: unknown keys {sorted(unknown)}")
    out = {}
    for key, default in allowed.items():
        if key in cfg:
            out[key] = cfg[key]
        elif default is None:
            raise SchemaError(f"{context}: missing required key '{key}'")
        else:
            out[key] = default
    return out


_PARAM_SCHEMAS = {
    "conditions": {"series": "variance", "start": 1, "horizon": 200,
                   "tol": 1e-9, "delta": 1.0,
                   "phi": {"power": 1.0, "log_power": 0.0}},
    "survival": {"z0": 1, "n": 200, "replicas": 100000},
    "w_positivity": {"z0": 1, "n": 200, "replicas": 100000,
                     "eps_grid": [float(x) for x in
                                  np.logspace(-3, -1, 13)]},
    "l2": {"k": 1, "m": 1, "replicas": 1000000},
    "halving": {"k": 64, "start": 0, "horizon": 400, "replicas": 100000},
    "flt": {"n_list": [64, 256, 1024], "replicas": 25000, "grid_size": 33},
    "tightness": {"l_grid": [1, 50, 100], "env_replicas": 200,
                  "series": "variance", "delta": 1.0,
                  "phi": {"power": 1.0, "log_power": 0.0},
                  "blowup_factor": 3.0},
    "critical": {"n_list": [32, 64, 128], "replicas": 40000, "z0": 1,
                 "min_survivors": 500},
}

_CONDITION_SERIES = ("variance", "fractional_variance", "psi", "jagers",
                     "moment_ratio")


def resolve_config(cfg: dict) -> dict:
    top = _require(cfg, {"experiment": None, "environment": None,
                         "env_seed": 1, "master_seed": 12345,
                         "params": {}, "output_dir": ""}, "config")
    exp = top["experiment"]
    if exp not in EXPERIMENTS:
        raise SchemaError(f"config: experiment must be one of {EXPERIMENTS}, "
                          f"got {exp!r}")
    # Validate the environment spec eagerly so errors name the field.
    try:
        spec = EnvironmentSpec.from_config(top["environment"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"environment: {exc}") from exc
    top["environment"] = top["environment"]
    top["params"] = _require(top["params"], _PARAM_SCHEMAS[exp],
                             f"params({exp})")
    if exp == "conditions" and top["params"]["series"] not in _CONDITION_SERIES:
        raise SchemaError(f"params(conditions): series must be one of "
                          f"{_CONDITION_SERIES}")
    if exp in ("tightness", "critical") and not spec.is_random:
        if exp == "critical":
            raise SchemaError("params(critical): environment must be a "
                              "random kind (iid_random or cooling)")
    return top


def config_digest(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _env_horizon_needed(exp: str, p: dict) -> int:
    if exp == "conditions":
        return p["start"] + p["horizon"] + 1
    if exp == "survival":
        return p["n"]
    if exp == "w_positivity":
        return p["n"]
    if exp == "l2":
        return max(p["m"], 1)
    if exp == "halving":
        return p["start"] + p["horizon"] + 2
    if exp == "flt":
        return max(p["n_list"])
    return 1


def run_experiment(resolved: dict, threads=None):
    """Execute one resolved config; returns (results_dict, csv_text_or_None)."""
    exp = resolved["experiment"]
    p = resolved["params"]
    seed = resolved["master_seed"]
    spec = EnvironmentSpec.from_config(resolved["environment"])
    results = {"experiment": exp}
    csv_text = None
    env = None
    if exp not in ("tightness", "critical"):
        env = quench(spec, resolved["env_seed"], _env_horizon_needed(exp, p))

    if exp == "conditions":
        series = p["series"]
        if series == "variance":
            rep = conditions.variance_series(env, p["start"], p["horizon"],
                                             p["tol"])
        elif series == "fractional_variance":
            rep = conditions.fractional_variance_series(
                env, p["start"], p["delta"], p["horizon"], p["tol"])
        elif series == "psi":
            rep = conditions.psi_series(env, p["start"],
                                        PhiFunction.from_config(p["phi"]),
                                        p["horizon"], p["tol"])
        elif series == "jagers":
            rep = conditions.jagers_sum(env, p["horizon"])
        else:
            rep = conditions.moment_ratio_sup(env, p["horizon"])
        results["report"] = json.loads(rep.to_json())
    elif exp == "survival":
        est = estimators.mc_survival(env, p["z0"], p["n"], p["replicas"],
                                     seed, threads)
        results["survival"] = est.to_dict()
    elif exp == "w_positivity":
        chk = estimators.mc_w_positivity(env, p["z0"], p["n"], p["eps_grid"],
                                         p["replicas"], seed, threads)
        results["equality_check"] = chk.to_dict()
        lines = ["eps,p_above,std_error"]
        for eps in sorted(chk.p_w_above):
            est = chk.p_w_above[eps]
            lines.append(f"{eps:.10g},{est.value:.10g},{est.std_error:.10g}")
        csv_text = "\n".join(lines) + "\n"
    elif exp == "l2":
        est = estimators.mc_l2_increment(env, p["k"], p["m"], p["replicas"],
                                         seed, threads)
        results["l2_increment"] = est.to_dict()
    elif exp == "halving":
        res = estimators.mc_halving_bound(env, p["k"], p["start"],
                                          p["horizon"], p["replicas"], seed,
                                          threads)
        results["halving"] = res.to_dict()
    elif exp == "flt":
        summaries = estimators.mc_flt_discrepancy(env, p["n_list"],
                                                  p["replicas"], seed,
                                                  p["grid_size"], threads)
        results["path_spread"] = [s.to_dict() for s in summaries]
        lines = ["n,survivors,median,q90"]
        for s in summaries:
            lines.append(f"{s.n},{s.survivors},{s.median:.10g},{s.q90:.10g}")
        csv_text = "\n".join(lines) + "\n"
    elif exp == "tightness":
        kwargs = {}
        if p["series"] == "fractional_variance":
            kwargs["delta"] = p["delta"]
        if p["series"] == "psi":
            kwargs["phi"] = PhiFunction.from_config(p["phi"])
        table = conditions.tightness_diagnostic(
            spec, p["l_grid"], p["env_replicas"], seed, p["series"],
            blowup_factor=p["blowup_factor"], **kwargs)
        results["tightness"] = {
            "series": table.series,
            "truncations": table.truncations,
            "quantiles": [[float(v) for v in row] for row in table.rows],
            "blowup_flag": table.blowup_flag,
        }
        lines = ["l,q10,q50,q90,flag"]
        for l, row in zip(table.truncations, table.rows):
            vals = ",".join(f"{v:.10g}" for v in row)
            lines.append(f"{l},{vals},{int(table.blowup_flag)}")
        csv_text = "\n".join(lines) + "\n"
    else:  # critical
        summaries = estimators.mc_conditioned_critical(
            spec, p["n_list"], p["replicas"], seed,
            env_seed=resolved["env_seed"], z0=p["z0"],
            min_survivors=p["min_survivors"], threads=threads)
        results["conditioned"] = [s.to_dict() for s in summaries]
        lines = ["n,survivors,median_w,q10_w,inconclusive"]
        for s in summaries:
            lines.append(f"{s.n},{s.survivors},{s.median_w:.10g},"
                         f"{s.q10_w:.10g},{int(s.inconclusive)}")
        csv_text = "\n".join(lines) + "\n"
    return results, csv_text


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
    if isinstance(obj, np.generic):
        return _sanitize(obj.item())
    return obj


def cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        resolved = resolve_config(cfg)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    out_dir = args.out or resolved["output_dir"] \
        or os.environ.get("BPVE_OUT_DIR", ".")
    resolved["output_dir"] = str(out_dir)
    digest = config_digest({k: v for k, v in resolved.items()
                            if k != "output_dir"})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.json"
    if results_path.exists():
        try:
            prev = json.loads(results_path.read_text())
        except json.JSONDecodeError:
            prev = {}
        if prev.get("config_digest") not in (None, digest):
            print(f"error: {results_path} carries digest "
                  f"{prev.get('config_digest')} but this config digests to "
                  f"{digest}; refusing to overwrite", file=sys.stderr)
            return EXIT_RESOURCE

    try:
        results, csv_text = run_experiment(resolved, threads=args.threads)
    except NotApplicableError as exc:
        print(f"not applicable: {exc}", file=sys.stderr)
        return EXIT_NOT_APPLICABLE
    except MemoryError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    results["config_digest"] = digest
    # output_dir is excluded so results files compare equal across runs
    # that only differ in where they were written
    results["resolved_config"] = {k: v for k, v in resolved.items()
                                  if k != "output_dir"}
    results_path.write_text(
        json.dumps(_sanitize(results), sort_keys=True, indent=2) + "\n")
    (out / "resolved_config.json").write_text(
        json.dumps(_sanitize(resolved), sort_keys=True, indent=2) + "\n")
    if csv_text is not None:
        (out / "series.csv").write_text(f"# config_digest={digest}\n"
                                        + csv_text)
    print(f"wrote {results_path} (digest {digest})")
    return EXIT_OK


def cmd_list_presets(_args) -> int:
    for name in sorted(PRESETS):
        spec = PRESETS[name]()
        print(f"{name}: {json.dumps(spec.to_config(), sort_keys=True)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bpve",
        description="Branching-process environment experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run an experiment from a JSON config")
    runp.add_argument("config", help="path to the experiment config")
    runp.add_argument("--threads", type=int, default=os.cpu_count(),
                      help="worker threads (results are identical for any "
                           "value)")
    runp.add_argument("--out", default=None,
                      help="output directory (overrides config and "
                           "BPVE_OUT_DIR)")
    runp.set_defaults(func=cmd_run)
    lp = sub.add_parser("list-presets", help="print named environment presets")
    lp.set_defaults(func=cmd_list_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
