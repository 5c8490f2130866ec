"""Command line runner: ``lab <experiment> --config FILE [--seed N] [--out DIR] [--threads K]``."""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .catalog import CATALOG, CHAINS, build_model, catalog_model, tail_shape
from .coupling import build_coupling, estimate_sigma, verify_rest_bound
from .errors import (ArgumentError, CapabilityError, DegenerateLimitError, DomainError, MartApproxError,
                     NumericError, PreconditionError, SizeError)
from .inequalities import EnumeratedSystem, grid_check, write_summary_csv
from .io import dumps, read_rows, sha256_file, sha256_text, write_json, write_rows
from .limits import averaged_clt_check, default_lil_checkpoints, ks_grid, lil_trace, quenched_cdf_distance
from .models import FiniteMarkovChain, sample
from .projective import (CONDITIONS, ProjectiveProfile, RateFamily, SlowlyVaryingSeq, check_condition,
                         profile_from_model)

EXPERIMENTS = ("norms", "conditions", "coupling", "quenched", "averaged", "lil", "inequalities")

EXIT_OK, EXIT_ASSERT, EXIT_VALIDATION, EXIT_IO = 0, 1, 2, 3

# Experiment parameters and their defaults; the type of each default is the accepted type.
DEFAULTS = {
    "norms": {"N": 64, "p": 2.0, "one_based": False},
    "conditions": {"N": 1024, "conditions": list(CONDITIONS), "b": {"alpha": 1.0, "beta": 1.5},
                   "rate_family": None},
    "coupling": {"ms": [1, 4, 16], "horizon": 1024, "n_paths": 100, "rest_grid": [64, 128, 256, 512, 1024],
                 "rest_paths": 200, "sigma_tol": 1e-3},
    "quenched": {"n": 4096, "n_paths": 100_000, "starts": None, "mode": "auto", "ks_max": 0.05,
                 "ks_grid": []},
    "averaged": {"n": 1 << 14, "n_paths": 10_000, "variance_rtol": 0.05},
    "lil": {"horizon": 1 << 20, "first_checkpoint": 1 << 10, "window": [0.6, 1.2]},
    "inequalities": {"systems": ["two_state", "three_state_reversible"], "r": 6, "ps": [1.0, 2.0],
                     "us": [0, 1, 2], "points": 8, "phi": "square"},
}

POSITIVE = {"N", "horizon", "n_paths", "rest_paths", "n", "r", "points", "first_checkpoint", "p", "sigma_tol",
            "ks_max", "variance_rtol"}


class ValidationError(Exception):
    """Config problem; the message starts with the offending field path."""


class AssertionFailure(Exception):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"config: not valid YAML ({exc})") from None
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ValidationError("config: top level must be a mapping")
    return cfg


def _check_type(path, value, default):
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ValidationError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ValidationError(f"{path}: expected a list, got {value!r}")
        if default:
            return [_check_type(f"{path}[{i}]", v, default[0]) for i, v in enumerate(value)]
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ValidationError(f"{path}: expected a mapping, got {value!r}")
        return value
    return value


def resolve_config(cfg: dict, experiment: str, seed=None, out=None, threads=None) -> dict:
    """Merge flags over config over defaults and validate; returns a plain dict."""
    if experiment not in EXPERIMENTS:
        raise ValidationError(f"experiment: unknown experiment {experiment!r}")
    known = {"experiment", "seed", "output", "threads", "model", "params"}
    for key in cfg:
        if key not in known:
            raise ValidationError(f"{key}: unknown top-level field")
    if "experiment" in cfg and cfg["experiment"] != experiment:
        raise ValidationError(f"experiment: config is for {cfg['experiment']!r}, command is {experiment!r}")
    res = {"experiment": experiment}

    s = seed if seed is not None else cfg.get("seed")
    if s is None:
        raise ValidationError("seed: required (no implicit entropy)")
    if isinstance(s, bool) or not isinstance(s, int) or s < 0:
        raise ValidationError(f"seed: expected a non-negative integer, got {s!r}")
    res["seed"] = s

    o = out if out is not None else cfg.get("output", "out")
    if not isinstance(o, str) or not o:
        raise ValidationError(f"output: expected a directory path, got {o!r}")
    res["output"] = o

    t = threads if threads is not None else cfg.get("threads", 1)
    if isinstance(t, bool) or not isinstance(t, int) or t < 1:
        raise ValidationError(f"threads: expected a positive integer, got {t!r}")
    res["threads"] = t

    raw = cfg.get("params", {}) or {}
    if not isinstance(raw, dict):
        raise ValidationError("params: expected a mapping")
    params = copy.deepcopy(DEFAULTS[experiment])
    for key, value in raw.items():
        if key not in params:
            raise ValidationError(f"params.{key}: unknown parameter for {experiment}")
        value = _check_type(f"params.{key}", value, params[key])
        if key in POSITIVE and not value > 0:
            raise ValidationError(f"params.{key}: must be positive, got {value!r}")
        params[key] = value
    _check_params(experiment, params)
    res["params"] = params

    model = cfg.get("model")
    needs_model = experiment != "inequalities" and not (experiment == "conditions" and params["rate_family"])
    if model is None or model == {}:
        if needs_model:
            raise ValidationError("model: missing section (give a catalog name or a kind block)")
        model = None
    elif not isinstance(model, dict):
        raise ValidationError("model: expected a mapping")
    else:
        if "kind" not in model and "name" not in model:
            raise ValidationError("model.name: required unless model.kind is given")
        if "kind" not in model and model["name"] not in CATALOG:
            raise ValidationError(f"model.name: unknown catalog entry {model['name']!r}")
    res["model"] = model
    return res


def _check_params(experiment, params):
    if experiment == "conditions":
        for i, c in enumerate(params["conditions"]):
            if c not in CONDITIONS:
                raise ValidationError(f"params.conditions[{i}]: unknown condition {c!r}")
        b = params["b"]
        for k in b:
            if k not in ("alpha", "beta"):
                raise ValidationError(f"params.b.{k}: unknown field")
        rf = params["rate_family"]
        if rf is not None:
            if not isinstance(rf, dict):
                raise ValidationError("params.rate_family: expected a mapping")
            for k in rf:
                if k not in ("scale", "power", "log_power", "loglog_power"):
                    raise ValidationError(f"params.rate_family.{k}: unknown field")
    if experiment == "coupling":
        for i, m in enumerate(params["ms"]):
            if m < 1:
                raise ValidationError(f"params.ms[{i}]: window must be >= 1")
        for i, n in enumerate(params["rest_grid"]):
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ValidationError(f"params.rest_grid[{i}]: expected a positive integer")
    if experiment == "quenched":
        if params["mode"] not in ("auto", "exact", "mc"):
            raise ValidationError(f"params.mode: must be auto, exact or mc, got {params['mode']!r}")
        for i, n in enumerate(params["ks_grid"]):
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ValidationError(f"params.ks_grid[{i}]: expected a positive integer")
    if experiment == "lil":
        w = params["window"]
        if len(w) != 2 or not 0 <= w[0] < w[1]:
            raise ValidationError("params.window: expected [low, high] with 0 <= low < high")
        if params["first_checkpoint"] > params["horizon"]:
            raise ValidationError("params.first_checkpoint: exceeds params.horizon")
    if experiment == "inequalities":
        for i, name in enumerate(params["systems"]):
            if name not in CHAINS:
                raise ValidationError(f"params.systems[{i}]: {name!r} is not an enumerable catalog chain")
        for i, u in enumerate(params["us"]):
            if not 0 <= u <= params["r"] - 1:
                raise ValidationError(f"params.us[{i}]: must lie in [0, r-1]")
        for i, p in enumerate(params["ps"]):
            if p < 1:
                raise ValidationError(f"params.ps[{i}]: must be >= 1")
        if params["phi"] != "square":
            raise ValidationError("params.phi: only 'square' is available from the command line")


def _model(res):
    try:
        return build_model(res["model"])
    except (ArgumentError, DomainError, TypeError) as exc:
        raise ValidationError(f"model: {exc}") from None


def _profile(model, res, N, p=2.0, one_based=False):
    shape = tail_shape(res["model"].get("name")) if "kind" not in res["model"] else None
    return profile_from_model(model, N, p, tail_model=shape, one_based=one_based)


# ---------------------------------------------------------------------------
# Experiments; each returns (summary dict, list of hard-assertion failures)
# ---------------------------------------------------------------------------


def run_norms(res, outdir):
    P = res["params"]
    model = _model(res)
    try:
        prof = _profile(model, res, P["N"], P["p"], P["one_based"])
    except CapabilityError as exc:
        raise ValidationError(f"params: {exc}") from None
    prof.write_csv(outdir / "profile.csv")
    failures = []
    if not np.all(np.isfinite(prof.norms)) or np.any(prof.norms < 0):
        failures.append({"check": "finite_nonnegative_norms"})
    worst, witness = prof.subadditivity_violation()
    if worst > 1e-10 * max(1.0, float(np.max(prof.norms))):
        failures.append({"check": "subadditivity", "excess": worst, "a_b": witness})
    summary = {"N": prof.N, "p": prof.p, "convention": prof.convention, "tags": sorted(set(prof.tags)),
               "subadditivity_excess": worst}
    return summary, failures


def run_conditions(res, outdir):
    P = res["params"]
    b = SlowlyVaryingSeq(float(P["b"].get("alpha", 1.0)), float(P["b"].get("beta", 1.5)))
    if P["rate_family"]:
        rf = RateFamily(**{k: float(v) for k, v in P["rate_family"].items()})
        prof = ProjectiveProfile.from_family(rf, P["N"])
    else:
        prof = _profile(_model(res), res, P["N"])
    prof.write_csv(outdir / "profile.csv")
    reports, failures = [], []
    for cid in P["conditions"]:
        try:
            rep = check_condition(cid, prof, b=b, N=P["N"])
        except NumericError as exc:
            failures.append({"check": cid, "error": str(exc)})
            continue
        reports.append(json.loads(rep.to_json()))
    write_json(outdir / "conditions.json", reports)
    return {"verdicts": {r["id"]: r["verdict"] for r in reports}}, failures


def run_coupling(res, outdir):
    P, seed, threads = res["params"], res["seed"], res["threads"]
    model = _model(res)
    ens = sample(model, seed, P["horizon"], P["n_paths"], threads=threads, purpose="coupling")
    rows, failures = [], []
    for m in P["ms"]:
        c = build_coupling(model, ens, m, check=False)
        rows.append([m, c.decomposition_error])
        if not c.decomposition_error <= 1e-9:
            failures.append({"check": "decomposition", "m": m, "error": c.decomposition_error})
        if m == P["ms"][-1]:
            c.write_csv(outdir / "coupling_path0.csv")
    write_rows(outdir / "decomposition.csv", ["m", "relative_error"], rows)
    sig = estimate_sigma(model, tol=P["sigma_tol"])
    write_json(outdir / "sigma.json", json.loads(sig.to_json()))
    summary = {"max_decomposition_error": max(r[1] for r in rows), "sigma": sig.sigma, "sigma_m": sig.m}
    if P["rest_grid"]:
        prof = _profile(model, res, max(P["rest_grid"]))
        rep = verify_rest_bound(model, prof, P["rest_grid"], n_paths=P["rest_paths"], seed=seed,
                                m=sig.m, threads=threads)
        write_json(outdir / "rest_bound.json", json.loads(rep.to_json()))
        bad = [f for f in rep.finite_m if not f["ok"]]
        if bad:
            failures.append({"check": "finite_m_rest_bound", **bad[0]})
        summary["rest_ratio_max_over_median"] = rep.ratio_max_over_median
        summary["rest_bounded"] = rep.bounded
    return summary, failures


def _starts(model, starts):
    if starts is not None:
        return starts
    if isinstance(model, FiniteMarkovChain):
        return list(range(len(model.pi)))
    return [None]


def run_quenched(res, outdir):
    P, seed, threads = res["params"], res["seed"], res["threads"]
    model = _model(res)
    starts = P["starts"]
    if starts is not None and not isinstance(starts, list):
        raise ValidationError("params.starts: expected a list of start states")
    reports = []
    for i, st in enumerate(_starts(model, starts)):
        try:
            rep = quenched_cdf_distance(model, st, P["n"], P["n_paths"], seed=seed, mode=P["mode"],
                                        threads=threads)
        except (DomainError, ArgumentError, CapabilityError) as exc:
            raise ValidationError(f"params.starts[{i}]: {exc}") from None
        except DegenerateLimitError as exc:
            raise ValidationError(f"model: {exc}") from None
        d = json.loads(rep.to_json())
        d["within_ks_max"] = rep.ks <= P["ks_max"]
        reports.append(d)
    write_json(outdir / "quenched.json", reports)
    if P["ks_grid"]:
        st = _starts(model, starts)[0]
        rows = ks_grid(model, st, P["ks_grid"], max(P["n_paths"], 1000), seed=seed, threads=threads)
        write_rows(outdir / "ks_grid.csv", ["n", "ks", "stderr"], [[r["n"], r["ks"], r["stderr"]] for r in rows])
    # KS distances are statistical diagnostics, not hard assertions
    return {"ks": [r["ks"] for r in reports], "all_within": all(r["within_ks_max"] for r in reports)}, []


def run_averaged(res, outdir):
    P = res["params"]
    model = _model(res)
    try:
        rep = averaged_clt_check(model, P["n"], P["n_paths"], seed=res["seed"], threads=res["threads"])
    except ArgumentError as exc:
        raise ValidationError(f"params.n: {exc}") from None
    except DegenerateLimitError as exc:
        raise ValidationError(f"model: {exc}") from None
    d = dict(rep.__dict__)
    d["within_variance_rtol"] = abs(rep.variance_ratio - 1) <= P["variance_rtol"]
    d["weight_sum_within_1pct"] = abs(rep.weight_sum - 2 / 3) <= 0.01 * 2 / 3
    write_json(outdir / "averaged.json", d)
    failures = [] if d["weight_sum_within_1pct"] else [{"check": "weight_sum", "value": rep.weight_sum}]
    return {"variance_ratio": rep.variance_ratio, "ks": rep.ks}, failures


def run_lil(res, outdir):
    P = res["params"]
    model = _model(res)
    sigma = model.sigma_exact()
    if sigma is None:
        sigma = estimate_sigma(model).sigma
    cps = default_lil_checkpoints(P["horizon"], P["first_checkpoint"])
    tr = lil_trace(model, res["seed"], P["horizon"], cps, sigma=sigma)
    tr.write_csv(outdir / "lil.csv")
    lo, hi = P["window"]
    t = tr.terminal_abs_max
    verdict = {"n": int(tr.checkpoints[-1]), "terminal_abs_max": t, "sigma": sigma,
               "ratio": t / sigma if sigma > 0 else math.inf, "window": [lo, hi],
               "in_window": lo * sigma <= t <= hi * sigma}
    write_json(outdir / "lil.json", verdict)
    return verdict, []


def run_inequalities(res, outdir):
    P = res["params"]
    try:
        systems = [EnumeratedSystem(catalog_model(name), P["r"]) for name in P["systems"]]
    except SizeError as exc:
        raise ValidationError(f"params.r: {exc}") from None
    reports = grid_check(systems, P["ps"], P["us"], P["points"], P["phi"])
    write_summary_csv(reports, outdir / "summary.csv")
    write_json(outdir / "reports.json", [r.to_dict() for r in reports])
    failures = [{"check": r.id, **r.witness} for r in reports if not r.ok]
    return {"points": len(reports), "violations": len(failures),
            "min_slack": min(r.slack for r in reports)}, failures


RUNNERS = {
    "norms": run_norms, "conditions": run_conditions, "coupling": run_coupling, "quenched": run_quenched,
    "averaged": run_averaged, "lil": run_lil, "inequalities": run_inequalities,
}


def run(res: dict) -> dict:
    """Run a validated experiment; writes artifacts and ``manifest.json`` and returns the manifest."""
    exp = res["experiment"]
    outdir = Path(res["output"]) / exp
    outdir.mkdir(parents=True, exist_ok=True)
    for old in outdir.iterdir():
        if old.is_file():
            old.unlink()
    t0 = time.perf_counter()
    summary, failures = RUNNERS[exp](res, outdir)
    write_json(outdir / "summary.json", {"summary": summary, "failures": failures})
    artifacts = [{"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
                 for p in sorted(outdir.iterdir()) if p.is_file() and p.name != "manifest.json"]
    hashed = {k: v for k, v in res.items() if k not in ("threads", "output")}
    manifest = {
        "experiment": exp,
        "config_hash": sha256_text(dumps(hashed)),
        "config": res,
        "tool_version": __version__,
        "seed": res["seed"],
        "threads": res["threads"],
        "wall_clock_seconds": time.perf_counter() - t0,
        "artifacts": artifacts,
        "status": "pass" if not failures else "fail",
        "first_witness": failures[0] if failures else None,
    }
    write_json(outdir / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def plot_rows(path, sigma=None) -> list:
    """Long-format rows ``(series, x, y, band_lo, band_hi)`` for one artifact."""
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        if isinstance(data, dict) and {"n_grid", "lhs", "rhs"} <= set(data):
            rows = []
            for n, l, se in zip(data["n_grid"], data["lhs"], data["lhs_stderr"]):
                rows.append(("lhs", n, l, l - 2 * se, l + 2 * se))
            rows += [("rhs", n, r, r, r) for n, r in zip(data["n_grid"], data["rhs"])]
            return rows
        raise ValueError(f"{path.name}: not a recognized artifact")
    recs = read_rows(path)
    if not recs:
        raise ValueError(f"{path.name}: empty artifact")
    cols = set(recs[0])
    if {"n", "ks", "stderr"} <= cols:
        return [("ks", int(r["n"]), float(r["ks"]), max(0.0, float(r["ks"]) - 2 * float(r["stderr"])),
                 float(r["ks"]) + 2 * float(r["stderr"])) for r in recs]
    if {"n", "statistic", "running_max", "running_min"} <= cols:
        if sigma is None:
            side = path.with_name("lil.json")
            if not side.exists():
                raise ValueError(f"{path.name}: sigma unknown (pass --sigma or keep lil.json alongside)")
            sigma = json.loads(side.read_text())["sigma"]
        rows = [("statistic", int(r["n"]), float(r["statistic"]), "", "") for r in recs]
        rows += [("running_max", int(r["n"]), float(r["running_max"]), "", "") for r in recs]
        rows += [("sigma", int(r["n"]), float(sigma), "", "") for r in recs]
        return rows
    if {"n", "norm", "tag", "stderr"} <= cols:
        return [("norm", int(r["n"]), float(r["norm"]), float(r["norm"]) - 2 * float(r["stderr"]),
                 float(r["norm"]) + 2 * float(r["stderr"])) for r in recs]
    raise ValueError(f"{path.name}: not a recognized artifact")


def emit_plot_data(paths, outdir, sigma=None) -> list:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise FileNotFoundError(f"artifact not found: {p}")
        target = outdir / f"{p.stem}_plot.csv"
        write_rows(target, ["series", "x", "y", "band_lo", "band_hi"], plot_rows(p, sigma))
        written.append(target)
    return written


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lab", description="Martingale approximation experiments")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, help="worker threads (overrides config)")
    sp = sub.add_parser("plot-data", help="long-format CSV from existing artifacts")
    sp.add_argument("artifacts", nargs="+")
    sp.add_argument("--out", default="plots")
    sp.add_argument("--sigma", type=float, help="sigma reference for LIL traces")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.experiment == "plot-data":
            try:
                for p in emit_plot_data(args.artifacts, args.out, args.sigma):
                    print(p)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_VALIDATION
            return EXIT_OK
        cfg = load_config(args.config)
        res = resolve_config(cfg, args.experiment, args.seed, args.out, args.threads)
        manifest = run(res)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (PreconditionError, NumericError) as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERT
    except MartApproxError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(res["output"]) / res["experiment"]
    if manifest["status"] != "pass":
        print(f"assertion failure: {json.dumps(manifest['first_witness'], sort_keys=True)}", file=sys.stderr)
        print(out)
        return EXIT_ASSERT
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
