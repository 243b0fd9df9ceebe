"""Command-line front end.

Commands: ``simulate``, ``estimate``, ``pretest``, ``robust`` and ``mc``.
Each reads a JSON config (``--config``), writes into ``--out`` and embeds the
resolved config and master seed in every output file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Optional

import numpy as np
import scipy

from . import __version__
from .mbb import ExplosiveDrawError, block_length, bootstrap_var_proxy, derive_seed
from .md_estimation import (IdentificationError, MdOptions, delta_method_irf_ci, md_estimate,
                            md_estimate_Bform)
from .montecarlo import COVERAGE_METHODS, DgpSpec, run_coverage, run_table1, simulate_path
from .optim import ConvergenceError
from .pipeline import SEED_BANDS, SEED_OPTIM, CovarianceConfig, moments_with_covariance, proxy_nobs
from .proxy_model import SingularCovarianceError, build_restrictions
from .relevance_test import PretestConfig, StageError, relevance_pretest
from .var_core import InsufficientSampleError, SingularRegressorError, fit_var, irf, read_csv
from .weak_robust import export_sets_csv, invert_wald, plugin_direct_ci

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IDENTIFICATION = 4

ENV_PREFIX = "PROXYSVAR_"


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

DEFAULTS: dict[str, Any] = {
    "lags": 1,
    "intercept": True,
    "h_max": 12,
    "level": 0.90,
    "shock": 0,
    "covariance": {"mode": "mbb", "N_cov": 500, "block_length": None},
    "md": {"weighting": "two-step", "restarts": 5},
    "pretest": {"test": "dh", "vartheta": "beta2", "level": 0.05, "N": None, "coordinate": None},
    "robust": {"B11_0": None, "significance": 0.10, "response": 2, "points": None},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str]) -> tuple[dict, Optional[Path]]:
    if path is None:
        return {}, None
    p = Path(path)
    try:
        with open(p) as fh:
            return json.load(fh), p.parent
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None


def resolve(args: argparse.Namespace) -> tuple[dict, int, int, Path, Optional[Path]]:
    """Merge defaults, config file, environment and flags (later wins)."""
    cfg_path = args.config or os.environ.get(ENV_PREFIX + "CONFIG")
    raw, base = load_config(cfg_path)
    cfg = _merge(DEFAULTS, raw) if args.command in ("estimate", "pretest", "robust") else raw

    def pick(flag, env, default, cast):
        if flag is not None:
            return flag
        if os.environ.get(ENV_PREFIX + env):
            try:
                return cast(os.environ[ENV_PREFIX + env])
            except ValueError:
                raise ConfigError(f"environment variable {ENV_PREFIX + env} is malformed") from None
        return default

    seed = pick(args.seed, "SEED", cfg.get("seed", 0), int)
    threads = pick(args.threads, "THREADS", 1, int)
    out = Path(pick(args.out, "OUT", ".", str))
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    cfg = dict(cfg)
    cfg["seed"] = seed
    return cfg, seed, threads, out, base


def provenance(cfg: dict, seed: int, **extra) -> dict:
    d = {"package": "proxysvar", "version": __version__, "numpy": np.__version__,
         "scipy": scipy.__version__, "seed": int(seed), "config": cfg}
    d.update(extra)
    return d


def _dataset(cfg: dict, base: Optional[Path], need_w: bool, need_z: bool):
    d = cfg.get("data")
    if not isinstance(d, dict) or "path" not in d:
        raise ConfigError("config needs a 'data' block with 'path' and column roles")
    endo = d.get("endogenous") or []
    pw = d.get("proxies_w") or []
    pz = d.get("proxies_z") or []
    if not endo:
        raise ConfigError("data.endogenous lists no columns")
    if need_w and not pw:
        raise ConfigError("this command needs proxies_w columns")
    if need_z and not pz:
        raise ConfigError("this command needs proxies_z columns")
    roles = list(endo) + list(pw) + list(pz)
    if len(set(roles)) != len(roles):
        raise ConfigError("a column is assigned to more than one role")
    path = Path(d["path"])
    if not path.is_absolute() and base is not None and not path.exists():
        path = base / path
    try:
        return read_csv(path, endo, pw, pz)
    except FileNotFoundError:
        raise ConfigError(f"data file not found: {path}") from None
    except KeyError as e:
        raise ConfigError(str(e).strip("'\"")) from None


def _covariance(cfg: dict) -> CovarianceConfig:
    c = cfg.get("covariance", {}) or {}
    try:
        return CovarianceConfig(mode=c.get("mode", "mbb"), N_cov=int(c.get("N_cov", 500)),
                                block_length=c.get("block_length"))
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _restrictions(cfg: dict):
    r = cfg.get("restrictions")
    if not isinstance(r, dict) or "pattern" not in r:
        raise ConfigError("config needs 'restrictions': {'pattern': [[...]], 'target': 'A1'|'B1'}")
    target = r.get("target", "A1")
    if target not in ("A1", "B1"):
        raise ConfigError("restrictions.target must be 'A1' or 'B1'")
    try:
        return build_restrictions(r["pattern"], target), target
    except ValueError as e:
        raise ConfigError(f"bad restriction pattern: {e}") from None


def _pretest_config(cfg: dict) -> PretestConfig:
    p = cfg.get("pretest", {}) or {}
    try:
        return PretestConfig(lags=int(cfg.get("lags", 1)), intercept=bool(cfg.get("intercept", True)),
                             which=p.get("which", "w"), vartheta=p.get("vartheta", "beta2"),
                             coordinate=p.get("coordinate"), test=p.get("test", "dh"),
                             level=float(p.get("level", 0.05)), N=p.get("N"),
                             block_length=p.get("block_length"), covariance=_covariance(cfg))
    except ValueError as e:
        raise ConfigError(str(e)) from None


# ------------------------------------------------------------------ output

def _dump_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _write_csv(path: Path, header: list[str], rows: list[list], prov: dict) -> None:
    buf = io.StringIO()
    buf.write("# " + json.dumps(prov, sort_keys=True, default=_jsonable) + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path.write_text(buf.getvalue())


def _matrix(a) -> list:
    return np.atleast_2d(np.asarray(a, dtype=float)).tolist()


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg: dict, seed: int, threads: int, out: Path, base) -> int:
    keys = set(DgpSpec.__dataclass_fields__)
    sc = {k: v for k, v in (cfg.get("scenario") or {}).items()}
    bad = set(sc) - keys
    if bad:
        raise ConfigError(f"unknown scenario fields: {sorted(bad)}")
    spec = _spec(sc)
    path = simulate_path(spec, seed)
    d = path.data
    rows = []
    for t in range(d.Y.shape[0]):
        row = list(d.Y[t]) + list(d.w[t])
        if d.z is not None:
            row += list(d.z[t])
        rows.append(row)
    header = [f"y{i + 1}" for i in range(d.Y.shape[1])] + ["w1"] + (["z1"] if d.z is not None else [])
    name = cfg.get("output", "simulated.csv")
    target = out / name
    with open(target, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) for v in r])
    _dump_json(out / (Path(name).stem + ".meta.json"), {"provenance": provenance(cfg, seed)})
    print(f"wrote {target} (T={d.Y.shape[0]})")
    return EXIT_OK


def cmd_estimate(cfg: dict, seed: int, threads: int, out: Path, base) -> int:
    data = _dataset(cfg, base, need_w=True, need_z=False)
    R, target = _restrictions(cfg)
    cov = _covariance(cfg)
    fit = fit_var(data, int(cfg["lags"]), bool(cfg["intercept"]))
    moments = moments_with_covariance(fit, data, cov, seed)
    md = cfg.get("md", {})
    opts = MdOptions(restarts=int(md.get("restarts", 5)), weighting=md.get("weighting", "two-step"),
                     seed=derive_seed(seed, SEED_OPTIM) % 2 ** 32)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        mfit = (md_estimate if target == "A1" else md_estimate_Bform)(moments, R, opts)
    h_max = int(cfg["h_max"])
    shock = int(cfg["shock"])
    T_w = proxy_nobs(fit, data)
    prov = provenance(cfg, seed, block_length=block_length(T_w, cov.block_length),
                      N_cov=cov.N_cov if cov.mode == "mbb" else None)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "var_fit.json", {
        "provenance": prov, "lags": fit.lags, "nobs": fit.nobs, "Pi": _matrix(fit.Pi),
        "intercept": None if fit.intercept is None else list(map(float, fit.intercept)),
        "Sigma_u": _matrix(fit.Sigma_u), "spectral_radius": float(fit.spectral_radius),
        "stable": bool(fit.is_stable)})
    _dump_json(out / "md_fit.json", {
        "provenance": prov, "form": mfit.form, "alpha": list(map(float, mfit.alpha)),
        "parameters": list(R.names), "A1": _matrix(mfit.A1), "B1": _matrix(mfit.B1),
        "V_alpha": None if mfit.V_alpha is None else _matrix(mfit.V_alpha),
        "Q_min": float(mfit.Q_min), "rank_ok": bool(mfit.rank_ok),
        "min_singular_value": float(mfit.min_singular_value), "converged": bool(mfit.converged),
        "weighting": mfit.weighting, "nobs": mfit.nobs,
        "warnings": [str(w.message) for w in caught]})
    if mfit.rank_ok and mfit.influence is not None:
        path = delta_method_irf_ci(mfit, fit, float(cfg["level"]), h_max, shock)
    else:
        path = irf(fit, mfit.B1, shock, h_max)
    names = data.names[:fit.n]
    header = ["h"] + list(names)
    if path.lower is not None:
        header += [f"{c}_lower" for c in names] + [f"{c}_upper" for c in names]
    rows = []
    for h in range(h_max + 1):
        r = [h] + list(path.values[h])
        if path.lower is not None:
            r += list(path.lower[h]) + list(path.upper[h])
        rows.append(r)
    _write_csv(out / "irf.csv", header, rows, prov)
    print(f"alpha = {np.array2string(mfit.alpha, precision=4)}  rank_ok={mfit.rank_ok}")
    if not mfit.rank_ok:
        print("identification failure: rank condition does not hold at the estimate", file=sys.stderr)
        return EXIT_IDENTIFICATION
    return EXIT_OK


def cmd_pretest(cfg: dict, seed: int, threads: int, out: Path, base) -> int:
    pc = _pretest_config(cfg)
    data = _dataset(cfg, base, need_w=pc.which == "w", need_z=pc.which == "z")
    res = relevance_pretest(data, pc, seed)
    print(f"N = {res.N} bootstrap replications (T = {res.T}, block length {res.block_length})")
    print(f"{res.test} statistic {res.statistic:.4f}, p-value {res.p_value:.4f} -> {res.decision}")
    out.mkdir(parents=True, exist_ok=True)
    doc = res.to_dict()
    doc["provenance"] = provenance(cfg, seed)
    _dump_json(out / "relevance_test.json", doc)
    return EXIT_OK


def cmd_robust(cfg: dict, seed: int, threads: int, out: Path, base) -> int:
    data = _dataset(cfg, base, need_w=False, need_z=True)
    rc = cfg.get("robust", {})
    cov = _covariance(cfg)
    fit = fit_var(data, int(cfg["lags"]), bool(cfg["intercept"]))
    T = proxy_nobs(fit, data, "z")
    ell = block_length(T, cov.block_length)
    ens = bootstrap_var_proxy(fit, data, ell, cov.N_cov, derive_seed(seed, SEED_BANDS), "z")
    Suz = ens.point_Sigma_uw
    r = Suz.shape[1]
    B11 = rc.get("B11_0")
    B11 = np.eye(r) if B11 is None else np.atleast_2d(np.asarray(B11, dtype=float))
    Vk = ens.scaled_cov(ens.kappa())
    h_max = int(cfg["h_max"])
    sets = invert_wald(fit.Pi, Suz, Vk, T, B11, range(h_max + 1), int(rc.get("response", 2)),
                       float(rc.get("significance", 0.10)), points=rc.get("points"))
    prov = provenance(cfg, seed, block_length=ell, N_cov=cov.N_cov)
    out.mkdir(parents=True, exist_ok=True)
    export_sets_csv(sets, out / "robust_sets.csv")
    summary = {"provenance": prov, "sets": [
        {"h": s.h, "projection": _matrix(s.projection), "hodges_lehmann": list(map(float, s.hodges_lehmann)),
         "hl_p_value": s.hl_p_value, "critical_value": s.critical_value, "skipped": s.skipped,
         "empty": bool(s.empty)} for s in sets]}
    if r == 1:
        Vp = ens.scaled_cov(ens.kappa(include_sigma_u=True))
        pb = plugin_direct_ci(fit, Suz, Vp, T, float(cfg["level"]), h_max)
        summary["plugin_direct"] = {"values": _matrix(pb.values), "lower": _matrix(pb.lower),
                                    "upper": _matrix(pb.upper), "level": pb.level}
    _dump_json(out / "robust_summary.json", summary)
    return EXIT_OK


def _spec(d: dict) -> DgpSpec:
    d = dict(d)
    for k in ("Pi1", "B"):
        if k in d:
            d[k] = tuple(map(tuple, d[k]))
    if "garch" in d:
        d["garch"] = tuple(d["garch"])
    try:
        return DgpSpec(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad scenario: {e}") from None


def cmd_mc(cfg: dict, seed: int, threads: int, out: Path, base) -> int:
    exp = cfg.get("experiment")
    M = cfg.get("M")
    if not isinstance(M, int):
        raise ConfigError("'M' (number of replications) must be an integer")
    if M < 1:
        raise ConfigError("M must be positive; an empty Monte Carlo table is not defined")
    pc = _pretest_config(_merge({"intercept": False}, cfg))
    out.mkdir(parents=True, exist_ok=True)
    prov = provenance(cfg, seed)
    if exp == "table1":
        scen = cfg.get("scenarios") or []
        if not scen:
            raise ConfigError("table1 experiment lists no scenarios")
        specs = []
        for s in scen:
            s = dict(s)
            name = s.pop("name", f"scenario{len(specs) + 1}")
            specs.append((name, _spec(s)))
        rows = run_table1(specs, M, seed, pc, threads)
        cols = ["scenario", "T", "innovations", "reps", "failures", "N", "DH", "DH_se"]
        ks = [c for c in rows[0] if c.startswith("KS_") and not c.endswith("_se")]
        for c in ks:
            cols += [c, c + "_se"]
        _write_csv(out / "table1.csv", cols, [[r[c] for c in cols] for r in rows], prov)
        for r in rows:
            print(f"{r['scenario']:>18s} T={r['T']:<5d} {r['innovations']:5s} DH={r['DH']:.3f} "
                  f"(se {r['DH_se']:.3f}) failures={r['failures']}")
            for e in r["errors"]:
                print(f"    failure: {e}", file=sys.stderr)
    elif exp == "coverage":
        methods = tuple(cfg.get("methods", ["md-delta"]))
        bad = set(methods) - set(COVERAGE_METHODS)
        if bad:
            raise ConfigError(f"unknown coverage methods {sorted(bad)}; choose from {COVERAGE_METHODS}")
        spec = _spec(cfg.get("scenario") or {})
        if {"plugin-direct", "robust"} & set(methods) and spec.z_corr is None:
            raise ConfigError("plug-in and robust methods need scenario.z_corr")
        rows = run_coverage(spec, M, seed, float(cfg.get("level", 0.90)), methods,
                            int(cfg.get("h_max", 12)), int(cfg.get("response", 2)), pc, threads)
        cols = list(rows[0])
        _write_csv(out / "coverage.csv", cols, [[r[c] for c in cols] for r in rows], prov)
        for r in rows:
            print(" ".join(f"{c}={r[c]:.3f}" if isinstance(r[c], float) else f"{c}={r[c]}" for c in cols))
    else:
        raise ConfigError("experiment must be 'table1' or 'coverage'")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "pretest": cmd_pretest,
            "robust": cmd_robust, "mc": cmd_mc}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="proxysvar",
        description="Proxy-SVAR indirect-MD estimation, bootstrap relevance pre-test and "
                    "weak-proxy robust impulse-response sets.",
        epilog=f"Every flag can also be set through {ENV_PREFIX}CONFIG, {ENV_PREFIX}SEED, "
               f"{ENV_PREFIX}THREADS and {ENV_PREFIX}OUT; flags take precedence. "
               "Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 identification failure.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"simulate": "write a simulated dataset from a scenario",
             "estimate": "fit the VAR and the indirect-MD model, write var_fit.json, md_fit.json, irf.csv",
             "pretest": "bootstrap relevance pre-test, write relevance_test.json",
             "robust": "weak-proxy robust sets by Wald inversion, write robust_sets.csv",
             "mc": "Monte Carlo experiment from a scenario file, write table1.csv or coverage.csv"}
    for name, h in helps.items():
        sp = sub.add_parser(name, help=h, description=h)
        sp.add_argument("--config", help="JSON config or scenario file")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--threads", type=int, help="worker processes for Monte Carlo replications")
        sp.add_argument("--out", help="output directory (default: current directory)")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, seed, threads, out, base = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, seed, threads, out, base)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationError as e:
        print(f"identification failure: {e}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except StageError as e:
        print(f"numerical failure in stage '{e.stage}': {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (np.linalg.LinAlgError, ConvergenceError, ExplosiveDrawError, FloatingPointError,
            SingularCovarianceError, SingularRegressorError) as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InsufficientSampleError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
