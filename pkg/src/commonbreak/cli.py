"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .adaptive import AdaptiveConfig, adaptive_ci
from .config import ConfigError, load_config, parse_value, render_config
from .errors import DataError, NumericalError, ZeroSignal
from .experiments import run_scenario, scenario_names
from .families import get_family
from .limits import K0Component, LimitLawSpec, dep_cov_from_name, quantile_table
from .lse import estimate_lse, gamma_estimates
from .mle import estimate_mle, gamma_mle_estimate
from .noise import NoiseSpec, coeffs_from_name, gen_family_panel, gen_panel, kernel_from_name
from .panel import read_panel_csv, write_covariates_csv, write_panel_csv

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding the defaults (see print-config)")
    common.add_argument("--seed", type=int, help="master seed; a fresh one is drawn and recorded if omitted")
    common.add_argument("--threads", type=int, help="worker threads for replicate loops")
    common.add_argument("--output", help="write the report here instead of stdout (gen-data: the panel CSV)")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a key of this command's section"
    )

    p = _Parser(prog="commonbreak", description="Common break estimation and inference for panel data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", parents=[common], help="estimate the common break")
    e.add_argument("--input", help="panel CSV, one row per series")
    e.add_argument("--covariates", help="covariate CSV (m*n rows)")
    e.add_argument("--method", choices=["lse", "mle"])
    e.add_argument("--family", help="model family for likelihood estimation")
    e.add_argument("--c-star", type=float, dest="c_star")
    e.add_argument("--emit-profile", dest="emit_profile", help="write the criterion profile CSV here")

    a = sub.add_parser("adapt-ci", parents=[common], help="resampling confidence interval for the break")
    a.add_argument("--input")
    a.add_argument("--covariates")
    a.add_argument("--method", choices=["lse", "mle", "lse-dependent"])
    a.add_argument("--family")
    a.add_argument("--c-star", type=float, dest="c_star")
    a.add_argument("--replicates", type=int)
    a.add_argument("--level", type=float, help="miscoverage alpha, e.g. 0.1 for a 90%% interval")
    a.add_argument("--max-lag", type=int, dest="max_lag")
    a.add_argument("--include-draws", action="store_true", default=None, dest="include_draws")

    ld = sub.add_parser("limitdist", parents=[common], help="quantiles of a limiting argmax law")
    ld.add_argument("--regime", choices=["a", "b", "c"])
    ld.add_argument("--replicates", type=int)
    ld.add_argument("--levels", help="JSON list of probability levels")
    ld.add_argument("--step", type=float)
    ld.add_argument("--horizon", type=float)
    ld.add_argument("--refine", action="store_true", default=None)

    mc = sub.add_parser("mc-study", parents=[common], help="run a Monte Carlo scenario")
    mc.add_argument("--scenario", choices=scenario_names())
    mc.add_argument("--replicates", type=int, help="shortcut for the scenario's replicate count")

    g = sub.add_parser("gen-data", parents=[common], help="simulate a panel CSV")
    g.add_argument("--family")
    g.add_argument("--m", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--covariates-output", dest="covariates_output")

    sub.add_parser("print-config", help="print every default as an INI file")
    return p


# ---------------------------------------------------------------------------


def _resolve(args, cfg: dict, section: str, keys) -> dict:
    out = dict(cfg[section])
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        if k not in out:
            raise UsageError(f"unknown key {k!r} for [{section}]")
        out[k] = parse_value(v)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg["run"]["seed"]
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    return int(seed)


def _threads(args, cfg) -> int:
    return int(args.threads if args.threads is not None else cfg["run"]["threads"])


def _report(command: str, config: dict, seed, result: dict) -> dict:
    return {
        "command": command,
        "version": _version(),
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "seed": seed,
        "config": config,
        "result": result,
    }


def _emit(args, payload: dict) -> None:
    text = json.dumps(payload, indent=2, default=_json_default) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _family_for(name, panel):
    if name is None:
        return None
    fam = get_family(name)
    if fam.uses_covariates and panel.covariates is not None and panel.cov_dim != fam.param_dim:
        fam = get_family(name, dim=panel.cov_dim)
    return fam


def _need_input(c: dict):
    if not c.get("input"):
        raise UsageError("--input is required")
    return read_panel_csv(c["input"], c.get("covariates"))


# ---------------------------------------------------------------------------


def cmd_estimate(args, cfg) -> dict:
    c = _resolve(args, cfg, "estimate", ["input", "covariates", "method", "family", "c_star"])
    panel = _need_input(c)
    result: dict
    if c["method"] == "mle":
        fam = _family_for(c["family"], panel)
        est = estimate_mle(panel, fam, c["c_star"])
        try:
            ratio, num = gamma_mle_estimate(panel, fam, est)
            result = {"estimate": est.to_dict(), "gamma": {"ratio": ratio, "numerator": num}}
        except ZeroSignal as exc:
            result = {"estimate": est.to_dict(), "gamma": None, "gamma_error": str(exc)}
    else:
        est = estimate_lse(panel, c["c_star"])
        try:
            result = {"estimate": est.to_dict(), "gamma": gamma_estimates(panel, est).as_dict()}
        except ZeroSignal as exc:
            result = {"estimate": est.to_dict(), "gamma": None, "gamma_error": str(exc)}
    if args.emit_profile:
        with open(args.emit_profile, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["b_index", "tau", "criterion"])
            for b, v in zip(est.b_grid, est.profile):
                w.writerow([int(b), repr(float(b) / panel.n), repr(float(v))])
        c["emit_profile"] = args.emit_profile
    return _report("estimate", c, None, result)


def cmd_adapt_ci(args, cfg) -> dict:
    c = _resolve(
        args, cfg, "adapt-ci",
        ["input", "covariates", "method", "family", "c_star", "replicates", "level", "max_lag", "include_draws"],
    )
    panel = _need_input(c)
    seed = _seed(args, cfg)
    conf = AdaptiveConfig(
        replicates=int(c["replicates"]),
        level=float(c["level"]),
        method=c["method"],
        max_lag=int(c["max_lag"]),
        seed=seed,
        c_star=float(c["c_star"]),
        threads=_threads(args, cfg),
    )
    res = adaptive_ci(panel, conf, _family_for(c["family"], panel))
    return _report("adapt-ci", c, seed, res.to_dict(bool(c["include_draws"])))


def _limit_spec(c: dict) -> LimitLawSpec:
    k0 = tuple(
        K0Component(d["family"], tuple(d["pre"]), tuple(d["post"]), d.get("form", "loglik")) for d in c["k0"] or []
    )
    dep = dep_cov_from_name(c["dep_cov"]) if c["dep_cov"] else None
    return LimitLawSpec(
        regime=c["regime"],
        gamma_L=float(c["gamma_l"]),
        gamma_R=float(c["gamma_r"]),
        c1_sq=float(c["c1_sq"]),
        gamma_L_star=float(c["gamma_l_star"]),
        gamma_R_star=float(c["gamma_r_star"]),
        k0=k0,
        dep_cov=dep,
    )


def cmd_limitdist(args, cfg) -> dict:
    c = _resolve(args, cfg, "limitdist", ["regime", "replicates", "step", "horizon", "refine"])
    if args.levels is not None:
        c["levels"] = parse_value(args.levels)
    seed = _seed(args, cfg)
    spec = _limit_spec(c)
    out = quantile_table(
        spec, c["levels"], int(c["replicates"]), seed, c["step"], c["horizon"],
        threads=_threads(args, cfg), refine=bool(c["refine"]),
    )
    draws = bool(c["include_draws"])
    if isinstance(out, tuple):
        coarse, fine = out
        drift = {
            str(a): abs(fine.quantiles[a] - coarse.quantiles[a]) / max(abs(fine.quantiles[a]), 1e-12)
            for a in coarse.quantiles
        }
        result = {"coarse": coarse.to_dict(draws), "fine": fine.to_dict(draws), "relative_drift": drift}
    else:
        result = out.to_dict(draws)
    return _report("limitdist", c, seed, result)


def cmd_mc_study(args, cfg) -> dict:
    c = _resolve(args, cfg, "mc-study", ["scenario"])
    name = c["scenario"]
    if name not in scenario_names():
        raise UsageError(f"unknown scenario {name!r}; choose from {', '.join(scenario_names())}")
    params = dict(cfg[f"scenario:{name}"])
    if args.replicates is not None:
        key = next((k for k in ("replicates", "outer", "draws") if k in params), None)
        if key is None:
            raise UsageError(f"scenario {name} has no replicate count")
        params[key] = args.replicates
    seed = _seed(args, cfg)
    out = run_scenario(name, params, seed, _threads(args, cfg))
    return _report("mc-study", {"scenario": name, "params": out.pop("params")}, seed, out)


def cmd_gen_data(args, cfg) -> dict:
    c = _resolve(args, cfg, "gen-data", ["family", "m", "n", "tau", "covariates_output"])
    if not args.output:
        raise UsageError("gen-data needs --output for the panel CSV")
    seed = _seed(args, cfg)
    m, n, tau = int(c["m"]), int(c["n"]), float(c["tau"])
    if c["family"]:
        fam = get_family(c["family"])
        sampler = None
        if fam.uses_covariates:
            d = int(c["covariate_dim"])
            if d != fam.param_dim:
                fam = get_family(c["family"], dim=d)

            def sampler(rng, n_obs):
                x = rng.standard_normal((n_obs, d))
                x[:, 0] = 1.0
                return x

        panel = gen_family_panel(fam, c["pre"], c["post"], tau, m, n, seed, cov_sampler=sampler)
    else:
        kind = c["noise"]
        extra = {}
        if kind == "gaussian_process":
            extra["kernel"] = kernel_from_name(c["kernel"])
        elif kind == "linear_process":
            extra["coeffs"] = coeffs_from_name(c["coeffs"])
        noise = NoiseSpec(kind, sigma=float(c["sigma"]), **extra)
        pre = np.resize(np.asarray(c["pre"], float), m)
        post = np.resize(np.asarray(c["post"], float), m)
        panel = gen_panel((pre, post), tau, noise, m, n, seed)
    write_panel_csv(panel, args.output)
    if c["covariates_output"]:
        write_covariates_csv(panel, c["covariates_output"])
    return _report("gen-data", c, seed, {"panel": args.output, "m": m, "n": n})


COMMANDS = {
    "estimate": cmd_estimate,
    "adapt-ci": cmd_adapt_ci,
    "limitdist": cmd_limitdist,
    "mc-study": cmd_mc_study,
    "gen-data": cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "print-config":
            sys.stdout.write(render_config())
            return 0
        cfg = load_config(args.config)
        report = COMMANDS[args.command](args, cfg)
        if args.command == "gen-data":
            sys.stdout.write(json.dumps(report, indent=2, default=_json_default) + "\n")
        else:
            _emit(args, report)
        return 0
    except (UsageError, ConfigError) as exc:
        print(f"commonbreak: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"commonbreak: data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"commonbreak: data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"commonbreak: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"commonbreak: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
