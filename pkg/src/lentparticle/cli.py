"""Command line interface: run, validate, tauber, crosscheck, report.

Configuration is a JSON file; the schema is documented in the README and
enforced here with field-path error messages.  Monte Carlo work fans out
to a process pool over contiguous path ranges and is merged in path
order, so results are independent of the worker count.

Exit codes: 0 success, 2 configuration/schema error, 3 hypothesis
failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import diagnostics, ensemble, ibp, lent, prm, report, scenarios, sde
from .measures import (NonIntegrableError, power_law, small_ball_params,
                       tauberian_fit, total_mass)
from .rng import TAG_NOISE, RngStream

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_HYPOTHESIS = 3
EXIT_NUMERIC = 4

SIMPLE_SCENARIOS = {"compound"}       # vectorised mark-sum pipeline


class SchemaError(ValueError):
    """Configuration failure, carrying the offending field path."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _require(cond, path, msg):
    if not cond:
        raise SchemaError(f"{path}: {msg}")


def validate_config(config: dict, need_outputs: bool = True) -> dict:
    """Check the config shape and fill defaults; returns the config."""
    _require(isinstance(config, dict), "$", "config must be a JSON object")
    name = config.get("scenario")
    _require(isinstance(name, str), "scenario", "required string")
    _require(name in scenarios.CATALOG, "scenario",
             f"unknown scenario {name!r}; choose from {sorted(scenarios.CATALOG)}")
    params = config.setdefault("params", {})
    _require(isinstance(params, dict), "params", "must be an object")
    run = config.setdefault("run", {})
    _require(isinstance(run, dict), "run", "must be an object")
    _require(isinstance(run.get("seed"), int), "run.seed", "required integer")
    run.setdefault("paths", 1000)
    run.setdefault("rho_replicas", 1000)
    run.setdefault("workers", int(os.environ.get("LENTPARTICLE_WORKERS", "1")))
    for key in ("paths", "rho_replicas", "workers"):
        _require(isinstance(run[key], int) and run[key] >= 1,
                 f"run.{key}", "must be a positive integer")
    outputs = config.setdefault("outputs", {})
    _require(isinstance(outputs, dict), "outputs", "must be an object")
    if need_outputs:
        _require(isinstance(outputs.get("dir"), str), "outputs.dir", "required string")
    outputs.setdefault("svg", True)
    return config


def check_param_ranges(config: dict):
    """Scenario-specific numeric constraints (hypothesis-level, exit 3)."""
    params = config["params"]
    eps = params.get("eps", 0.5)
    if not 0.0 < eps < 1.0:
        raise ValueError(
            f"params.eps = {eps} out of range: the power-law family needs "
            "0 < eps < 1 for the Laplace-exponent asymptotics to apply")
    if params.get("trunc", 0.01) < 0:
        raise ValueError("params.trunc must be >= 0")
    if params.get("horizon", 1.0) <= 0:
        raise ValueError("params.horizon must be > 0")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise SchemaError(f"$: config file not found: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"$: invalid JSON: {e}")


# ---------------------------------------------------------------------------
# worker functions (top level so they pickle)
# ---------------------------------------------------------------------------

def _simple_chunk(args):
    name, params, start, count, seed = args
    sc = scenarios.build(name, **params)
    return ensemble.simple_ensemble(sc, count, RngStream(seed=seed), path_offset=start)


def _traj_chunk(args):
    name, params, start, count, seed = args
    sc = scenarios.build(name, **params)
    d = sc.dim
    out = {"x": np.empty((count, d)), "n_jumps": np.empty(count, dtype=np.int64),
           "kk_err": np.empty(count), "gamma_min_eig": np.empty(count),
           "bound_margin": np.full(count, np.nan)}
    lower_bound = sc.meta.get("pathwise_lower_bound")
    for i in range(count):
        stream = RngStream(seed=seed, path=start + i + 1)
        path = prm.sample_path(sc.measure, sc.horizon, stream)
        traj = sde.integrate(sc, path, order=max(sc.jet_order, 1))
        out["x"][i] = traj.x_final
        out["n_jumps"][i] = path.n_jumps
        out["kk_err"][i] = max(
            (float(np.max(np.abs(k @ kb - np.eye(d))))
             for k, kb in zip(traj.k_events, traj.kbar_events)), default=0.0)
        mm = lent.malliavin_matrix(traj)
        out["gamma_min_eig"][i] = mm.min_eigenvalue()
        if lower_bound is not None:
            bvals = np.array([rec.ev.b for rec in traj.jumps])
            bound = lower_bound(path.marks, bvals)
            out["bound_margin"][i] = float(
                np.linalg.eigvalsh(mm.gamma - bound * np.eye(d))[0])
    return out


def _fan_out(worker, name, params, paths, seed, workers):
    chunk = math.ceil(paths / workers)
    jobs = [(name, params, start, min(chunk, paths - start), seed)
            for start in range(0, paths, chunk)]
    if workers == 1 or len(jobs) == 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _mean_se(v):
    v = np.asarray(v, dtype=float)
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v)))


def _dual_oracle(sc, seed, rho_replicas):
    """Gamma by product formula vs Monte Carlo on a fixed path."""
    stream = RngStream(seed=seed, path=1)
    path = prm.sample_path(sc.measure, sc.horizon, stream)
    traj = sde.integrate(sc, path, order=max(sc.jet_order, 1))
    mm = lent.malliavin_matrix(traj)
    grads = lent.gradient_samples(sc, traj, rho_replicas, stream)
    emp = lent.empirical_gamma(grads)
    denom = max(float(np.max(np.abs(mm.gamma))), 1e-300)
    rel = float(np.max(np.abs(emp - mm.gamma))) / denom
    return mm, emp, rel


def run_pipeline(config: dict) -> report.RunReport:
    name = config["scenario"]
    params = config["params"]
    run = config["run"]
    sc = scenarios.build(name, **params)
    rep = report.RunReport(config=config)
    out_dir = Path(config["outputs"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    mm, emp, rel = _dual_oracle(sc, run["seed"], run["rho_replicas"])
    rep.diagnostics["gamma_product"] = mm.gamma.tolist()
    rep.diagnostics["gamma_monte_carlo"] = emp.tolist()
    rep.add_estimate("gamma_dual_oracle_rel_err", rel, 0.0, run["rho_replicas"])
    rep.verdicts["gamma_dual_oracle_5pct"] = bool(rel < 0.05)

    if name in SIMPLE_SCENARIOS:
        parts = _fan_out(_simple_chunk, name, params, run["paths"],
                         run["seed"], run["workers"])
        ens = ensemble.merge_ensembles(parts)
        m, se = _mean_se(ens.x)
        rep.add_estimate("mean_x", m, se, len(ens))
        m, se = _mean_se(ens.gamma)
        rep.add_estimate("mean_gamma", m, se, len(ens))

        w1 = ibp.weight(ens, 1)
        m, se = _mean_se(w1.values)
        rep.add_estimate("mean_z1", m, se, len(ens))
        rep.diagnostics["z1_rejection_fraction"] = w1.rejection_fraction
        if w1.rejection_fraction > 0.01:
            rep.diagnostics["warnings"] = ["Z1 rejection fraction exceeds 1%"]
        x0 = sc.x0[0]
        est = ibp.expectation_ibp(lambda x: np.sin(x - x0), ens.x, w1,
                                  f_deriv=lambda x: np.cos(x - x0))
        rep.add_estimate("ibp_sin_weighted", est.weighted, est.weighted_se, est.n)
        rep.add_estimate("ibp_sin_direct", est.direct, est.direct_se, len(ens))

        mu, sd = float(np.mean(ens.x)), float(np.std(ens.x))
        grid = np.linspace(mu - 3 * sd, mu + 3 * sd, 41)
        dens = ibp.density_ibp(ens.x, w1, grid)
        rep.add_estimate("density_mass", dens.mass(), 0.0, len(ens))
        rep.verdicts["density_mass_2pct"] = bool(abs(dens.mass() - 1.0) < 0.02)
        report.write_csv(out_dir / "density.csv",
                         ["grid", "ibp", "ibp_se", "kde"],
                         list(zip(dens.grid.tolist(), dens.ibp.tolist(),
                                  dens.ibp_se.tolist(), dens.kde.tolist())))
        if config["outputs"].get("svg"):
            report.svg_line_chart(out_dir / "density.svg",
                                  {"ibp": (dens.grid, dens.ibp),
                                   "kde": (dens.grid, dens.kde)},
                                  title=f"{name}: density at the horizon",
                                  xlabel="x", ylabel="p(x)")
        inv = diagnostics.inverse_moment(ens.gamma[ens.gamma > 0], 2)
        rep.diagnostics["gamma_inverse_moment_p2"] = {
            "estimate": inv.estimate, "stable": inv.stable, "verdict": inv.verdict}
    else:
        parts = _fan_out(_traj_chunk, name, params, run["paths"],
                         run["seed"], run["workers"])
        x = np.concatenate([p["x"] for p in parts])
        kk = np.concatenate([p["kk_err"] for p in parts])
        eig = np.concatenate([p["gamma_min_eig"] for p in parts])
        margins = np.concatenate([p["bound_margin"] for p in parts])
        for i in range(sc.dim):
            m, se = _mean_se(x[:, i])
            rep.add_estimate(f"mean_x{i}", m, se, len(x))
        rep.add_estimate("max_flow_inverse_error", float(np.max(kk)), 0.0, len(kk))
        rep.verdicts["flow_inverse_1e-8"] = bool(np.max(kk) <= 1e-8)
        rep.add_estimate("min_gamma_eigenvalue", float(np.min(eig)), 0.0, len(eig))
        if not np.all(np.isnan(margins)):
            worst = float(np.nanmin(margins))
            rep.add_estimate("min_lower_bound_margin", worst, 0.0, len(margins))
            rep.verdicts["pathwise_lower_bound_psd"] = bool(worst >= -1e-10)
        report.write_csv(out_dir / "states.csv",
                         [f"x{i}" for i in range(sc.dim)] + ["kk_err", "gamma_min_eig"],
                         [list(map(float, row)) + [float(a), float(b)]
                          for row, a, b in zip(x, kk, eig)])

    hyp = diagnostics.hypothesis_report(sc)
    rep.diagnostics["hypotheses"] = hyp.to_dict()
    rep.verdicts["hypotheses_pass"] = hyp.passed()
    return rep


def crosscheck_pipeline(config: dict) -> report.RunReport:
    """Two independent simulations of the subordinated law, compared by KS."""
    name = config["scenario"]
    if name != "subordination-linear":
        raise SchemaError("scenario: crosscheck requires 'subordination-linear'")
    params = config["params"]
    run = config["run"]
    sc = scenarios.build(name, **params)
    sigma0 = sc.meta["sigma0"]
    n = run["paths"]
    rep = report.RunReport(config=config)

    parts = _fan_out(_traj_chunk, name, params, n, run["seed"], run["workers"])
    route_sde = np.concatenate([p["x"] for p in parts])

    # direct route: total subordinator time, then one Gaussian displacement
    d = sc.dim
    route_direct = np.empty((n, d))
    for i in range(n):
        stream = RngStream(seed=run["seed"], path=n + i + 1)
        path = prm.sample_path(sc.measure, sc.horizon, stream)
        y_total = float(np.sum(path.marks))
        z = stream.child(tag=TAG_NOISE).generator().standard_normal(d)
        route_direct[i] = sc.x0 + math.sqrt(y_total) * sigma0 @ z

    out_dir = Path(config["outputs"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    all_p = []
    for i in range(d):
        full = ks_2samp(route_sde[:, i], route_direct[:, i])
        half = ks_2samp(route_sde[: n // 2, i], route_direct[: n // 2, i])
        rep.add_estimate(f"ks_stat_x{i}", full.statistic, 0.0, n)
        rep.add_estimate(f"ks_pvalue_x{i}", full.pvalue, 0.0, n)
        rep.add_estimate(f"ks_stat_half_x{i}", half.statistic, 0.0, n // 2)
        all_p.append(full.pvalue)
    rep.verdicts["ks_pvalue_above_1pct"] = bool(min(all_p) > 0.01)
    report.write_csv(out_dir / "crosscheck.csv",
                     [f"sde_x{i}" for i in range(d)] + [f"direct_x{i}" for i in range(d)],
                     [list(map(float, a)) + list(map(float, b))
                      for a, b in zip(route_sde, route_direct)])
    return rep


def tauber_pipeline(config: dict) -> report.RunReport:
    """Laplace-exponent fit and, for the linear functional, a small-ball fit."""
    params = config["params"]
    run = config["run"]
    psi_name = params.get("psi", "y2")
    eps = params.get("eps", 0.5)
    ymax = params.get("ymax", 1.0)
    horizon = params.get("horizon", 1.0)
    spec = power_law(eps, ymax=ymax, trunc=0.0)
    psi = {"y": lambda y: y, "y2": lambda y: y ** 2}.get(psi_name)
    if psi is None:
        raise SchemaError("params.psi: must be 'y' or 'y2'")
    rep = report.RunReport(config=config)

    fit = tauberian_fit(psi, spec, np.logspace(4, 12, 24))
    rep.add_estimate("alpha", fit.alpha, fit.residual, len(fit.lam_grid))
    rep.add_estimate("r1", fit.r1, 0.0, len(fit.lam_grid))
    rep.diagnostics["regime"] = fit.regime
    if fit.regime == "tauberian":
        beta, r2 = small_ball_params(fit.alpha, fit.r1, horizon)
        rep.add_estimate("beta_implied", beta, 0.0, 0)
        rep.add_estimate("r2_implied", r2, 0.0, 0)

    if psi_name == "y" and fit.regime == "tauberian":
        samples = diagnostics_stable_samples(run["paths"], run["seed"], horizon)
        sb = diagnostics.small_ball_fit(samples, np.linspace(0.45, 1.1, 12) * horizon ** 2)
        rep.add_estimate("beta_fit", sb.beta, 0.0, run["paths"])
        rep.add_estimate("r2_fit", sb.r2, 0.0, run["paths"])
        rep.diagnostics["small_ball"] = {
            "r_squared": sb.r_squared, "regime": sb.regime, "warnings": sb.warnings}
        out_dir = Path(config["outputs"]["dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_csv(out_dir / "small_ball.csv", ["eps", "log_p"],
                         list(zip(sb.eps_grid.tolist(), sb.log_p.tolist())))
        if config["outputs"].get("svg"):
            report.svg_line_chart(
                out_dir / "small_ball.svg",
                {"log P(V<=eps)": (sb.eps_grid ** (-sb.beta), sb.log_p)},
                title="small-ball fit", xlabel="eps^-beta", ylabel="log P")
    return rep


def diagnostics_stable_samples(n: int, seed: int, horizon: float) -> np.ndarray:
    """Exact draws of the linear jump functional with measure y^(-3/2) dy.

    Its law is the half-stable subordinator value, with the closed-form
    distribution function erfc(sqrt(pi t^2 / x)); inverse-CDF sampling
    avoids the truncation bias a jump-sum simulation would add in the
    deep lower tail.
    """
    from scipy.special import erfcinv
    u = RngStream(seed=seed, tag=TAG_NOISE).generator().random(n)
    return horizon ** 2 * math.pi / erfcinv(u) ** 2


def validate_pipeline(config: dict) -> tuple[int, dict]:
    check_param_ranges(config)
    sc = scenarios.build(config["scenario"], **config["params"])
    hyp = diagnostics.hypothesis_report(sc)
    body = hyp.to_dict()
    if not hyp.passed():
        return EXIT_HYPOTHESIS, body
    return EXIT_OK, body


def report_pipeline(run_dir: str) -> int:
    """Re-derive summary numbers from the CSVs and check them against the
    stored report; prints the summary."""
    run_dir = Path(run_dir)
    rep_path = run_dir / "report.json"
    if not rep_path.exists():
        print(f"no report.json in {run_dir}", file=sys.stderr)
        return EXIT_SCHEMA
    body = report.report_body(rep_path)
    print(json.dumps(body["estimates"], indent=2, sort_keys=True))
    dens_path = run_dir / "density.csv"
    if dens_path.exists() and "density_mass" in body["estimates"]:
        _, rows = report.read_csv(dens_path)
        mass = float(np.trapezoid(rows[:, 1], rows[:, 0]))
        stored = body["estimates"]["density_mass"]["value"]
        if not math.isclose(mass, stored, rel_tol=1e-9, abs_tol=1e-12):
            print(f"density mass mismatch: csv {mass} vs report {stored}",
                  file=sys.stderr)
            return EXIT_NUMERIC
        print(f"density mass from CSV: {mass:.6f} (matches report)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lentparticle",
        description="Monte Carlo Malliavin calculus for jump SDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in ("run", "validate", "tauber", "crosscheck"):
        p = sub.add_parser(cmd)
        p.add_argument("config")
    sub.add_parser("report").add_argument("run_dir")
    args = parser.parse_args(argv)

    if args.command == "report":
        return report_pipeline(args.run_dir)

    try:
        config = load_config(args.config)
        need_out = args.command != "validate"
        validate_config(config, need_outputs=need_out)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_SCHEMA

    try:
        if args.command == "validate":
            code, body = validate_pipeline(config)
            print(json.dumps(body, indent=2, sort_keys=True))
            if code != EXIT_OK:
                failures = [i["name"] for i in body["items"] if i["status"] == "fail"]
                print(f"hypothesis failures: {failures}", file=sys.stderr)
            return code
        if args.command == "run":
            check_param_ranges(config)
            rep = run_pipeline(config)
        elif args.command == "tauber":
            rep = tauber_pipeline(config)
        else:
            rep = crosscheck_pipeline(config)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except ValueError as e:
        print(f"hypothesis failure: {e}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (sde.EventError, NonIntegrableError, FloatingPointError,
            np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC

    out_dir = Path(config["outputs"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rep.dump(out_dir / "report.json")
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
