"""One function per experiment kind; each returns (report, tables)."""

from __future__ import annotations

import warnings

import numpy as np

from .. import coarse, spectral, trapstat
from ..cluster import SmallGiantWarning, decompose, neighborhood_moments
from ..errors import EmptyHoleError
from ..kernel import build_kernel, heat_diagonal, lambda_sequence, zeta_sequence
from .config import ExperimentConfig
from .output import RunDirectory
from .verify import verify_suite

Table = tuple[list[str], list]


def _decompose(env, alpha):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SmallGiantWarning)
        dec = decompose(env, alpha)
    return dec, [str(w.message) for w in caught]


def heat_decay(cfg: ExperimentConfig) -> tuple[dict, dict[str, Table]]:
    env = cfg.build_env()
    k = build_kernel(env)
    d = cfg.dimension
    h = heat_diagonal(k, cfg.origin, cfg.n, override_horizon=cfg.override_horizon)
    lam = lambda_sequence(h, d)
    zeta = zeta_sequence(h, d) if d >= 4 else np.full(len(h), np.nan)
    rows = [(n, h[n - 1], lam[n - 1], "" if np.isnan(zeta[n - 1]) else zeta[n - 1]) for n in cfg.n_values]
    increase = float(np.max(np.diff(h))) if len(h) > 1 else 0.0
    report = {"passed": increase <= 1e-12, "max_increase": increase, "n_max": cfg.n,
              "final_return_probability": float(h[-1])}
    return report, {"heat.csv": (["n", "P2n", "lambda_n", "zeta_n"], rows)}


def coarse_diagnostics(cfg: ExperimentConfig) -> tuple[dict, dict[str, Table]]:
    env = cfg.build_env()
    dec, notes = _decompose(env, cfg.alpha)
    chain = coarse.coarse_chain(dec)
    tau = chain.expected_sojourns
    sojourn_rows = []
    for x in dec.giant:
        g = len(dec.neighborhood(int(x)))
        sojourn_rows.append((int(x), tau[x], g, tau[x] / g))
    ratios = np.array([r[3] for r in sojourn_rows])
    g_sizes = np.array([r[2] for r in sojourn_rows])
    rev = coarse.coarse_reversibility(dec)
    report = {"decomposition": dec.report(), "warnings": notes, "reversibility": rev,
              "max_sojourn_ratio": float(ratios.max()), "stationary_mean_sojourn":
              coarse.stationary_sojourn_average(dec), "neighborhood_moments": neighborhood_moments(g_sizes)}
    tables: dict[str, Table] = {"sojourn.csv": (["x", "expected_sojourn", "g_size", "ratio"], sojourn_rows)}
    passed = rev["max_asymmetry"] <= 1e-10 and rev["max_row_defect"] <= 1e-10
    o = cfg.origin
    if dec.in_giant[o]:
        dc = coarse.diffusive_constant(dec, cfg.rho, cfg.n_values, o)
        report["diffusive_constant"] = {"value": dc.value, "argmax": dc.argmax, "reversed": dc.reversed_value,
                                        "reversal_factor": dc.reversal_factor, "rho": dc.rho}
        tables["diffusive.csv"] = (["n", "scaled_max"], sorted(dc.per_n.items()))
        lg = coarse.linear_growth_check(dec, cfg.n, o)
        report["linear_growth"] = {k: lg[k] for k in ("constant", "max_excess", "passed")}
        passed = passed and lg["passed"]
        pmf_rows = []
        for y in sorted(coarse.coarse_kernel_row(dec, o)):
            law = coarse.sojourn_pmf(dec, o, y, cfg.n)
            pmf_rows += [(o, y, n, p) for n, p in enumerate(law.pmf, start=1) if p > 0]
        tables["sojourn_pmf.csv"] = (["x", "y", "n", "probability"], pmf_rows)
        if cfg.ell > 0 and cfg.topology == "torus":
            ea = coarse.ergodic_average(dec, cfg.ell, cfg.master_seed, o)
            report["ergodic_average"] = {"z": ea.final, "z_inf": ea.z_inf, "relative_error": ea.relative_error}
    else:
        report["origin_note"] = "origin is not in the giant; origin-based diagnostics skipped"
    report["passed"] = bool(passed)
    return report, tables


def spectral_verify(cfg: ExperimentConfig) -> tuple[dict, dict[str, Table]]:
    env = cfg.build_env()
    dec, notes = _decompose(env, cfg.alpha)
    rows, consts, failed = [], [], []
    n_top = max(cfg.n, 4)
    for h in range(len(dec.holes)):
        data = spectral.hole_operator(dec, h)
        st = spectral.structural_checks(data)
        nb = spectral.norm_bound_check(data, 100)
        b = dec.hole_boundaries[h]
        x, y = int(b[0]), int(b[-1])
        try:
            pair = spectral.build_hole_operator(dec, x, y)
            resid = spectral.identity_residual(dec, pair, 50)
        except EmptyHoleError:
            resid = 0.0
        pb = spectral.pmf_bound_check(dec, x, y, range(2, n_top + 1), range(1, 5))
        consts.append(pb)
        ok = st["passed"] and nb["passed"] and resid <= 1e-10
        if not ok:
            failed.append(h)
        rows.append((h, data.size, len(b), st["norm"], resid, pb["first"], pb["second"], ok))
    report = {"decomposition": dec.report(), "warnings": notes, "failed_holes": failed,
              "measured_first": max((c["first"] for c in consts), default=0.0),
              "measured_second": max((c["second"] for c in consts), default=0.0),
              "passed": not failed}
    header = ["hole", "size", "boundary", "norm", "identity_residual", "first_const", "second_const", "passed"]
    return report, {"holes.csv": (header, rows)}


def trap_conditional(cfg: ExperimentConfig) -> tuple[dict, dict[str, Table]]:
    env = cfg.build_env()
    dec, notes = _decompose(env, cfg.alpha)
    spec = trapstat.TrapEventSpec(cfg.trap_r(), cfg.theta, cfg.n)
    ce = trapstat.conditional_event_prob(dec, spec, cfg.mode, cfg.mc_budget, cfg.master_seed,
                                         origin=cfg.origin, sweep=True, threads=cfg.threads,
                                         override_horizon=cfg.override_horizon)
    rows = [(m, e.value, e.std_error, e.samples) for m, e in sorted(ce.sweep.items())]
    frac = [trapstat.max_sojourn_fraction(t, cfg.n) for t in ce.traces]
    report = {"estimate": ce.estimate.to_dict(), "z_score": ce.estimate.z_score(), "n_star": ce.n_star,
              "theta": cfg.theta, "r": spec.r, "alpha": cfg.alpha, "n": cfg.n,
              "mean_max_sojourn_fraction": float(np.mean(frac)), "warnings": notes, "passed": True}
    return report, {"sweep.csv": (["m", "estimate", "stdError", "samples"], rows),
                    "max_sojourn.csv": (["fraction"], [(f,) for f in frac])}


def proposition(cfg: ExperimentConfig) -> tuple[dict, dict[str, Table]]:
    env = cfg.build_env()
    dec, notes = _decompose(env, cfg.alpha)
    rep = trapstat.proposition_sweep(dec, cfg.n, cfg.theta, cfg.delta, cfg.mc_budget, cfg.master_seed,
                                     origin=cfg.origin, r=cfg.trap_r(),
                                     override_horizon=cfg.override_horizon)
    rep["warnings"] = notes
    rows = [(name, rep[name]["lhs"], rep[name]["lhs_se"], rep[name]["rhs"], rep[name]["rhs_se"],
             rep[name]["passed"]) for name in ("many_steps", "no_trapping")]
    return rep, {"bounds.csv": (["quantity", "lhs", "lhs_se", "rhs", "rhs_se", "passed"], rows)}


def verify_all(cfg: ExperimentConfig) -> tuple[dict, dict[str, Table]]:
    rep = verify_suite(cfg)
    rows = [(i, c["name"], c["passed"], c["error"] or "") for i, c in enumerate(rep["checks"], start=1)]
    return rep, {"checks.csv": (["order", "check", "passed", "error"], rows)}


RUNNERS = {"heat-decay": heat_decay, "coarse-diagnostics": coarse_diagnostics,
           "spectral-verify": spectral_verify, "trap-conditional": trap_conditional,
           "proposition-sweep": proposition, "verify-all": verify_all}


def run_experiment(cfg: ExperimentConfig) -> tuple[dict, int]:
    """Run ``cfg`` and write its run directory (when ``cfg.out`` is set); returns (report, exit code)."""
    cfg.validate()
    report, tables = RUNNERS[cfg.kind](cfg)
    if cfg.out:
        run = RunDirectory(cfg.out, cfg.to_dict())
        for name, (header, rows) in tables.items():
            run.write_csv(name, header, rows)
        run.write_report(report)
    return report, 0 if report.get("passed", True) else 1
