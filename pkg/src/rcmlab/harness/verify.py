"""Ordered property-check suite over one configured environment."""

from __future__ import annotations

import math
import traceback
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .. import coarse, spectral, trapstat
from ..cluster import SmallGiantWarning, decompose
from ..errors import RcmError, ResourceError
from ..kernel import build_kernel, heat_diagonal
from ..rng import stream
from .config import ExperimentConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "error": self.error}


class SuiteContext:
    """Lazily built objects shared by the checks."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.env = config.build_env(strict=False)

    @cached_property
    def kernel(self):
        return build_kernel(self.env)

    @cached_property
    def dec(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallGiantWarning)
            return decompose(self.env, self.config.alpha)

    def rng(self, key: int) -> np.random.Generator:
        return stream(self.config.master_seed, 0x5EED, key)


def check_kernel(ctx: SuiteContext) -> CheckResult:
    c = ctx.env.conductances[ctx.env.box.edge_mask()]
    bad = int(np.count_nonzero(~(np.isfinite(c) & (c > 0) & (c <= 1))))
    k = ctx.kernel
    P = k.matrix()
    rows = np.asarray(P.sum(axis=1)).ravel()
    row_defect = float(np.nanmax(np.abs(rows - 1.0))) if np.all(np.isfinite(rows)) else math.inf
    min_entry = float(P.data.min()) if P.nnz else 0.0
    F = sp.diags(k.pi) @ P
    asym = float(abs(F - F.T).max()) if np.all(np.isfinite(F.data)) else math.inf
    m = {"bad_conductances": bad, "row_sum_defect": row_defect, "min_entry": min_entry,
         "reversibility_defect": asym}
    tol = {"row_sum_defect": 1e-12, "reversibility_defect": 1e-14}
    ok = bad == 0 and row_defect <= 1e-12 and min_entry >= 0 and asym <= 1e-14
    if "constant" in ctx.env.provenance and ok:
        p2 = heat_diagonal(k, ctx.config.origin, 1, override_horizon=True)[0]
        d = ctx.env.box.dimension
        m["return_two_steps"] = float(p2)
        tol["return_two_steps"] = 1e-14
        ok = ok and abs(p2 - 1 / (2 * d)) <= 1e-14
    return CheckResult("kernel_identities", ok, m, tol)


def check_monotonicity(ctx: SuiteContext) -> CheckResult:
    box = ctx.env.box
    n_max = min(box.horizon(ctx.config.origin, closed=True) // 2, 64)
    if n_max < 2:
        return CheckResult("heat_monotonicity", True, {"n_max": n_max, "note": "horizon too short"})
    h = heat_diagonal(ctx.kernel, ctx.config.origin, n_max)
    worst = float(np.max(np.diff(h))) if len(h) > 1 else 0.0
    return CheckResult("heat_monotonicity", worst <= 1e-12, {"n_max": n_max, "max_increase": worst},
                       {"max_increase": 1e-12})


def check_coarse(ctx: SuiteContext) -> CheckResult:
    rep = coarse.coarse_reversibility(ctx.dec)
    ok = rep["max_asymmetry"] <= 1e-10 and rep["max_row_defect"] <= 1e-10
    return CheckResult("coarse_reversibility", ok, rep, {"max_asymmetry": 1e-10, "max_row_defect": 1e-10})


def check_sojourn_identity(ctx: SuiteContext, instances: int = 100, n_max: int = 50) -> CheckResult:
    dec = ctx.dec
    rng = ctx.rng(4)
    holes = len(dec.holes)
    worst_id = worst_cross = worst_mean = 0.0
    done = 0
    if holes:
        for i in range(instances):
            h = int(rng.integers(holes))
            b = dec.hole_boundaries[h]
            x, y = (int(v) for v in rng.choice(b, 2))
            data = spectral.build_hole_operator(dec, x, y)
            worst_id = max(worst_id, spectral.identity_residual(dec, data, n_max))
            if i < 20:
                worst_cross = max(worst_cross, spectral.cross_hole_discrepancy(dec, x, y, n_max))
            if i < 5:
                mean, _ = coarse.pmf_mean(dec, x)
                worst_mean = max(worst_mean, abs(mean - coarse.expected_sojourn(dec, x).value))
            done += 1
    m = {"instances": done, "identity_residual": worst_id, "cross_hole_discrepancy": worst_cross,
         "pmf_mean_vs_solve": worst_mean}
    tol = {"identity_residual": 1e-10, "cross_hole_discrepancy": 1e-12, "pmf_mean_vs_solve": 1e-9}
    ok = worst_id <= 1e-10 and worst_cross <= 1e-12 and worst_mean <= 1e-9
    return CheckResult("sojourn_identity", ok, m, tol)


def check_spectral(ctx: SuiteContext, m_max: int = 100) -> CheckResult:
    dec = ctx.dec
    worst_norm, worst_ratio, failures = 0.0, 0.0, []
    for h in range(len(dec.holes)):
        data = spectral.hole_operator(dec, h)
        st = spectral.structural_checks(data)
        nb = spectral.norm_bound_check(data, m_max)
        worst_norm = max(worst_norm, st["norm"])
        worst_ratio = max(worst_ratio, max(r["first"] * (r["m"] + 1) for r in nb["rows"]))
        if not (st["passed"] and nb["passed"]):
            failures.append(h)
    m = {"holes": len(dec.holes), "max_norm": worst_norm, "max_first_ratio": worst_ratio,
         "failed_holes": failures}
    return CheckResult("spectral_bounds", not failures, m,
                       {"norm": 1 - 1e-9, "first_bound": 1e-10, "second_bound": 1e-10})


def _random_tuple(rng, max_len=12, max_r=3):
    ell = int(rng.integers(1, max_len + 1))
    r = int(rng.integers(0, min(max_r, ell) + 1))
    t = rng.geometric(0.3, size=ell).tolist()
    theta = int(rng.integers(1, 3 * ell + 1))
    return t, r, theta


def check_greedy(ctx: SuiteContext, count: int = 1000) -> CheckResult:
    rng = ctx.rng(6)
    disagree = mono = 0
    for _ in range(count):
        t, r, theta = _random_tuple(rng)
        g = trapstat.g_membership(t, r, theta, "greedy")
        if g != trapstat.g_membership(t, r, theta, "bruteForce"):
            disagree += 1
        # membership grows with theta and shrinks as fewer entries may be removed
        if g and not trapstat.g_membership(t, r, theta + 1):
            mono += 1
        if r > 0 and trapstat.g_membership(t, r - 1, theta) and not g:
            mono += 1
    return CheckResult("greedy_bruteforce", disagree == 0 and mono == 0,
                       {"tuples": count, "disagreements": disagree, "monotonicity_violations": mono},
                       {"disagreements": 0})


def check_implication(ctx: SuiteContext, count: int = 10_000) -> CheckResult:
    rng = ctx.rng(7)
    found = violations = 0
    min_slack = math.inf
    while found < count:
        t, r, theta = _random_tuple(rng)
        n = int(rng.integers(1, sum(t) + 1))
        res = trapstat.implication_check(t, r, theta, n)
        if not res["applicable"]:
            continue
        found += 1
        min_slack = min(min_slack, res["slack"])
        violations += not res["holds"]
    return CheckResult("multiproduct_implication", violations == 0,
                       {"tuples": found, "violations": violations, "min_slack": min_slack},
                       {"violations": 0})


def check_phi(ctx: SuiteContext, count: int = 10_000) -> CheckResult:
    rng = ctx.rng(8)
    seen: set = set()
    images: set = set()
    s = int(rng.integers(1, 4))
    while len(seen) < count:
        ell = int(rng.integers(1, 8))
        tr = coarse.CoarseTrace(rng.integers(0, 4, ell + 1), rng.geometric(0.4, ell))
        if tr.key() in seen:
            continue
        seen.add(tr.key())
        images.add(trapstat.phi_transform(tr, s).key())
    collisions = len(seen) - len(images)
    m = {"traces": len(seen), "shift": s, "collisions": collisions}
    ok = collisions == 0
    cfg, dec = ctx.config, ctx.dec
    box = ctx.env.box
    o = cfg.origin
    mapped = failures = 0
    if dec.in_giant[o]:
        n = min(cfg.n, box.horizon(o, closed=True) // 2)
        theta = min(cfg.theta, n)
        r = cfg.trap_r()
        if n >= 2 and r <= theta:
            for mm in range(max(theta, n - theta, 1), n):
                spec_m = trapstat.TrapEventSpec(r, theta, mm)
                spec_n = trapstat.TrapEventSpec(r, theta, n)
                ce = trapstat.conditional_event_prob(dec, spec_m, mc_budget=min(cfg.mc_budget, 2000),
                                                     master_seed=cfg.master_seed, key=0x9A + mm, origin=o)
                for tr, hit in zip(ce.traces, ce.flags):
                    if hit:
                        mapped += 1
                        failures += not trapstat.detect_event(trapstat.phi_transform(tr, n - mm), spec_n)
    m.update({"realizing_traces": mapped, "mapping_failures": failures})
    return CheckResult("phi_properties", ok and failures == 0, m, {"collisions": 0, "mapping_failures": 0})


CHECKS = (check_kernel, check_monotonicity, check_coarse, check_sojourn_identity, check_spectral,
          check_greedy, check_implication, check_phi)


def verify_suite(config: ExperimentConfig) -> dict:
    ctx = SuiteContext(config)
    results = []
    for fn in CHECKS:
        name = fn.__name__.removeprefix("check_")
        try:
            with np.errstate(all="ignore"):
                res = fn(ctx)
        except ResourceError:
            raise
        except (RcmError, ArithmeticError, ValueError, IndexError) as exc:
            res = CheckResult(name, False, error=f"{type(exc).__name__}: {exc}",
                              measured={"trace": traceback.format_exc(limit=3)})
        results.append(res)
    first = next((r.name for r in results if not r.passed), None)
    return {"passed": first is None, "first_failure": first, "checks": [r.to_dict() for r in results]}
