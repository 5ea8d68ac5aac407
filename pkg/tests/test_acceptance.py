"""Acceptance criteria, one test per criterion.

Each test stores a one-line detail string; the terminal summary prints a
PASS/FAIL line per criterion (see conftest.py). Run with
``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from oracles import cycle_return, g_enumerate
from rcmlab.cluster import SmallGiantWarning, decompose
from rcmlab.coarse import (coarse_kernel_row, ergodic_average, expected_sojourn, chain_bound_check, pmf_mean,
                           sample_coarse_chains)
from rcmlab.env import BoxSpec, LawSpec, TrapSpec, constant, plant_trap, sample_iid
from rcmlab.kernel import bridge_marginal, build_kernel, heat_diagonal, sample_bridges, sample_paths
from rcmlab.rng import spawn_seeds, stream
from rcmlab.spectral import build_hole_operator, hole_operator, identity_residual, norm_bound_check, \
    structural_checks
from rcmlab.trapstat import (TrapEventSpec, coarse_trace, conditional_event_prob, detect_event,
                             g_membership, implication_check, max_sojourn_fraction, phi_transform)


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallGiantWarning)
        yield


def _say(record_property, n, ok, detail):
    record_property("detail", detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def _origin(dec):
    return 0 if dec.in_giant[0] else int(dec.giant[0])


# 1 -------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_c01_kernel_exactness(record_property):
    t0 = time.perf_counter()
    errs = [abs(heat_diagonal(build_kernel(constant(BoxSpec(d, 5))), 0, 1)[0] - 1 / (2 * d)) for d in (1, 2, 3, 4)]
    # four-step return on a cycle long enough that no path wraps: 6 of 16 sequences
    p5 = heat_diagonal(build_kernel(constant(BoxSpec(1, 5))), 0, 2)[1]
    # on the 4-cycle itself ++++ and ---- also come back: 8 of 16 sequences
    p4 = heat_diagonal(build_kernel(constant(BoxSpec(1, 4))), 0, 2, override_horizon=True)[1]
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 1e-14 and abs(p5 - 3 / 8) <= 1e-14 and abs(p4 - cycle_return(4, 4)) <= 1e-14 \
        and elapsed < 1.0
    _say(record_property, 1, ok, f"max |P2-1/(2d)|={max(errs):.1e}; unwrapped P4={float(p5)!r} (3/8); "
                                 f"4-cycle P4={float(p4)!r} (enumeration {cycle_return(4, 4)}); "
                                 f"{elapsed:.2f}s")
    assert ok


@pytest.mark.criterion(1, "literal 4-cycle")
@pytest.mark.xfail(strict=True, reason="on the 4-cycle the sequences ++++ and ---- also return to 0, "
                                       "so enumeration gives 8/16 = 1/2; 3/8 holds only without wrapping")
def test_c01_literal_four_cycle_value(record_property):
    p4 = heat_diagonal(build_kernel(constant(BoxSpec(1, 4))), 0, 2, override_horizon=True)[1]
    record_property("detail", f"stated 3/8 on L=4 not attainable: exact value {float(p4)!r} = enumeration")
    assert abs(p4 - 3 / 8) <= 1e-14


# 2 -------------------------------------------------------------------------

MONO_BOXES = {2: 32, 3: 16, 4: 12}


@pytest.mark.criterion(2)
def test_c02_monotonicity(record_property):
    worst, count = -math.inf, 0
    for d, side in MONO_BOXES.items():
        box = BoxSpec(d, side)
        n_max = box.horizon(0, closed=True) // 2
        trap = TrapSpec(((1,) + (0,) * (d - 1), (2,) + (0,) * (d - 1)), 16)
        for i, seed in enumerate(spawn_seeds(2, 50, d)):
            base = sample_iid(LawSpec("uniform01"), box, seed)
            for env in (base, plant_trap(base, trap)):
                h = heat_diagonal(build_kernel(env), 0, n_max)
                worst = max(worst, float(np.max(np.diff(h))))
                count += 1
    ok = worst <= 1e-12 and count == 300
    _say(record_property, 2, ok, f"{count} environments (d=2,3,4; uniform01 and planted); "
                                 f"max increase {worst:.2e}")
    assert ok


# 3 -------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_c03_sojourn_identity(record_property):
    rng = stream(3, 0)
    worst, count = 0.0, 0
    for seed in range(40):
        dec = decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, 16), seed), 0.45)
        for b in dec.hole_boundaries:
            x, y = (int(v) for v in rng.choice(b, size=2, replace=len(b) < 2))
            data = build_hole_operator(dec, x, y)
            worst = max(worst, identity_residual(dec, data, 50))
            count += 1
        if count >= 150:
            break
    ok = count >= 100 and worst <= 1e-10
    _say(record_property, 3, ok, f"{count} (x,y,hole) instances, n<=50; max residual {worst:.2e}")
    assert ok


# 4 -------------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_c04_spectral_bounds(record_property):
    holes, worst_norm, worst_gap, bad = 0, 0.0, -math.inf, []
    for seed in range(100, 120):
        dec = decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, 32), seed), 0.5)
        for h in range(len(dec.holes)):
            data = hole_operator(dec, h)
            st = structural_checks(data)
            nb = norm_bound_check(data, 100)
            worst_norm = max(worst_norm, st["norm"])
            worst_gap = max(worst_gap, max(r["first"] - r["first_bound"] for r in nb["rows"]))
            if not (st["norm"] <= 1 - 1e-9 and nb["passed"] and st["passed"]):
                bad.append((seed, h))
            holes += 1
    ok = not bad and holes > 0
    _say(record_property, 4, ok, f"{holes} holes; max norm {worst_norm:.6f}; "
                                 f"max (first - 1/(m+1)) {worst_gap:.2e}; failures {bad}")
    assert ok


# 5 -------------------------------------------------------------------------

@pytest.mark.criterion(5)
def test_c05_greedy_bruteforce(record_property):
    rng = stream(5, 0)
    agree = 0
    for _ in range(1000):
        ell = int(rng.integers(1, 13))
        r = int(rng.integers(0, min(3, ell) + 1))
        t = [int(v) for v in rng.integers(1, 20, size=ell)]
        theta = int(rng.integers(1, sum(t) + 1))
        g = g_membership(t, r, theta)
        agree += g == g_membership(t, r, theta, "bruteForce") == g_enumerate(t, r, theta)
    _say(record_property, 5, agree == 1000, f"{agree}/1000 tuples agree")
    assert agree == 1000


# 6 -------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_c06_implication(record_property):
    rng = stream(6, 0)
    applicable, violations, min_slack = 0, 0, math.inf
    while applicable < 10_000:
        ell = int(rng.integers(2, 13))
        r = int(rng.integers(0, min(3, ell - 1) + 1))
        t = [int(v) for v in rng.integers(1, 30, size=ell)]
        theta = int(rng.integers(1, 40))
        n = int(rng.integers(1, sum(t) + 1))
        rep = implication_check(t, r, theta, n)
        if rep["applicable"]:
            applicable += 1
            violations += not rep["holds"]
            min_slack = min(min_slack, rep["slack"])
    _say(record_property, 6, violations == 0, f"{applicable} non-member tuples; {violations} violations; "
                                              f"min slack {min_slack:g}")
    assert violations == 0


# 7 -------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_c07_coarse_kernel_oracle(record_property):
    n = 100_000
    entries, worst_z, worst_mean, xs_total, min_binom = 0, 0.0, 0.0, 0, 1.0
    for seed in range(200, 220):
        dec = decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, 32), seed), 0.5)
        order = np.argsort([-len(f) for f in dec.holes])
        xs = {int(dec.hole_boundaries[h][0]) for h in order[:3]}
        xs |= {int(v) for v in stream(7, seed).choice(dec.giant, size=2, replace=False)}
        for x in sorted(xs):
            row = coarse_kernel_row(dec, x)
            sites, _ = sample_coarse_chains(dec, x, 1, n, stream(7, seed, x))
            counts = np.bincount(sites[:, 1], minlength=dec.box.n_vertices)
            assert counts.sum() == n and set(np.flatnonzero(counts)) <= set(row)
            for y, p in row.items():
                se = math.sqrt(p * (1 - p) / n)
                z = abs(counts[y] / n - p) / se if se > 0 else 0.0
                worst_z = max(worst_z, z)
                # exact two-sided binomial tail; the normal z is crude when n*p << 1
                c = int(counts[y])
                tail = 2 * min(stats.binom.sf(c - 1, n, p), stats.binom.cdf(c, n, p))
                min_binom = min(min_binom, float(tail))
                entries += 1
            mean, _ = pmf_mean(dec, x)
            worst_mean = max(worst_mean, abs(mean - expected_sojourn(dec, x).value))
            xs_total += 1
    ok = worst_z <= 5 and worst_mean <= 1e-9
    _say(record_property, 7, ok, f"20 envs, {xs_total} sites, {entries} entries; max |z| {worst_z:.2f}; "
                                 f"min exact binomial p {min_binom:.3g}; max |pmf mean - solve| {worst_mean:.1e}")
    assert ok


# 8 -------------------------------------------------------------------------

def _chisquare(mid, exact):
    support = np.array(sorted(exact.support))
    probs = np.array([exact.get(int(z)) for z in support])
    counts = np.array([np.count_nonzero(mid == z) for z in support])
    assert counts.sum() == len(mid)
    expected = probs * len(mid)
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < 5:  # fold a tiny remainder into the smallest kept bin
        i = int(np.argmin(exp[:-1]))
        obs[i] += obs[-1]
        exp[i] += exp[-1]
        obs, exp = obs[:-1], exp[:-1]
    exp *= obs.sum() / exp.sum()
    return stats.chisquare(obs, exp).pvalue, len(obs)


@pytest.mark.criterion(8)
def test_c08_bridge_sampler(record_property):
    k = build_kernel(sample_iid(LawSpec("uniform01"), BoxSpec(2, 64), 8))
    exact = bridge_marginal(k, 0, 32, 16)
    out = {}
    for mode, seed in (("exactBridge", 81), ("rejection", 82)):
        s = sample_bridges(k, 0, 32, 100_000, mode=mode, master_seed=seed)
        assert np.all(s.paths[:, 32] == 0)
        out[mode] = (*_chisquare(s.paths[:, 16], exact), s.attempts)
    ok = all(p > 0.001 for p, _, _ in out.values())
    _say(record_property, 8, ok, "; ".join(f"{m}: p={p:.3f} ({b} bins, {a} attempts)"
                                           for m, (p, b, a) in out.items()))
    assert ok


# 9 -------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c09_ergodic_average(record_property):
    dec = decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, 32), 1), 0.5)
    ea = ergodic_average(dec, 10**6, 2024, origin=0)
    ok = ea.relative_error <= 0.01 and ea.final == 1.189475
    _say(record_property, 9, ok, f"Z={ea.final!r} (locked 1.189475), Z_inf={ea.z_inf:.10f}, "
                                 f"rel err {ea.relative_error:.4f}")
    assert ok


# 10 ------------------------------------------------------------------------

@pytest.mark.criterion(10)
def test_c10_chain_inequality(record_property):
    parts, ok = [], True
    for seed in (1, 2, 3, 4, 5):
        dec = decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, 32), seed), 0.5)
        rep = chain_bound_check(dec, 64, 32, 10_000, master_seed=seed, origin=_origin(dec))
        ok &= rep["passed"]
        parts.append(f"seed {seed}: K={rep['K']:.1f} min z={rep['min_z']:.2f}")
    _say(record_property, 10, ok, "l<=64, n<=32; " + "; ".join(parts))
    assert ok


# 11 ------------------------------------------------------------------------

@pytest.mark.criterion(11)
def test_c11_trapping_mechanism(record_property):
    box = BoxSpec(2, 64)
    spec = TrapEventSpec(1, 8, 16)
    planted = decompose(plant_trap(constant(box), TrapSpec(((1, 0), (2, 0)), 16)), 0.5)
    baseline = decompose(constant(box), 0.5)
    a = conditional_event_prob(planted, spec, "exactBridge", 10_000, master_seed=7)
    b = conditional_event_prob(baseline, spec, "exactBridge", 10_000, master_seed=7)
    fa = np.array([max_sojourn_fraction(t, spec.n) for t in a.traces])
    fb = np.array([max_sojourn_fraction(t, spec.n) for t in b.traces])
    # null of the one-sided KS test: planted CDF <= baseline CDF everywhere (dominance)
    p_dom = stats.ks_2samp(fa, fb, alternative="greater").pvalue
    p_rev = stats.ks_2samp(fa, fb, alternative="less").pvalue
    z = a.estimate.z_score()
    ok = z >= 4 and p_dom > 0.001 and len(fa) == len(fb) == 10_000
    _say(record_property, 11, ok, f"P(E|return)={a.estimate.value:.4f}+-{a.estimate.std_error:.4f} "
                                  f"(z={z:.1f}); baseline {b.estimate.value}; dominance p={p_dom:.3f}, "
                                  f"reverse-direction p={p_rev:.1e}")
    assert ok


# 12 ------------------------------------------------------------------------

@pytest.mark.criterion(12)
def test_c12_phi_properties(record_property):
    dec = decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, 64), 12), 0.5)
    o = _origin(dec)
    paths = sample_paths(dec.kernel, o, 32, 12_000, stream(12, 0))
    distinct = {}
    for p in paths:
        tr = coarse_trace(p, dec)
        distinct.setdefault(tr.key(), tr)
        if len(distinct) == 10_000:
            break
    images = {phi_transform(tr, 3).key() for tr in distinct.values()}
    collisions = len(distinct) - len(images)

    planted = decompose(plant_trap(constant(BoxSpec(2, 64)), TrapSpec(((1, 0), (2, 0)), 16)), 0.5)
    n, theta, realized, mapped = 16, 8, 0, 0
    for m in range(12, 16):
        s = sample_bridges(planted.kernel, 0, 2 * m, 5000, master_seed=120 + m)
        for p in s.paths:
            tr = coarse_trace(p, planted)
            if detect_event(tr, TrapEventSpec(1, theta, m)):
                realized += 1
                mapped += detect_event(phi_transform(tr, n - m), TrapEventSpec(1, theta, n))
    ok = len(distinct) == 10_000 and collisions == 0 and realized > 0 and mapped == realized
    _say(record_property, 12, ok, f"{len(distinct)} distinct traces, {collisions} collisions; "
                                  f"{mapped}/{realized} realizing bridge traces mapped")
    assert ok
