from __future__ import annotations

import warnings

import numpy as np
import pytest
import scipy.sparse as sp

import rcmlab.spectral as spectral_mod
from oracles import weak_vertex_env
from rcmlab.cluster import SmallGiantWarning, decompose
from rcmlab.coarse import sojourn_pmf
from rcmlab.env import BoxSpec, LawSpec, TrapSpec, constant, plant_trap, sample_iid
from rcmlab.errors import DomainError, EmptyHoleError
from rcmlab.spectral import (HoleSpectralData, build_hole_operator, cross_hole_discrepancy, hole_operator,
                             identity_residual, norm_bound_check, operator_norm, pmf_bound_check,
                             smoothness_gap, sojourn_inner, sojourn_inner_sequence, structural_checks)

BETA = 0.2


@pytest.fixture(scope="module")
def weak():
    env, v = weak_vertex_env(BETA)
    dec = decompose(env, 0.5)
    x, y = env.box.vertex((3, 4)), env.box.vertex((4, 3))
    return dec, v, x, y


def random_decs(count, side=10, alpha=0.4):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallGiantWarning)
        for seed in range(count):
            yield decompose(sample_iid(LawSpec("uniform01"), BoxSpec(2, side), seed), alpha)


def scalar(q):
    Q = sp.csr_matrix(np.array([[q]]))
    one = np.ones(1)
    return HoleSpectralData(0, 0, np.zeros(1, dtype=np.int64), Q, one, one, one, 1)


def test_single_vertex_operator(weak):
    dec, v, x, y = weak
    data = build_hole_operator(dec, x, y)
    assert data.vertices.tolist() == [v]
    assert data.Q.toarray().tolist() == [[0.0]]
    assert data.hX.tolist() == [0.25] and data.hY.tolist() == [0.25]
    assert operator_norm(data) == 0.0
    assert sojourn_inner(data, 2) == pytest.approx(BETA / 4, abs=1e-16)
    assert sojourn_inner(data, 3) == 0.0
    assert smoothness_gap(data, 2) == sojourn_inner(data, 2)
    pi_x = dec.kernel.pi[x]
    assert sojourn_inner(data, 2) / pi_x == pytest.approx(sojourn_pmf(dec, x, y, 3).at(2), abs=1e-16)
    with pytest.raises(DomainError):
        sojourn_inner(data, 1)


def test_two_vertex_antidiagonal():
    env = plant_trap(constant(BoxSpec(2, 8)), TrapSpec(((1, 0), (2, 0)), 10))
    dec = decompose(env, 0.5)
    data = hole_operator(dec, 0)
    a = dec.kernel.row((1, 0))[env.box.vertex((2, 0))]
    b = dec.kernel.row((2, 0))[env.box.vertex((1, 0))]
    Q = data.Q.toarray()
    assert Q[0, 0] == Q[1, 1] == 0.0 and Q[0, 1] == a and Q[1, 0] == b
    assert operator_norm(data) == pytest.approx(np.sqrt(a * b), abs=1e-15)
    assert structural_checks(data)["passed"]


def test_self_adjoint_on_many_holes():
    count = 0
    for dec in random_decs(30, side=16, alpha=0.45):
        for h in range(len(dec.holes)):
            data = hole_operator(dec, h)
            assert data.self_adjoint_defect() <= 1e-15
            assert np.all(data.Q.data >= 0)
            assert np.all(np.asarray(data.Q.sum(axis=1)).ravel() <= 1 + 1e-15)
            count += 1
    assert count >= 100


def test_structure_and_bounds_on_random_holes():
    for dec in random_decs(5):
        for h in range(len(dec.holes)):
            data = hole_operator(dec, h)
            st = structural_checks(data)
            assert st["passed"], st
            assert norm_bound_check(data, 100)["passed"]


def test_zero_operator_bounds():
    rep = norm_bound_check(scalar(0.0), 5)
    assert rep["rows"][0]["first"] == 1.0
    assert all(r["first"] == 0.0 for r in rep["rows"][1:])
    assert rep["passed"]


@pytest.mark.parametrize("q", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99])
def test_scalar_bounds(q):
    rep = norm_bound_check(scalar(q), 200)
    assert rep["passed"]
    for r in rep["rows"]:
        m = r["m"]
        assert r["first"] == pytest.approx((1 - q * q) * q ** (2 * m), rel=1e-12, abs=1e-300)


def test_extremal_path_bounds_large_hole(monkeypatch):
    dec = next(d for d in random_decs(20, side=16, alpha=0.55) if max(len(f) for f in d.holes) > 20)
    h = int(np.argmax([len(f) for f in dec.holes]))
    data = hole_operator(dec, h)
    exact = operator_norm(data)
    monkeypatch.setattr(spectral_mod, "DENSE_EIG_LIMIT", 0)
    assert operator_norm(data) == pytest.approx(exact, abs=1e-10)
    rep = norm_bound_check(data, 100)
    assert rep["passed"] and not rep["exact_spectrum"]


def test_telescoping_and_gap_vs_pmf():
    pairs = 0
    for dec, b in ((d, b) for d in random_decs(3, side=16, alpha=0.45) for b in d.hole_boundaries):
        if len(b) < 2:
            continue
        x, y = int(b[0]), int(b[-1])
        data = build_hole_operator(dec, x, y)
        seq = sojourn_inner_sequence(data, 40)
        for n in (2, 3, 5):
            for K in (1, 3, 6):
                tele = sum(smoothness_gap(data, n + 2 * k) for k in range(K))
                assert abs(tele - (seq[n - 2] - seq[n - 2 + 2 * K])) <= 1e-12
        law = sojourn_pmf(dec, x, y, 40)
        pi_x = dec.kernel.pi[x]
        for n in range(2, 30):
            assert abs(smoothness_gap(data, n) - pi_x * (law.at(n) - law.at(n + 2))) <= 1e-10
        pairs += 1
    assert pairs > 3


def test_identity_against_path_sum_oracle():
    checked = 0
    for dec in random_decs(10, side=16, alpha=0.45):
        for b in dec.hole_boundaries:
            for x, y in ((int(b[0]), int(b[-1])), (int(b[-1]), int(b[0]))):
                data = build_hole_operator(dec, x, y)
                assert identity_residual(dec, data, 50) <= 1e-10
                assert cross_hole_discrepancy(dec, x, y, 50) <= 1e-10
                checked += 1
    assert checked >= 100


def test_empty_hole():
    env, _ = weak_vertex_env(BETA)
    dec = decompose(env, 0.5)
    with pytest.raises(EmptyHoleError):
        build_hole_operator(dec, 0, env.box.vertex((2, 2)))
    assert cross_hole_discrepancy(dec, 0, 1, 10) == 0.0


def test_pmf_bounds_single_vertex(weak):
    dec, v, x, y = weak
    rep = pmf_bound_check(dec, x, y, range(2, 20), range(1, 4))
    g = len(dec.neighborhood(x) & dec.neighborhood(y))
    p2 = sojourn_pmf(dec, x, y, 3).at(2)
    assert rep["first"] == pytest.approx(4 * p2 / g)
    assert rep["second"] == pytest.approx(8 * p2 / g)
    assert rep["second_k1"] == pytest.approx(rep["second_k1_spectral"], abs=1e-10)


def test_pmf_bounds_spectral_agreement_and_stability():
    dec = next(random_decs(1, side=12, alpha=0.4))
    for b in dec.hole_boundaries:
        if len(b) < 2:
            continue
        x, y = int(b[0]), int(b[-1])
        short = pmf_bound_check(dec, x, y, range(2, 17), range(1, 4))
        long = pmf_bound_check(dec, x, y, range(2, 33), range(1, 4))
        assert abs(short["second_k1"] - short["second_k1_spectral"]) <= 1e-10
        assert short["first"] <= long["first"] <= 2 * short["first"]
        assert short["second"] <= long["second"] <= 2 * short["second"]
