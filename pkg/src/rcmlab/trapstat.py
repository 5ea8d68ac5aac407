"""Trapping statistics on coarse traces: l_n, the G-sets, the trapping event,
return-conditioned event probabilities and the time-shift transformation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .cluster import ClusterDecomposition
from .coarse import CoarseTrace, coarse_trace, diffusive_constant, sample_coarse_chains, coarse_chain
from .env import Vertex
from .errors import DomainError, InsufficientTraceError, ParameterError
from .kernel import sample_bridges, sample_paths
from .rng import stream


@dataclass(frozen=True)
class TrapEventSpec:
    r: int
    theta: int
    n: int

    def __post_init__(self):
        if self.r < 0 or self.theta < 1 or self.n < 1:
            raise ParameterError("need r >= 0, theta >= 1, n >= 1")
        if self.theta > self.n:
            raise ParameterError(f"theta={self.theta} exceeds n={self.n}")
        if self.r > self.theta:
            raise ParameterError(f"r={self.r} exceeds theta={self.theta}")

    @staticmethod
    def default_r(d: int) -> int:
        return max(math.floor(d / 2 - 1), 0)


@dataclass
class McEstimate:
    value: float
    std_error: float
    samples: int
    accepted: int

    def z_score(self) -> float:
        return self.value / self.std_error if self.std_error > 0 else (math.inf if self.value > 0 else 0.0)

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error,
                "samples": self.samples, "accepted": self.accepted}


def _times(trace) -> np.ndarray:
    return np.asarray(trace.times if isinstance(trace, CoarseTrace) else trace, dtype=np.int64)


def ell_n(trace, n: int) -> int:
    """Smallest m with T_1 + ... + T_m >= 2n."""
    c = np.cumsum(_times(trace))
    if len(c) == 0 or c[-1] < 2 * n:
        raise InsufficientTraceError(f"trace covers {int(c[-1]) if len(c) else 0} < {2 * n} steps")
    return int(np.searchsorted(c, 2 * n)) + 1


def g_membership(times, r: int, theta: int, mode: str = "greedy") -> bool:
    """Can r entries be removed so that the rest sums to at most theta?"""
    t = [int(v) for v in times]
    if len(t) < r:
        raise DomainError(f"need at least r={r} times, got {len(t)}")
    if mode == "greedy":
        order = sorted(range(len(t)), key=lambda i: (-t[i], i))
        removed = set(order[:r])
        return sum(v for i, v in enumerate(t) if i not in removed) <= theta
    if mode == "bruteForce":
        total = sum(t)
        return min(total - sum(c) for c in itertools.combinations(t, r)) <= theta
    raise DomainError(f"unknown mode {mode!r}")


def detect_event(trace, spec: TrapEventSpec) -> bool:
    ell = ell_n(trace, spec.n)
    if not spec.r <= ell <= spec.theta:
        return False
    return g_membership(_times(trace)[:ell], spec.r, spec.theta)


def multiproduct_sum(times, r: int):
    """Elementary symmetric polynomial e_r(t_1..t_l); exact for integer input."""
    t = list(times)
    if r < 1 or len(t) < r:
        raise DomainError(f"need 1 <= r <= len(times), got r={r}, len={len(t)}")
    exact = all(isinstance(v, (int, np.integer)) for v in t)
    zero = 0 if exact else 0.0
    e = [1 if exact else 1.0] + [zero] * r
    for v in t:
        v = int(v) if exact else float(v)
        for k in range(r, 0, -1):
            e[k] += e[k - 1] * v
    return e[r]


def implication_check(times, r: int, theta: int, n: int) -> dict:
    """Non-membership and sum >= n must force e_{r+1}(t) >= n theta^r / (r+1)!."""
    t = [int(v) for v in times]
    applicable = not g_membership(t, r, theta) and sum(t) >= n
    if not applicable:
        return {"applicable": False, "holds": True, "slack": None}
    lhs = multiproduct_sum(t, r + 1)
    rhs = Fraction(n * theta**r, math.factorial(r + 1))
    return {"applicable": True, "holds": lhs >= rhs, "slack": float(lhs - rhs)}


def phi_transform(trace: CoarseTrace, s: int) -> CoarseTrace:
    """Lengthen the first longest excursion by 2s."""
    if s < 1:
        raise DomainError("s must be >= 1")
    if trace.length == 0:
        raise DomainError("empty trace")
    times = np.array(trace.times, dtype=np.int64)
    times[int(np.argmax(times))] += 2 * s
    return replace(trace, times=times)


def max_sojourn_fraction(trace: CoarseTrace, n: int) -> float:
    return float(np.max(trace.times)) / (2 * n)


# -- Monte Carlo -------------------------------------------------------------

@dataclass
class ConditionalEvent:
    estimate: McEstimate
    traces: list[CoarseTrace]
    flags: np.ndarray
    sweep: dict[int, McEstimate] | None = None

    @property
    def n_star(self) -> int | None:
        if not self.sweep:
            return None
        return max(self.sweep, key=lambda m: (self.sweep[m].value, -m))


def _require_origin(dec: ClusterDecomposition, origin: Vertex) -> int:
    o = dec.box.vertex(origin)
    if not dec.in_giant[o]:
        raise DomainError(f"origin {o} is not in the giant cluster; re-anchor with env.shift")
    return o


def _bridge_estimate(dec, o, spec, mode, budget, master_seed, key, threads, override):
    sample = sample_bridges(dec.kernel, o, 2 * spec.n, budget, mode=mode, master_seed=master_seed,
                            key=key, threads=threads, override_horizon=override)
    traces = [coarse_trace(p, dec) for p in sample.paths]
    flags = np.array([detect_event(tr, spec) for tr in traces], dtype=bool)
    p = float(flags.mean())
    se = math.sqrt(p * (1 - p) / len(flags))
    return McEstimate(p, se, sample.attempts, len(flags)), traces, flags


def conditional_event_prob(dec: ClusterDecomposition, spec: TrapEventSpec, mode: str = "exactBridge",
                           mc_budget: int = 10_000, master_seed: int = 0, key: int = 0,
                           origin: Vertex = 0, sweep: bool = False, threads: int = 1,
                           override_horizon: bool = False) -> ConditionalEvent:
    """Estimate P^0(E(theta, n) | X_{2n} = 0) from ``mc_budget`` accepted bridges."""
    o = _require_origin(dec, origin)
    est, traces, flags = _bridge_estimate(dec, o, spec, mode, mc_budget, master_seed, key,
                                          threads, override_horizon)
    out = ConditionalEvent(est, traces, flags)
    if sweep:
        out.sweep = {}
        for m in range(max(spec.n - spec.theta, spec.theta, 1), spec.n + 1):
            sm = TrapEventSpec(spec.r, spec.theta, m)
            out.sweep[m] = est if m == spec.n else _bridge_estimate(
                dec, o, sm, mode, mc_budget, master_seed, key + 1 + m, threads, override_horizon)[0]
    return out


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


def proposition_sweep(dec: ClusterDecomposition, n: int, theta: int, delta: int,
                      mc_budget: int = 20_000, master_seed: int = 0, key: int = 0,
                      origin: Vertex = 0, r: int | None = None, sigmas: float = 4.0,
                      override_horizon: bool = False) -> dict:
    """Averaged return probabilities with many coarse steps / no trapping, against their bounds.

    Left sides come from fine forward paths of length 2n; the right sides are
    the coarse-chain quantities they are dominated by (many coarse steps that
    already use n time units and return; Markov's inequality on e_{r+1}), also
    estimated by Monte Carlo. Both inequalities are asserted up to ``sigmas``
    combined standard errors.
    """
    o = _require_origin(dec, origin)
    if not (1 <= theta and 1 <= delta and 2 * delta <= n):
        raise ParameterError("need theta >= 1 and 1 <= delta <= n/2")
    d = dec.box.dimension
    r = TrapEventSpec.default_r(d) if r is None else r
    k = dec.kernel
    dec.box.check_horizon(o, 2 * n, closed=True, override=override_horizon)
    paths = sample_paths(k, o, 2 * n, mc_budget, stream(master_seed, key, 0))
    in_g = dec.in_giant[paths[:, 1:]]
    counts = np.cumsum(in_g, axis=1)  # giant visits in steps 1..t
    ms = list(range(n - delta, n + 1))
    many = np.zeros(mc_budget)
    spread = np.zeros(mc_budget)
    for m in ms:
        back = paths[:, 2 * m] == o
        ell = counts[:, 2 * m - 1]
        many += back & (ell >= theta)
        for i in np.flatnonzero(back & (ell <= theta) & (ell >= r)):
            hits = np.flatnonzero(in_g[i, :2 * m]) + 1
            times = np.diff(np.concatenate(([0], hits)))
            if not g_membership(times, r, theta):
                spread[i] += 1
    many /= delta + 1
    spread /= delta + 1
    lhs1, se1 = _mean_se(many)
    lhs2, se2 = _mean_se(spread)

    sites, times = sample_coarse_chains(dec, o, 2 * n, mc_budget, stream(master_seed, key, 1))
    csum = np.cumsum(times, axis=1)
    back = sites[:, 1:] == o
    chain1 = ((csum >= n) & back)[:, theta - 1:].sum(axis=1) / (delta + 1)
    norm = math.factorial(r + 1) / (n * theta**r)
    chain2 = np.zeros(mc_budget)
    for ell in range(max(r + 1, 1), min(theta, 2 * n) + 1):
        esp = _esp_rows(times[:, :ell], r + 1)
        chain2 += esp * back[:, ell - 1] * norm
    chain2 /= delta + 1
    rhs1, sr1 = _mean_se(chain1)
    rhs2, sr2 = _mean_se(chain2)
    ok1 = lhs1 <= rhs1 + sigmas * math.hypot(se1, sr1)
    ok2 = lhs2 <= rhs2 + sigmas * math.hypot(se2, sr2)
    out = {"n": n, "theta": theta, "delta": delta, "r": r, "samples": mc_budget,
           "many_steps": {"lhs": lhs1, "lhs_se": se1, "rhs": rhs1, "rhs_se": sr1, "passed": ok1},
           "no_trapping": {"lhs": lhs2, "lhs_se": se2, "rhs": rhs2, "rhs_se": sr2, "passed": ok2},
           "passed": bool(ok1 and ok2)}
    if d >= 4:
        ca5 = diffusive_constant(dec, 2.0, range(1, n + 1), o)
        c312 = float(np.nanmax(coarse_chain(dec).expected_sojourns))
        scale = n ** (-d / 2) * (n / delta)
        shape1 = math.log(n / theta) if d == 4 else (n / theta) ** (d / 2 - 2)
        out["shapes"] = {"C_A5": ca5.value, "reversed_C_A5": ca5.reversed_value, "max_sojourn": c312,
                         "many_steps_shape": scale * shape1,
                         "no_trapping_shape": scale * (n / theta) ** (d / 2 - 2)}
    return out


def _esp_rows(t: np.ndarray, r: int) -> np.ndarray:
    """Row-wise e_r in floating point."""
    e = [np.ones(len(t))] + [np.zeros(len(t)) for _ in range(r)]
    for j in range(t.shape[1]):
        v = t[:, j].astype(float)
        for k in range(r, 0, -1):
            e[k] = e[k] + e[k - 1] * v
    return e[r]
