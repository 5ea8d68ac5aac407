"""Coarse-grained walk on the giant cluster.

Excursions into a hole F are absorbed on the giant vertices adjacent to F;
each hole gets one :class:`HoleSolver` (LU of ``I - Q_F``) that serves the
coarse kernel rows, expected sojourn times and sojourn-time laws.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cluster import GIANT, ClusterDecomposition
from .env import Vertex
from .errors import DomainError, ErgodicityError, NumericalError, ResourceError, TopologyError
from .kernel import Path, step_many
from .rng import stream

DENSE_HOLE_LIMIT = 1000


@dataclass
class CoarseTrace:
    """Visits ``sites[0..l]`` to the giant and the times ``times[k]`` = T_{k+1} between them."""

    sites: np.ndarray
    times: np.ndarray
    complete: bool = True
    dangling: int = 0  # fine steps of a truncated trailing excursion

    @property
    def length(self) -> int:
        return len(self.times)

    def key(self) -> tuple:
        return tuple(self.sites.tolist()), tuple(self.times.tolist())


def coarse_trace(path: Path | np.ndarray, dec: ClusterDecomposition) -> CoarseTrace:
    v = np.asarray(path.vertices if isinstance(path, Path) else path)
    if not dec.in_giant[v[0]]:
        raise DomainError(f"path starts at {v[0]}, outside the giant cluster")
    hits = np.flatnonzero(dec.in_giant[v[1:]]) + 1
    last = hits[-1] if len(hits) else 0
    times = np.diff(np.concatenate(([0], hits)))
    sites = v[np.concatenate(([0], hits))]
    dangling = len(v) - 1 - last
    return CoarseTrace(sites, times, dangling == 0, int(dangling))


def coarse_traces(paths: np.ndarray, dec: ClusterDecomposition) -> list[CoarseTrace]:
    return [coarse_trace(p, dec) for p in paths]


class HoleSolver:
    """Absorbing chain on one hole F, absorbed on the adjacent giant vertices."""

    def __init__(self, dec: ClusterDecomposition, h: int):
        kernel = dec.kernel
        self.hole = h
        self.vertices = dec.holes[h]
        self.boundary = dec.hole_boundaries[h]
        nf, nb = len(self.vertices), len(self.boundary)
        nbr = kernel.nbr[self.vertices]
        prob = kernel.prob[self.vertices]
        rows = np.repeat(np.arange(nf), nbr.shape[1])
        tgt, p = nbr.ravel(), prob.ravel()
        live = tgt >= 0
        rows, tgt, p = rows[live], tgt[live], p[live]
        inside = dec.hole_id[tgt] == h
        self.Q = sp.csr_matrix((p[inside], (rows[inside], np.searchsorted(self.vertices, tgt[inside]))),
                               shape=(nf, nf))
        out = ~inside
        B = np.zeros((nf, nb))
        np.add.at(B, (rows[out], np.searchsorted(self.boundary, tgt[out])), p[out])
        self.B = B
        A = sp.identity(nf, format="csc") - self.Q.tocsc()
        rhs = np.column_stack([B, np.ones(nf)])
        if nf <= DENSE_HOLE_LIMIT:
            sol = la.lu_solve(la.lu_factor(A.toarray()), rhs)
        else:
            sol = spla.splu(A).solve(rhs)
        residual = float(np.abs(A @ sol - rhs).max())
        if not np.all(np.isfinite(sol)) or residual > 1e-12:
            raise NumericalError(f"absorbing solve on hole {h} failed", residual)
        self.residual = residual
        self.hitting = sol[:, :nb]
        self.exit_time = sol[:, nb]

    def local(self, z: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.vertices, z)


@dataclass
class SojournLaw:
    """``pmf[n-1] = P^x(Xhat_1 = y, T_1 = n)`` for n = 1..n_max (y=None: summed over y).

    ``tail_mass`` is ``P^x(T_1 > n_max)`` over all exits, so that summing the
    joint pmf over every y and adding the tail gives one. ``by_hole`` holds the
    excursion part split over the holes adjacent to x; ``direct`` the n=1 part.
    """

    x: int
    y: int | None
    pmf: np.ndarray
    tail_mass: float
    direct: float
    by_hole: dict[int, np.ndarray] = field(default_factory=dict)

    def at(self, n: int) -> float:
        return float(self.pmf[n - 1]) if 1 <= n <= len(self.pmf) else 0.0

    def mean(self) -> float:
        return float(np.dot(np.arange(1, len(self.pmf) + 1), self.pmf))


@dataclass
class SojournExpectation:
    x: int
    value: float
    g_size: int

    @property
    def ratio(self) -> float:
        return self.value / self.g_size


class CoarseChain:
    """Exact coarse kernel machinery for one decomposition; thread-safe lazy caches."""

    def __init__(self, dec: ClusterDecomposition):
        self.dec = dec
        self.kernel = dec.kernel
        self._solvers: dict[int, HoleSolver] = {}
        self._lock = threading.Lock()

    def solver(self, h: int) -> HoleSolver:
        with self._lock:
            if h not in self._solvers:
                self._solvers[h] = HoleSolver(self.dec, h)
            return self._solvers[h]

    def _check(self, x: Vertex) -> int:
        x = self.dec.box.vertex(x)
        if not self.dec.in_giant[x]:
            raise DomainError(f"vertex {x} is not in the giant cluster")
        return x

    def _steps(self, x: int):
        nbr, prob = self.kernel.nbr[x], self.kernel.prob[x]
        for z, p in zip(nbr, prob):
            if z >= 0:
                yield int(z), float(p), int(self.dec.hole_id[z])

    def row(self, x: Vertex) -> dict[int, float]:
        x = self._check(x)
        out: dict[int, float] = {}
        for z, p, h in self._steps(x):
            if h == GIANT:
                out[z] = out.get(z, 0.0) + p
            else:
                s = self.solver(h)
                for y, q in zip(s.boundary, s.hitting[s.local(np.array([z]))[0]]):
                    if q > 0:
                        out[int(y)] = out.get(int(y), 0.0) + p * q
        return out

    def expected_sojourn(self, x: Vertex) -> float:
        x = self._check(x)
        extra = 0.0
        for z, p, h in self._steps(x):
            if h != GIANT:
                s = self.solver(h)
                extra += p * s.exit_time[s.local(np.array([z]))[0]]
        return 1.0 + extra

    @cached_property
    def expected_sojourns(self) -> np.ndarray:
        """E^x T_1 for every vertex (NaN off the giant)."""
        dec, k = self.dec, self.kernel
        t = np.zeros(dec.box.n_vertices)
        for h in range(len(dec.holes)):
            s = self.solver(h)
            t[s.vertices] = s.exit_time
        nbr = k.safe_nbr
        out = 1.0 + (k.prob * np.where(dec.in_giant[nbr], 0.0, t[nbr])).sum(axis=1)
        out[~dec.in_giant] = np.nan
        return out

    def sojourn(self, x: Vertex, y: Vertex | None, n_max: int) -> SojournLaw:
        x = self._check(x)
        if y is not None:
            y = self._check(y)
        pmf = np.zeros(n_max)
        direct = 0.0
        tail = 0.0
        entry: dict[int, np.ndarray] = {}
        for z, p, h in self._steps(x):
            if h == GIANT:
                if y is None or z == y:
                    direct += p
                continue
            s = self.solver(h)
            f = entry.setdefault(h, np.zeros(len(s.vertices)))
            f[s.local(np.array([z]))[0]] += p
        pmf[0] = direct
        by_hole = {}
        for h, f in sorted(entry.items()):
            s = self.solver(h)
            if y is None:
                exit_w = s.B.sum(axis=1)
            else:
                j = np.searchsorted(s.boundary, y)
                exit_w = s.B[:, j] if j < len(s.boundary) and s.boundary[j] == y else np.zeros(len(f))
            part = np.zeros(n_max)
            QT = s.Q.T.tocsr()
            for n in range(2, n_max + 1):
                part[n - 1] = f @ exit_w
                f = QT @ f
            tail += float(f.sum())
            by_hole[h] = part
            pmf += part
        return SojournLaw(x, y, pmf, tail, direct, by_hole)

    def matrix(self) -> sp.csr_matrix:
        """P-hat as an (N, N) sparse matrix supported on giant rows and columns."""
        with self._lock:
            if getattr(self, "_matrix", None) is not None:
                return self._matrix
        dec, k = self.dec, self.kernel
        g = dec.giant
        nbr, prob = k.nbr[g], k.prob[g]
        rows = np.repeat(g, nbr.shape[1])
        tgt, p = nbr.ravel(), prob.ravel()
        keep = (tgt >= 0) & dec.in_giant[np.maximum(tgt, 0)]
        parts_r, parts_c, parts_v = [rows[keep]], [tgt[keep]], [p[keep]]
        for h in range(len(dec.holes)):
            s = self.solver(h)
            bnd = s.boundary
            # entry probabilities from each boundary vertex into the hole
            E = np.zeros((len(bnd), len(s.vertices)))
            bn, bp = k.nbr[bnd], k.prob[bnd]
            for col in range(bn.shape[1]):
                z = bn[:, col]
                ok = (z >= 0) & (dec.hole_id[np.maximum(z, 0)] == h)
                np.add.at(E, (np.flatnonzero(ok), s.local(z[ok])), bp[ok, col])
            contrib = E @ s.hitting
            r, c = np.nonzero(contrib)
            parts_r.append(bnd[r]), parts_c.append(bnd[c]), parts_v.append(contrib[r, c])
        n = dec.box.n_vertices
        m = sp.csr_matrix((np.concatenate(parts_v), (np.concatenate(parts_r), np.concatenate(parts_c))),
                          shape=(n, n))
        m.sum_duplicates()
        with self._lock:
            self._matrix = m
        return m


def coarse_chain(dec: ClusterDecomposition) -> CoarseChain:
    chain = dec.__dict__.get("_coarse_chain")
    if chain is None:
        chain = dec.__dict__.setdefault("_coarse_chain", CoarseChain(dec))
    return chain


def coarse_kernel_row(dec: ClusterDecomposition, x: Vertex) -> dict[int, float]:
    return coarse_chain(dec).row(x)


def sojourn_pmf(dec: ClusterDecomposition, x: Vertex, y: Vertex | None, n_max: int) -> SojournLaw:
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    return coarse_chain(dec).sojourn(x, y, n_max)


def expected_sojourn(dec: ClusterDecomposition, x: Vertex) -> SojournExpectation:
    x = dec.box.vertex(x)
    return SojournExpectation(x, coarse_chain(dec).expected_sojourn(x), len(dec.neighborhood(x)))


def pmf_mean(dec: ClusterDecomposition, x: Vertex, tol: float = 1e-12,
             n_cap: int = 2_000_000) -> tuple[float, int]:
    """E^x T_1 summed from the sojourn-time pmf, lengthening it until the tail is negligible.

    The neglected part is estimated as ``tail * (N + 1/(1-rho))`` with rho the
    observed geometric decay of the tail.
    """
    n = 64
    while True:
        a = sojourn_pmf(dec, x, None, n)
        b_tail = sojourn_pmf(dec, x, None, n // 2).tail_mass
        rho = (a.tail_mass / b_tail) ** (2.0 / n) if b_tail > 0 else 0.0
        rest = a.tail_mass * (n + 1.0 / max(1.0 - rho, 1e-300)) if a.tail_mass > 0 else 0.0
        if rest < tol:
            return a.mean(), n
        if n >= n_cap:
            raise NumericalError(f"sojourn pmf tail still {a.tail_mass:.3g} at n={n}")
        n *= 2


def excursion_path_sum(dec: ClusterDecomposition, x: Vertex, y: Vertex, n_max: int,
                       first_step: frozenset[int] | set[int] | None = None) -> np.ndarray:
    """Brute-force ``P^x(Xhat_1=y, T_1=n[, X_1 in first_step])`` for n = 1..n_max.

    Propagates the walk on the whole box, killing mass on the giant; shares no
    code with the hole solvers or the spectral operator.
    """
    box, k = dec.box, dec.kernel
    x, y = box.vertex(x), box.vertex(y)
    P = k.matrix()
    PT = P.T.tocsr()
    out = np.zeros(n_max)
    f = np.zeros(box.n_vertices)
    for z, p in k.row(x).items():
        if dec.in_giant[z]:
            if z == y and first_step is None:
                out[0] += p
        elif first_step is None or z in first_step:
            f[z] += p
    for n in range(2, n_max + 1):
        f = PT @ f
        out[n - 1] = f[y]
        f[dec.in_giant] = 0.0
    return out


# -- Monte Carlo on the coarse chain ----------------------------------------

def sample_coarse_chains(dec: ClusterDecomposition, start: Vertex, n_coarse: int, n: int,
                         rng: np.random.Generator, max_fine_steps: int = 10_000_000
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` coarse trajectories of ``n_coarse`` steps: (sites (n, l+1), times (n, l))."""
    s = dec.box.vertex(start)
    if not dec.in_giant[s]:
        raise DomainError(f"vertex {s} is not in the giant cluster")
    k = dec.kernel
    sites = np.empty((n, n_coarse + 1), dtype=np.int64)
    times = np.zeros((n, n_coarse), dtype=np.int64)
    sites[:, 0] = s
    cur = np.full(n, s, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    run = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    fine = 0
    while len(active):
        cur[active] = step_many(k, cur[active], rng.random(len(active)))
        run[active] += 1
        landed = active[dec.in_giant[cur[active]]]
        times[landed, count[landed]] = run[landed]
        sites[landed, count[landed] + 1] = cur[landed]
        count[landed] += 1
        run[landed] = 0
        active = active[count[active] < n_coarse]
        fine += 1
        if fine > max_fine_steps:
            raise ResourceError("coarse chain sampling exceeded the fine-step guard")
    return sites, times


@numba.njit(cache=True)
def _coarse_walk(nbr, cum, in_giant, v, u, run, times, count):  # pragma: no cover - jitted
    nc = cum.shape[1]
    target = times.shape[0]
    i = 0
    while count < target and i < u.shape[0]:
        r = u[i]
        i += 1
        k = 0
        while k < nc - 1 and r >= cum[v, k]:
            k += 1
        v = nbr[v, k]
        run += 1
        if in_giant[v]:
            times[count] = run
            count += 1
            run = 0
    return v, run, count


def long_coarse_times(dec: ClusterDecomposition, start: Vertex, n_coarse: int,
                      master_seed: int, key: int = 0, block: int = 1 << 20) -> np.ndarray:
    """T_1..T_l along one long trajectory (uniforms drawn block-wise from one stream)."""
    k = dec.kernel
    g = stream(master_seed, key)
    times = np.zeros(n_coarse, dtype=np.int64)
    v, run, count = dec.box.vertex(start), 0, 0
    nbr = np.ascontiguousarray(k.nbr)
    cum = np.ascontiguousarray(k.cum)
    mask = np.ascontiguousarray(dec.in_giant)
    while count < n_coarse:
        v, run, count = _coarse_walk(nbr, cum, mask, v, g.random(block), run, times, count)
    return times


@dataclass
class ErgodicAverage:
    z: np.ndarray  # running means Z_l, l = 1..len
    z_inf: float

    @property
    def final(self) -> float:
        return float(self.z[-1])

    @property
    def relative_error(self) -> float:
        return abs(self.final - self.z_inf) / self.z_inf


def stationary_sojourn_average(dec: ClusterDecomposition) -> float:
    """pi-weighted average of E^x T_1 over the giant (stationary mean of the coarse chain)."""
    tau = coarse_chain(dec).expected_sojourns
    g = dec.giant
    w = dec.kernel.pi[g]
    return float(np.dot(w, tau[g]) / w.sum())


def ergodic_average(dec: ClusterDecomposition, ell: int, master_seed: int,
                    origin: Vertex = 0, key: int = 0) -> ErgodicAverage:
    if dec.box.topology != "torus":
        raise TopologyError("ergodic averages are defined on the torus only")
    o = dec.box.vertex(origin)
    reach = dec.coarse_distances(o)
    if len(reach) != len(dec.giant):
        raise ErgodicityError(f"coarse chain reaches {len(reach)} of {len(dec.giant)} giant vertices")
    times = long_coarse_times(dec, o, ell, master_seed, key)
    z = np.cumsum(times) / np.arange(1, ell + 1)
    return ErgodicAverage(z, stationary_sojourn_average(dec))


@dataclass
class DiffusiveConstant:
    value: float
    argmax: tuple[int, int, int]  # (n, x, y)
    per_n: dict[int, float]
    reversal_factor: float
    rho: float

    @property
    def reversed_value(self) -> float:
        return self.reversal_factor * self.value


def diffusive_constant(dec: ClusterDecomposition, rho: float, n_range, origin: Vertex = 0,
                       budget: float = 5e9) -> DiffusiveConstant:
    """max over n, x with d(origin, x) <= rho*n, and y of ``n^{d/2} Phat^n(x,y)``."""
    o = dec.box.vertex(origin)
    ns = sorted(int(n) for n in n_range)
    if not ns or ns[0] < 1:
        raise DomainError("n_range must contain integers >= 1")
    dist = dec.coarse_distances(o)
    radius = rho * ns[-1]
    xs = np.array(sorted(v for v, r in dist.items() if r <= radius), dtype=np.int64)
    P = coarse_chain(dec).matrix()
    g = dec.giant
    Pg = P[g][:, g].tocsr()
    if len(xs) * Pg.nnz * ns[-1] > budget:
        raise ResourceError(f"diffusive constant needs ~{len(xs) * Pg.nnz * ns[-1]:.3g} ops > {budget:.3g}")
    local = np.searchsorted(g, xs)
    R = np.zeros((len(xs), len(g)))
    R[np.arange(len(xs)), local] = 1.0
    dx = np.array([dist[v] for v in xs])
    d = dec.box.dimension
    best, arg, per_n = -1.0, (0, o, o), {}
    PgT = Pg.T.tocsr()
    for n in range(1, ns[-1] + 1):
        R = (PgT @ R.T).T
        if n not in ns:
            continue
        rows = np.flatnonzero(dx <= rho * n)
        sub = R[rows]
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        val = n ** (d / 2) * sub[i, j]
        per_n[n] = float(val)
        if val > best:
            best, arg = float(val), (n, int(xs[rows[i]]), int(g[j]))
    return DiffusiveConstant(best, arg, per_n, 2 * d / dec.alpha, rho)


def linear_growth_check(dec: ClusterDecomposition, ell_max: int, origin: Vertex = 0) -> dict:
    """Exact ``E^0 sum_{j<=l} T_j`` against ``l * max_x E^x T_1`` for l = 1..ell_max."""
    o = dec.box.vertex(origin)
    tau = np.nan_to_num(coarse_chain(dec).expected_sojourns)
    PT = coarse_chain(dec).matrix().T.tocsr()
    row = np.zeros(dec.box.n_vertices)
    row[o] = 1.0
    c = float(np.nanmax(coarse_chain(dec).expected_sojourns))
    acc, worst = 0.0, -math.inf
    means = []
    for ell in range(1, ell_max + 1):
        acc += float(row @ tau)
        means.append(acc)
        worst = max(worst, acc - c * ell)
        row = PT @ row
    return {"constant": c, "expected_sums": means, "max_excess": worst, "passed": worst <= 1e-9}


def chain_bound_check(dec: ClusterDecomposition, ell_max: int, n_max: int, n_samples: int,
                  master_seed: int, origin: Vertex = 0, sigmas: float = 4.0,
                  key: int = 0) -> dict:
    """Check P(Xhat_l=0, S >= n) <= K l^{-d/2} n^{-1} E(S; S >= n), S = T_1+..+T_{ceil(l/2)}.

    K is (2d/alpha) * C_A5 with C_A5 measured over n <= ell_max/2 and rho = 2.
    Both sides come from the same samples, so the test is on the per-sample
    difference with its own standard error.
    """
    o = dec.box.vertex(origin)
    d = dec.box.dimension
    ca5 = diffusive_constant(dec, 2.0, range(1, max(ell_max // 2, 1) + 1), o)
    K = ca5.reversed_value
    sites, times = sample_coarse_chains(dec, o, ell_max, n_samples, stream(master_seed, key))
    csum = np.cumsum(times, axis=1)
    rows = []
    worst = math.inf
    for ell in range(1, ell_max + 1):
        S = csum[:, math.ceil(ell / 2) - 1]
        back = sites[:, ell] == o
        for n in range(1, n_max + 1):
            big = S >= n
            lhs_i = (back & big).astype(float)
            rhs_i = K * ell ** (-d / 2) / n * S * big
            diff = rhs_i - lhs_i
            mean, se = diff.mean(), diff.std(ddof=1) / math.sqrt(n_samples)
            z = mean / se if se > 0 else (math.inf if mean >= 0 else -math.inf)
            worst = min(worst, z)
            rows.append({"ell": ell, "n": n, "lhs": float(lhs_i.mean()), "rhs": float(rhs_i.mean()),
                         "diff": float(mean), "se": float(se), "passed": bool(mean >= -sigmas * se)})
    return {"K": K, "C_A5": ca5.value, "samples": n_samples, "min_z": worst,
            "rows": rows, "passed": all(r["passed"] for r in rows)}


def coarse_reversibility(dec: ClusterDecomposition) -> dict:
    """max |pi(x)Phat(x,y) - pi(y)Phat(y,x)| and max |row sum - 1| over the giant."""
    P = coarse_chain(dec).matrix()
    pi = dec.kernel.pi
    F = sp.diags(pi) @ P
    asym = abs(F - F.T).max() if F.nnz else 0.0
    rows = np.asarray(P.sum(axis=1)).ravel()[dec.giant]
    return {"max_asymmetry": float(asym), "max_row_defect": float(np.abs(rows - 1.0).max())}
