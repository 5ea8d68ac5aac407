"""Fine-walk kernel, exact heat kernels and path samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .env import Environment, Vertex
from .errors import BudgetError, DomainError, NoBridgeError, ResourceError
from .rng import CHUNK, map_chunks, stream

# entries of the (N, 2d) neighbour/probability tables
MAX_TABLE_ENTRIES = 30_000_000
# bytes of backward vectors kept for exact bridges before checkpointing
BRIDGE_MEMORY_GUARD = 400_000_000


@dataclass(frozen=True, eq=False)
class WalkKernel:
    """Reversible kernel ``P(x,y) = w_xy / pi(x)`` stored as per-vertex tables.

    ``nbr[x, k]`` is the k-th lattice neighbour (-1 if absent) and
    ``prob[x, k]`` the matching transition probability.
    """

    env: Environment = field(repr=False)
    pi: np.ndarray = field(repr=False)
    nbr: np.ndarray = field(repr=False)
    prob: np.ndarray = field(repr=False)

    @property
    def box(self):
        return self.env.box

    @property
    def n_vertices(self) -> int:
        return self.box.n_vertices

    def row(self, x: Vertex) -> dict[int, float]:
        x = self.box.vertex(x)
        return {int(y): float(p) for y, p in zip(self.nbr[x], self.prob[x]) if y >= 0}

    def weight(self, x: int, k: int) -> float:
        """Conductance of the k-th edge at ``x`` (0 if absent)."""
        return float(self.prob[x, k] * self.pi[x])

    @cached_property
    def cum(self) -> np.ndarray:
        """Row-wise cumulative probabilities, pinned to 1 from the last live entry on."""
        c = np.cumsum(self.prob, axis=1)
        live = self.prob > 0
        last = self.prob.shape[1] - 1 - np.argmax(live[:, ::-1], axis=1)
        cols = np.arange(self.prob.shape[1])
        c[cols[None, :] >= last[:, None]] = 1.0
        return c

    @cached_property
    def safe_nbr(self) -> np.ndarray:
        """Neighbour table with absent slots pointing at the row itself (probability 0)."""
        own = np.arange(self.n_vertices)[:, None]
        return np.where(self.nbr >= 0, self.nbr, own)

    def matrix(self) -> sp.csr_matrix:
        n = self.n_vertices
        rows = np.repeat(np.arange(n), self.nbr.shape[1])
        keep = self.nbr.ravel() >= 0
        return sp.csr_matrix((self.prob.ravel()[keep], (rows[keep], self.nbr.ravel()[keep])),
                             shape=(n, n))

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``(P f)(z) = sum_w P(z,w) f(w)`` for dense ``f``."""
        return np.einsum("ij,ij->i", self.prob, f[self.safe_nbr])


def build_kernel(env: Environment) -> WalkKernel:
    box = env.box
    n, d = box.n_vertices, box.dimension
    if n * 2 * d > MAX_TABLE_ENTRIES:
        raise ResourceError(f"kernel tables need {n * 2 * d} entries (> {MAX_TABLE_ENTRIES})")
    nbr = box.neighbors(np.arange(n))
    w = np.zeros((n, 2 * d))
    c = env.conductances
    for a in range(d):
        w[:, 2 * a] = c[:, a]
        minus = nbr[:, 2 * a + 1]
        ok = minus >= 0
        w[ok, 2 * a + 1] = c[minus[ok], a]
    pi = w.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        prob = w / pi[:, None]
    for arr in (pi, nbr, prob):
        arr.setflags(write=False)
    return WalkKernel(env, pi, nbr, prob)


@dataclass
class SparseDistribution:
    """Mass function on box vertices, kept on its (sorted) support only."""

    support: np.ndarray
    mass: np.ndarray

    @classmethod
    def delta(cls, v: int) -> "SparseDistribution":
        return cls(np.array([v], dtype=np.int64), np.array([1.0]))

    @classmethod
    def from_dense(cls, f: np.ndarray) -> "SparseDistribution":
        idx = np.flatnonzero(f)
        return cls(idx.astype(np.int64), f[idx].astype(np.float64))

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def get(self, v: int) -> float:
        i = np.searchsorted(self.support, v)
        if i < len(self.support) and self.support[i] == v:
            return float(self.mass[i])
        return 0.0

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.support] = self.mass
        return out

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.support.tolist(), self.mass.tolist()))


def _step(kernel: WalkKernel, dist: SparseDistribution) -> SparseDistribution:
    targets = kernel.nbr[dist.support].ravel()
    w = (dist.mass[:, None] * kernel.prob[dist.support]).ravel()
    live = targets >= 0
    targets, w = targets[live], w[live]
    if len(targets) * 4 > kernel.n_vertices:
        dense = np.bincount(targets, weights=w, minlength=kernel.n_vertices)
        idx = np.flatnonzero(dense)
        return SparseDistribution(idx, dense[idx])
    idx, inv = np.unique(targets, return_inverse=True)
    return SparseDistribution(idx, np.bincount(inv, weights=w, minlength=len(idx)))


def evolve(kernel: WalkKernel, dist: SparseDistribution, steps: int, *,
           origin: int | None = None, override_horizon: bool = False) -> SparseDistribution:
    """Return ``dist P^steps``.

    The horizon is checked against ``origin`` (default: the support point of a
    point mass); spread-out inputs without an origin are not checked.
    """
    if steps < 0:
        raise DomainError("steps must be >= 0")
    if origin is None and len(dist.support) == 1:
        origin = int(dist.support[0])
    if origin is not None:
        kernel.box.check_horizon(origin, steps, override=override_horizon)
    for _ in range(steps):
        dist = _step(kernel, dist)
    return dist


def heat_diagonal(kernel: WalkKernel, origin: Vertex, n_max: int, *,
                  override_horizon: bool = False) -> np.ndarray:
    """``P^{2n}(o,o)`` for ``n = 1..n_max``."""
    o = kernel.box.vertex(origin)
    kernel.box.check_horizon(o, 2 * n_max, closed=True, override=override_horizon)
    out = np.empty(n_max)
    dist = SparseDistribution.delta(o)
    for n in range(n_max):
        dist = _step(kernel, _step(kernel, dist))
        out[n] = dist.get(o)
    return out


def lambda_sequence(heat: np.ndarray, d: int) -> np.ndarray:
    n = np.arange(1, len(heat) + 1, dtype=float)
    return n ** (d / 2) * np.asarray(heat)


def zeta_sequence(heat: np.ndarray, d: int) -> np.ndarray:
    """zeta_n by dimension case; NaN at n=1 in d=4 where log n vanishes."""
    if d < 4:
        raise DomainError(f"zeta_n is defined for d >= 4, got d={d}")
    heat = np.asarray(heat)
    n = np.arange(1, len(heat) + 1, dtype=float)
    if d == 4:
        with np.errstate(divide="ignore"):
            scale = np.where(n >= 2, n**2 / np.sqrt(np.log(n)), np.nan)
    elif d <= 8:
        scale = n ** (d / 4 + 1)
    else:
        scale = n**3
    return scale * heat


def lambda_zeta(heat: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    return lambda_sequence(heat, d), zeta_sequence(heat, d)


# -- sampling --------------------------------------------------------------

@dataclass
class Path:
    vertices: np.ndarray
    seed: int | None = None
    mode: str = "forward"

    def __len__(self) -> int:
        return len(self.vertices) - 1


def step_many(kernel: WalkKernel, cur: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Advance each walker at ``cur`` one step using uniforms ``u`` in [0,1)."""
    k = np.argmax(u[:, None] < kernel.cum[cur], axis=1)
    return kernel.nbr[cur, k]


def sample_paths(kernel: WalkKernel, start: int, steps: int, n: int,
                 rng: np.random.Generator) -> np.ndarray:
    out = np.empty((n, steps + 1), dtype=np.int64)
    out[:, 0] = start
    for t in range(steps):
        out[:, t + 1] = step_many(kernel, out[:, t], rng.random(n))
    return out


def sample_path(kernel: WalkKernel, start: Vertex, steps: int,
                rng: np.random.Generator | int) -> Path:
    seed = rng if isinstance(rng, int) else None
    g = stream(rng) if isinstance(rng, int) else rng
    return Path(sample_paths(kernel, kernel.box.vertex(start), steps, 1, g)[0], seed)


class BackwardVectors:
    """``u_m(z) = P^m(z, origin)`` for ``m = 0..T``.

    When all vectors would exceed the memory guard only even ``m`` are stored
    and odd ones are recomputed on demand (one extra kernel application).
    """

    def __init__(self, kernel: WalkKernel, origin: int, horizon: int,
                 memory_guard: int = BRIDGE_MEMORY_GUARD):
        n = kernel.n_vertices
        need = (horizon + 1) * n * 8
        self.kernel, self.horizon = kernel, horizon
        self.checkpointed = need > memory_guard
        if self.checkpointed and need // 2 > memory_guard:
            raise ResourceError(f"backward vectors need {need // 2} bytes even when checkpointed")
        self._store: dict[int, np.ndarray] = {}
        u = np.zeros(n)
        u[origin] = 1.0
        for m in range(horizon + 1):
            if not self.checkpointed or m % 2 == 0:
                self._store[m] = u
            if m < horizon:
                u = kernel.apply(u)

    def __getitem__(self, m: int) -> np.ndarray:
        if m in self._store:
            return self._store[m]
        return self.kernel.apply(self._store[m - 1])


def bridge_weights(kernel: WalkKernel, back: BackwardVectors, z: np.ndarray,
                   remaining: int) -> np.ndarray:
    """Transition weights ``P(z,w) u_{rem-1}(w) / u_rem(z)`` for each row of ``z``."""
    u_next, u_now = back[remaining - 1], back[remaining]
    return kernel.prob[z] * u_next[kernel.safe_nbr[z]] / u_now[z][:, None]


@dataclass
class BridgeSample:
    paths: np.ndarray
    attempts: int
    mode: str

    @property
    def acceptance(self) -> float:
        return len(self.paths) / self.attempts if self.attempts else 0.0


def _exact_bridges(kernel: WalkKernel, back: BackwardVectors, origin: int, t: int,
                   n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((n, t + 1), dtype=np.int64)
    out[:, 0] = origin
    for k in range(t):
        z = out[:, k]
        w = bridge_weights(kernel, back, z, t - k)
        c = np.cumsum(w, axis=1)
        u = rng.random(n) * c[:, -1]
        j = np.argmax(u[:, None] < c, axis=1)
        out[:, k + 1] = kernel.nbr[z, j]
    return out


def sample_bridges(kernel: WalkKernel, origin: Vertex, horizon2n: int, n: int, *,
                   mode: str = "exactBridge", master_seed: int = 0, key: int = 0,
                   max_attempts: int | None = None, threads: int = 1,
                   override_horizon: bool = False) -> BridgeSample:
    """Draw ``n`` paths with ``X_0 = X_T = origin`` from the conditioned law.

    Replica chunk ``i`` uses the stream ``(master_seed, key, i)``.
    """
    o = kernel.box.vertex(origin)
    t = int(horizon2n)
    kernel.box.check_horizon(o, t, closed=True, override=override_horizon)
    if mode == "exactBridge":
        back = BackwardVectors(kernel, o, t)
        if back[t][o] <= 0.0:
            raise NoBridgeError(f"P^{t}({o},{o}) = 0")
        parts = map_chunks(lambda i, s: _exact_bridges(kernel, back, o, t, s,
                                                       stream(master_seed, key, i)),
                           n, threads)
        return BridgeSample(np.concatenate(parts), n, mode)
    if mode != "rejection":
        raise DomainError(f"unknown bridge mode {mode!r}")
    if max_attempts is None:
        max_attempts = 1000 * n
    accepted: list[np.ndarray] = []
    got = attempts = 0
    batch = 0
    while got < n:
        if attempts >= max_attempts:
            raise BudgetError(f"rejection sampler accepted {got}/{n} after {attempts} attempts "
                              f"(rate {got / max(attempts, 1):.3g})")
        size = min(CHUNK * 4, max_attempts - attempts)
        parts = map_chunks(lambda i, s: sample_paths(kernel, o, t, s,
                                                     stream(master_seed, key, batch, i)),
                           size, threads)
        paths = np.concatenate(parts)
        hit = paths[paths[:, -1] == o]
        # count attempts up to the n-th acceptance so the rate is unbiased
        if got + len(hit) >= n:
            need = n - got
            last = np.flatnonzero(paths[:, -1] == o)[need - 1]
            attempts += int(last) + 1
            accepted.append(hit[:need])
            got = n
        else:
            attempts += len(paths)
            accepted.append(hit)
            got += len(hit)
        batch += 1
    return BridgeSample(np.concatenate(accepted), attempts, mode)


def sample_bridge(kernel: WalkKernel, origin: Vertex, horizon2n: int, mode: str,
                  rng_seed: int, **kw) -> Path:
    s = sample_bridges(kernel, origin, horizon2n, 1, mode=mode, master_seed=rng_seed, **kw)
    return Path(s.paths[0], rng_seed, mode)


def bridge_marginal(kernel: WalkKernel, origin: Vertex, horizon2n: int, k: int,
                    override_horizon: bool = False) -> SparseDistribution:
    """Exact law of ``X_k`` under the bridge: ``P^k(o,z) P^{T-k}(z,o) / P^T(o,o)``.

    Uses forward evolution only, turning ``P^{T-k}(z,o)`` into
    ``pi(o) P^{T-k}(o,z) / pi(z)`` by reversibility.
    """
    o = kernel.box.vertex(origin)
    t = int(horizon2n)
    kernel.box.check_horizon(o, t, closed=True, override=override_horizon)
    fwd = evolve(kernel, SparseDistribution.delta(o), k, override_horizon=True)
    rest = evolve(kernel, SparseDistribution.delta(o), t - k, override_horizon=True)
    total = evolve(kernel, rest, k, override_horizon=True).get(o)
    if total <= 0:
        raise NoBridgeError(f"P^{t}({o},{o}) = 0")
    back = rest.to_dense(kernel.n_vertices) * kernel.pi[o] / kernel.pi
    mass = fwd.mass * back[fwd.support] / total
    return SparseDistribution(fwd.support, mass)


def expected_acceptance(kernel: WalkKernel, origin: Vertex, horizon2n: int) -> float:
    o = kernel.box.vertex(origin)
    return evolve(kernel, SparseDistribution.delta(o), horizon2n, override_horizon=True).get(o)


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n else float("inf")
