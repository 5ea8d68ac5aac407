"""Strong/weak decomposition at a cut-off: giant cluster, holes, neighbourhoods."""

from __future__ import annotations

import threading
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .env import Environment, Vertex
from .errors import DegenerateDecompositionError, DomainError, ParameterError

GIANT = -1


class SmallGiantWarning(UserWarning):
    """The designated giant covers less than half of the box."""


def _components(n: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    adj = sp.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    return connected_components(adj, directed=False)[1]


@dataclass(eq=False)
class ClusterDecomposition:
    """Decomposition of an environment at cut-off ``alpha``.

    ``hole_id[v]`` is ``GIANT`` (-1) for giant vertices, otherwise the index
    of the hole (component of the complement of the giant) containing ``v``.
    """

    env: Environment = field(repr=False)
    alpha: float
    in_giant: np.ndarray = field(repr=False)
    hole_id: np.ndarray = field(repr=False)
    holes: list[np.ndarray] = field(repr=False)
    ties: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _g_cache: dict = field(default_factory=dict, repr=False)
    _dist_cache: dict = field(default_factory=dict, repr=False)

    @property
    def box(self):
        return self.env.box

    @cached_property
    def kernel(self):
        from .kernel import build_kernel
        return build_kernel(self.env)

    @cached_property
    def giant(self) -> np.ndarray:
        return np.flatnonzero(self.in_giant)

    @property
    def giant_fraction(self) -> float:
        return float(self.in_giant.mean())

    def hole_of(self, v: Vertex) -> int:
        return int(self.hole_id[self.box.vertex(v)])

    def component(self, v: int) -> np.ndarray:
        """F_v: the hole containing ``v``, or ``{v}`` for giant vertices."""
        h = self.hole_id[v]
        return np.array([v]) if h == GIANT else self.holes[h]

    def neighborhood(self, x: Vertex) -> frozenset[int]:
        """G_x: union of F_y over lattice neighbours y of x."""
        x = self.box.vertex(x)
        with self._lock:
            if x not in self._g_cache:
                nb = self.box.neighbors(np.array([x]))[0]
                out: set[int] = set()
                for y in nb[nb >= 0]:
                    out.update(self.component(int(y)).tolist())
                self._g_cache[x] = frozenset(out)
            return self._g_cache[x]

    @cached_property
    def hole_boundaries(self) -> list[np.ndarray]:
        """Giant vertices adjacent to each hole, sorted."""
        out = []
        for h in self.holes:
            nb = self.box.neighbors(h).ravel()
            nb = nb[nb >= 0]
            out.append(np.unique(nb[self.in_giant[nb]]))
        return out

    def adjacent_holes(self, x: Vertex) -> list[int]:
        x = self.box.vertex(x)
        nb = self.box.neighbors(np.array([x]))[0]
        nb = nb[nb >= 0]
        return sorted({int(self.hole_id[y]) for y in nb if self.hole_id[y] != GIANT})

    def coarse_neighbors(self, x: int) -> set[int]:
        """Giant vertices w with positive one-step coarse probability from x."""
        nb = self.box.neighbors(np.array([x]))[0]
        nb = nb[nb >= 0]
        out = {int(y) for y in nb if self.in_giant[y]}
        for h in self.adjacent_holes(x):
            out.update(self.hole_boundaries[h].tolist())
        return out

    def coarse_distances(self, source: Vertex) -> dict[int, int]:
        """Markov distance from ``source`` to every giant vertex (BFS)."""
        s = self.box.vertex(source)
        if not self.in_giant[s]:
            raise DomainError(f"vertex {s} is not in the giant cluster")
        with self._lock:
            if s in self._dist_cache:
                return self._dist_cache[s]
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for w in self.coarse_neighbors(u):
                if w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        with self._lock:
            self._dist_cache[s] = dist
        return dist

    def report(self) -> dict:
        sizes = np.array([len(h) for h in self.holes], dtype=int)
        hist = np.bincount(sizes) if len(sizes) else np.zeros(1, dtype=int)
        return {
            "alpha": self.alpha,
            "giant_fraction": self.giant_fraction,
            "giant_size": int(self.in_giant.sum()),
            "hole_count": len(self.holes),
            "hole_size_histogram": {int(k): int(v) for k, v in enumerate(hist) if v},
            "largest_hole": int(sizes.max()) if len(sizes) else 0,
            "giant_ties": self.ties,
        }


def decompose(env: Environment, alpha: float) -> ClusterDecomposition:
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must lie in (0,1], got {alpha}")
    box = env.box
    n = box.n_vertices
    nbr = box.neighbors(np.arange(n))[:, 0::2]
    strong = (env.conductances >= alpha) & (nbr >= 0)
    if not strong.any():
        raise DegenerateDecompositionError(f"no edge has conductance >= {alpha}")
    xs, axes = np.nonzero(strong)
    labels = _components(n, xs, nbr[xs, axes])
    sizes = np.bincount(labels)
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    # deterministic tie-break: the component holding the smallest vertex index
    first_vertex = {c: int(np.flatnonzero(labels == c)[0]) for c in candidates}
    chosen = min(candidates, key=first_vertex.__getitem__)
    in_giant = labels == chosen
    in_giant.setflags(write=False)

    weak_x, weak_a = np.nonzero((nbr >= 0) & ~in_giant[:, None])
    other = nbr[weak_x, weak_a]
    keep = ~in_giant[other]
    hole_labels = _components(n, weak_x[keep], other[keep])
    hole_id = np.full(n, GIANT, dtype=np.int64)
    outside = np.flatnonzero(~in_giant)
    # renumber holes by their smallest vertex
    _, first, inverse = np.unique(hole_labels[outside], return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    hole_id[outside] = order[inverse]
    holes = [np.empty(0, dtype=np.int64)] * len(first)
    if len(outside):
        grouped = np.argsort(hole_id[outside], kind="stable")
        bounds = np.searchsorted(hole_id[outside][grouped], np.arange(len(first) + 1))
        holes = [outside[grouped[bounds[i]:bounds[i + 1]]] for i in range(len(first))]
    hole_id.setflags(write=False)

    dec = ClusterDecomposition(env, float(alpha), in_giant, hole_id, holes,
                               ties=len(candidates) - 1)
    if dec.giant_fraction < 0.5:
        warnings.warn(f"giant covers {dec.giant_fraction:.1%} of the box at alpha={alpha}",
                      SmallGiantWarning, stacklevel=2)
    return dec


def neighborhood_size(dec: ClusterDecomposition, x: Vertex) -> int:
    return len(dec.neighborhood(x))


def markov_distance(dec: ClusterDecomposition, x: Vertex, y: Vertex) -> int | None:
    """Coarse-walk distance; ``None`` when y is unreachable from x."""
    x, y = dec.box.vertex(x), dec.box.vertex(y)
    for v in (x, y):
        if not dec.in_giant[v]:
            raise DomainError(f"vertex {v} is not in the giant cluster")
    return dec.coarse_distances(x).get(y)


def neighborhood_moments(sizes: np.ndarray, orders: tuple[int, ...] = (1, 2, 3, 4)) -> dict:
    sizes = np.asarray(sizes, dtype=float)
    return {f"m{p}": float(np.mean(sizes**p)) for p in orders} | {
        "max": float(sizes.max()) if len(sizes) else 0.0, "samples": int(len(sizes))}
