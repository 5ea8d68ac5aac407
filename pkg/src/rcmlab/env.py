"""Conductance environments on finite lattice boxes.

Vertices are linear indices in C order over ``(L,)*d``. Each edge is stored
once, at the endpoint ``x`` for which the edge is ``x -> x + e_a``; the
canonical edge index is ``x*d + a``. Under free topology the slots for edges
leaving the box hold ``0.0`` and are masked out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import BoundaryError, HorizonError, ParameterError, TopologyError
from .rng import counter_uniform

FORMAT_VERSION = 1
MAX_VERTICES = 200_000_000

Vertex = int | Sequence[int]


@dataclass(frozen=True)
class BoxSpec:
    dimension: int
    side: int
    topology: str = "torus"

    def __post_init__(self):
        if not 1 <= self.dimension <= 5:
            raise ParameterError(f"dimension must be in [1,5], got {self.dimension}")
        if self.topology not in ("torus", "free"):
            raise ParameterError(f"unknown topology {self.topology!r}")
        if self.side < 2 or (self.topology == "torus" and self.side < 3):
            raise ParameterError(f"side {self.side} too small for {self.topology} topology")
        if self.side ** self.dimension > MAX_VERTICES:
            raise ParameterError(f"{self.side}^{self.dimension} vertices exceeds guard {MAX_VERTICES}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dimension

    @property
    def n_vertices(self) -> int:
        return self.side ** self.dimension

    @cached_property
    def strides(self) -> np.ndarray:
        return np.array([self.side ** (self.dimension - 1 - a) for a in range(self.dimension)],
                        dtype=np.int64)

    def vertex(self, x: Vertex) -> int:
        """Normalise a coordinate tuple or linear index to a linear index."""
        if isinstance(x, (int, np.integer)):
            v = int(x)
            if not 0 <= v < self.n_vertices:
                raise ParameterError(f"vertex index {v} outside box")
            return v
        c = tuple(int(t) for t in x)
        if len(c) != self.dimension:
            raise ParameterError(f"expected {self.dimension} coordinates, got {c}")
        if self.topology == "free" and any(not 0 <= t < self.side for t in c):
            raise ParameterError(f"coordinates {c} outside free box")
        return int(np.ravel_multi_index(c, self.shape, mode="wrap"))

    def coords(self, v: int | np.ndarray) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(v, dtype=np.int64), self.shape), axis=-1)

    def center(self) -> int:
        return self.vertex((self.side // 2,) * self.dimension)

    def neighbors(self, idx: np.ndarray) -> np.ndarray:
        """Neighbour table for ``idx``: column ``2a`` is ``+e_a``, ``2a+1`` is ``-e_a``; -1 if absent."""
        idx = np.asarray(idx, dtype=np.int64)
        L, d = self.side, self.dimension
        out = np.empty(idx.shape + (2 * d,), dtype=np.int64)
        for a in range(d):
            s = self.strides[a]
            c = (idx // s) % L
            plus = np.where(c < L - 1, idx + s, idx - (L - 1) * s)
            minus = np.where(c > 0, idx - s, idx + (L - 1) * s)
            if self.topology == "free":
                plus = np.where(c < L - 1, plus, -1)
                minus = np.where(c > 0, minus, -1)
            out[..., 2 * a] = plus
            out[..., 2 * a + 1] = minus
        return out

    def edge_mask(self) -> np.ndarray:
        """(N, d) mask of existing edge slots."""
        if self.topology == "torus":
            return np.ones((self.n_vertices, self.dimension), dtype=bool)
        return self.neighbors(np.arange(self.n_vertices))[:, 0::2] >= 0

    def n_edges(self) -> int:
        if self.topology == "torus":
            return self.dimension * self.n_vertices
        return self.dimension * (self.side - 1) * self.side ** (self.dimension - 1)

    def edge_slot(self, u: Vertex, v: Vertex) -> tuple[int, int]:
        """Storage slot ``(vertex, axis)`` of the edge between adjacent ``u`` and ``v``."""
        u, v = self.vertex(u), self.vertex(v)
        nb = self.neighbors(np.array([u, v]))
        for a in range(self.dimension):
            if nb[0, 2 * a] == v:
                return u, a
            if nb[1, 2 * a] == u:
                return v, a
        raise ParameterError(f"vertices {u} and {v} are not adjacent")

    def boundary_distance(self, v: int) -> int:
        c = self.coords(v)
        return int(min(min(t, self.side - 1 - t) for t in c))

    def horizon(self, origin: int, closed: bool = False) -> int:
        """Largest t for which a time-t statistic from ``origin`` equals its Z^d value.

        Open statistics (the whole law of X_t) need t < L/2 on a torus and
        t <= distance to the boundary on a free box; closed ones (returns,
        bridges) only see wrap-around at t >= L, or boundary rows at t >= 2D.
        """
        if self.topology == "torus":
            return self.side - 1 if closed else (self.side - 1) // 2
        dist = self.boundary_distance(origin)
        return max(2 * dist - 1, 0) if closed else dist

    def check_horizon(self, origin: int, t: int, closed: bool = False,
                      override: bool = False) -> None:
        limit = self.horizon(origin, closed)
        if t > limit and not override:
            kind = "closed" if closed else "open"
            raise HorizonError(f"t={t} exceeds {kind} horizon {limit} of {self}; "
                               "pass override_horizon to proceed")

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "side": self.side, "topology": self.topology}


@dataclass(frozen=True)
class LawSpec:
    """i.i.d. conductance law.

    ``uniform01``: Uniform(0,1]; ``powerTail``: P(w <= s) = s**gamma;
    ``twoPoint``: ``strong`` with probability p, else ``weak``.
    """

    kind: str
    gamma: float = 1.0
    p: float = 0.5
    weak: float = 0.1
    strong: float = 1.0

    def __post_init__(self):
        if self.kind == "powerTail" and not self.gamma > 0:
            raise ParameterError(f"powerTail needs gamma > 0, got {self.gamma}")
        if self.kind == "twoPoint":
            if not 0.0 <= self.p <= 1.0:
                raise ParameterError(f"twoPoint needs p in [0,1], got {self.p}")
            if not 0.0 < self.weak <= 1.0 or not 0.0 < self.strong <= 1.0:
                raise ParameterError("twoPoint values must lie in (0,1]")
        elif self.kind not in ("uniform01", "powerTail"):
            raise ParameterError(f"unknown law kind {self.kind!r}")

    def transform(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "uniform01":
            return u
        if self.kind == "powerTail":
            return u ** (1.0 / self.gamma)
        return np.where(u <= self.p, self.strong, self.weak)

    def to_dict(self) -> dict:
        if self.kind == "uniform01":
            return {"kind": "uniform01"}
        if self.kind == "powerTail":
            return {"kind": "powerTail", "gamma": self.gamma}
        return {"kind": "twoPoint", "p": self.p, "weak": self.weak, "strong": self.strong}

    @classmethod
    def from_dict(cls, data: dict) -> "LawSpec":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ParameterError(f"bad law spec {data}: {exc}") from None


@dataclass(frozen=True)
class TrapSpec:
    edge: tuple[Vertex, Vertex]
    scale: int
    access_path: tuple[Vertex, ...] | None = None

    def to_dict(self, box: BoxSpec) -> dict:
        out: dict[str, Any] = {"edge": [box.vertex(self.edge[0]), box.vertex(self.edge[1])],
                               "scale": self.scale}
        if self.access_path is not None:
            out["access_path"] = [box.vertex(v) for v in self.access_path]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrapSpec":
        path = data.get("access_path")
        return cls(edge=tuple(data["edge"]), scale=int(data["scale"]),
                   access_path=None if path is None else tuple(path))


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable conductance configuration on a box."""

    box: BoxSpec
    conductances: np.ndarray = field(repr=False)
    provenance: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        c = np.array(self.conductances, dtype=np.float64)
        if c.shape != (self.box.n_vertices, self.box.dimension):
            raise ParameterError(f"conductance array shape {c.shape} does not match box")
        c[~self.box.edge_mask()] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "conductances", c)

    def validate(self) -> "Environment":
        vals = self.conductances[self.box.edge_mask()]
        bad = ~(np.isfinite(vals) & (vals > 0.0) & (vals <= 1.0))
        if bad.any():
            raise ParameterError(f"{int(bad.sum())} conductances outside (0,1]")
        return self

    def value(self, u: Vertex, v: Vertex) -> float:
        x, a = self.box.edge_slot(u, v)
        return float(self.conductances[x, a])

    def edges(self) -> Iterator[tuple[int, int, float]]:
        mask = self.box.edge_mask()
        for x, a in zip(*np.nonzero(mask)):
            yield int(x), int(a), float(self.conductances[x, a])

    def same_as(self, other: "Environment") -> bool:
        return self.box == other.box and np.array_equal(self.conductances, other.conductances)

    def with_values(self, updates: dict[tuple[int, int], float], provenance: dict) -> "Environment":
        c = self.conductances.copy()
        for (x, a), w in updates.items():
            c[x, a] = w
        return Environment(self.box, c, provenance, self.seed)

    # -- serialization -----------------------------------------------------
    def to_dict(self, explicit: bool = True) -> dict:
        out = {"format_version": FORMAT_VERSION, **self.box.to_dict(),
               "seed": self.seed, "provenance": self.provenance}
        if explicit:
            out["edges"] = [[x, a, w] for x, a, w in self.edges()]
        return out

    def write(self, path: str | Path, explicit: bool = True) -> None:
        data = self.to_dict(explicit=False)
        text = json.dumps(data, indent=1)
        if explicit:
            rows = ",\n  ".join(f"[{x}, {a}, {w:.17g}]" for x, a, w in self.edges())
            text = text[:-2] + f',\n "edges": [\n  {rows}\n ]\n}}'
        Path(path).write_text(text + "\n")

    @classmethod
    def from_dict(cls, data: dict, strict: bool = True) -> "Environment":
        box = BoxSpec(int(data["dimension"]), int(data["side"]), data.get("topology", "torus"))
        seed = int(data.get("seed", 0))
        prov = data.get("provenance") or {}
        edges = data.get("edges")
        if edges is None:
            env = replay(box, prov, seed)
        else:
            c = np.zeros((box.n_vertices, box.dimension))
            seen = np.zeros_like(c, dtype=bool)
            for x, a, w in edges:
                if seen[int(x), int(a)] and strict:
                    raise ParameterError(f"edge ({x},{a}) listed twice")
                c[int(x), int(a)] = float(w)
                seen[int(x), int(a)] = True
            if strict and not np.array_equal(seen, box.edge_mask()):
                raise ParameterError("explicit edge list does not cover every edge exactly once")
            env = cls(box, c, prov, seed)
        return env.validate() if strict else env

    @classmethod
    def read(cls, path: str | Path, strict: bool = True) -> "Environment":
        return cls.from_dict(json.loads(Path(path).read_text()), strict=strict)


def constant(box: BoxSpec, value: float = 1.0) -> Environment:
    """Every edge carries ``value``."""
    c = np.full((box.n_vertices, box.dimension), float(value))
    return Environment(box, c, {"constant": value}, 0).validate()


def sample_iid(law: LawSpec, box: BoxSpec, seed: int) -> Environment:
    counters = np.arange(box.n_vertices * box.dimension, dtype=np.uint64)
    u = counter_uniform(seed, counters).reshape(box.n_vertices, box.dimension)
    return Environment(box, law.transform(u), {"law": law.to_dict()}, int(seed)).validate()


def _check_access_path(box: BoxSpec, path: list[int], trap: tuple[int, int]) -> None:
    if len(set(path)) != len(path):
        raise ParameterError("access path is not self-avoiding")
    if set(path) & set(trap):
        raise ParameterError("access path touches the trap edge")
    nb = box.neighbors(np.array(path))
    for p, q, row in zip(path, path[1:], nb):
        if q not in row:
            raise ParameterError(f"access path step {p}->{q} is not a lattice edge")
    if not set(box.neighbors(np.array(trap)).ravel()) & {path[-1]}:
        raise ParameterError("access path must end next to the trap")


def plant_trap(env: Environment, trap: TrapSpec) -> Environment:
    """Plant a trap of scale K: trap edge 1, other edges at its endpoints 1/K."""
    box = env.box
    if trap.scale < 2:
        raise ParameterError(f"trap scale must be >= 2, got {trap.scale}")
    u, v = box.vertex(trap.edge[0]), box.vertex(trap.edge[1])
    trap_slot = box.edge_slot(u, v)
    nb = box.neighbors(np.array([u, v]))
    if (nb < 0).any():
        raise BoundaryError("trap endpoint lacks full degree at the free boundary")
    updates: dict[tuple[int, int], float] = {}
    for x, row in zip((u, v), nb):
        for z in row:
            slot = box.edge_slot(x, int(z))
            if slot != trap_slot:
                updates[slot] = 1.0 / trap.scale
    updates[trap_slot] = 1.0
    if trap.access_path is not None:
        path = [box.vertex(p) for p in trap.access_path]
        _check_access_path(box, path, (u, v))
        for p, q in zip(path, path[1:]):
            updates[box.edge_slot(p, q)] = 1.0
    base = env.provenance.get("planted", {}).get("base", env.provenance)
    traps = list(env.provenance.get("planted", {}).get("traps", []))
    desc = trap.to_dict(box)
    if desc not in traps:
        traps.append(desc)
    return env.with_values(updates, {"planted": {"base": base, "traps": traps}})


def shift(env: Environment, x: Vertex) -> Environment:
    """Environment seen from ``x``: ``(tau_x w)_{y,z} = w_{y+x,z+x}``."""
    box = env.box
    if box.topology != "torus":
        raise TopologyError("shift is exact only on the torus")
    c = box.coords(box.vertex(x))
    grid = env.conductances.reshape(box.shape + (box.dimension,))
    rolled = np.roll(grid, shift=tuple(-int(t) for t in c), axis=tuple(range(box.dimension)))
    prov = {"shifted": {"base": env.provenance, "by": [int(t) for t in c]}}
    return Environment(box, rolled.reshape(env.conductances.shape), prov, env.seed)


def replay(box: BoxSpec, provenance: dict, seed: int) -> Environment:
    """Rebuild an environment from its provenance descriptor."""
    if "law" in provenance:
        return sample_iid(LawSpec.from_dict(provenance["law"]), box, seed)
    if "constant" in provenance:
        return constant(box, provenance["constant"])
    if "planted" in provenance:
        env = replay(box, provenance["planted"]["base"], seed)
        for t in provenance["planted"]["traps"]:
            env = plant_trap(env, TrapSpec.from_dict(t))
        return env
    if "shifted" in provenance:
        return shift(replay(box, provenance["shifted"]["base"], seed), provenance["shifted"]["by"])
    raise ParameterError(f"cannot replay provenance {provenance}")
