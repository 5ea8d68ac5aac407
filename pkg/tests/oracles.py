"""Independent reference computations for the tests.

Everything here works on dense whole-box matrices or by brute enumeration and
shares no code paths with the library beyond reading conductances.
"""

from __future__ import annotations

import itertools

import numpy as np

from rcmlab.env import BoxSpec, Environment, constant


def dense_kernel(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """(P, pi) assembled edge by edge."""
    box = env.box
    n = box.n_vertices
    W = np.zeros((n, n))
    for x, a, w in env.edges():
        c = box.coords(x).copy()
        c[a] = (c[a] + 1) % box.side
        y = int(np.ravel_multi_index(tuple(c), box.shape))
        W[x, y] += w
        W[y, x] += w
    pi = W.sum(axis=1)
    return W / pi[:, None], pi


def coarse_matrix(P: np.ndarray, in_giant: np.ndarray) -> np.ndarray:
    """P-hat on the giant via the Schur complement P_GG + P_GH (I - P_HH)^-1 P_HG."""
    g, h = np.flatnonzero(in_giant), np.flatnonzero(~in_giant)
    out = P[np.ix_(g, g)].copy()
    if len(h):
        out += P[np.ix_(g, h)] @ np.linalg.solve(np.eye(len(h)) - P[np.ix_(h, h)], P[np.ix_(h, g)])
    return out


def expected_sojourn(P: np.ndarray, in_giant: np.ndarray) -> np.ndarray:
    """E^x T_1 for giant x (ordered like np.flatnonzero(in_giant))."""
    g, h = np.flatnonzero(in_giant), np.flatnonzero(~in_giant)
    exit_t = np.linalg.solve(np.eye(len(h)) - P[np.ix_(h, h)], np.ones(len(h))) if len(h) else np.zeros(0)
    return 1.0 + P[np.ix_(g, h)] @ exit_t


def esp_enumerate(t, r):
    return sum(int(np.prod(c)) for c in itertools.combinations(t, r))


def g_enumerate(t, r, theta):
    idx = range(len(t))
    return any(sum(t[i] for i in idx if i not in set(c)) <= theta for c in itertools.combinations(idx, r))


def cycle_return(length: int, steps: int) -> float:
    """Fraction of +-1 step sequences that return to 0 modulo ``length``."""
    seqs = list(itertools.product((1, -1), repeat=steps))
    return sum(1 for s in seqs if sum(s) % length == 0) / len(seqs)


def weak_vertex_env(beta: float, side: int = 8) -> tuple[Environment, int]:
    """All-one d=2 torus except the four edges at the centre vertex, which carry beta."""
    box = BoxSpec(2, side)
    env = constant(box)
    v = box.vertex((side // 2, side // 2))
    nb = box.neighbors(np.array([v]))[0]
    updates = {}
    for y in nb:
        updates[box.edge_slot(v, int(y))] = beta
    return env.with_values(updates, {"weak_vertex": beta}), v
