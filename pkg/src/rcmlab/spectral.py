"""Substochastic hole operator Q, its weighted inner product and norm bounds.

All norms live in ``l^2(pi)`` and are computed on the symmetric matrix
``S = D^{1/2} Q D^{-1/2}`` with ``D = diag(pi)``, which has the same spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cluster import ClusterDecomposition
from .coarse import sojourn_pmf
from .env import Vertex
from .errors import DomainError, EmptyHoleError, NumericalError

DENSE_EIG_LIMIT = 2000


@dataclass(frozen=True)
class HoleSpectralData:
    x: int
    y: int
    vertices: np.ndarray  # G_xy, sorted
    Q: sp.csr_matrix
    weights: np.ndarray
    hX: np.ndarray
    hY: np.ndarray
    g_size: int  # |G_x ∩ G_y| including giant singletons

    @property
    def size(self) -> int:
        return len(self.vertices)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(self.weights * f, g))

    def symmetric(self) -> sp.csr_matrix:
        s = np.sqrt(self.weights)
        return (sp.diags(s) @ self.Q @ sp.diags(1.0 / s)).tocsr()

    def self_adjoint_defect(self) -> float:
        F = sp.diags(self.weights) @ self.Q
        return float(abs(F - F.T).max()) if F.nnz else 0.0


def _operator(dec: ClusterDecomposition, verts: np.ndarray, x: int, y: int, g_size: int) -> HoleSpectralData:
    k = dec.kernel
    nbr, prob = k.nbr[verts], k.prob[verts]
    rows = np.repeat(np.arange(len(verts)), nbr.shape[1])
    tgt, p = nbr.ravel(), prob.ravel()
    pos = np.minimum(np.searchsorted(verts, np.maximum(tgt, 0)), len(verts) - 1)
    inside = (tgt >= 0) & (verts[pos] == tgt)
    Q = sp.csr_matrix((p[inside], (rows[inside], pos[inside])), shape=(len(verts),) * 2)
    hx = np.where(tgt == x, p, 0.0).reshape(nbr.shape).sum(axis=1)
    hy = np.where(tgt == y, p, 0.0).reshape(nbr.shape).sum(axis=1)
    w = k.pi[verts].copy()
    for arr in (w, hx, hy, verts):
        arr.setflags(write=False)
    return HoleSpectralData(x, y, verts, Q, w, hx, hy, g_size)


def build_hole_operator(dec: ClusterDecomposition, x: Vertex, y: Vertex) -> HoleSpectralData:
    box = dec.box
    x, y = box.vertex(x), box.vertex(y)
    for v in (x, y):
        if not dec.in_giant[v]:
            raise DomainError(f"vertex {v} is not in the giant cluster")
    common = dec.neighborhood(x) & dec.neighborhood(y)
    verts = np.array(sorted(v for v in common if not dec.in_giant[v]), dtype=np.int64)
    if len(verts) == 0:
        raise EmptyHoleError(f"no hole is adjacent to both {x} and {y}")
    return _operator(dec, verts, x, y, len(common))


def hole_operator(dec: ClusterDecomposition, h: int, x: Vertex | None = None,
                  y: Vertex | None = None) -> HoleSpectralData:
    """Operator on the single hole ``h``; x, y default to its first boundary vertex."""
    b = dec.hole_boundaries[h]
    x = int(b[0]) if x is None else dec.box.vertex(x)
    y = x if y is None else dec.box.vertex(y)
    verts = np.array(dec.holes[h], dtype=np.int64)
    return _operator(dec, verts, x, y, len(dec.neighborhood(x) & dec.neighborhood(y)))


def _powers(data: HoleSpectralData, v: np.ndarray, n: int) -> np.ndarray:
    for _ in range(n):
        v = data.Q @ v
    return v


def sojourn_inner(data: HoleSpectralData, n: int) -> float:
    """``<h_x, Q^{n-2} h_y>``."""
    if n < 2:
        raise DomainError("n must be >= 2")
    return data.inner(data.hX, _powers(data, data.hY, n - 2))


def sojourn_inner_sequence(data: HoleSpectralData, n_max: int) -> np.ndarray:
    """``<h_x, Q^{n-2} h_y>`` for n = 2..n_max (index n-2)."""
    out = np.empty(max(n_max - 1, 0))
    v = np.asarray(data.hY, dtype=float)
    wx = data.weights * data.hX
    for i in range(len(out)):
        out[i] = wx @ v
        v = data.Q @ v
    return out


def smoothness_gap(data: HoleSpectralData, n: int) -> float:
    """``<h_x, (1 - Q^2) Q^{n-2} h_y>``."""
    if n < 2:
        raise DomainError("n must be >= 2")
    v = _powers(data, data.hY, n - 2)
    return data.inner(data.hX, v - data.Q @ (data.Q @ v))


def spectrum(data: HoleSpectralData) -> tuple[np.ndarray, bool]:
    """Eigenvalues of the symmetrization; ``(extremes, False)`` for large holes."""
    S = data.symmetric()
    if data.size <= DENSE_EIG_LIMIT:
        return np.linalg.eigvalsh(S.toarray()), True
    try:
        hi = spla.eigsh(S, k=1, which="LA", tol=1e-12, maxiter=100_000, return_eigenvectors=False)
        lo = spla.eigsh(S, k=1, which="SA", tol=1e-12, maxiter=100_000, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NumericalError("Lanczos did not converge on the hole operator", math.nan) from exc
    return np.concatenate([lo, hi]), False


def operator_norm(data: HoleSpectralData) -> float:
    lam, _ = spectrum(data)
    return float(np.abs(lam).max()) if len(lam) else 0.0


def norm_bound_check(data: HoleSpectralData, m_max: int, tol: float = 1e-10) -> dict:
    """Check ``||(1-Q^2)Q^{2m}|| <= 1/(m+1)`` and ``||(1-Q^2)^2 Q^{2m}|| <= 4/(m+2)^2``.

    For holes handled by extremal eigenvalues only, the norms are replaced by
    the supremum over ``lambda^2 in [0, ||Q||^2]``, an upper bound.
    """
    lam, full = spectrum(data)
    s = lam**2
    rho2 = float(s.max()) if len(s) else 0.0
    rows = []
    for m in range(m_max + 1):
        if full:
            a = float(np.max((1 - s) * s**m)) if len(s) else 0.0
            b = float(np.max((1 - s) ** 2 * s**m)) if len(s) else 0.0
        else:
            grid = np.concatenate([[0.0, rho2], np.clip([m / (m + 1), m / (m + 2)], 0, rho2)])
            a = float(np.max((1 - grid) * grid**m))
            b = float(np.max((1 - grid) ** 2 * grid**m))
        rows.append({"m": m, "first": a, "first_bound": 1 / (m + 1),
                     "second": b, "second_bound": 4 / (m + 2) ** 2})
    viol1 = [r["m"] for r in rows if r["first"] > r["first_bound"] + tol]
    viol2 = [r["m"] for r in rows if r["second"] > r["second_bound"] + tol]
    return {"norm": math.sqrt(rho2), "exact_spectrum": full, "rows": rows,
            "violations_first": viol1, "violations_second": viol2,
            "passed": not viol1 and not viol2}


def structural_checks(data: HoleSpectralData, max_power: int = 8) -> dict:
    """Self-adjointness, ``||Q^n|| = ||Q||^n``, positivity of 1 - Q^2, row-sum deficiency."""
    lam, full = spectrum(data)
    norm = float(np.abs(lam).max())
    out = {"size": data.size, "norm": norm, "self_adjoint_defect": data.self_adjoint_defect(),
           "min_eig_one_minus_q2": 1.0 - norm**2}
    if full:
        S = data.symmetric().toarray()
        Sn = np.eye(data.size)
        worst = 0.0
        for n in range(1, max_power + 1):
            Sn = Sn @ S
            worst = max(worst, abs(np.linalg.norm(Sn, 2) - norm**n))
        out["power_norm_defect"] = worst
    r = np.ones(data.size)
    for _ in range(data.size):
        r = data.Q @ r
    out["max_row_sum_power"] = float(r.max())
    out["passed"] = (out["self_adjoint_defect"] <= 1e-14 and norm <= 1 - 1e-9
                     and out["min_eig_one_minus_q2"] >= 1e-9 and out["max_row_sum_power"] < 1.0
                     and out.get("power_norm_defect", 0.0) <= 1e-10)
    return out


def identity_residual(dec: ClusterDecomposition, data: HoleSpectralData, n_max: int) -> float:
    """max over n <= n_max of |<h_x,Q^{n-2}h_y> - pi(x) * confined path sum|."""
    from .coarse import excursion_path_sum

    oracle = excursion_path_sum(dec, data.x, data.y, n_max, first_step=frozenset(data.vertices.tolist()))
    inner = sojourn_inner_sequence(data, n_max)
    return float(np.abs(inner - dec.kernel.pi[data.x] * oracle[1:]).max()) if n_max >= 2 else 0.0


def cross_hole_discrepancy(dec: ClusterDecomposition, x: Vertex, y: Vertex, n_max: int) -> float:
    """max_n |full pmf(n) - restricted pmf(n)| for n >= 2 (excursions outside G_xy ending at y)."""
    x, y = dec.box.vertex(x), dec.box.vertex(y)
    full = sojourn_pmf(dec, x, y, n_max).pmf[1:]
    try:
        data = build_hole_operator(dec, x, y)
    except EmptyHoleError:
        return float(np.abs(full).max()) if len(full) else 0.0
    restricted = sojourn_inner_sequence(data, n_max) / dec.kernel.pi[x]
    return float(np.abs(full - restricted).max()) if len(full) else 0.0


def pmf_bound_check(dec: ClusterDecomposition, x: Vertex, y: Vertex, n_range, k_range) -> dict:
    """Measured sups of ``n^2 pmf(n)/|G|`` and ``n^3 |pmf(n)-pmf(n+2k)|/(k|G|)``, G = G_x ∩ G_y."""
    x, y = dec.box.vertex(x), dec.box.vertex(y)
    ns = sorted(int(n) for n in n_range)
    ks = sorted(int(k) for k in k_range)
    if not ns or ns[0] < 2 or not ks or ks[0] < 1:
        raise DomainError("n_range must be >= 2 and k_range >= 1")
    g = len(dec.neighborhood(x) & dec.neighborhood(y))
    if g == 0:
        raise EmptyHoleError(f"G_x and G_y are disjoint for {x}, {y}")
    law = sojourn_pmf(dec, x, y, ns[-1] + 2 * ks[-1])
    first = max(n**2 * law.at(n) / g for n in ns)
    second, second_k1 = 0.0, 0.0
    for n in ns:
        for k in ks:
            v = n**3 * abs(law.at(n) - law.at(n + 2 * k)) / (k * g)
            second = max(second, v)
            if k == 1:
                second_k1 = max(second_k1, v)
    out = {"x": x, "y": y, "g_size": g, "first": first, "second": second, "second_k1": second_k1}
    try:
        data = build_hole_operator(dec, x, y)
        gaps = [abs(smoothness_gap(data, n)) for n in ns]
        out["second_k1_spectral"] = max(n**3 * gp / (dec.kernel.pi[x] * g) for n, gp in zip(ns, gaps))
    except EmptyHoleError:
        out["second_k1_spectral"] = 0.0
    return out
