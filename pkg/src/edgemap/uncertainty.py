"""Pose-estimation uncertainty of a map graph.

u(G) = -log det(L_hat(G) kron Pi), evaluated through the factorisation
6 * logdet(L_hat) + (|V| - 1) * logdet(Pi) so that nothing is ever formed at
Kronecker size.  Disconnected maps (and maps with fewer than two frames) have
zero spanning trees and therefore infinite uncertainty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mapgraph import MapGraph, MapGraphError, cross_overlap, weights_connected

POSE_DOF = 6
INF = math.inf


@dataclass(frozen=True)
class PoseInfoMatrix:
    pi: np.ndarray = field(default_factory=lambda: np.eye(POSE_DOF))
    log_det_pi: float = field(init=False)

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        if pi.shape != (POSE_DOF, POSE_DOF):
            raise ValueError(f"information matrix must be 6x6, got {pi.shape}")
        if np.max(np.abs(pi - pi.T)) > 1e-12:
            raise ValueError("information matrix must be symmetric")
        try:
            chol = np.linalg.cholesky(pi)
        except np.linalg.LinAlgError as exc:
            raise ValueError("information matrix must be positive definite") from exc
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        if log_det < -1e-12:
            raise ValueError("det(Pi) must be >= 1 for the monotonicity guarantee")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "log_det_pi", log_det)


IDENTITY_PI = PoseInfoMatrix()


def spd_logdet(m: np.ndarray) -> float:
    """log det of a symmetric positive-definite matrix; +inf-safe caller contract:
    raises ``np.linalg.LinAlgError`` when the factorisation fails."""
    chol = np.linalg.cholesky(m)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def _laplacian_from_weights(w: np.ndarray) -> np.ndarray:
    return np.diag(w.sum(axis=1)) - w


def uncertainty_from_weights(w: np.ndarray, log_det_pi: float = 0.0) -> float:
    """Uncertainty of the graph with symmetric weight matrix ``w``.

    The first row/column is the one deleted from the Laplacian.
    """
    n = w.shape[0]
    if n < 2 or not weights_connected(w):
        return INF
    lap = _laplacian_from_weights(w)[1:, 1:]
    try:
        ld = spd_logdet(lap)
    except np.linalg.LinAlgError:
        return INF
    return -(POSE_DOF * ld + (n - 1) * log_det_pi)


def bridged_uncertainty(w: np.ndarray, log_det_pi: float = 0.0, bridge: float = 1e-6):
    """(rank, value): rank 0 with the exact uncertainty for a connected graph,
    rank 1 with the uncertainty of the graph after adding ``bridge`` to every
    off-diagonal weight otherwise.  Orders disconnected graphs by how close
    they are to being connected."""
    val = uncertainty_from_weights(w, log_det_pi)
    if math.isfinite(val):
        return 0, val
    n = w.shape[0]
    if n > 1:
        val = uncertainty_from_weights(w + bridge * (1 - np.eye(n)), log_det_pi)
    return 1, val


def batched_uncertainty(ws: np.ndarray, log_det_pi: float = 0.0) -> np.ndarray:
    """uncertainty_from_weights over a (B, n, n) stack of weight matrices.

    One stacked factorisation handles the common all-connected case; if any
    member fails, every member is evaluated on its own.
    """
    ws = np.asarray(ws, dtype=float)
    b, n = ws.shape[0], ws.shape[-1]
    if b == 0:
        return np.zeros(0)
    if n < 2:
        return np.full(b, INF)
    lap = -ws[:, 1:, 1:].copy()
    idx = np.arange(n - 1)
    lap[:, idx, idx] += ws.sum(axis=2)[:, 1:]
    try:
        chol = np.linalg.cholesky(lap)
    except np.linalg.LinAlgError:
        return np.array([uncertainty_from_weights(w, log_det_pi) for w in ws])
    ld = 2.0 * np.log(chol[:, idx, idx]).sum(axis=1)
    return -(POSE_DOF * ld + (n - 1) * log_det_pi)


def uncertainty(g: MapGraph, pi: PoseInfoMatrix = IDENTITY_PI) -> float:
    if len(g) < 2:
        return INF
    return uncertainty_from_weights(g.weight_matrix(), pi.log_det_pi)


def kronecker_uncertainty(g: MapGraph, pi: PoseInfoMatrix = IDENTITY_PI) -> float:
    """Direct -log det(L_hat kron Pi); only for small graphs and cross-checks."""
    if len(g) < 2 or not g.is_connected():
        return INF
    big = np.kron(g.reduced_laplacian(), pi.pi)
    sign, ld = np.linalg.slogdet(big)
    if sign <= 0:
        return INF
    return -float(ld)


def spanning_tree_weight(g: MapGraph, max_nodes: int = 9) -> int:
    """Sum over all spanning trees of the product of their edge weights.

    Exhaustive enumeration, meant as an independent check of the
    determinant route on small graphs.
    """
    n = len(g)
    if n > max_nodes:
        raise MapGraphError(f"enumeration limited to {max_nodes} nodes, got {n}")
    if n <= 1:
        return 1 if n == 1 else 0
    index = {fid: i for i, fid in enumerate(g.node_ids)}
    edges = [(index[a], index[b], w) for (a, b), w in sorted(g.edges.items())]
    need = n - 1
    total = 0

    def find(parent, x):
        while parent[x] != x:
            x = parent[x]
        return x

    def rec(start, parent, used, prod):
        nonlocal total
        if used == need:
            total += prod
            return
        if len(edges) - start < need - used:
            return
        for k in range(start, len(edges)):
            if len(edges) - k < need - used:
                break
            a, b, w = edges[k]
            ra, rb = find(parent, a), find(parent, b)
            if ra == rb:
                continue
            child = list(parent)
            child[ra] = rb
            rec(k + 1, child, used + 1, prod * w)

    rec(0, list(range(n)), 0, 1)
    return total


def avg_uncertainty(g: MapGraph, next_frames, pi: PoseInfoMatrix = IDENTITY_PI) -> float:
    """Mean of u(G + f) over the given frames; +inf if any term is infinite."""
    next_frames = list(next_frames)
    if not next_frames:
        raise ValueError("avg_uncertainty needs at least one frame")
    for f in next_frames:
        if f.id in g.frames:
            raise MapGraphError(f"frame {f.id} already in map")
    ids = g.node_ids
    n = len(ids)
    if n == 0:
        return INF
    links = cross_overlap(next_frames, [g.frames[i] for i in ids])
    if not links.any(axis=1).all():
        return INF
    base = g.weight_matrix(ids)
    if weights_connected(base):
        # with f as the deleted node the reduced Laplacian is L(G) + diag(link)
        lap = np.diag(base.sum(axis=1)) - base
        stack = np.repeat(lap[None], len(next_frames), axis=0)
        idx = np.arange(n)
        stack[:, idx, idx] += links
        try:
            chol = np.linalg.cholesky(stack)
        except np.linalg.LinAlgError:
            return INF
        ld = 2.0 * np.log(chol[:, idx, idx]).sum(axis=1)
        return float(np.mean(-(POSE_DOF * ld + n * pi.log_det_pi)))
    w = np.zeros((n + 1, n + 1))
    w[1:, 1:] = base
    total = 0.0
    for link in links:
        w[0, 1:] = link
        w[1:, 0] = link
        u = uncertainty_from_weights(w, pi.log_det_pi)
        if u == INF:
            return INF
        total += u
    return total / len(next_frames)


def upload_budget(rate: float, alpha: float, d_req: float) -> int:
    if alpha <= 0 or d_req <= 0:
        raise ValueError("alpha and d_req must be positive")
    if rate < 0:
        raise ValueError("rate must be non-negative")
    return int(math.floor(d_req * rate / alpha))


def optimal_cardinalities(rate, alpha, d_req, v_max, map_size=None) -> tuple[int, int]:
    """Upload and eviction counts of an optimal action.

    Without ``map_size`` the eviction count is ``max(0, v_max - upload)``.
    With the current map size it is the fill-to-cap count
    ``max(0, map_size + upload - v_max)``: zero while the map is still growing,
    otherwise whatever keeps exactly ``v_max`` frames.
    """
    if v_max < 1:
        raise ValueError("v_max must be at least 1")
    upload = upload_budget(rate, alpha, d_req)
    if map_size is None:
        return upload, max(0, v_max - upload)
    return upload, max(0, map_size + upload - v_max)
