"""Weighted co-visibility graph over camera frames.

Nodes are frames, an edge joins two frames that observe at least one common
feature point and its weight is the size of that common set.  Graphs are
immutable; every mutation returns a new graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np


class MapGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    id: int
    points: frozenset
    slot_captured: int = 0

    def __post_init__(self):
        if self.id < 0:
            raise MapGraphError(f"frame id must be non-negative, got {self.id}")
        if not isinstance(self.points, frozenset):
            object.__setattr__(self, "points", frozenset(self.points))
        if not self.points:
            raise MapGraphError(f"frame {self.id} has no feature points")

    @cached_property
    def point_array(self) -> np.ndarray:
        return np.array(sorted(self.points))


@dataclass(frozen=True)
class MapDelta:
    added: tuple = ()
    removed: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "added", tuple(self.added))
        object.__setattr__(self, "removed", frozenset(self.removed))


def edge_weight(f: Frame, f2: Frame) -> int:
    return len(f.points & f2.points)


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class MapGraph:
    """Immutable map graph.  Build with :meth:`from_frames` or :meth:`empty`."""

    frames: Mapping[int, Frame] = field(default_factory=dict)
    edges: Mapping[tuple, int] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "MapGraph":
        return cls({}, {})

    @classmethod
    def from_frames(cls, frames: Iterable[Frame]) -> "MapGraph":
        g = cls.empty()
        for f in frames:
            g = g.insert_frame(f)
        return g

    def __len__(self):
        return len(self.frames)

    def __contains__(self, frame_id):
        return frame_id in self.frames

    @property
    def node_ids(self) -> tuple:
        return tuple(sorted(self.frames))

    def neighbors(self, frame_id: int) -> dict:
        out = {}
        for (a, b), w in self.edges.items():
            if a == frame_id:
                out[b] = w
            elif b == frame_id:
                out[a] = w
        return out

    def insert_frame(self, f: Frame) -> "MapGraph":
        if f.id in self.frames:
            raise MapGraphError(f"duplicate frame id {f.id}")
        frames = dict(self.frames)
        edges = dict(self.edges)
        for other in self.frames.values():
            w = edge_weight(f, other)
            if w > 0:
                edges[_pair(f.id, other.id)] = w
        frames[f.id] = f
        return MapGraph(frames, edges)

    def apply_delta(self, delta: MapDelta) -> "MapGraph":
        added_ids = {f.id for f in delta.added}
        if len(added_ids) != len(delta.added):
            raise MapGraphError("duplicate frame ids in upload set")
        dup = added_ids & set(self.frames)
        if dup:
            raise MapGraphError(f"uploaded frames already in map: {sorted(dup)}")
        unknown = delta.removed - set(self.frames) - added_ids
        if unknown:
            raise MapGraphError(f"cannot evict unknown frames: {sorted(unknown)}")

        keep = {i: f for i, f in self.frames.items() if i not in delta.removed}
        edges = {
            (a, b): w for (a, b), w in self.edges.items() if a in keep and b in keep
        }
        for f in delta.added:
            if f.id in delta.removed:
                continue
            for other in keep.values():
                w = edge_weight(f, other)
                if w > 0:
                    edges[_pair(f.id, other.id)] = w
            keep[f.id] = f
        return MapGraph(keep, edges)

    def weight_matrix(self, order=None) -> np.ndarray:
        order = self.node_ids if order is None else tuple(order)
        index = {fid: i for i, fid in enumerate(order)}
        w = np.zeros((len(order), len(order)))
        for (a, b), wt in self.edges.items():
            i, j = index[a], index[b]
            w[i, j] = w[j, i] = wt
        return w

    def laplacian(self) -> np.ndarray:
        w = self.weight_matrix()
        return np.diag(w.sum(axis=1)) - w

    def reduced_laplacian(self, drop: int | None = None) -> np.ndarray:
        """Laplacian with one node's row and column removed.

        ``drop`` defaults to the smallest frame id.
        """
        if len(self.frames) < 2:
            raise MapGraphError("reduced Laplacian needs at least two nodes")
        ids = self.node_ids
        drop = ids[0] if drop is None else drop
        if drop not in self.frames:
            raise MapGraphError(f"frame {drop} not in graph")
        k = ids.index(drop)
        lap = self.laplacian()
        return np.delete(np.delete(lap, k, axis=0), k, axis=1)

    def is_connected(self) -> bool:
        if not self.frames:
            raise MapGraphError("connectivity of an empty graph is undefined")
        return weights_connected(self.weight_matrix())

    def rebuilt(self) -> "MapGraph":
        """Same node set with every edge recomputed from the point sets."""
        return MapGraph.from_frames(self.frames[i] for i in self.node_ids)


def weights_connected(w: np.ndarray) -> bool:
    n = w.shape[0]
    if n == 0:
        return False
    adj = w > 0
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    frontier = seen.copy()
    while frontier.any():
        reach = adj[frontier].any(axis=0) & ~seen
        seen |= reach
        frontier = reach
    return bool(seen.all())


def _stack_points(frames):
    arrays = [f.point_array for f in frames]
    rows = np.repeat(np.arange(len(frames)), [len(a) for a in arrays])
    return rows, np.concatenate(arrays)


def cross_overlap(frames_a, frames_b) -> np.ndarray:
    """Shared-point counts between every frame of ``frames_a`` and of ``frames_b``."""
    frames_a, frames_b = list(frames_a), list(frames_b)
    if not frames_a or not frames_b:
        return np.zeros((len(frames_a), len(frames_b)))
    rows_a, pts_a = _stack_points(frames_a)
    universe, cols_a = np.unique(pts_a, return_inverse=True)
    inc_a = np.zeros((len(frames_a), len(universe)))
    inc_a[rows_a, cols_a] = 1.0
    # points of b outside a's union can never be shared
    rows_b, pts_b = _stack_points(frames_b)
    cols_b = np.minimum(np.searchsorted(universe, pts_b), len(universe) - 1)
    hit = universe[cols_b] == pts_b
    inc_b = np.zeros((len(frames_b), len(universe)))
    inc_b[rows_b[hit], cols_b[hit]] = 1.0
    return inc_a @ inc_b.T


def overlap_matrix(frames) -> np.ndarray:
    """Pairwise shared-point counts (zero diagonal) for a frame sequence."""
    frames = list(frames)
    w = cross_overlap(frames, frames)
    np.fill_diagonal(w, 0.0)
    return w
