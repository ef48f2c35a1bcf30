"""Frame sources: a synthetic co-visibility generator and a feature-set file loader.

File format, one frame per line (UTF-8)::

    # optional comment
    <frame_id>\t<point_id>,<point_id>,...

Frame ids are non-negative base-10 integers in strictly increasing order.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mapgraph import Frame


class FrameSourceExhausted(RuntimeError):
    pass


class FrameFileError(ValueError):
    pass


@dataclass(frozen=True)
class SynthParams:
    universe: int = 2000   # P
    window: int = 150      # w
    stride: int = 2        # s
    jitter: float = 0.05   # rho

    def __post_init__(self):
        if self.universe < 1 or self.window < 1:
            raise ValueError("universe and window must be positive")
        if self.window > self.universe:
            raise ValueError("window cannot exceed the point universe")
        if self.stride < 0:
            raise ValueError("stride must be non-negative")
        if not 0.0 <= self.jitter <= 1.0:
            raise ValueError("jitter must be a probability")


def synth_generate(index: int, params: SynthParams, rng: np.random.Generator) -> frozenset:
    """Feature-point set of synthetic frame ``index``.

    The frame sees the window [index*s, index*s + w) modulo P; each point is
    independently swapped for a uniformly random one with probability rho.
    """
    start = index * params.stride
    pts = (start + np.arange(params.window)) % params.universe
    if params.jitter > 0:
        swap = rng.random(params.window) < params.jitter
        n_swap = int(swap.sum())
        if n_swap:
            pts = pts.copy()
            pts[swap] = rng.integers(0, params.universe, n_swap)
    return frozenset(pts.tolist())


def load_frame_file(path) -> list[tuple[int, frozenset]]:
    records = []
    last = -1
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            fid_s, pts_s = raw.rstrip("\r\n").split("\t")
            fid = int(fid_s)
            pts = frozenset(int(p) for p in pts_s.split(","))
        except ValueError as exc:
            raise FrameFileError(f"{path}:{lineno}: malformed line") from exc
        if fid < 0 or any(p < 0 for p in pts):
            raise FrameFileError(f"{path}:{lineno}: ids must be non-negative")
        if fid <= last:
            raise FrameFileError(f"{path}:{lineno}: frame ids must be strictly increasing")
        records.append((fid, pts))
        last = fid
    return records


def write_frame_file(path, frames) -> None:
    lines = [f"{f.id}\t{','.join(str(p) for p in sorted(f.points))}" for f in frames]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class FrameSource:
    """Yields F frames per slot, either synthesised or read from a file."""

    def __init__(self, params: SynthParams | None = None, seed: int = 0, records=None):
        self.params = params
        self.records = records
        self.rng = np.random.default_rng(seed)
        self.cursor = 0
        self.slot = 0
        if (params is None) == (records is None):
            raise ValueError("give exactly one of synthetic params or file records")

    @classmethod
    def synthetic(cls, params: SynthParams | None = None, seed: int = 0):
        return cls(params=params or SynthParams(), seed=seed)

    @classmethod
    def from_file(cls, path):
        return cls(records=load_frame_file(path))

    @property
    def mode(self) -> str:
        return "synthetic" if self.params is not None else "file"

    def remaining(self):
        return None if self.records is None else len(self.records) - self.cursor

    def next_slot_frames(self, count: int) -> list[Frame]:
        if count < 1:
            raise ValueError("frames per slot must be positive")
        if self.records is not None:
            if len(self.records) - self.cursor < count:
                raise FrameSourceExhausted(
                    f"{len(self.records) - self.cursor} frames left, {count} requested")
            chunk = self.records[self.cursor:self.cursor + count]
            frames = [Frame(fid, pts, self.slot) for fid, pts in chunk]
        else:
            frames = [
                Frame(i, synth_generate(i, self.params, self.rng), self.slot)
                for i in range(self.cursor, self.cursor + count)
            ]
        self.cursor += count
        self.slot += 1
        return frames
