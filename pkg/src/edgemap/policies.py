"""Benchmark map-management policies and a brute-force per-slot oracle.

Every policy uses the slot cardinalities from ``env.slot_cardinalities``
(full upload budget, evict only what the cap forces), so the emitted actions
are feasible by construction.  Ties are always broken towards lower frame ids.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .env import Action, EnvConfig, EnvState, apply_action, slot_cardinalities, slot_upsilon
from .mapgraph import overlap_matrix
from .uncertainty import IDENTITY_PI, PoseInfoMatrix, bridged_uncertainty

ORACLE_MAX_CANDIDATES = 8
ORACLE_MAX_MAP = 6
_BRIDGE = 1e-6


class InstanceTooLarge(ValueError):
    pass


def _oldest_first(frames):
    return sorted(frames, key=lambda f: (f.slot_captured, f.id))


def _evict_oldest(s: EnvState, upload_ids, evict_count):
    by_id = {f.id: f for f in s.recent_frames}
    pool = list(s.map.frames.values()) + [by_id[i] for i in upload_ids]
    return [f.id for f in _oldest_first(pool)[:evict_count]]


def lff(s: EnvState, budget: int, evict_count: int) -> Action:
    """Latest frames first: upload the newest frames, evict the oldest ones."""
    newest = sorted(s.candidate_ids)[::-1][:max(budget, 0)]
    return Action(newest, _evict_oldest(s, newest, evict_count))


def pu_indices(n_frames: int, budget: int) -> list[int]:
    """Capture indices picked by even-stride uploading."""
    if budget <= 0:
        return []
    if budget >= n_frames:
        return list(range(n_frames))
    stride = n_frames // budget
    return [i * stride for i in range(budget)]


def pu(s: EnvState, budget: int, evict_count: int) -> Action:
    """Periodical uploading: evenly spaced frames of the slot, oldest evicted."""
    ordered = sorted(s.candidate_ids)
    upload = [ordered[i] for i in pu_indices(len(ordered), budget)]
    return Action(upload, _evict_oldest(s, upload, evict_count))


def _pick(values, ids, tol=1e-12):
    """Index of the smallest (rank, value) pair; near-ties go to the lower id."""
    best = None
    for k, ((rank, v), i) in enumerate(zip(values, ids)):
        if best is None:
            best = k
            continue
        b_rank, b = values[best]
        if rank != b_rank:
            better = rank < b_rank
        elif abs(v - b) <= tol * max(1.0, abs(b)):
            better = i < ids[best]
        else:
            better = v < b
        if better:
            best = k
    return best


def adapt_greedy(s: EnvState, budget: int, evict_count: int,
                 pi: PoseInfoMatrix = IDENTITY_PI, reference=None) -> Action:
    """Myopic greedy uncertainty minimisation.

    Evictions first: repeatedly drop the stored frame whose removal leaves
    the lowest objective.  Then uploads: repeatedly add the candidate whose
    insertion gives the lowest objective.  If more evictions are forced than
    there are stored frames, the rest come from the uploads.

    The objective is the map's own uncertainty u(G'), or, when ``reference``
    frames are given, the mean u(G' + f) over them (the slot metric with
    known next frames).
    """
    map_ids = list(s.map.node_ids)
    cand = sorted(s.recent_frames, key=lambda f: f.id)
    ref = list(reference or ())
    frames = [s.map.frames[i] for i in map_ids] + cand + ref
    ids = map_ids + [f.id for f in cand]
    w = overlap_matrix(frames)
    ld = pi.log_det_pi
    ref_idx = list(range(len(ids), len(frames)))

    def u(nodes):
        return bridged_uncertainty(w[np.ix_(nodes, nodes)], ld, _BRIDGE)

    def objective(nodes):
        if not ref_idx:
            return u(nodes)
        parts = [u(nodes + [r]) for r in ref_idx]
        return (max(p[0] for p in parts), sum(p[1] for p in parts) / len(parts))

    def evict_one(kept):
        scores = [objective([x for x in kept if x != c]) for c in kept]
        return kept.pop(_pick(scores, [ids[c] for c in kept]))

    # evicting among stored frames before uploading keeps the uploads from
    # anchoring onto frames that are about to leave
    kept = list(range(len(map_ids)))
    first = min(evict_count, len(kept))
    evicted = [ids[evict_one(kept)] for _ in range(first)]

    pool = list(range(len(map_ids), len(ids)))
    upload = []
    for _ in range(min(budget, len(pool))):
        scores = [objective(kept + [c]) for c in pool]
        c = pool.pop(_pick(scores, [ids[c] for c in pool]))
        kept.append(c)
        upload.append(ids[c])

    for _ in range(min(evict_count - first, len(kept))):
        evicted.append(ids[evict_one(kept)])
    return Action(upload, evicted)


def brute_force_slot_optimal(s: EnvState, budget: int, evict_count: int, next_frames,
                             config: EnvConfig = EnvConfig()) -> tuple[Action, float]:
    """Exhaustive search for the action with the lowest slot uncertainty.

    Returns (action, upsilon).  Ties go to the lexicographically smallest
    (sorted upload ids, sorted evict ids) pair.
    """
    if len(s.recent_frames) > ORACLE_MAX_CANDIDATES or len(s.map) > ORACLE_MAX_MAP:
        raise InstanceTooLarge(
            f"oracle limited to {ORACLE_MAX_CANDIDATES} candidates and {ORACLE_MAX_MAP} stored frames")
    next_frames = list(next_frames)
    best, best_ups = None, math.inf
    # combinations come out in lexicographic order, so strict improvement
    # keeps the smallest id sets among ties
    for up in itertools.combinations(sorted(s.candidate_ids), min(budget, len(s.recent_frames))):
        pool = sorted(set(s.map.node_ids) | set(up))
        for ev in itertools.combinations(pool, min(evict_count, len(pool))):
            a = Action(up, ev)
            ups = slot_upsilon(apply_action(s, a), next_frames, config)
            if best is None or ups < best_ups - 1e-12 * max(1.0, abs(best_ups)) or (
                    math.isinf(best_ups) and math.isfinite(ups)):
                best, best_ups = a, ups
    return best, best_ups


@dataclass
class SchemePolicy:
    """Callable wrapper: state -> Action with the slot cardinalities filled in."""

    name: str
    config: EnvConfig

    def __call__(self, s: EnvState) -> Action:
        up, ev = slot_cardinalities(s, self.config)
        if self.name == "lff":
            return lff(s, up, ev)
        if self.name == "pu":
            return pu(s, up, ev)
        return adapt_greedy(s, up, ev, self.config.pi)


BASELINES = ("lff", "pu", "adapt")
SCHEMES = BASELINES + ("mbrl",)


def make_policy(name: str, config: EnvConfig) -> SchemePolicy:
    if name not in BASELINES:
        raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}")
    return SchemePolicy(name, config)
