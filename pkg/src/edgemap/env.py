"""Slot-level map-management environment.

One step = one slot: the policy picks which freshly captured frames to upload
and which stored frames to evict, the map is updated, the next slot's frames
and uplink rate are drawn, and the reward is minus the mean uncertainty the
next frames would see against the updated map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import Channel, rate_history_window
from .data import FrameSource
from .mapgraph import MapDelta, MapGraph
from .uncertainty import IDENTITY_PI, PoseInfoMatrix, avg_uncertainty, upload_budget


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    alpha: float = 5.0        # Mbit per frame
    d_req: float = 0.5        # s
    v_max: int = 25           # frames
    gamma: float = 0.9
    penalty: float | None = None
    penalty_factor: float = 10.0
    pi: PoseInfoMatrix = IDENTITY_PI

    def __post_init__(self):
        if self.alpha <= 0 or self.d_req <= 0:
            raise ValueError("alpha and d_req must be positive")
        if self.v_max < 1:
            raise ValueError("v_max must be at least 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


@dataclass(frozen=True)
class Timeline:
    frames_per_slot: int = 60
    slots_per_interval: int = 100
    num_intervals: int = 3
    tau: int = 7

    def __post_init__(self):
        if min(self.frames_per_slot, self.slots_per_interval, self.num_intervals) < 1:
            raise ValueError("timeline sizes must be positive")
        if not 0 <= self.tau < self.slots_per_interval:
            raise ValueError("tau must satisfy 0 <= tau < K")

    @property
    def total_slots(self) -> int:
        return self.slots_per_interval * self.num_intervals


@dataclass(frozen=True)
class EnvState:
    map: MapGraph
    recent_frames: tuple
    rate_states: tuple     # chain state indices, oldest first, length tau+1
    rates: tuple           # Mbit/s, aligned with rate_states
    slot: int
    interval: int

    @property
    def rate(self) -> float:
        return self.rates[-1]

    @property
    def candidate_ids(self) -> tuple:
        return tuple(f.id for f in self.recent_frames)


@dataclass(frozen=True)
class Action:
    upload: frozenset = frozenset()
    evict: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "upload", frozenset(self.upload))
        object.__setattr__(self, "evict", frozenset(self.evict))


@dataclass(frozen=True)
class Violation:
    constraint: str
    detail: str

    def __str__(self):
        return f"{self.constraint}: {self.detail}"


@dataclass(frozen=True)
class Experience:
    state: EnvState
    action: Action
    reward: float
    next_state: EnvState
    upsilon: float = math.nan
    artificial: bool = False
    source_slot: int | None = None
    sample: int | None = None


def slot_cardinalities(s: EnvState, config: EnvConfig) -> tuple[int, int]:
    """Upload/evict counts used by every policy: full budget, fill to cap."""
    upload = min(upload_budget(s.rate, config.alpha, config.d_req), len(s.recent_frames))
    evict = max(0, len(s.map) + upload - config.v_max)
    return upload, evict


def validate_action(s: EnvState, a: Action, config: EnvConfig) -> Violation | None:
    cand = set(s.candidate_ids)
    stray = a.upload - cand
    if stray:
        return Violation("upload_subset", f"frames {sorted(stray)} were not captured this slot")
    if config.alpha * len(a.upload) > s.rate * config.d_req * (1 + 1e-12):
        budget = upload_budget(s.rate, config.alpha, config.d_req)
        return Violation("budget", f"{len(a.upload)} frames exceed the budget of {budget}")
    stray = a.evict - set(s.map.frames) - a.upload
    if stray:
        return Violation("evict_subset", f"frames {sorted(stray)} are neither stored nor uploaded")
    size = len(set(s.map.frames) | a.upload) - len(a.evict)
    if size > config.v_max:
        return Violation("capacity", f"map would hold {size} > {config.v_max} frames")
    return None


def apply_action(s: EnvState, a: Action) -> MapGraph:
    by_id = {f.id: f for f in s.recent_frames}
    added = tuple(by_id[i] for i in sorted(a.upload))
    return s.map.apply_delta(MapDelta(added, a.evict))


def slot_upsilon(new_map: MapGraph, next_frames, config: EnvConfig) -> float:
    return avg_uncertainty(new_map, next_frames, config.pi)


def clamp_reward(upsilon: float, penalty: float) -> float:
    return -penalty if math.isinf(upsilon) else -upsilon


def emulate_step(s: EnvState, a: Action, next_frames, next_rate_state: int,
                 next_rate: float, config: EnvConfig, penalty: float):
    """Successor state and reward for a hypothetical action (no side effects)."""
    new_map = apply_action(s, a)
    ups = slot_upsilon(new_map, next_frames, config)
    nxt = EnvState(
        map=new_map,
        recent_frames=tuple(next_frames),
        rate_states=s.rate_states[1:] + (next_rate_state,),
        rates=s.rates[1:] + (next_rate,),
        slot=s.slot + 1,
        interval=s.interval,
    )
    return nxt, clamp_reward(ups, penalty), ups


def episode_return(rewards, gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return float(sum(r * gamma ** k for k, r in enumerate(rewards)))


class MapEnv:
    """Stateful driver around the pure step functions.

    The frame source and the channel each own their generator, so two
    environments built from the same seeds produce identical trajectories.
    """

    def __init__(self, config: EnvConfig, timeline: Timeline, frames: FrameSource,
                 channel: Channel):
        self.config = config
        self.timeline = timeline
        self.frames = frames
        self.channel = channel
        self.state: EnvState | None = None
        self.penalty: float | None = config.penalty
        self._history: list = []

    def reset(self) -> EnvState:
        if self.state is not None:
            raise RuntimeError("environment already reset; build a fresh one")
        boot = self.frames.next_slot_frames(self.timeline.frames_per_slot)
        self._history = [self.channel.state]
        budget = upload_budget(self.channel.rate, self.config.alpha, self.config.d_req)
        keep = boot[len(boot) - min(budget, self.config.v_max, len(boot)):]
        bootstrap = MapGraph.from_frames(keep)

        recent = self.frames.next_slot_frames(self.timeline.frames_per_slot)
        if self.penalty is None:
            self.penalty = self._calibrate_penalty(bootstrap, recent)
        self.state = self._make_state(bootstrap, recent, slot=0)
        return self.state

    def _calibrate_penalty(self, g: MapGraph, frames) -> float:
        worst = None
        for f in frames:
            u = avg_uncertainty(g, [f], self.config.pi)
            if math.isfinite(u):
                worst = abs(u) if worst is None else max(worst, abs(u))
        base = worst if worst else 1.0
        return self.config.penalty_factor * max(base, 1.0)

    def _make_state(self, g, recent, slot) -> EnvState:
        window = rate_history_window(self._history, self.timeline.tau)
        pal = self.channel.palette
        return EnvState(
            map=g,
            recent_frames=tuple(recent),
            rate_states=tuple(window),
            rates=tuple(float(pal[i]) for i in window),
            slot=slot,
            interval=self.channel.interval,
        )

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.slot >= self.timeline.total_slots

    def step(self, action: Action):
        s = self.state
        if s is None:
            raise RuntimeError("call reset() first")
        if self.done:
            raise RuntimeError("episode finished")
        bad = validate_action(s, action, self.config)
        if bad is not None:
            raise ActionError(str(bad))
        nxt_frames = self.frames.next_slot_frames(self.timeline.frames_per_slot)
        self._history.append(self.channel.advance())
        new_map = apply_action(s, action)
        ups = slot_upsilon(new_map, nxt_frames, self.config)
        reward = clamp_reward(ups, self.penalty)
        nxt = self._make_state(new_map, nxt_frames, slot=s.slot + 1)
        self.state = nxt
        return nxt, reward, Experience(s, action, reward, nxt, ups)
