"""Non-stationary Markov uplink channel.

Within an interval the rate follows an N-state Markov chain; at each interval
boundary a hidden regime picks which transition matrix governs the chain.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

D_MIN = 40.0
D_MAX = 80.0


def rate_palette(n: int, d_min: float = D_MIN, d_max: float = D_MAX) -> np.ndarray:
    if n < 1:
        raise ValueError("palette needs at least one state")
    if n == 1:
        return np.array([d_max])
    return np.linspace(d_min, d_max, n)


def check_stochastic(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {p.shape}")
    if (p < -tol).any() or (p > 1 + tol).any():
        raise ValueError("transition probabilities must lie in [0, 1]")
    if np.max(np.abs(p.sum(axis=1) - 1.0)) > tol:
        raise ValueError("transition matrix rows must sum to 1")
    return p


def dirichlet_matrix(n: int, rng: np.random.Generator, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(n, concentration), size=n)


def two_state_matrix(high_ratio: float, persistence: float = 0.8) -> np.ndarray:
    """2-state chain whose stationary mass on the high-rate state is ``high_ratio``.

    ``persistence`` bounds the larger self-transition probability, which
    controls how bursty the chain is.
    """
    if not 0.0 < high_ratio < 1.0:
        raise ValueError("high_ratio must be in (0, 1)")
    if not 0.0 <= persistence < 1.0:
        raise ValueError("persistence must be in [0, 1)")
    # stationary pi_high = p_lh / (p_lh + p_hl); fix the faster exit at 1 - persistence
    switch = 1.0 - persistence
    if high_ratio >= 0.5:
        p_hl = switch * (1 - high_ratio) / high_ratio
        p_lh = switch
    else:
        p_lh = switch * high_ratio / (1 - high_ratio)
        p_hl = switch
    return np.array([[1 - p_lh, p_lh], [p_hl, 1 - p_hl]])


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eig(p.T)
    v = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    return v / v.sum()


@dataclass
class RegimeModel:
    regimes: list
    distribution: np.ndarray | None = None
    current_regime: int = 0

    def __post_init__(self):
        if not self.regimes:
            raise ValueError("at least one regime is required")
        self.regimes = [check_stochastic(p) for p in self.regimes]
        n = self.regimes[0].shape[0]
        if any(p.shape != (n, n) for p in self.regimes):
            raise ValueError("all regimes must share the state count")
        if self.distribution is None:
            self.distribution = np.full(len(self.regimes), 1.0 / len(self.regimes))
        self.distribution = np.asarray(self.distribution, dtype=float)
        if len(self.distribution) != len(self.regimes):
            raise ValueError("regime distribution length mismatch")
        if abs(self.distribution.sum() - 1.0) > 1e-9 or (self.distribution < 0).any():
            raise ValueError("regime distribution must be a probability vector")

    @property
    def n_states(self) -> int:
        return self.regimes[0].shape[0]

    @classmethod
    def random(cls, n_states: int, n_regimes: int, rng: np.random.Generator):
        return cls([dirichlet_matrix(n_states, rng) for _ in range(n_regimes)])


def begin_interval(model: RegimeModel, rng: np.random.Generator) -> np.ndarray:
    model.current_regime = int(rng.choice(len(model.regimes), p=model.distribution))
    return model.regimes[model.current_regime]


def step_rate(state: int, p: np.ndarray, rng: np.random.Generator) -> int:
    if not 0 <= state < p.shape[0]:
        raise ValueError(f"state {state} out of range")
    row = p[state]
    # inverse-CDF keeps one uniform draw per step
    u = rng.random()
    nxt = int(np.searchsorted(np.cumsum(row), u, side="right"))
    return min(nxt, p.shape[0] - 1)


def empirical_transition_matrix(trace, n: int) -> np.ndarray:
    trace = np.asarray(trace, dtype=int)
    if len(trace) < 2:
        raise ValueError("trace must contain at least two states")
    counts = np.zeros((n, n))
    np.add.at(counts, (trace[:-1], trace[1:]), 1.0)
    rows = counts.sum(axis=1, keepdims=True)
    out = np.full((n, n), 1.0 / n)
    seen = rows[:, 0] > 0
    out[seen] = counts[seen] / rows[seen]
    return out


@dataclass
class Channel:
    """Per-run channel simulator: regime switching plus in-interval chain.

    The channel owns its generator and never looks at map or policy state.
    """

    model: RegimeModel
    palette: np.ndarray
    slots_per_interval: int
    rng: np.random.Generator
    state: int = 0
    slot: int = 0
    matrix: np.ndarray = field(init=False)

    def __post_init__(self):
        self.palette = np.asarray(self.palette, dtype=float)
        if len(self.palette) != self.model.n_states:
            raise ValueError("palette size must match the chain state count")
        if np.any(np.diff(self.palette) <= 0):
            raise ValueError("palette must be strictly increasing")
        self.matrix = begin_interval(self.model, self.rng)
        self.state = int(self.rng.integers(self.model.n_states))

    @property
    def rate(self) -> float:
        return float(self.palette[self.state])

    @property
    def interval(self) -> int:
        return self.slot // self.slots_per_interval

    def advance(self) -> int:
        self.slot += 1
        if self.slot % self.slots_per_interval == 0:
            self.matrix = begin_interval(self.model, self.rng)
        self.state = step_rate(self.state, self.matrix, self.rng)
        return self.state

    def trace(self, length: int) -> np.ndarray:
        out = np.empty(length, dtype=int)
        out[0] = self.state
        for i in range(1, length):
            out[i] = self.advance()
        return out


def rate_history_window(states, tau: int) -> list:
    """Last tau+1 entries, left-padded by repeating the oldest value."""
    states = list(states)
    if not states:
        raise ValueError("history needs at least one value")
    window = states[-(tau + 1):]
    return [window[0]] * (tau + 1 - len(window)) + window
