"""User digital twin: experience profile, variational channel model and
artificial-experience generation.

The encoder reads the rate-state history d_k (one-hot per step) through a
recurrent layer and a dense stack and returns a diagonal Gaussian over the
latent z.  The decoder maps a latent sample together with the current rate
state to a softmax over the N next states.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .env import Action, EnvConfig, EnvState, Experience, emulate_step, slot_cardinalities
from .neural import MLP, Adam, GaussianHead, Module, Recurrent, Tensor, concat

log = logging.getLogger(__name__)


class BrokenChainError(ValueError):
    pass


class ExperienceStore:
    """Real experiences (FIFO, bounded) plus the current artificial set."""

    def __init__(self, capacity: int = 5000, artificial_capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.artificial_capacity = artificial_capacity
        self.real: deque = deque(maxlen=capacity)
        self.artificial: list = []

    def __len__(self):
        return len(self.real)

    def collect(self, xi: Experience) -> "ExperienceStore":
        if self.real:
            last = self.real[-1].next_state
            if xi.state is not last and xi.state != last:
                raise BrokenChainError(
                    f"experience at slot {xi.state.slot} does not continue slot {last.slot}")
        self.real.append(xi)
        return self

    def replace_artificial(self, tuples) -> None:
        tuples = list(tuples)
        if len(tuples) > self.artificial_capacity:
            tuples = tuples[-self.artificial_capacity:]
        self.artificial = tuples


def one_hot_histories(histories, n_states: int) -> np.ndarray:
    h = np.asarray(histories, dtype=int)
    return np.eye(n_states)[h]


def rate_samples(experiences):
    """(histories, next_states) arrays from real experiences."""
    hist = np.array([xi.state.rate_states for xi in experiences], dtype=int)
    nxt = np.array([xi.next_state.rate_states[-1] for xi in experiences], dtype=int)
    return hist, nxt


def trace_samples(trace, tau: int):
    """Sliding (history, next) pairs from a raw state trace."""
    trace = np.asarray(trace, dtype=int)
    if len(trace) < tau + 2:
        raise ValueError("trace shorter than one history window plus a step")
    idx = np.arange(tau + 1)[None, :] + np.arange(len(trace) - tau - 1)[:, None]
    return trace[idx], trace[tau + 1:]


class Encoder(Module):
    def __init__(self, n_states, latent_dim=8, hidden=32, dense=(32, 16), cell="gru",
                 layers=1, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_states = n_states
        self.rnn = Recurrent(n_states, hidden, layers, cell, rng)
        self.dense = MLP([hidden, *dense], rng, activation="relu", out_activation="relu")
        self.head = GaussianHead(dense[-1], latent_dim, rng)

    def forward(self, hist_onehot):
        return self.head(self.dense(self.rnn(hist_onehot)))


class Decoder(Module):
    def __init__(self, n_states, latent_dim=8, dense=(32, 16), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_states = n_states
        self.net = MLP([latent_dim + n_states, *dense, n_states], rng, activation="relu")

    def forward(self, z, current_state):
        cur = np.eye(self.n_states)[np.asarray(current_state, dtype=int)]
        return self.net(concat([z, Tensor(cur)], axis=-1)).log_softmax(axis=-1)


def kl_standard_normal(mu: Tensor, log_var: Tensor) -> Tensor:
    """Per-sample KL(N(mu, diag(exp(log_var))) || N(0, I))."""
    return ((log_var.exp() + mu * mu - 1.0 - log_var) * 0.5).sum(axis=-1)


def elbo_loss(encoder: Encoder, decoder: Decoder, histories, next_states, noise=None,
              rng=None, kl_weight: float = 1.0):
    """Negative ELBO averaged over the batch.

    Returns (loss tensor, reconstruction value, KL value).  ``noise`` freezes
    the reparameterisation draw; otherwise it comes from ``rng``.
    """
    histories = np.asarray(histories, dtype=int)
    if histories.ndim != 2 or len(histories) == 0:
        raise ValueError("need a non-empty (batch, window) array of histories")
    mu, log_var = encoder(one_hot_histories(histories, encoder.n_states))
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.standard_normal(mu.shape)
    z = mu + (log_var * 0.5).exp() * noise
    logp = decoder(z, histories[:, -1])
    target = np.eye(decoder.n_states)[np.asarray(next_states, dtype=int)]
    recon = -(logp * target).sum(axis=-1).mean()
    kl = kl_standard_normal(mu, log_var).mean()
    return recon + kl * kl_weight, float(recon.data), float(kl.data)


@dataclass(frozen=True)
class LatentFeatures:
    mu: np.ndarray
    sigma: np.ndarray   # diagonal variance


def extract_latent(encoder: Encoder, rate_history, window: int | None = None) -> LatentFeatures:
    hist = np.asarray(rate_history, dtype=int)
    if hist.ndim != 1 or (window is not None and len(hist) != window):
        raise ValueError(f"rate history must be a window of length {window}")
    mu, log_var = encoder(one_hot_histories(hist[None, :], encoder.n_states))
    return LatentFeatures(mu.data[0].copy(), np.exp(log_var.data[0]))


def next_state_probs(encoder: Encoder, decoder: Decoder, histories, noise=None) -> np.ndarray:
    """Decoder softmax for each history; mean latent unless ``noise`` is given."""
    histories = np.asarray(histories, dtype=int)
    mu, log_var = encoder(one_hot_histories(histories, encoder.n_states))
    z = mu if noise is None else mu + (log_var * 0.5).exp() * noise
    return np.exp(decoder(z, histories[:, -1]).data)


def implied_transition_matrix(encoder: Encoder, decoder: Decoder, window: int,
                              histories=None) -> np.ndarray:
    """Row s = decoder output for histories ending in state s.

    With reference ``histories`` the row averages over those ending in s;
    states without one fall back to the constant history (s, ..., s).
    """
    n = encoder.n_states
    rows = np.empty((n, n))
    hist = None if histories is None else np.asarray(histories, dtype=int)
    for s in range(n):
        sel = None if hist is None else hist[hist[:, -1] == s]
        if sel is None or len(sel) == 0:
            sel = np.full((1, window), s)
        rows[s] = next_state_probs(encoder, decoder, sel).mean(axis=0)
    return rows


def random_feasible_action(s: EnvState, config: EnvConfig, rng) -> Action:
    up, ev = slot_cardinalities(s, config)
    cand = sorted(s.candidate_ids)
    upload = [cand[i] for i in sorted(rng.choice(len(cand), size=up, replace=False))] if up else []
    pool = sorted(set(s.map.node_ids) | set(upload))
    evict = [pool[i] for i in sorted(rng.choice(len(pool), size=ev, replace=False))] if ev else []
    return Action(upload, evict)


class UserTwin:
    """Encoder/decoder pair plus their optimiser and training routine."""

    def __init__(self, n_states, window, palette, latent_dim=8, hidden=32, dense=(32, 16),
                 cell="gru", layers=1, lr=3e-3, batch=64, steps=100, kl_weight=0.01,
                 kl_warmup=0, seed=0):
        self.rng = np.random.default_rng(seed)
        self.n_states = n_states
        self.window = window
        self.palette = np.asarray(palette, dtype=float)
        if len(self.palette) != n_states:
            raise ValueError("palette size must match the state count")
        self.encoder = Encoder(n_states, latent_dim, hidden, dense, cell, layers, self.rng)
        self.decoder = Decoder(n_states, latent_dim, dense, self.rng)
        self.opt = Adam(self.encoder.parameters() + self.decoder.parameters(), lr=lr, clip_norm=5.0)
        self.batch = batch
        self.steps = steps
        self.kl_weight = kl_weight
        self.kl_warmup = kl_warmup
        self.total_steps = 0
        self.updates = 0
        self._latents: dict = {}

    @property
    def latent_dim(self) -> int:
        return self.encoder.head.mu.n_out

    def latent(self, rate_history) -> LatentFeatures:
        key = tuple(int(x) for x in rate_history)
        hit = self._latents.get(key)
        if hit is None:
            hit = extract_latent(self.encoder, key, self.window)
            self._latents[key] = hit
        return hit

    def current_kl_weight(self) -> float:
        if self.kl_warmup <= 0:
            return self.kl_weight
        return self.kl_weight * min(1.0, self.total_steps / self.kl_warmup)

    def loss(self, histories, next_states, noise=None):
        return elbo_loss(self.encoder, self.decoder, histories, next_states, noise, self.rng,
                         self.current_kl_weight())

    def fit(self, histories, next_states, steps=None) -> list[float]:
        """Minibatch Adam on the negative ELBO; returns per-step losses."""
        histories = np.asarray(histories, dtype=int)
        next_states = np.asarray(next_states, dtype=int)
        if len(histories) == 0:
            raise ValueError("no training samples")
        losses = []
        for _ in range(self.steps if steps is None else steps):
            idx = self.rng.choice(len(histories), size=min(self.batch, len(histories)),
                                  replace=False)
            self.opt.zero_grad()
            loss, _, _ = self.loss(histories[idx], next_states[idx])
            loss.backward()
            self.opt.step()
            self.total_steps += 1
            losses.append(float(loss.data))
        self.updates += 1
        self._latents.clear()
        return losses

    def transition_matrix(self, histories=None) -> np.ndarray:
        return implied_transition_matrix(self.encoder, self.decoder, self.window, histories)

    def sample_next_state(self, rate_history) -> int:
        hist = np.asarray(rate_history, dtype=int)[None, :]
        noise = self.rng.standard_normal((1, self.latent_dim))
        p = next_state_probs(self.encoder, self.decoder, hist, noise)[0]
        return int(self.rng.choice(self.n_states, p=p / p.sum()))


def generate_artificial(store: ExperienceStore, twin: UserTwin, config: EnvConfig, penalty: float,
                        j: int, rng, action_sampler=None, next_state_sampler=None) -> list:
    """J emulated tuples per real experience.

    Each keeps the real state and the real next-slot frames, draws the next
    rate state from the twin, picks a random feasible action (or uses
    ``action_sampler(state, rng)``), and emulates the map update and reward.
    """
    if j < 0:
        raise ValueError("J must be non-negative")
    out = []
    for xi in store.real:
        s = xi.state
        for sample in range(j):
            if next_state_sampler is None:
                nxt_state = twin.sample_next_state(s.rate_states)
            else:
                nxt_state = next_state_sampler(xi, rng)
            a = (action_sampler or (lambda st, r: random_feasible_action(st, config, r)))(s, rng)
            nxt, reward, ups = emulate_step(s, a, xi.next_state.recent_frames, nxt_state,
                                            float(twin.palette[nxt_state]), config, penalty)
            out.append(Experience(s, a, reward, nxt, ups, artificial=True,
                                  source_slot=s.slot, sample=sample))
    return out


def udt_update(store: ExperienceStore, twin: UserTwin, config: EnvConfig, penalty: float,
               j: int, rng, min_samples: int = 1) -> bool:
    """Algorithm-1 refresh: fit the twin on the real store, then regenerate
    the artificial set.  Returns False (and logs) when there is too little data."""
    if len(store) < min_samples:
        log.info("udt update skipped: %d real tuples < %d", len(store), min_samples)
        return False
    hist, nxt = rate_samples(store.real)
    twin.fit(hist, nxt)
    store.replace_artificial(generate_artificial(store, twin, config, penalty, j, rng))
    return True
