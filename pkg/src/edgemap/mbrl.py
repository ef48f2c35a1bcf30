"""Adaptive map management: augmented-state actor-critic with blended replay.

The actor scores every frame of the slot (stored and freshly captured).  The
action keeps the cardinalities fixed by the rate: upload the top-``budget``
candidates, then evict the lowest-scoring ``evict_count`` frames among the
stored and uploaded ones.  The critic sees the state plus the resulting map
membership vector, so the deterministic policy gradient flows through a
sigmoid relaxation of the two selections.
"""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .channel import D_MAX
from .env import Action, EnvConfig, EnvState, MapEnv, slot_cardinalities
from .mapgraph import overlap_matrix
from .neural import MLP, Adam, GraphEncoder, Module, Tensor, concat, grad_norm, normalize_adjacency
from .udt import ExperienceStore, LatentFeatures, UserTwin, udt_update
from .uncertainty import (
    POSE_DOF, PoseInfoMatrix, batched_uncertainty, bridged_uncertainty,
)

log = logging.getLogger(__name__)

N_NODE_FEATURES = 5
MARGINAL_CLIP = 5.0


# ---- state encoding -----------------------------------------------------------

@dataclass(frozen=True)
class BaseEncoding:
    """Latent-free part of a state encoding."""
    ids: tuple
    n_map: int
    x: np.ndarray          # (n, N_NODE_FEATURES)
    adj: np.ndarray        # (n, n) overlap weights scaled to [0, 1]
    rates: np.ndarray      # rate window / rate_scale
    map_fill: float
    budget: int
    evict: int


@dataclass(frozen=True)
class StateEncoding:
    base: BaseEncoding
    g: np.ndarray          # global vector

    @property
    def n(self) -> int:
        return len(self.base.ids)

    @property
    def n_map(self) -> int:
        return self.base.n_map

    @property
    def n_cand(self) -> int:
        return self.n - self.base.n_map


def _marginals(w, n_map, ld):
    """Uncertainty change per frame: removal cost for stored frames, addition
    gain for candidates.  Positive means the frame helps the map."""
    def u(nodes):
        return bridged_uncertainty(w[np.ix_(nodes, nodes)], ld)

    members = list(range(n_map))
    base = u(members)
    sets = [[j for j in members if j != i] for i in members]
    sets += [members + [i] for i in range(n_map, w.shape[0])]
    out = np.zeros(w.shape[0])
    for size in {len(x) for x in sets}:
        rows = [i for i, x in enumerate(sets) if len(x) == size]
        vals = batched_uncertainty(np.stack([w[np.ix_(sets[i], sets[i])] for i in rows]), ld)
        for i, v in zip(rows, vals):
            other = (0, float(v)) if math.isfinite(v) else u(sets[i])
            out[i] = _diff(other, base) if i < n_map else _diff(base, other)
    return out


def _diff(a, b):
    # a - b on (rank, value) pairs; a change of connectivity saturates
    if a[0] != b[0]:
        return math.inf if a[0] > b[0] else -math.inf
    if not (math.isfinite(a[1]) and math.isfinite(b[1])):
        return 0.0
    return a[1] - b[1]


def encode_base(s: EnvState, config: EnvConfig, pi: PoseInfoMatrix | None = None,
                rate_scale: float = D_MAX) -> BaseEncoding:
    """Per-frame features, pool adjacency and rate window for a state.

    Node order: stored frames by id, then candidates by id.  Features:
    point count (over the largest in the slot), mean overlap fraction with the
    stored frames, normalised age, stored flag, and the frame's marginal
    uncertainty change scaled by 6*log(1 + mean point count).
    """
    pi = pi if pi is not None else config.pi
    map_ids = list(s.map.node_ids)
    cand = sorted(s.recent_frames, key=lambda f: f.id)
    frames = [s.map.frames[i] for i in map_ids] + cand
    n, n_map = len(frames), len(map_ids)
    up, ev = slot_cardinalities(s, config)
    rates = np.asarray(s.rates, dtype=float) / rate_scale
    fill = n_map / config.v_max
    if n == 0:
        return BaseEncoding((), 0, np.zeros((0, N_NODE_FEATURES)), np.zeros((0, 0)), rates,
                            fill, up, ev)
    w = overlap_matrix(frames)
    sizes = np.array([len(f.points) for f in frames], dtype=float)
    x = np.zeros((n, N_NODE_FEATURES))
    x[:, 0] = sizes / sizes.max()
    if n_map:
        to_map = w[:, :n_map].sum(axis=1)
        others = np.full(n, float(n_map))
        others[:n_map] -= 1
        x[:, 1] = to_map / (sizes * np.maximum(others, 1.0))
    captured = np.array([f.slot_captured for f in frames], dtype=float)
    age = captured.max() - captured
    x[:, 2] = age / max(1.0, age.max())
    x[:n_map, 3] = 1.0
    scale = POSE_DOF * math.log1p(sizes.mean())
    x[:, 4] = np.clip(_marginals(w, n_map, pi.log_det_pi) / scale, -MARGINAL_CLIP, MARGINAL_CLIP)
    adj = w / max(1.0, w.max())
    ids = tuple(map_ids) + tuple(f.id for f in cand)
    return BaseEncoding(ids, n_map, x, adj, rates, fill, up, ev)


def global_vector(base: BaseEncoding, latent: LatentFeatures) -> np.ndarray:
    n_cand = len(base.ids) - base.n_map
    extra = [base.map_fill, base.budget / max(1, n_cand), base.evict / max(1, len(base.ids))]
    return np.concatenate([base.rates, latent.mu, latent.sigma, extra])


def encode_state(s: EnvState, latent: LatentFeatures, config: EnvConfig = EnvConfig(),
                 pi: PoseInfoMatrix | None = None, rate_scale: float = D_MAX) -> StateEncoding:
    """Numerical form of the augmented state [s, mu, Sigma]."""
    base = encode_base(s, config, pi, rate_scale)
    return StateEncoding(base, global_vector(base, latent))


@dataclass
class Batch:
    x: np.ndarray          # (B, n, F)
    adj: np.ndarray        # (B, n, n)
    mask: np.ndarray       # (B, n)
    g: np.ndarray          # (B, G)
    encodings: list


def collate(encodings) -> Batch:
    encodings = list(encodings)
    if not encodings:
        raise ValueError("empty batch")
    b = len(encodings)
    n = max(1, max(e.n for e in encodings))
    x = np.zeros((b, n, N_NODE_FEATURES))
    adj = np.zeros((b, n, n))
    mask = np.zeros((b, n))
    for k, e in enumerate(encodings):
        x[k, :e.n] = e.base.x
        adj[k, :e.n, :e.n] = e.base.adj
        mask[k, :e.n] = 1.0
    g = np.stack([e.g for e in encodings])
    return Batch(x, adj, mask, g, encodings)


def membership(enc: StateEncoding, a: Action, width: int | None = None) -> np.ndarray:
    """1 for every node that is in the map after the action."""
    ids = enc.base.ids
    out = np.zeros(width or len(ids))
    for i, fid in enumerate(ids):
        stored = i < enc.n_map
        if (stored or fid in a.upload) and fid not in a.evict:
            out[i] = 1.0
    return out


# ---- networks ---------------------------------------------------------------

def standardize(raw: Tensor, mask: np.ndarray, eps: float = 1e-6) -> Tensor:
    """Zero-mean, unit-variance scores over the real nodes of each state.
    Selection only depends on the score order, and a fixed scale keeps the
    exploration noise and the relaxation temperature meaningful."""
    cnt = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    mean = (raw * mask).sum(axis=1, keepdims=True) * (1.0 / cnt)
    dev = (raw - mean) * mask
    var = (dev * dev).sum(axis=1, keepdims=True) * (1.0 / cnt)
    return dev * ((var + eps) ** -0.5)


class Actor(Module):
    """Graph-conv embedding plus a dense head emitting one score per frame."""

    def __init__(self, global_dim, gcn=(32, 16), dense=(32, 16), rng=None, prior=0.0):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.gcn = GraphEncoder([N_NODE_FEATURES, *gcn], rng)
        self.head = MLP([gcn[-1] + N_NODE_FEATURES + global_dim, *dense, 1], rng)
        self.prior = prior

    def forward(self, batch: Batch) -> Tensor:
        a_norm = normalize_adjacency(batch.adj) * batch.mask[:, :, None] * batch.mask[:, None, :]
        x = Tensor(batch.x)
        h = self.gcn(x, a_norm, batch.mask)
        b, n = batch.mask.shape
        g = np.broadcast_to(batch.g[:, None, :], (b, n, batch.g.shape[1]))
        raw = self.head(concat([h, x, Tensor(g)], axis=-1)).reshape(b, n)
        if self.prior:
            raw = raw + self.prior * batch.x[:, :, 4]
        return standardize(raw, batch.mask)


class Critic(Module):
    """Q(state, membership) = V(state) + mean advantage of the kept frames.

    Frames are embedded by graph convolution over the full overlap graph of
    the slot.  V reads the mean embedding and the global vector; each frame's
    advantage reads its embedding, its features and the global vector.  The
    action enters only through which advantages are averaged, so the gradient
    with respect to one frame's membership is that frame's advantage."""

    def __init__(self, global_dim, gcn=(32, 16), dense=(32, 16), rng=None):
        rng = rng if rng is not None else np.random.default_rng(1)
        self.gcn = GraphEncoder([N_NODE_FEATURES, *gcn], rng)
        self.value = MLP([gcn[-1] + global_dim, *dense, 1], rng)
        self.advantage = MLP([gcn[-1] + N_NODE_FEATURES + global_dim, *dense, 1], rng)

    def forward(self, batch: Batch, member) -> Tensor:
        member = member if isinstance(member, Tensor) else Tensor(member)
        b, n = batch.mask.shape
        a_norm = normalize_adjacency(batch.adj) * batch.mask[:, :, None] * batch.mask[:, None, :]
        x = Tensor(batch.x)
        h = self.gcn(x, a_norm, batch.mask)
        count = np.maximum(batch.mask.sum(axis=1, keepdims=True), 1.0)
        mean_h = h.sum(axis=1) * (1.0 / count)
        v = self.value(concat([mean_h, Tensor(batch.g)], axis=-1)).reshape(b)
        g = np.broadcast_to(batch.g[:, None, :], (b, n, batch.g.shape[1]))
        adv = self.advantage(concat([h, x, Tensor(g)], axis=-1)).reshape(b, n)
        size = np.maximum(np.asarray(member.data * batch.mask).sum(axis=1), 1.0)
        return v + (adv * member * batch.mask).sum(axis=1) * (1.0 / size)


# ---- action selection ------------------------------------------------------

def _top(scores, ids, k):
    """Indices of the k largest scores; ties go to the lower id."""
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return order[:k]


def select(scores, enc: StateEncoding, budget: int, evict_count: int) -> Action:
    ids = enc.base.ids
    n_map = enc.n_map
    cand = list(range(n_map, enc.n))
    chosen = [cand[i] for i in _top([scores[c] for c in cand], [ids[c] for c in cand], budget)]
    pool = list(range(n_map)) + sorted(chosen)
    keep = len(pool) - evict_count
    order = sorted(pool, key=lambda i: (-scores[i], -ids[i]))
    evicted = order[keep:] if evict_count > 0 else []
    return Action([ids[i] for i in chosen], [ids[i] for i in evicted])


def act(actor: Actor, enc: StateEncoding, budget: int | None = None,
        evict_count: int | None = None, noise: float = 0.0, rng=None) -> Action:
    """Top-``budget`` candidate scores are uploaded, bottom-``evict_count``
    retention scores among stored + uploaded frames are evicted.  Gaussian
    noise of std ``noise`` perturbs the scores (training only)."""
    budget = enc.base.budget if budget is None else budget
    evict_count = enc.base.evict if evict_count is None else evict_count
    if enc.n == 0:
        return Action()
    scores = actor(collate([enc])).data[0, :enc.n].copy()
    if noise > 0:
        rng = rng if rng is not None else np.random.default_rng()
        scores = scores + rng.normal(0.0, noise, size=scores.shape)
    return select(scores, enc, budget, evict_count)


def _threshold(sorted_desc, k):
    if k <= 0 or k >= len(sorted_desc):
        return None
    return 0.5 * (sorted_desc[k - 1] + sorted_desc[k])


@dataclass
class Gates:
    """Constant parts of the relaxed selection (thresholds and fixed entries)."""
    up_t: np.ndarray
    up_on: np.ndarray
    up_fix: np.ndarray
    ev_t: np.ndarray
    ev_on: np.ndarray
    ev_fix: np.ndarray
    count: np.ndarray      # (B, 1) map size after the hard action


def relaxation_gates(raw: np.ndarray, batch: Batch) -> Gates:
    """Thresholds sit midway between the last selected and the first
    rejected score, for the upload and for the retention selection."""
    b, n = batch.mask.shape
    gt = Gates(*(np.zeros((b, n)) for _ in range(6)), count=np.zeros((b, 1)))
    for k, enc in enumerate(batch.encodings):
        n_map, size = enc.n_map, enc.n
        cand = raw[k, n_map:size]
        t = _threshold(np.sort(cand)[::-1], enc.base.budget)
        if t is None:
            gt.up_fix[k, n_map:size] = 1.0 if enc.base.budget >= len(cand) else 0.0
        else:
            gt.up_t[k, n_map:size] = t
            gt.up_on[k, n_map:size] = 1.0
        gt.up_fix[k, :n_map] = 1.0
        hard = select(raw[k, :size], enc, enc.base.budget, enc.base.evict)
        pool = [i for i, fid in enumerate(enc.base.ids) if i < n_map or fid in hard.upload]
        gt.count[k, 0] = len(pool) - len(hard.evict)
        t = _threshold(np.sort(raw[k, pool])[::-1], len(pool) - enc.base.evict)
        if t is None or enc.base.evict == 0:
            gt.ev_fix[k, :size] = 1.0
        else:
            gt.ev_t[k, :size] = t
            gt.ev_on[k, :size] = 1.0
    return gt


def soft_membership(scores: Tensor, batch: Batch, temperature: float,
                    gates: Gates | None = None) -> Tensor:
    """Sigmoid relaxation of the hard selection.  The gates are computed from
    the current scores but held constant, so gradients only move the scores."""
    gt = gates if gates is not None else relaxation_gates(scores.data, batch)
    inv = 1.0 / temperature
    up = ((scores - gt.up_t) * inv).sigmoid() * gt.up_on + gt.up_fix
    keep = ((scores - gt.ev_t) * inv).sigmoid() * gt.ev_on + gt.ev_fix
    soft = up * keep * batch.mask
    # the map size is fixed by the cardinalities, so rescale to the hard
    # count: only swaps between frames remain as directions for the actor
    return soft * (gt.count / (soft.sum(axis=1, keepdims=True) + 1e-9))


# ---- learner ----------------------------------------------------------------

@dataclass
class ReplayBatch:
    states: Batch
    members: np.ndarray
    rewards: np.ndarray
    next_states: Batch
    n_real: int
    n_artificial: int


class RunningNorm:
    """Running mean / std (Welford)."""

    def __init__(self, clip=5.0):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.clip = clip

    def update(self, values):
        for v in np.atleast_1d(values):
            self.n += 1
            d = v - self.mean
            self.mean += d / self.n
            self.m2 += d * (v - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.n) if self.n > 1 else 1.0

    def __call__(self, values):
        z = (np.asarray(values, dtype=float) - self.mean) / max(self.std, 1e-8)
        return np.clip(z, -self.clip, self.clip)


class ActorCritic(Module):
    """Actor, critic, their target copies and optimisers.  Checkpoints hold
    all four networks in that order."""

    def __init__(self, global_dim, gcn=(32, 16), dense=(32, 16), actor_lr=1e-3, critic_lr=1e-3,
                 soft_update=0.01, temperature=0.5, seed=0, prior=0.0):
        rng = np.random.default_rng(seed)
        self.actor = Actor(global_dim, gcn, dense, rng, prior)
        self.critic = Critic(global_dim, gcn, dense, rng)
        self.target_actor = Actor(global_dim, gcn, dense, rng, prior)
        self.target_critic = Critic(global_dim, gcn, dense, rng)
        self.target_actor.copy_from(self.actor)
        self.target_critic.copy_from(self.critic)
        self.actor_opt = Adam(self.actor.parameters(), lr=actor_lr, clip_norm=5.0)
        self.critic_opt = Adam(self.critic.parameters(), lr=critic_lr, clip_norm=5.0)
        self.soft_update = soft_update
        self.temperature = temperature

    def update_targets(self):
        self.target_actor.copy_from(self.actor, self.soft_update)
        self.target_critic.copy_from(self.critic, self.soft_update)


def target_values(ac: ActorCritic, batch: ReplayBatch, gamma: float) -> np.ndarray:
    nxt = batch.next_states
    scores = ac.target_actor(nxt).data
    width = nxt.mask.shape[1]
    members = np.stack([
        membership(e, select(scores[k, :e.n], e, e.base.budget, e.base.evict), width)
        for k, e in enumerate(nxt.encodings)])
    q_next = ac.target_critic(nxt, members).data
    return batch.rewards + gamma * q_next


def critic_loss(ac: ActorCritic, batch: ReplayBatch, targets: np.ndarray) -> Tensor:
    q = ac.critic(batch.states, batch.members)
    diff = q - targets
    return (diff * diff).mean()


def critic_update(ac: ActorCritic, batch: ReplayBatch, gamma: float) -> float:
    """One Adam step on the mean squared TD error (targets from the target
    networks).  Returns the loss before the step."""
    y = target_values(ac, batch, gamma)
    ac.critic_opt.zero_grad()
    loss = critic_loss(ac, batch, y)
    loss.backward()
    ac.critic_opt.step()
    return float(loss.data)


def actor_objective(ac: ActorCritic, states: Batch, gates: Gates | None = None) -> Tensor:
    """Mean Q(s, pi(s)) with the relaxed membership."""
    scores = ac.actor(states)
    m = soft_membership(scores, states, ac.temperature, gates)
    return ac.critic(states, m).mean()


def actor_update(ac: ActorCritic, batch: ReplayBatch) -> float:
    """Deterministic policy-gradient ascent step.  Returns the actor
    gradient norm."""
    ac.actor_opt.zero_grad()
    ac.critic.zero_grad()
    (-actor_objective(ac, batch.states)).backward()
    norm = grad_norm(ac.actor.parameters())
    ac.actor_opt.step()
    ac.critic.zero_grad()
    return norm


# ---- the AMM loop -------------------------------------------------------------

@dataclass
class AMMHyper:
    W: int = 50                # UDT refresh cadence (slots)
    J: int = 5                 # artificial tuples per real one
    batch: int = 32            # |Xi|
    real: int = 16             # I
    gamma: float | None = None  # defaults to the env discount
    noise_start: float = 0.3
    noise_end: float = 0.05
    updates_per_slot: int = 1
    critic_steps: int = 1      # critic updates per actor update
    soft_update: float = 0.01
    temperature: float = 0.5
    prior: float = 0.0
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gcn: tuple = (32, 16)
    dense: tuple = (32, 16)
    real_capacity: int = 5000
    artificial_capacity: int = 10_000
    udt_min_samples: int = 16

    def __post_init__(self):
        if not 0 <= self.real <= self.batch:
            raise ValueError("need 0 <= I <= |Xi|")
        if self.W < 1 or self.J < 0 or self.updates_per_slot < 0 or self.critic_steps < 1:
            raise ValueError("W and critic_steps must be positive, J and updates_per_slot non-negative")


def noise_at(hyper: AMMHyper, k: int, total: int) -> float:
    if total <= 1:
        return hyper.noise_end
    frac = min(1.0, k / (total - 1))
    return hyper.noise_start + (hyper.noise_end - hyper.noise_start) * frac


@dataclass
class BlendCounts:
    real: int
    artificial: int
    backfilled: int = 0


def blend_indices(n_real: int, n_art: int, batch: int, real: int, rng):
    """Sample I real and |Xi|-I artificial indices without replacement; real
    tuples backfill a short artificial set.  Returns (real_idx, art_idx, counts)."""
    want_art = batch - real
    take_art = min(want_art, n_art)
    take_real = min(n_real, batch - take_art)
    r_idx = rng.choice(n_real, size=take_real, replace=False) if take_real else np.zeros(0, int)
    a_idx = rng.choice(n_art, size=take_art, replace=False) if take_art else np.zeros(0, int)
    back = max(0, take_real - real)
    return r_idx, a_idx, BlendCounts(take_real, take_art, back)


class AMMAgent:
    """Actor-critic plus the user twin and the encoding caches it needs."""

    def __init__(self, env: MapEnv, twin: UserTwin, hyper: AMMHyper = AMMHyper(), seed: int = 0):
        self.env = env
        self.config = env.config
        self.twin = twin
        self.hyper = hyper
        self.rng = np.random.default_rng(seed)
        gdim = env.timeline.tau + 1 + 2 * twin.latent_dim + 3
        self.ac = ActorCritic(gdim, hyper.gcn, hyper.dense, hyper.actor_lr, hyper.critic_lr,
                              hyper.soft_update, hyper.temperature, seed, hyper.prior)
        self.store = ExperienceStore(hyper.real_capacity, hyper.artificial_capacity)
        self.norm = RunningNorm()
        self.gamma = hyper.gamma if hyper.gamma is not None else env.config.gamma
        self._base: OrderedDict = OrderedDict()
        self.cache_size = 8192

    def encode(self, s: EnvState) -> StateEncoding:
        hit = self._base.get(id(s))
        if hit is None or hit[0] is not s:
            hit = (s, encode_base(s, self.config))
            self._base[id(s)] = hit
            if len(self._base) > self.cache_size:
                self._base.popitem(last=False)
        else:
            self._base.move_to_end(id(s))
        base = hit[1]
        return StateEncoding(base, global_vector(base, self.twin.latent(s.rate_states)))

    def policy(self, s: EnvState, noise: float = 0.0) -> Action:
        return act(self.ac.actor, self.encode(s), noise=noise, rng=self.rng)

    def replay_batch(self) -> ReplayBatch | None:
        real = list(self.store.real)
        art = self.store.artificial
        if not real:
            return None
        h = self.hyper
        r_idx, a_idx, counts = blend_indices(len(real), len(art), h.batch, h.real, self.rng)
        if counts.backfilled:
            log.debug("blend: %d real tuples backfill the artificial share", counts.backfilled)
        tuples = [real[i] for i in r_idx] + [art[i] for i in a_idx]
        states = collate([self.encode(xi.state) for xi in tuples])
        nxt = collate([self.encode(xi.next_state) for xi in tuples])
        width = states.mask.shape[1]
        members = np.stack([membership(e, xi.action, width)
                            for e, xi in zip(states.encodings, tuples)])
        rewards = self.norm(np.array([xi.reward for xi in tuples]))
        return ReplayBatch(states, members, rewards, nxt, counts.real, counts.artificial)

    def learn(self) -> tuple[float, float]:
        c_loss = a_norm = math.nan
        for _ in range(self.hyper.updates_per_slot):
            batch = self.replay_batch()
            if batch is None:
                break
            c_loss = critic_update(self.ac, batch, self.gamma)
            for _ in range(self.hyper.critic_steps - 1):
                c_loss = critic_update(self.ac, self.replay_batch(), self.gamma)
            a_norm = actor_update(self.ac, batch)
            self.ac.update_targets()
        return c_loss, a_norm

    def refresh_twin(self) -> bool:
        ok = udt_update(self.store, self.twin, self.config, self.env.penalty, self.hyper.J,
                        self.rng, self.hyper.udt_min_samples)
        if ok:
            self.norm.update([xi.reward for xi in self.store.artificial])
        return ok


@dataclass
class SlotRecord:
    slot: int
    interval: int
    rate: float
    budget: int
    n_upload: int
    n_evict: int
    map_size: int
    upsilon: float
    reward: float
    noise: float
    critic_loss: float = math.nan
    actor_grad: float = math.nan
    udt_updated: bool = False


def amm_run(env: MapEnv, twin: UserTwin, hyper: AMMHyper = AMMHyper(), seed: int = 0,
            agent: AMMAgent | None = None):
    """Run the AMM loop over the whole timeline.

    Per slot: extract the latent features, act with exploration noise, step
    the environment, train critic and actor on a blended batch, store the
    real tuple, and refresh the twin when k mod W == W - 1.
    Returns (agent, list of SlotRecord).
    """
    s = env.state if env.state is not None else env.reset()
    agent = agent or AMMAgent(env, twin, hyper, seed)
    total = env.timeline.total_slots
    records = []
    while not env.done:
        k = s.slot
        noise = noise_at(hyper, k, total)
        a = agent.policy(s, noise)
        budget, _ = slot_cardinalities(s, env.config)
        nxt, reward, xi = env.step(a)
        c_loss, a_norm = agent.learn()
        agent.store.collect(xi)
        agent.norm.update([reward])
        updated = False
        if k % hyper.W == hyper.W - 1:
            updated = agent.refresh_twin()
        records.append(SlotRecord(k, s.interval, s.rate, budget, len(a.upload), len(a.evict),
                                  len(nxt.map), xi.upsilon, reward, noise, c_loss, a_norm,
                                  updated))
        s = nxt
    return agent, records
