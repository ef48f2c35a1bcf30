import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgemap.channel import Channel, RegimeModel, rate_palette
from edgemap.env import validate_action
from edgemap.neural import Tensor
from edgemap.udt import (
    BrokenChainError,
    Decoder,
    Encoder,
    ExperienceStore,
    UserTwin,
    elbo_loss,
    extract_latent,
    generate_artificial,
    implied_transition_matrix,
    kl_standard_normal,
    trace_samples,
    udt_update,
)
from envs import make_env
from gradutil import check_grads
from edgemap.policies import make_policy


def _zero(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def _rollout(seed=0, slots=6, intervals=2):
    env = make_env(seed=seed, v_max=12, slots=slots, intervals=intervals)
    policy = make_policy("lff", env.config)
    s = env.reset()
    out = []
    while not env.done:
        s, _, xi = env.step(policy(s))
        out.append(xi)
    return env, out


def _rig_decoder(dec: Decoder, rows: np.ndarray, latent_dim: int):
    """Decoder whose output for current state s is exactly ``rows[s]``."""
    n = rows.shape[0]
    first, second, last = dec.net.layers
    _zero(dec)
    first.weight.data[latent_dim:latent_dim + n, :n] = np.eye(n)
    second.weight.data[:n, :n] = np.eye(n)
    last.weight.data[:n, :] = np.log(rows)


# ---- store -----------------------------------------------------------------

def test_collect_and_capacity():
    _, xs = _rollout()
    store = ExperienceStore(capacity=2)
    store.collect(xs[0])
    assert len(store) == 1
    store.collect(xs[1]).collect(xs[2])
    assert list(store.real) == xs[1:3]


def test_collect_rejects_broken_chain():
    _, xs = _rollout()
    store = ExperienceStore()
    store.collect(xs[0])
    with pytest.raises(BrokenChainError):
        store.collect(xs[2])


# ---- ELBO ------------------------------------------------------------------

def test_kl_zero_for_prior_matching_encoder():
    enc, dec = Encoder(4, rng=np.random.default_rng(0)), Decoder(4)
    _zero(enc)
    _, _, kl = elbo_loss(enc, dec, [[0, 1, 2]], [3], noise=np.zeros((1, 8)))
    assert kl == 0.0


def test_uniform_decoder_reconstruction_is_log_n():
    enc, dec = Encoder(4), Decoder(4)
    _zero(dec)
    _, recon, _ = elbo_loss(enc, dec, [[0, 1], [2, 3]], [1, 0], rng=np.random.default_rng(1))
    assert recon == pytest.approx(np.log(4))


@given(arrays(float, (3, 5), elements=st.floats(-3, 3)),
       arrays(float, (3, 5), elements=st.floats(-3, 3)))
@settings(max_examples=50, deadline=None)
def test_kl_non_negative(mu, log_var):
    kl = kl_standard_normal(Tensor(mu), Tensor(log_var)).data
    assert (kl >= -1e-12).all()


def test_elbo_gradcheck_with_frozen_noise():
    rng = np.random.default_rng(2)
    enc = Encoder(3, latent_dim=2, hidden=4, dense=(5, 4), rng=rng)
    dec = Decoder(3, latent_dim=2, dense=(5, 4), rng=rng)
    hist = rng.integers(0, 3, size=(4, 3))
    nxt = rng.integers(0, 3, size=4)
    noise = rng.standard_normal((4, 2))
    check_grads(lambda: elbo_loss(enc, dec, hist, nxt, noise=noise)[0],
                enc.parameters() + dec.parameters(), tol=1e-3)


def test_decoder_outputs_distributions():
    rng = np.random.default_rng(3)
    enc, dec = Encoder(4, rng=rng), Decoder(4, rng=rng)
    hist = rng.integers(0, 4, size=(10, 6))
    mu, _ = enc(np.eye(4)[hist])
    p = np.exp(dec(mu, hist[:, -1]).data)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9) and (p >= 0).all()


# ---- latent extraction ------------------------------------------------------

def test_extract_latent_deterministic_and_checked():
    enc = Encoder(2, rng=np.random.default_rng(4))
    a = extract_latent(enc, [0, 1, 1, 0], window=4)
    b = extract_latent(enc, [0, 1, 1, 0], window=4)
    np.testing.assert_array_equal(a.mu, b.mu)
    assert (a.sigma > 0).all()
    with pytest.raises(ValueError):
        extract_latent(enc, [0, 1], window=4)


def test_zero_encoder_latent_is_prior():
    enc = Encoder(3)
    _zero(enc)
    lat = extract_latent(enc, [0, 2, 1])
    assert not lat.mu.any()
    np.testing.assert_array_equal(lat.sigma, np.ones(8))


def test_latent_separates_regimes_after_training():
    alternating = np.array([[0.2, 0.8], [0.8, 0.2]])
    sticky = np.array([[0.8, 0.2], [0.2, 0.8]])
    rng = np.random.default_rng(0)
    traces, labels = [], []
    for t in range(12):
        ch = Channel(RegimeModel([(alternating, sticky)[t % 2]]), rate_palette(2), 10**9, rng)
        traces.append(ch.trace(150))
        labels.append(np.full(150, t % 2))
    hist, nxt = trace_samples(np.concatenate(traces), 7)
    lab = np.concatenate(labels)[8:]
    twin = UserTwin(2, 8, rate_palette(2), steps=2000, seed=0)
    twin.fit(hist, nxt)
    mu = twin.encoder(np.eye(2)[hist])[0].data
    a, b = mu[lab == 0][:300], mu[lab == 1][:300]

    def dist(x, y):
        return np.mean(np.linalg.norm(x[:, None] - y[None], axis=-1))
    assert (dist(a, a) + dist(b, b)) / 2 < dist(a, b)


# ---- artificial experiences -------------------------------------------------

def _twin_for(env, seed=0):
    return UserTwin(env.channel.model.n_states, env.timeline.tau + 1, env.channel.palette,
                    hidden=8, dense=(8, 8), latent_dim=2, steps=5, seed=seed)


def test_generate_artificial_counts_and_feasibility():
    env, xs = _rollout(slots=5, intervals=2)
    store = ExperienceStore()
    for xi in xs:
        store.collect(xi)
    twin = _twin_for(env)
    rng = np.random.default_rng(0)
    assert generate_artificial(store, twin, env.config, env.penalty, 0, rng) == []
    out = generate_artificial(store, twin, env.config, env.penalty, 5, rng)
    assert len(out) == 5 * len(xs) == 50
    for art in out:
        assert art.artificial and validate_action(art.state, art.action, env.config) is None
    assert list(store.real) == xs


def test_rigged_artificial_reward_equals_real():
    env, xs = _rollout()
    store = ExperienceStore()
    for xi in xs:
        store.collect(xi)
    out = generate_artificial(
        store, _twin_for(env), env.config, env.penalty, 1, np.random.default_rng(0),
        action_sampler=lambda s, rng: next(x.action for x in xs if x.state is s),
        next_state_sampler=lambda xi, rng: xi.next_state.rate_states[-1])
    for art, xi in zip(out, xs):
        assert art.reward == xi.reward
        assert art.next_state.map == xi.next_state.map


def test_artificial_reproducible():
    def gen():
        env, xs = _rollout()
        store = ExperienceStore()
        for xi in xs:
            store.collect(xi)
        out = generate_artificial(store, _twin_for(env, 3), env.config, env.penalty, 2,
                                  np.random.default_rng(9))
        return [(a.action, a.reward, a.next_state.rate_states) for a in out]
    assert gen() == gen()


def test_udt_update_regenerates_and_descends():
    env, xs = _rollout()
    store = ExperienceStore()
    for xi in xs:
        store.collect(xi)
    twin = _twin_for(env)
    assert udt_update(store, twin, env.config, env.penalty, 3, np.random.default_rng(0))
    assert len(store.artificial) == 3 * len(store)
    assert not udt_update(ExperienceStore(), twin, env.config, env.penalty, 3,
                          np.random.default_rng(0))


def test_single_step_descent_with_fixed_noise():
    rng = np.random.default_rng(5)
    twin = UserTwin(3, 4, rate_palette(3), lr=1e-3, seed=1)
    hist = rng.integers(0, 3, size=(32, 4))
    nxt = rng.integers(0, 3, size=32)
    noise = rng.standard_normal((32, twin.latent_dim))
    before, _, _ = twin.loss(hist, nxt, noise)
    twin.opt.zero_grad()
    before.backward()
    twin.opt.step()
    after, _, _ = twin.loss(hist, nxt, noise)
    assert float(after.data) <= float(before.data)


# ---- implied transition matrix ---------------------------------------------

def test_implied_matrix_uniform_for_zero_nets():
    enc, dec = Encoder(3), Decoder(3)
    _zero(enc)
    _zero(dec)
    np.testing.assert_allclose(implied_transition_matrix(enc, dec, 4), np.full((3, 3), 1 / 3))


def test_implied_matrix_rigged_decoder():
    rows = np.array([[0.7, 0.2, 0.1], [0.3, 0.3, 0.4], [0.05, 0.05, 0.9]])
    enc, dec = Encoder(3, latent_dim=8), Decoder(3, latent_dim=8)
    _zero(enc)
    _rig_decoder(dec, rows, 8)
    np.testing.assert_allclose(implied_transition_matrix(enc, dec, 5), rows, atol=1e-12)


def test_identity_chain_learned():
    hist, nxt = [], []
    for s in range(3):
        h, n = trace_samples(np.full(60, s), 4)
        hist.append(h)
        nxt.append(n)
    twin = UserTwin(3, 5, rate_palette(3), steps=300, seed=0)
    twin.fit(np.concatenate(hist), np.concatenate(nxt))
    m = twin.transition_matrix()
    off = m[~np.eye(3, dtype=bool)]
    assert off.max() < 0.1
