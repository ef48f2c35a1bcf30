"""Small environment factories shared by the test modules."""
import numpy as np

from edgemap.channel import Channel, RegimeModel, rate_palette, two_state_matrix
from edgemap.data import FrameSource, SynthParams
from edgemap.env import EnvConfig, MapEnv, Timeline


def make_env(seed=0, v_max=25, frames_per_slot=20, stride=6, slots=10, intervals=2,
             n_states=2, regimes=None, penalty=None, tau=3):
    if regimes is None:
        regimes = [two_state_matrix(0.3), two_state_matrix(0.7)]
    model = RegimeModel([np.asarray(p) for p in regimes])
    channel = Channel(model, rate_palette(n_states), slots, np.random.default_rng(seed + 1000))
    frames = FrameSource.synthetic(SynthParams(stride=stride), seed=seed)
    cfg = EnvConfig(v_max=v_max, penalty=penalty)
    tl = Timeline(frames_per_slot=frames_per_slot, slots_per_interval=slots,
                  num_intervals=intervals, tau=tau)
    return MapEnv(cfg, tl, frames, channel)
