"""Channel-model estimators compared against the twin: a recurrent point
predictor and a frozen empirical Markov fit."""
from __future__ import annotations

import numpy as np

from .channel import empirical_transition_matrix
from .neural import Adam, Linear, Module, Recurrent
from .udt import one_hot_histories


class PointPredictor(Module):
    """Recurrent classifier trained to name the next rate state."""

    def __init__(self, n_states, hidden=32, cell="lstm", layers=1, lr=3e-3, batch=64,
                 steps=100, seed=0):
        self.rng = np.random.default_rng(seed)
        self.n_states = n_states
        self.rnn = Recurrent(n_states, hidden, layers, cell, self.rng)
        self.out = Linear(hidden, n_states, self.rng)
        self.opt = Adam(self.parameters(), lr=lr, clip_norm=5.0)
        self.batch, self.steps = batch, steps

    def forward(self, hist_onehot):
        return self.out(self.rnn(hist_onehot)).log_softmax(axis=-1)

    def fit(self, histories, next_states, steps=None):
        histories = np.asarray(histories, dtype=int)
        target = np.eye(self.n_states)[np.asarray(next_states, dtype=int)]
        losses = []
        for _ in range(self.steps if steps is None else steps):
            idx = self.rng.choice(len(histories), size=min(self.batch, len(histories)),
                                  replace=False)
            self.opt.zero_grad()
            loss = -(self(one_hot_histories(histories[idx], self.n_states)) * target[idx]).sum(axis=-1).mean()
            loss.backward()
            self.opt.step()
            losses.append(float(loss.data))
        return losses

    def predict(self, histories) -> np.ndarray:
        logp = self(one_hot_histories(np.asarray(histories, dtype=int), self.n_states)).data
        return np.argmax(logp, axis=-1)

    def transition_matrix(self, window, histories=None) -> np.ndarray:
        """Row s = frequency of each point prediction over histories ending in s."""
        n = self.n_states
        rows = np.zeros((n, n))
        hist = None if histories is None else np.asarray(histories, dtype=int)
        for s in range(n):
            sel = None if hist is None else hist[hist[:, -1] == s]
            if sel is None or len(sel) == 0:
                sel = np.full((1, window), s)
            rows[s] = np.bincount(self.predict(sel), minlength=n) / len(sel)
        return rows


class FrozenMarkovFit:
    """Empirical transition matrix computed once from a calibration trace."""

    def __init__(self, trace, n_states):
        self.matrix = empirical_transition_matrix(trace, n_states)

    def transition_matrix(self, *_args, **_kw) -> np.ndarray:
        return self.matrix
