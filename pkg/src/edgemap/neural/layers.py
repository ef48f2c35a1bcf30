"""Layers built on the autodiff tensor: dense stacks, gated recurrent cells,
graph convolution, and the softmax / diagonal-Gaussian output heads."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, parameter

ACTIVATIONS = {
    None: lambda x: x,
    "linear": lambda x: x,
    "relu": Tensor.relu,
    "tanh": Tensor.tanh,
    "sigmoid": Tensor.sigmoid,
}


class Module:
    """Parameter container.  Parameters are discovered by attribute walk in
    definition order, which fixes the checkpoint layout."""

    def parameters(self) -> list[Tensor]:
        out, seen = [], set()

        def walk(obj):
            if isinstance(obj, Tensor):
                if obj.requires_grad and id(obj) not in seen:
                    seen.add(id(obj))
                    out.append(obj)
            elif isinstance(obj, Module):
                for v in vars(obj).values():
                    walk(v)
            elif isinstance(obj, (list, tuple)):
                for v in obj:
                    walk(v)
        walk(self)
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state_arrays(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.data.shape != np.shape(a):
                raise ValueError(f"shape mismatch {p.data.shape} vs {np.shape(a)}")
            p.data = np.array(a, dtype=float)

    def copy_from(self, other: "Module", tau: float = 1.0):
        """Soft update: self <- tau * other + (1 - tau) * self."""
        for p, q in zip(self.parameters(), other.parameters()):
            p.data = tau * q.data + (1.0 - tau) * p.data

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _init_weight(rng, fan_in, fan_out, init):
    if init == "zeros":
        return np.zeros((fan_in, fan_out))
    if init == "identity":
        if fan_in != fan_out:
            raise ValueError("identity init needs a square layer")
        return np.eye(fan_in)
    if init == "xavier":
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))
    raise ValueError(f"unknown init {init!r}")


class Linear(Module):
    def __init__(self, n_in, n_out, rng=None, init="xavier"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.weight = parameter(_init_weight(rng, n_in, n_out, init))
        self.bias = parameter(np.zeros(n_out))

    def forward(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"expected last dim {self.n_in}, got {x.shape[-1]}")
        return x @ self.weight + self.bias


class MLP(Module):
    def __init__(self, sizes, rng=None, activation="relu", out_activation=None, init="xavier"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = tuple(sizes)
        self.layers = [Linear(a, b, rng, init) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation
        self.out_activation = out_activation

    def forward(self, x):
        act = ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return ACTIVATIONS[self.out_activation](self.layers[-1](x))


class GRUCell(Module):
    def __init__(self, n_in, hidden, rng=None, init="xavier"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        self.w_x = parameter(_init_weight(rng, n_in, 3 * hidden, init))
        self.w_h = parameter(_init_weight(rng, hidden, 3 * hidden, init))
        self.bias = parameter(np.zeros(3 * hidden))

    def forward(self, x, h):
        n = self.hidden
        gx = x @ self.w_x + self.bias
        gh = h @ self.w_h
        r = (gx[..., :n] + gh[..., :n]).sigmoid()
        z = (gx[..., n:2 * n] + gh[..., n:2 * n]).sigmoid()
        cand = (gx[..., 2 * n:] + r * gh[..., 2 * n:]).tanh()
        return (1.0 - z) * cand + z * h, None


class LSTMCell(Module):
    def __init__(self, n_in, hidden, rng=None, init="xavier"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.hidden = n_in, hidden
        self.w_x = parameter(_init_weight(rng, n_in, 4 * hidden, init))
        self.w_h = parameter(_init_weight(rng, hidden, 4 * hidden, init))
        bias = np.zeros(4 * hidden)
        if init != "zeros":
            bias[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.bias = parameter(bias)

    def forward(self, x, h, c):
        n = self.hidden
        g = x @ self.w_x + h @ self.w_h + self.bias
        i = g[..., :n].sigmoid()
        f = g[..., n:2 * n].sigmoid()
        cand = g[..., 2 * n:3 * n].tanh()
        o = g[..., 3 * n:].sigmoid()
        c = f * c + i * cand
        return o * c.tanh(), c


CELLS = {"gru": GRUCell, "lstm": LSTMCell}


class Recurrent(Module):
    """Stack of recurrent cells run over a (batch, time, features) sequence;
    returns the last hidden state of the top layer."""

    def __init__(self, n_in, hidden, layers=1, cell="gru", rng=None, init="xavier"):
        if cell not in CELLS:
            raise ValueError(f"unknown recurrent cell {cell!r}; choose from {sorted(CELLS)}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cell_type = cell
        self.hidden = hidden
        self.cells = [CELLS[cell](n_in if i == 0 else hidden, hidden, rng, init)
                      for i in range(layers)]

    def forward(self, seq):
        seq = as_tensor(seq)
        if seq.ndim != 3 or seq.shape[-1] != self.cells[0].n_in:
            raise ValueError(f"expected (batch, time, {self.cells[0].n_in}), got {seq.shape}")
        batch, steps = seq.shape[0], seq.shape[1]
        xs = [seq[:, t, :] for t in range(steps)]
        for cell in self.cells:
            h = Tensor(np.zeros((batch, self.hidden)))
            c = Tensor(np.zeros((batch, self.hidden)))
            outs = []
            for x in xs:
                if self.cell_type == "lstm":
                    h, c = cell(x, h, c)
                else:
                    h, _ = cell(x, h)
                outs.append(h)
            xs = outs
        return xs[-1]


def normalize_adjacency(adj: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 on the last two axes; zero rows stay zero only
    through an explicit node mask applied by the caller."""
    adj = np.asarray(adj, dtype=float)
    a = adj + np.eye(adj.shape[-1])
    deg = a.sum(axis=-1)
    inv = 1.0 / np.sqrt(deg)
    return a * inv[..., :, None] * inv[..., None, :]


def normalize_adjacency_t(adj: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Differentiable variant used when edge weights depend on parameters.

    ``mask`` (…, n) marks real nodes; padded nodes get no self loop.
    """
    n = adj.shape[-1]
    eye = np.eye(n) if mask is None else np.eye(n) * mask[..., None, :]
    a = adj + eye
    deg = a.sum(axis=-1) + (0.0 if mask is None else (1.0 - mask))
    inv = deg ** -0.5
    return a * inv.reshape(*inv.shape, 1) * inv.reshape(*inv.shape[:-1], 1, inv.shape[-1])


class GraphConv(Module):
    """One propagation step: H' = act(A_norm @ H @ W + b)."""

    def __init__(self, n_in, n_out, rng=None, activation="relu", init="xavier"):
        self.linear = Linear(n_in, n_out, rng, init)
        self.activation = activation

    def forward(self, h, adj_norm):
        h = as_tensor(h)
        adj_norm = as_tensor(adj_norm)
        if adj_norm.shape[-1] != h.shape[-2] or adj_norm.shape[-2] != h.shape[-2]:
            raise ValueError(f"adjacency {adj_norm.shape} does not match {h.shape[-2]} nodes")
        return ACTIVATIONS[self.activation](self.linear(adj_norm @ h))


def graph_conv(node_features, adjacency, layer: GraphConv, normalize=True):
    adjacency = np.asarray(adjacency, dtype=float)
    if adjacency.shape[-1] != adjacency.shape[-2]:
        raise ValueError("adjacency must be square")
    if np.max(np.abs(adjacency - np.swapaxes(adjacency, -1, -2)), initial=0.0) > 1e-12:
        raise ValueError("adjacency must be symmetric")
    adj = normalize_adjacency(adjacency) if normalize else adjacency
    return layer(node_features, adj)


class GraphEncoder(Module):
    def __init__(self, sizes, rng=None, activation="relu"):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.convs = [GraphConv(a, b, rng, activation) for a, b in zip(sizes[:-1], sizes[1:])]

    def forward(self, h, adj_norm, mask=None):
        for conv in self.convs:
            h = conv(h, adj_norm)
            if mask is not None:
                h = h * mask[..., None]
        return h


class GaussianHead(Module):
    """Mean and diagonal variance; variance = exp(raw) so it is always positive."""

    def __init__(self, n_in, n_out, rng=None, init="xavier"):
        self.mu = Linear(n_in, n_out, rng, init)
        self.log_var = Linear(n_in, n_out, rng, init)

    def forward(self, x):
        return self.mu(x), self.log_var(x)


class SoftmaxHead(Module):
    def __init__(self, n_in, n_out, rng=None, init="xavier"):
        self.linear = Linear(n_in, n_out, rng, init)

    def forward(self, x):
        """Returns log-probabilities."""
        return self.linear(x).log_softmax(axis=-1)
