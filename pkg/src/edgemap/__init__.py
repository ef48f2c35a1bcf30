"""Edge-assisted AR map management: co-visibility map graphs, a Laplacian
uncertainty metric, a regime-switching Markov uplink, a variational channel
twin, and an actor-critic map manager with blended replay."""

__version__ = "0.1.0"
