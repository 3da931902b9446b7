"""Directed communication graph with a virtual leader and delay-channel indexing.

Direction convention, used by every module: ``adjacency[i, j] != 0`` means
agent ``i`` receives agent ``j``'s state.  Pinning weights are direct links
from the virtual leader to an agent.  Every distinct delay function gets a
dense index: one per unordered follower pair that communicates (both
directions of a bidirectional link experience the same delay and therefore
share the channel), and one per pinned agent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def build_delay_index(follower_edges, pinned_agents):
    """Assign dense delay-channel indices to follower edges and pins.

    ``follower_edges`` is an iterable of directed pairs (i, j); ``pinned_agents``
    an iterable of agent ids with a leader link.  Channels are numbered 0..m-1
    over unordered pairs {i, j} in row-major order of (min, max); the directed
    edges (i, j) and (j, i) share the channel.  Pin indices are numbered by
    ascending agent id.  The overall edge set (followers plus pins) must be
    nonempty, and duplicate edge declarations are rejected.
    """
    edges = [(int(i), int(j)) for i, j in follower_edges]
    pins = sorted({int(i) for i in pinned_agents})
    if not edges and not pins:
        raise ValueError("edge list is empty: no follower edges and no pins")
    seen = set()
    for e in edges:
        if e[0] == e[1]:
            raise ValueError(f"self-loop declared on agent {e[0]}")
        if e in seen:
            raise ValueError(f"duplicate edge declaration {e}")
        seen.add(e)

    pairs = sorted({(min(i, j), max(i, j)) for i, j in edges})
    pair_to_channel = {pair: p for p, pair in enumerate(pairs)}
    follower_delay_index = {
        (i, j): pair_to_channel[(min(i, j), max(i, j))] for i, j in edges
    }
    pin_delay_index = {i: l for l, i in enumerate(pins)}
    return follower_delay_index, pin_delay_index


@dataclass(frozen=True)
class DirectedTopology:
    """Follower adjacency, leader pinning weights and delay-index maps.

    adjacency : (N, N) nonnegative weights, zero diagonal.
    pinning   : (N,) nonnegative leader-link weights, at least one positive.
    """

    adjacency: np.ndarray
    pinning: np.ndarray
    follower_delay_index: dict = field(default_factory=dict)
    pin_delay_index: dict = field(default_factory=dict)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=float)
        pin = np.asarray(self.pinning, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        n = adj.shape[0]
        if pin.shape != (n,):
            raise ValueError(f"pinning must have length {n}, got shape {pin.shape}")
        if np.any(adj < 0.0) or np.any(pin < 0.0):
            raise ValueError("edge weights must be nonnegative")
        if np.any(np.diag(adj) != 0.0):
            raise ValueError("adjacency diagonal must be zero (no self-loops)")
        if not np.any(pin > 0.0):
            raise ValueError("at least one agent must be pinned to the leader")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "pinning", pin)
        if not self.follower_delay_index and not self.pin_delay_index:
            fidx, pidx = build_delay_index(self.edges(), self.pinned_agents())
            object.__setattr__(self, "follower_delay_index", fidx)
            object.__setattr__(self, "pin_delay_index", pidx)

    @property
    def n_agents(self):
        return self.adjacency.shape[0]

    @property
    def n_channels(self):
        """Number of distinct follower delay channels (m)."""
        return len(set(self.follower_delay_index.values()))

    @property
    def n_pins(self):
        return len(self.pin_delay_index)

    def edges(self):
        """Directed follower edges (i, j) with nonzero weight, row-major."""
        ii, jj = np.nonzero(self.adjacency)
        return list(zip(ii.tolist(), jj.tolist()))

    def pinned_agents(self):
        return np.nonzero(self.pinning)[0].tolist()

    def channel_edges(self):
        """Per channel, the list of directed edges sharing that delay."""
        out = [[] for _ in range(self.n_channels)]
        for (i, j), p in sorted(self.follower_delay_index.items()):
            out[p].append((i, j))
        return out


def leader_globally_reachable(topology):
    """True iff every agent can be reached from the leader along the
    direction of information flow (an edge (i, j) carries information
    j -> i; pinning carries leader -> i)."""
    n = topology.n_agents
    frontier = [i for i in range(n) if topology.pinning[i] > 0.0]
    reached = set(frontier)
    adj = topology.adjacency
    while frontier:
        j = frontier.pop()
        for i in np.nonzero(adj[:, j])[0]:
            i = int(i)
            if i not in reached:
                reached.add(i)
                frontier.append(i)
    return len(reached) == n
