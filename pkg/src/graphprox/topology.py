"""Agent networks with symmetric co-regularization weights.

A `Network` stores the neighbor sets of an undirected, connected graph
together with the directed link weights ``rho[k, l]`` and their symmetrized
counterparts ``p[k, l] = (rho[k, l] + rho[l, k]) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Network",
    "TopologyError",
    "build_network",
    "knn_network",
    "ring_network",
    "random_geometric_network",
    "load_topology",
]


class TopologyError(ValueError):
    """Raised when a graph violates the network invariants."""


@dataclass(frozen=True)
class Network:
    """Undirected connected agent graph.

    Attributes
    ----------
    num_agents : int
        Number of agents ``K``.
    neighbors : tuple of tuple of int
        ``neighbors[k]`` lists the neighbors of agent ``k`` (self excluded),
        sorted increasingly.
    rho : ndarray, shape (K, K)
        Directed link weights, zero off the edge set.
    coordinates : ndarray or None
        Optional planar positions, shape (K, 2).
    """

    num_agents: int
    neighbors: tuple[tuple[int, ...], ...]
    rho: np.ndarray = field(repr=False)
    coordinates: np.ndarray | None = field(default=None, repr=False)

    @property
    def p(self) -> np.ndarray:
        """Symmetrized weights ``(rho + rho.T) / 2`` restricted to links."""
        return 0.5 * (self.rho + self.rho.T)

    @property
    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.num_agents, self.num_agents), dtype=bool)
        for k, nbrs in enumerate(self.neighbors):
            adj[k, list(nbrs)] = True
        return adj

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=int)

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(k, l)`` with ``k < l``."""
        return [(k, l) for k, nbrs in enumerate(self.neighbors) for l in nbrs if k < l]

    def laplacian(self, weighted: bool = False) -> np.ndarray:
        """Graph Laplacian; unweighted unless `weighted` (then uses ``p``)."""
        w = self.p if weighted else self.adjacency.astype(float)
        return np.diag(w.sum(axis=1)) - w

    def padded_neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor indices and weights padded to the maximum degree.

        Returns ``(index, weight)`` of shape (K, D). Padding slots point at the
        agent itself and carry zero weight, so they never influence a prox.
        """
        K = self.num_agents
        D = max(1, int(self.degrees.max(initial=0)))
        index = np.tile(np.arange(K)[:, None], (1, D))
        weight = np.zeros((K, D))
        p = self.p
        for k, nbrs in enumerate(self.neighbors):
            index[k, : len(nbrs)] = nbrs
            weight[k, : len(nbrs)] = p[k, list(nbrs)]
        return index, weight


def _components(adj: np.ndarray) -> list[list[int]]:
    n, labels = connected_components(adj.astype(int), directed=False)
    return [np.flatnonzero(labels == c).tolist() for c in range(n)]


def build_network(
    adjacency,
    rho=None,
    coordinates=None,
) -> Network:
    """Build a `Network` from a symmetric boolean adjacency matrix.

    Parameters
    ----------
    adjacency : array_like, shape (K, K)
        Symmetric boolean matrix with zero diagonal.
    rho : array_like or mapping, optional
        Directed link weights, either a (K, K) array or a mapping
        ``{(k, l): rho_kl}``. Missing links default to ``1 / card(N_k)``.
    coordinates : array_like, optional
        Planar agent positions kept for reference.
    """
    adj = np.asarray(adjacency).astype(bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise TopologyError(f"adjacency must be square, got shape {adj.shape}")
    K = adj.shape[0]
    if K < 1:
        raise TopologyError("network needs at least one agent")
    if np.any(np.diag(adj)):
        bad = np.flatnonzero(np.diag(adj)).tolist()
        raise TopologyError(f"self-loops are not allowed (agents {bad})")
    if not np.array_equal(adj, adj.T):
        k, l = np.argwhere(adj != adj.T)[0]
        raise TopologyError(f"adjacency is not symmetric: ({k}, {l}) differs from ({l}, {k})")
    comps = _components(adj)
    if len(comps) > 1:
        report = "; ".join(f"{c[:8]}{'...' if len(c) > 8 else ''}" for c in comps)
        raise TopologyError(f"graph is disconnected into {len(comps)} components: {report}")

    neighbors = tuple(tuple(np.flatnonzero(adj[k]).tolist()) for k in range(K))
    weights = np.zeros((K, K))
    for k, nbrs in enumerate(neighbors):
        if nbrs:
            weights[k, list(nbrs)] = 1.0 / len(nbrs)
    if rho is not None:
        if isinstance(rho, Mapping):
            for (k, l), value in rho.items():
                if not adj[k, l]:
                    raise TopologyError(f"weight given for non-link ({k}, {l})")
                weights[k, l] = value
        else:
            given = np.asarray(rho, dtype=float)
            if given.shape != (K, K):
                raise TopologyError(f"rho must have shape {(K, K)}, got {given.shape}")
            weights = np.where(adj, given, 0.0)
    link_w = weights[adj]
    if np.any(~np.isfinite(link_w)) or np.any(link_w <= 0):
        k, l = np.argwhere(adj & ~(weights > 0))[0]
        raise TopologyError(f"link ({k}, {l}) has nonpositive weight {weights[k, l]}")

    coords = None if coordinates is None else np.asarray(coordinates, dtype=float)
    return Network(K, neighbors, weights, coords)


def ring_network(K: int) -> Network:
    """Ring of `K` agents with default weights ``1 / card(N_k)``."""
    if K < 2:
        raise TopologyError(f"ring needs at least 2 agents, got {K}")
    adj = np.zeros((K, K), dtype=bool)
    idx = np.arange(K)
    adj[idx, (idx + 1) % K] = True
    adj[(idx + 1) % K, idx] = True
    return build_network(adj)


def knn_network(coordinates, k_neighbors: int, rho=None) -> Network:
    """Union-symmetrized k-nearest-neighbor graph over planar points.

    Each agent selects its `k_neighbors` closest agents (Euclidean distance,
    ties broken by lower index); a link exists when either endpoint selects
    the other.
    """
    pts = np.asarray(coordinates, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise TopologyError(f"coordinates must have shape (K, 2), got {pts.shape}")
    K = pts.shape[0]
    if not 0 < k_neighbors < K:
        raise TopologyError(f"need 0 < k_neighbors < K, got k={k_neighbors}, K={K}")
    _, first = np.unique(pts, axis=0, return_index=True)
    if len(first) != K:
        dup = sorted(set(range(K)) - set(first.tolist()))
        raise TopologyError(f"duplicate coordinates for agents {dup}")

    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    adj = np.zeros((K, K), dtype=bool)
    order = np.arange(K)
    for k in range(K):
        cand = order[order != k]
        # lexsort: last key is primary -> distance, then index
        ranked = cand[np.lexsort((cand, dist[k, cand]))]
        adj[k, ranked[:k_neighbors]] = True
    adj |= adj.T
    comps = _components(adj)
    if len(comps) > 1:
        raise TopologyError(
            f"{k_neighbors}-NN graph is disconnected ({len(comps)} components, sizes "
            f"{sorted(len(c) for c in comps)}); raise k_neighbors"
        )
    return build_network(adj, rho=rho, coordinates=pts)


def random_geometric_network(K: int, k_neighbors: int = 3, seed=0) -> Network:
    """k-NN network over `K` uniform points in the unit square.

    Redraws the points until the graph is connected.
    """
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        pts = rng.uniform(size=(K, 2))
        try:
            return knn_network(pts, k_neighbors)
        except TopologyError:
            continue
    raise TopologyError(f"could not draw a connected {k_neighbors}-NN graph with K={K}")


_AGENT_KEYS = {"id", "xy", "neighbors", "weights"}
_TOP_KEYS = {"agents", "knn"}


def topology_from_dict(spec: Mapping) -> Network:
    """Build a network from a parsed topology record.

    Schema::

        knn: 4                 # optional; requires xy on every agent
        agents:
          - id: 0
            xy: [0.0, 1.0]     # optional unless knn is given
            neighbors: [1, 2]  # required unless knn is given
            weights: {1: 0.5}  # optional per-link rho overrides
    """
    unknown = set(spec) - _TOP_KEYS
    if unknown:
        raise TopologyError(f"unknown topology keys: {sorted(unknown)}")
    agents = spec.get("agents")
    if not agents:
        raise TopologyError("topology needs a non-empty 'agents' list")
    for rec in agents:
        bad = set(rec) - _AGENT_KEYS
        if bad:
            raise TopologyError(f"agent {rec.get('id')}: unknown keys {sorted(bad)}")
    ids = [int(rec["id"]) for rec in agents]
    if sorted(ids) != list(range(len(ids))):
        raise TopologyError(f"agent ids must be 0..K-1, got {sorted(ids)}")
    agents = sorted(agents, key=lambda r: int(r["id"]))
    K = len(agents)

    coords = None
    if all("xy" in r for r in agents):
        coords = np.array([r["xy"] for r in agents], dtype=float)

    rho = {}
    for rec in agents:
        for l, value in (rec.get("weights") or {}).items():
            rho[(int(rec["id"]), int(l))] = float(value)

    if "knn" in spec:
        if coords is None:
            raise TopologyError("'knn' directive requires 'xy' for every agent")
        if any("neighbors" in r for r in agents):
            raise TopologyError("give either 'knn' or per-agent 'neighbors', not both")
        return knn_network(coords, int(spec["knn"]), rho=rho or None)

    adj = np.zeros((K, K), dtype=bool)
    for rec in agents:
        if "neighbors" not in rec:
            raise TopologyError(f"agent {rec['id']}: missing 'neighbors' (or use 'knn')")
        for l in rec["neighbors"]:
            adj[int(rec["id"]), int(l)] = True
    return build_network(adj, rho=rho or None, coordinates=coords)


def load_topology(path) -> Network:
    """Read a YAML topology file (schema in `topology_from_dict`)."""
    with open(Path(path)) as fh:
        return topology_from_dict(yaml.safe_load(fh))


def network_to_dict(net: Network) -> dict:
    """Inverse of `topology_from_dict` with explicit neighbor lists."""
    out = []
    for k, nbrs in enumerate(net.neighbors):
        rec = {"id": k, "neighbors": list(nbrs),
               "weights": {l: float(net.rho[k, l]) for l in nbrs}}
        if net.coordinates is not None:
            rec["xy"] = [float(v) for v in net.coordinates[k]]
        out.append(rec)
    return {"agents": out}
