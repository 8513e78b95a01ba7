import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphprox.topology import (
    TopologyError,
    build_network,
    knn_network,
    load_topology,
    network_to_dict,
    random_geometric_network,
    ring_network,
    topology_from_dict,
)


def line(K):
    adj = np.zeros((K, K), dtype=bool)
    for k in range(K - 1):
        adj[k, k + 1] = adj[k + 1, k] = True
    return adj


def test_two_agents_equal_weights():
    net = build_network(line(2), rho={(0, 1): 1.0, (1, 0): 1.0})
    assert net.p[0, 1] == net.p[1, 0] == 1.0


def test_two_agents_weights_are_averaged():
    net = build_network(line(2), rho={(0, 1): 0.2, (1, 0): 0.6})
    assert net.p[0, 1] == pytest.approx(0.4)
    assert net.p[1, 0] == net.p[0, 1]


def test_ring_default_weights():
    net = ring_network(20)
    assert all(len(n) == 2 for n in net.neighbors)
    for k, l in net.edges:
        assert net.p[k, l] == 0.5


def test_disconnected_graph_reports_components():
    adj = np.zeros((4, 4), dtype=bool)
    adj[0, 1] = adj[1, 0] = adj[2, 3] = adj[3, 2] = True
    with pytest.raises(TopologyError, match="2 components"):
        build_network(adj)


def test_asymmetric_adjacency_rejected():
    adj = line(3)
    adj[2, 1] = False
    with pytest.raises(TopologyError, match="symmetric"):
        build_network(adj)


def test_self_loop_rejected():
    adj = line(3)
    adj[1, 1] = True
    with pytest.raises(TopologyError, match="self-loop"):
        build_network(adj)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_nonpositive_weight_rejected(bad):
    with pytest.raises(TopologyError, match="nonpositive"):
        build_network(line(2), rho={(0, 1): bad})


def test_weight_on_nonlink_rejected():
    with pytest.raises(TopologyError, match="non-link"):
        build_network(line(3), rho={(0, 2): 1.0})


def test_adjacency_roundtrip():
    rng = np.random.default_rng(3)
    net = random_geometric_network(15, 3, seed=4)
    again = build_network(net.adjacency, rho=net.rho * rng.uniform(1, 2, net.rho.shape))
    assert np.array_equal(again.adjacency, net.adjacency)


def test_knn_collinear_points_give_path():
    net = knn_network([[0, 0], [1, 0], [2, 0]], 1)
    assert net.neighbors == ((1,), (0, 2), (1,))


def test_knn_square_corners_give_cycle():
    net = knn_network([[0, 0], [1, 0], [1, 1], [0, 1]], 2)
    assert net.neighbors == ((1, 3), (0, 2), (1, 3), (0, 2))


def test_knn_union_symmetrization():
    # the far point picks 2, which does not pick it back
    net = knn_network([[0, 0], [1, 0], [2, 0], [10, 0]], 1)
    assert 3 in net.neighbors[2] and 2 in net.neighbors[3]


def test_knn_tie_broken_by_lower_index():
    # agent 0 is equidistant from agents 1 and 2 and picks agent 1; whether
    # that bridges the pair (2, 3) decides connectivity
    with pytest.raises(TopologyError, match="disconnected"):
        knn_network([[0, 0], [1, 0], [-1, 0], [-1.5, 0]], 1)
    net = knn_network([[0, 0], [-1, 0], [1, 0], [-1.5, 0]], 1)
    assert net.edges == [(0, 1), (0, 2), (1, 3)]


def test_knn_duplicate_coordinates_rejected():
    with pytest.raises(TopologyError, match="duplicate"):
        knn_network([[0, 0], [1, 1], [0, 0]], 1)


def test_knn_disconnected_suggests_larger_k():
    pts = [[0, 0], [0.1, 0], [10, 0], [10.1, 0]]
    with pytest.raises(TopologyError, match="raise k_neighbors"):
        knn_network(pts, 1)


def test_knn_bad_k():
    with pytest.raises(TopologyError):
        knn_network([[0, 0], [1, 0]], 2)


points = st.lists(
    st.tuples(st.integers(-1000, 1000), st.integers(-1000, 1000)),
    min_size=6, max_size=14, unique=True,
)


@settings(max_examples=60, deadline=None)
@given(points, st.randoms(use_true_random=False))
def test_knn_permutation_invariance(pts, rnd):
    pts = np.array(pts, dtype=float)
    # keep pairwise distances distinct so no index tie-break is involved
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))[np.triu_indices(len(pts), 1)]
    if len(np.unique(d)) != len(d):
        return
    try:
        ref = knn_network(pts, 4)
    except TopologyError:
        return
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    perm = np.array(perm)
    net = knn_network(pts[perm], 4)
    assert np.array_equal(net.adjacency, ref.adjacency[np.ix_(perm, perm)])


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 25), st.integers(0, 10_000))
def test_symmetric_weights_on_every_link(K, seed):
    rng = np.random.default_rng(seed)
    net = random_geometric_network(K, min(3, K - 1), seed=seed)
    rho = np.where(net.adjacency, rng.uniform(0.1, 2.0, (K, K)), 0.0)
    net = build_network(net.adjacency, rho=rho)
    for k, nbrs in enumerate(net.neighbors):
        assert k not in nbrs
        for l in nbrs:
            assert k in net.neighbors[l]
            assert net.p[k, l] == net.p[l, k]
            assert net.p[k, l] == (rho[k, l] + rho[l, k]) / 2


def test_padded_neighbors():
    net = build_network(line(3))
    idx, w = net.padded_neighbors()
    assert idx.shape == w.shape == (3, 2)
    assert idx[0, 1] == 0 and w[0, 1] == 0.0
    assert list(idx[1]) == [0, 2]


def test_topology_file_roundtrip(tmp_path):
    import yaml

    net = random_geometric_network(8, 3, seed=1)
    path = tmp_path / "topo.yaml"
    path.write_text(yaml.safe_dump(network_to_dict(net)))
    again = load_topology(path)
    assert again.neighbors == net.neighbors
    assert np.allclose(again.rho, net.rho)


def test_topology_knn_directive():
    spec = {"knn": 1, "agents": [{"id": i, "xy": [float(i), 0.0]} for i in range(3)]}
    assert topology_from_dict(spec).neighbors == ((1,), (0, 2), (1,))


def test_topology_unknown_key():
    with pytest.raises(TopologyError, match="unknown"):
        topology_from_dict({"agents": [{"id": 0, "nbrs": []}]})
