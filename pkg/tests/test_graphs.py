import copy
import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridstab.graphs import (FlowNetwork, bfs_hops, core_numbers, dijkstra, edge_betweenness, edge_disjoint_paths,
                             min_hop_path)

from helpers import all_connected_graphs, exhaustive_min_cut


def _adj(n, pairs):
    adj = [[] for _ in range(n)]
    for k, (a, b) in enumerate(pairs):
        adj[a].append((b, k))
        adj[b].append((a, k))
    return adj


def _random_graph(seed, n_max=12):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max))
    pairs = sorted({tuple(sorted(map(int, rng.choice(n, 2, replace=False)))) for _ in range(int(rng.integers(1, 3 * n)))})
    G = nx.Graph()
    G.add_nodes_from(range(n))
    G.add_edges_from(pairs)
    return n, pairs, G, rng


@pytest.mark.parametrize("seed", range(30))
def test_bfs_and_dijkstra_match_networkx(seed):
    n, pairs, G, rng = _random_graph(seed)
    adj = _adj(n, pairs)
    hops = bfs_hops(adj, 0)
    ref = nx.single_source_shortest_path_length(G, 0)
    assert all(hops[v] == ref.get(v, -1) for v in range(n))
    w = rng.uniform(0.1, 3, len(pairs))
    for (a, b), x in zip(pairs, w):
        G[a][b]["w"] = x
    dist = dijkstra(adj, w, 0)
    ref = nx.single_source_dijkstra_path_length(G, 0, weight="w")
    for v in range(n):
        assert dist[v] == pytest.approx(ref.get(v, np.inf))


@pytest.mark.parametrize("seed", range(30))
def test_min_hop_path_is_lexicographic_shortest(seed):
    n, pairs, G, _ = _random_graph(seed)
    adj = _adj(n, pairs)
    s, t = 0, n - 1
    path = min_hop_path(adj, s, t)
    if not nx.has_path(G, s, t):
        assert path is None
        return
    assert path == min(list(p) for p in nx.all_shortest_paths(G, s, t))


def test_max_flow_equals_exhaustive_min_cut_exactly():
    rng = np.random.default_rng(7)
    count = 0
    for n in range(2, 9):
        for pairs in all_connected_graphs(n, 40, rng):
            # dyadic capacities keep every augmentation exact in floating point
            cap = rng.integers(0, 33, (len(pairs), 2)) / 8.0
            net = FlowNetwork(n)
            for (a, b), (c1, c2) in zip(pairs, cap):
                net.add_arc(a, b, c1)
                net.add_arc(b, a, c2)
            s, t = (int(v) for v in rng.choice(n, 2, replace=False))
            ref = exhaustive_min_cut(copy.deepcopy(net.cap), s, t)
            assert net.max_flow(s, t) == ref
            count += 1
    assert count >= 200


@pytest.mark.parametrize("seed", range(20))
def test_max_flow_matches_networkx(seed):
    n, pairs, G, rng = _random_graph(seed, 15)
    D = nx.DiGraph()
    D.add_nodes_from(range(n))
    net = FlowNetwork(n)
    for a, b in pairs:
        c1, c2 = rng.uniform(0, 2, 2)
        net.add_arc(a, b, c1)
        net.add_arc(b, a, c2)
        D.add_edge(a, b, capacity=c1)
        D.add_edge(b, a, capacity=c2)
    assert net.max_flow(0, n - 1) == pytest.approx(nx.maximum_flow_value(D, 0, n - 1), abs=1e-12)


@pytest.mark.parametrize("seed", range(30))
def test_widest_path_matches_path_enumeration(seed):
    n, pairs, G, rng = _random_graph(seed, 8)
    net = FlowNetwork(n)
    D = nx.DiGraph()
    for a, b in pairs:
        c1, c2 = rng.uniform(0, 2, 2)
        net.add_arc(a, b, c1)
        net.add_arc(b, a, c2)
        D.add_edge(a, b, c=c1)
        D.add_edge(b, a, c=c2)
    s, t = 0, n - 1
    best = 0.0
    if s in D and t in D:
        for p in nx.all_simple_paths(D, s, t):
            best = max(best, min(D[u][v]["c"] for u, v in zip(p, p[1:])))
    assert net.widest_path(s, t) == pytest.approx(best)
    assert net.widest_path(s, t) <= net.max_flow(s, t) + 1e-12


def test_max_flow_rejects_same_endpoints():
    with pytest.raises(ValueError):
        FlowNetwork(2).max_flow(0, 0)


@pytest.mark.parametrize("seed", range(20))
def test_edge_disjoint_paths_match_local_connectivity(seed):
    n, pairs, G, _ = _random_graph(seed)
    adj = _adj(n, pairs)
    if n < 2:
        return
    expected = nx.edge_connectivity(G, 0, n - 1) if nx.has_path(G, 0, n - 1) else 0
    assert edge_disjoint_paths(adj, 0, n - 1) == expected


@pytest.mark.parametrize("seed", range(20))
def test_core_numbers_match_networkx(seed):
    n, pairs, G, _ = _random_graph(seed, 20)
    ref = nx.core_number(G)
    assert core_numbers(_adj(n, pairs)).tolist() == [ref[v] for v in range(n)]


@pytest.mark.parametrize("seed", range(20))
def test_edge_betweenness_matches_networkx(seed):
    n, pairs, G, _ = _random_graph(seed, 20)
    ref = nx.edge_betweenness_centrality(G, normalized=False)
    got = edge_betweenness(_adj(n, pairs), len(pairs))
    for k, (a, b) in enumerate(pairs):
        assert got[k] == pytest.approx(ref.get((a, b), ref.get((b, a))))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=15),
       st.lists(st.floats(0, 5, allow_nan=False), min_size=30, max_size=30))
def test_max_flow_bounded_by_source_and_sink_arcs(arcs, caps):
    net = FlowNetwork(7)
    for (u, v), c in zip(arcs, itertools.cycle(caps)):
        if u != v:
            net.add_arc(u, v, c)
    out_cap = sum(net.cap[0].values())
    in_cap = sum(net.cap[u].get(6, 0.0) for u in range(7))
    f = net.max_flow(0, 6)
    assert 0 <= f <= min(out_cap, in_cap) + 1e-9
