"""Small combinatorial graph routines on adjacency lists.

Nodes are ``0..n-1``. Undirected graphs use the ``PowerGrid.adjacency`` form:
``adj[u]`` is a list of ``(v, edge_index)``.
"""
from __future__ import annotations

import heapq
from collections import deque

import numpy as np

INF = float("inf")


def bfs_hops(adj, source: int) -> np.ndarray:
    """Hop distances from ``source``; unreachable nodes get -1."""
    dist = np.full(len(adj), -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v, _ in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def min_hop_path(adj, source: int, target: int) -> list[int] | None:
    """Fewest-hop path, ties broken by the lexicographically smallest node sequence."""
    to_target = bfs_hops(adj, target)
    if to_target[source] < 0:
        return None
    path = [source]
    u = source
    while u != target:
        u = min(v for v, _ in adj[u] if to_target[v] == to_target[u] - 1)
        path.append(u)
    return path


def dijkstra(adj, weights, source: int) -> np.ndarray:
    """Shortest weighted distances; ``weights`` is indexed by edge index."""
    dist = np.full(len(adj), INF)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, k in adj[u]:
            nd = d + weights[k]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


class FlowNetwork:
    """Directed network with real capacities stored as residual dicts."""

    def __init__(self, n: int):
        self.n = n
        self.cap: list[dict[int, float]] = [dict() for _ in range(n)]

    def add_arc(self, u: int, v: int, capacity: float) -> None:
        self.cap[u][v] = self.cap[u].get(v, 0.0) + max(float(capacity), 0.0)
        self.cap[v].setdefault(u, 0.0)

    def max_flow(self, source: int, sink: int, eps: float = 1e-15) -> float:
        """Edmonds-Karp: augment along shortest residual paths. Capacities are consumed."""
        if source == sink:
            raise ValueError("source and sink coincide")
        res = self.cap
        total = 0.0
        while True:
            parent = [-1] * self.n
            parent[source] = source
            queue = deque([source])
            while queue and parent[sink] < 0:
                u = queue.popleft()
                for v, c in res[u].items():
                    if c > eps and parent[v] < 0:
                        parent[v] = u
                        queue.append(v)
            if parent[sink] < 0:
                return total
            push = INF
            v = sink
            while v != source:
                u = parent[v]
                push = min(push, res[u][v])
                v = u
            v = sink
            while v != source:
                u = parent[v]
                res[u][v] -= push
                res[v][u] += push
                v = u
            total += push

    def widest_path(self, source: int, sink: int) -> float:
        """Largest bottleneck capacity over single source-sink paths (0 if none)."""
        best = [0.0] * self.n
        best[source] = INF
        heap = [(-INF, source)]
        done = [False] * self.n
        while heap:
            negw, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            if u == sink:
                return -negw
            for v, c in self.cap[u].items():
                w = min(-negw, c)
                if w > best[v] and not done[v]:
                    best[v] = w
                    heapq.heappush(heap, (-w, v))
        return 0.0


def edge_disjoint_paths(adj, source: int, sink: int) -> int:
    """Maximum number of edge-disjoint undirected paths between two nodes."""
    net = FlowNetwork(len(adj))
    for u, nbrs in enumerate(adj):
        for v, _ in nbrs:
            net.add_arc(u, v, 1.0)
    return int(round(net.max_flow(source, sink)))


def core_numbers(adj) -> np.ndarray:
    """k-core index of every node by repeated minimum-degree peeling."""
    n = len(adj)
    deg = np.array([len(a) for a in adj], dtype=np.int64)
    core = np.zeros(n, dtype=np.int64)
    removed = np.zeros(n, dtype=bool)
    heap = [(int(deg[u]), u) for u in range(n)]
    heapq.heapify(heap)
    level = 0
    while heap:
        d, u = heapq.heappop(heap)
        if removed[u] or d != deg[u]:
            continue
        level = max(level, d)
        core[u] = level
        removed[u] = True
        for v, _ in adj[u]:
            if not removed[v]:
                deg[v] -= 1
                heapq.heappush(heap, (int(deg[v]), v))
    return core


def edge_betweenness(adj, n_edges: int) -> np.ndarray:
    """Unnormalised shortest-path edge betweenness summed over unordered node pairs.

    Each pair contributes one unit, split equally over its shortest paths.
    """
    n = len(adj)
    score = np.zeros(n_edges)
    for s in range(n):
        order = []
        preds: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1, dtype=np.int64)
        dist[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            order.append(u)
            for v, k in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
                if dist[v] == dist[u] + 1:
                    sigma[v] += sigma[u]
                    preds[v].append((u, k))
        delta = np.zeros(n)
        for w in reversed(order):
            for u, k in preds[w]:
                c = sigma[u] / sigma[w] * (1.0 + delta[w])
                score[k] += c
                delta[u] += c
    return score / 2.0
