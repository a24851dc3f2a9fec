"""Small fixture grids and random-grid factories shared by the test modules."""
import itertools

import numpy as np

from gridstab.grid import PowerGrid, edge_list_grid


def dipole(p=0.5, k=1.0) -> PowerGrid:
    return edge_list_grid([(0, 1)], coupling=k, injections=[p, -p], name="dipole")


def triangle(p=(1.0, -1.0, 0.0), k=1.0) -> PowerGrid:
    # edge order: (a,b), (a,c), (c,b)
    return edge_list_grid([(0, 1), (0, 2), (2, 1)], coupling=k, injections=list(p), name="triangle")


def cycle(n=4, p=None, k=1.0) -> PowerGrid:
    return edge_list_grid([(i, (i + 1) % n) for i in range(n)], coupling=k, injections=p, name=f"cycle{n}")


def random_connected_grid(rng: np.random.Generator, n: int, extra: float = 0.5, scale: float = 1.0,
                          kmin: float = 0.5, kmax: float = 2.0, name: str = "rand") -> PowerGrid:
    """Random spanning tree plus ``extra * n`` chords, random couplings, balanced injections."""
    perm = rng.permutation(n)
    pairs = {tuple(sorted((int(perm[i]), int(perm[rng.integers(i)])))) for i in range(1, n)}
    for _ in range(int(extra * n)):
        a, b = (int(v) for v in rng.choice(n, 2, replace=False))
        pairs.add((min(a, b), max(a, b)))
    pairs = sorted(pairs)
    p = rng.normal(size=n)
    p -= p.mean()
    p *= scale
    p[-1] -= p.sum()
    k = rng.uniform(kmin, kmax, len(pairs))
    return PowerGrid(p, np.array(pairs), k, name=name)


def feasible_grid(rng, n, extra=0.6, load=0.3, name="feas"):
    """Random grid whose injections are scaled so the DC loads peak near ``load``."""
    from gridstab.grid import solve_dc_flow

    g = random_connected_grid(rng, n, extra, name=name)
    flows = solve_dc_flow(g).flows
    peak = np.max(np.abs(flows) / g.coupling)
    return g.with_injections(g.injections * (load / peak)) if peak > 0 else g


def all_connected_graphs(n: int, limit: int, rng: np.random.Generator):
    """Random connected simple graphs on ``n`` nodes, deduplicated by edge set."""
    pairs = list(itertools.combinations(range(n), 2))
    seen = set()
    tries = 0
    while len(seen) < limit and tries < 50 * limit:
        tries += 1
        m = int(rng.integers(n - 1, len(pairs) + 1))
        chosen = tuple(sorted(pairs[i] for i in rng.choice(len(pairs), m, replace=False)))
        if chosen in seen:
            continue
        adj = {v: set() for v in range(n)}
        for a, b in chosen:
            adj[a].add(b)
            adj[b].add(a)
        stack, reach = [0], {0}
        while stack:
            u = stack.pop()
            for v in adj[u] - reach:
                reach.add(v)
                stack.append(v)
        if len(reach) == n:
            seen.add(chosen)
            yield chosen


def exhaustive_min_cut(cap, source: int, sink: int) -> float:
    """Smallest s-t cut by enumerating every node subset; ``cap[u]`` maps ``v`` to arc capacity."""
    n = len(cap)
    others = [v for v in range(n) if v not in (source, sink)]
    best = float("inf")
    for mask in range(1 << len(others)):
        side = {source} | {v for b, v in enumerate(others) if mask >> b & 1}
        cut = sum(c for u in side for v, c in cap[u].items() if v not in side)
        best = min(best, cut)
    return best
