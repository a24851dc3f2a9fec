"""Static line features for predicting whether a line failure desynchronises the grid.

Every feature is computed for a candidate failing line ``(a, b)`` from the grid
topology, couplings and the pre-failure steady state. Infinite values
(disconnection, division by zero) are stored as :data:`SENTINEL`.

Feature schema, in column order. ``riskier`` gives the direction in which a
value indicates a more dangerous failure.

====================  ==========================================================  =======
column                meaning                                                     riskier
====================  ==========================================================  =======
r_ab                  ``|P_ab|`` over the residual max-flow capacity              higher
r_w_ab                ``|P_ab|`` over the widest residual path                    higher
r_sigma_ab            ``|P_ab|`` over the bottleneck of the min-hop residual path higher
K_red_ab              residual max-flow capacity around the line                  lower
K_red_w_ab            widest residual path bottleneck                             lower
K_red_sigma_ab        min-hop residual path bottleneck                            lower
l_re_ab               post-failure max load from linear response                  higher
l_dc_ab               post-failure max load from DC outage factors                higher
c_ab                  ``sqrt(r_ab**2 + l_dc_ab**2)``                              higher
l_op                  max load anywhere at the operating point                    higher
l_ab                  load of the failing line                                    higher
P_ab_abs              flow on the failing line                                    higher
rho                   max edge angle spread of ``pinv(L) P``, intact grid         higher
rho_ab                same after removing the line                                higher
b_ab                  ``max_i |P_i| - sum_j K_ij`` after removal                  higher
b_ratio_ab            ``max_i |P_i| / sum_j K_ij`` after removal                  higher
X_re_ab               effective resistance between a and b after removal          higher
X_sigma_ab            least series impedance ``sum 1/K`` of a detour              higher
eps_cb_ab             normalised current-flow betweenness of the line             higher
lambda2_pre           algebraic connectivity of the intact grid                   lower
lambda2_post          algebraic connectivity after removal                        lower
delta_lambda2_ab      ``lambda2_pre - lambda2_post``                              higher
d_re_ab               1 + hop length of the shortest detour                       higher
eps_ab                normalised shortest-path edge betweenness                   higher
tau_ab                number of edge-disjoint a-b paths, line included            lower
coreness_ab           smaller core number of the two endpoints                    lower
====================  ==========================================================  =======
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DisconnectedGrid, SchemaMismatch
from .graphs import FlowNetwork, bfs_hops, core_numbers, dijkstra, edge_betweenness, edge_disjoint_paths, \
    min_hop_path
from .grid import PowerGrid, SteadyState, build_laplacian, connectivity_components, solve_dc_flow, \
    solve_steady_state

SENTINEL = 1e9
ISLAND_TOL = 1e-9

FEATURES: tuple[str, ...] = (
    "r_ab", "r_w_ab", "r_sigma_ab", "K_red_ab", "K_red_w_ab", "K_red_sigma_ab",
    "l_re_ab", "l_dc_ab", "c_ab", "l_op", "l_ab", "P_ab_abs",
    "rho", "rho_ab", "b_ab", "b_ratio_ab", "X_re_ab", "X_sigma_ab", "eps_cb_ab",
    "lambda2_pre", "lambda2_post", "delta_lambda2_ab", "d_re_ab", "eps_ab", "tau_ab", "coreness_ab",
)
LOWER_IS_RISKIER = frozenset({
    "K_red_ab", "K_red_w_ab", "K_red_sigma_ab", "lambda2_pre", "lambda2_post", "tau_ab", "coreness_ab",
})
HIGHER_IS_RISKIER: dict[str, bool] = {name: name not in LOWER_IS_RISKIER for name in FEATURES}


def _ratio(num: float, den: float) -> float:
    if den == 0.0:
        return 0.0 if num <= ISLAND_TOL else SENTINEL
    return min(num / den, SENTINEL)


def _pairwise_abs_sum(w: np.ndarray) -> float:
    """``sum_{s<t} |w_s - w_t|`` in ``O(n log n)``."""
    w = np.sort(w)
    n = w.size
    return float(np.dot(w, 2 * np.arange(n) - n + 1))


def _lambda2(lap: np.ndarray) -> float:
    if lap.shape[0] < 2:
        return 0.0
    return float(np.linalg.eigvalsh(lap)[1])


def _incidence(grid: PowerGrid) -> np.ndarray:
    b = np.zeros((grid.n_edges, grid.n_nodes))
    rows = np.arange(grid.n_edges)
    b[rows, grid.edges[:, 0]] = 1.0
    b[rows, grid.edges[:, 1]] = -1.0
    return b


def outage_factors(grid: PowerGrid, weights: np.ndarray, bridges: np.ndarray) -> np.ndarray:
    """Line outage distribution factors ``F[l, k]`` for a Laplacian with edge ``weights``.

    After line ``k`` fails, surviving line ``l`` carries ``f_l + F[l, k] f_k``.
    Columns of bridge lines are zero.
    """
    n = grid.n_nodes
    b = _incidence(grid)
    lap = b.T @ (weights[:, None] * b)
    shift = np.full((n, n), 1.0 / n)
    z = np.linalg.inv(lap + shift)
    ptdf = weights[:, None] * (b @ z @ b.T)
    denom = 1.0 - np.diag(ptdf)
    out = np.zeros_like(ptdf)
    ok = ~bridges
    out[:, ok] = ptdf[:, ok] / denom[ok]
    return out


def post_failure_dc_flows(grid: PowerGrid, line, method: str = "lodf", base_flows=None) -> np.ndarray:
    """DC flows on the surviving lines (original order, failed line dropped).

    ``method="lodf"`` redistributes ``base_flows`` (default: DC flows of the intact
    grid) with outage factors, ``"resolve"`` solves the DC equations again.
    """
    k = grid.edge_index(line)
    keep = np.arange(grid.n_edges) != k
    if len(connectivity_components(grid, k)) > 1:
        raise DisconnectedGrid("line removal splits the grid")
    if method == "resolve":
        return solve_dc_flow(grid.without_edge(k)).flows
    if method != "lodf":
        raise ValueError(f"unknown method {method!r}")
    flows = solve_dc_flow(grid).flows if base_flows is None else np.asarray(base_flows, float)
    others = np.arange(grid.n_edges) != k  # only column k is needed
    lodf = outage_factors(grid, grid.coupling, others)
    return (flows + lodf[:, k] * flows[k])[keep]


class GridCache:
    """Per-grid quantities shared by all lines of one grid."""

    def __init__(self, grid: PowerGrid, steady: SteadyState | None = None, dc_base: str = "nonlinear",
                 response_mode: str = "linear"):
        if dc_base not in ("dc", "nonlinear"):
            raise ValueError("dc_base must be 'dc' or 'nonlinear'")
        if response_mode not in ("linear", "sine"):
            raise ValueError("response_mode must be 'linear' or 'sine'")
        if len(connectivity_components(grid)) > 1:
            raise DisconnectedGrid(f"{grid.name}: pre-failure grid is not connected")
        self.grid = grid
        self.steady = steady if steady is not None else solve_steady_state(grid)
        self.dc_base = dc_base
        self.response_mode = response_mode

    @cached_property
    def adj(self):
        return self.grid.adjacency()

    @cached_property
    def islands(self) -> list[list[list[int]]]:
        return [connectivity_components(self.grid, k) for k in range(self.grid.n_edges)]

    @cached_property
    def bridges(self) -> np.ndarray:
        return np.array([len(p) > 1 for p in self.islands], dtype=bool)

    @cached_property
    def splits(self) -> np.ndarray:
        """Lines whose removal leaves an island with unbalanced injections."""
        p = self.grid.injections
        return np.array([len(parts) > 1 and max(abs(p[q].sum()) for q in parts) > ISLAND_TOL
                         for parts in self.islands], dtype=bool)

    @cached_property
    def lap(self) -> np.ndarray:
        return build_laplacian(self.grid)

    @cached_property
    def shifted_inv(self) -> np.ndarray:
        """``inv(L + 11^T/n)``; equals ``pinv(L) + 11^T/n`` for a connected grid."""
        n = self.grid.n_nodes
        return np.linalg.inv(self.lap + np.full((n, n), 1.0 / n))

    @cached_property
    def dc_angles(self) -> np.ndarray:
        theta = self.shifted_inv @ self.grid.injections
        return theta - theta.mean()

    @cached_property
    def dc_flows(self) -> np.ndarray:
        i, j = self.grid.edges.T
        return self.grid.coupling * (self.dc_angles[i] - self.dc_angles[j])

    @cached_property
    def lodf_dc(self) -> np.ndarray:
        return outage_factors(self.grid, self.grid.coupling, self.bridges)

    @cached_property
    def cos_weights(self) -> np.ndarray:
        i, j = self.grid.edges.T
        d = self.steady.angles
        return self.grid.coupling * np.cos(d[i] - d[j])

    @cached_property
    def lodf_response(self) -> np.ndarray:
        return outage_factors(self.grid, self.cos_weights, self.bridges)

    @cached_property
    def response_inv(self) -> np.ndarray:
        n = self.grid.n_nodes
        b = _incidence(self.grid)
        lap = b.T @ (self.cos_weights[:, None] * b)
        return np.linalg.inv(lap + np.full((n, n), 1.0 / n))

    @cached_property
    def lambda2_pre(self) -> float:
        return _lambda2(self.lap)

    @cached_property
    def betweenness(self) -> np.ndarray:
        return edge_betweenness(self.adj, self.grid.n_edges)

    @cached_property
    def cores(self) -> np.ndarray:
        return core_numbers(self.adj)

    @cached_property
    def weighted_degree(self) -> np.ndarray:
        g = self.grid
        return np.bincount(g.edges.ravel(), np.repeat(g.coupling, 2), g.n_nodes)

    @cached_property
    def rho(self) -> float:
        i, j = self.grid.edges.T
        return float(np.abs(self.dc_angles[i] - self.dc_angles[j]).max(initial=0.0))

    def post_adj(self, k: int):
        return self.grid.adjacency(removed=k)

    def resistance_pre(self, a: int, b: int) -> float:
        z = self.shifted_inv
        return float(z[a, a] + z[b, b] - 2 * z[a, b])


class _LazyCache(GridCache):
    """Cache without a steady state, for features that only need topology and couplings."""

    def __init__(self, grid: PowerGrid):
        if len(connectivity_components(grid)) > 1:
            raise DisconnectedGrid(f"{grid.name}: pre-failure grid is not connected")
        self.grid = grid
        self.dc_base = "nonlinear"
        self.response_mode = "linear"

    @cached_property
    def steady(self) -> SteadyState:
        return solve_steady_state(self.grid)


def _endpoints(grid: PowerGrid, k: int) -> tuple[int, int]:
    a, b = grid.edges[k]
    return int(a), int(b)


def flow_features(grid: PowerGrid, steady: SteadyState, line) -> tuple[float, float, float]:
    """``(|P_ab|, l_ab, l_op)`` at the pre-failure operating point."""
    k = grid.edge_index(line)
    p_abs = float(abs(steady.flows[k]))
    return p_abs, p_abs / float(grid.coupling[k]), float(steady.loads.max(initial=0.0))


def topological_features(grid: PowerGrid, line, cache: GridCache | None = None) -> tuple[float, ...]:
    """``(tau_ab, d_re_ab, eps_ab, coreness_ab)``."""
    k = grid.edge_index(line)
    a, b = _endpoints(grid, k)
    adj = cache.adj if cache is not None else grid.adjacency()
    tau = float(edge_disjoint_paths(adj, a, b))
    hops = bfs_hops(grid.adjacency(removed=k), a)[b]
    d_re = SENTINEL if hops < 0 else 1.0 + float(hops)
    n = grid.n_nodes
    between = cache.betweenness if cache is not None else edge_betweenness(adj, grid.n_edges)
    eps = float(between[k]) / (n * (n - 1) / 2)
    cores = cache.cores if cache is not None else core_numbers(adj)
    return tau, d_re, eps, float(min(cores[a], cores[b]))


def spectral_features(grid: PowerGrid, line, cache: GridCache | None = None) -> tuple[float, ...]:
    """``(lambda2_pre, lambda2_post, delta_lambda2_ab, eps_cb_ab, X_re_ab)``."""
    c = cache if cache is not None else _LazyCache(grid)
    k = grid.edge_index(line)
    a, b = _endpoints(grid, k)
    kab = float(grid.coupling[k])
    n = grid.n_nodes
    lam_pre = c.lambda2_pre
    if c.bridges[k]:
        lam_post, x_re = 0.0, SENTINEL
    else:
        lap_post = c.lap.copy()
        lap_post[a, a] -= kab
        lap_post[b, b] -= kab
        lap_post[a, b] += kab
        lap_post[b, a] += kab
        lam_post = _lambda2(lap_post)
        r_pre = c.resistance_pre(a, b)
        x_re = r_pre / (1.0 - kab * r_pre)
    w = kab * (c.shifted_inv[a] - c.shifted_inv[b])
    eps_cb = _pairwise_abs_sum(w) / (n * (n - 1) / 2)
    return lam_pre, lam_post, lam_pre - lam_post, eps_cb, float(x_re)


def rerouting_weighted(grid: PowerGrid, line) -> float:
    """Least total impedance ``sum 1/K_ij`` over detours around the line."""
    k = grid.edge_index(line)
    a, b = _endpoints(grid, k)
    dist = dijkstra(grid.adjacency(removed=k), 1.0 / grid.coupling, a)[b]
    return SENTINEL if not np.isfinite(dist) else float(dist)


def linearized_max_load_dc(grid: PowerGrid, line, cache: GridCache | None = None,
                           base: str | None = None, steady: SteadyState | None = None) -> float:
    """Largest ``|flow| / K`` after the failure, predicted with DC outage factors.

    ``base="nonlinear"`` (default) redistributes the true pre-failure flows;
    ``"dc"`` redistributes the DC flows of the intact grid, which makes the
    result coincide with ``rho_ab``.
    """
    c = cache if cache is not None else (_LazyCache(grid) if steady is None else GridCache(grid, steady))
    base = base or c.dc_base
    k = grid.edge_index(line)
    if c.splits[k]:
        return SENTINEL
    flows = c.dc_flows if base == "dc" else c.steady.flows
    # a bridge between balanced islands carries nothing, so nothing is rerouted
    post = flows + c.lodf_dc[:, k] * flows[k] if not c.bridges[k] else flows.copy()
    post[k] = 0.0
    return float((np.abs(post) / grid.coupling).max(initial=0.0))


def linearized_max_load_response(grid: PowerGrid, steady: SteadyState, line, cache: GridCache | None = None,
                                 mode: str | None = None) -> float:
    """Largest post-failure load predicted by linearising around the pre-failure state.

    The failing line's flow is re-injected as ``P_ab (e_a - e_b)`` into the
    cosine-weighted Laplacian of the damaged grid. ``mode="linear"`` evaluates
    the first-order flows ``P_ij + K_ij cos(d_ij) (dd_i - dd_j)``, which may
    exceed one; ``mode="sine"`` evaluates ``|sin|`` of the shifted angles.
    """
    c = cache if cache is not None else GridCache(grid, steady)
    mode = mode or c.response_mode
    k = grid.edge_index(line)
    if c.splits[k]:
        return SENTINEL
    flows = steady.flows
    keep = np.arange(grid.n_edges) != k
    if c.bridges[k]:
        loads = np.abs(flows) / grid.coupling if mode == "linear" else steady.loads
        return float(loads[keep].max(initial=0.0))
    if mode == "linear":
        post = flows + c.lodf_response[:, k] * flows[k]
        return float((np.abs(post[keep]) / grid.coupling[keep]).max(initial=0.0))
    a, b = _endpoints(grid, k)
    col = c.response_inv[:, a] - c.response_inv[:, b]
    i, j = grid.edges.T
    ptdf_kk = c.cos_weights[k] * (col[a] - col[b])
    shift = col * (flows[k] / (1.0 - ptdf_kk))
    d = steady.angles + shift
    return float(np.abs(np.sin(d[i] - d[j]))[keep].max(initial=0.0))


def residual_network(grid: PowerGrid, flows: np.ndarray, removed: int | None = None) -> FlowNetwork:
    """Arcs ``i->j`` with capacity ``K - P_ij`` and ``j->i`` with ``K + P_ij``."""
    net = FlowNetwork(grid.n_nodes)
    for k, ((i, j), kk, f) in enumerate(zip(grid.edges.tolist(), grid.coupling, flows)):
        if k == removed:
            continue
        net.add_arc(i, j, kk - f)
        net.add_arc(j, i, kk + f)
    return net


def redundancy_features(grid: PowerGrid, steady: SteadyState, line, l_dc: float | None = None,
                        cache: GridCache | None = None) -> tuple[float, ...]:
    """``(K_red, K_red_w, K_red_sigma, r, r_w, r_sigma, c_ab)``.

    Capacities are measured from the upstream end of the failing line's flow
    to its downstream end, in the residual network without the line.
    """
    k = grid.edge_index(line)
    a, b = _endpoints(grid, k)
    if steady.flows[k] < 0:
        a, b = b, a
    p_abs = float(abs(steady.flows[k]))
    net = residual_network(grid, steady.flows, removed=k)
    widest = net.widest_path(a, b)
    path = min_hop_path(cache.post_adj(k) if cache is not None else grid.adjacency(removed=k), a, b)
    shortest = 0.0 if path is None else min(net.cap[u][v] for u, v in zip(path, path[1:]))
    k_red = net.max_flow(a, b)
    r, r_w, r_s = (_ratio(p_abs, cap) for cap in (k_red, widest, shortest))
    if l_dc is None:
        l_dc = linearized_max_load_dc(grid, k, cache=cache, steady=steady)
    c_ab = SENTINEL if max(r, l_dc) >= SENTINEL else float(np.hypot(r, l_dc))
    return k_red, widest, shortest, r, r_w, r_s, c_ab


def cohesion_features(grid: PowerGrid, line, cache: GridCache | None = None) -> tuple[float, ...]:
    """``(rho, rho_ab, b_ab, b_ratio_ab)``.

    ``rho`` is the largest edge difference of ``pinv(L) P`` over the intact grid;
    ``rho_ab`` the same for the damaged grid over its remaining edges. If the
    damaged grid has an island whose injections do not balance, no solution
    exists and ``rho_ab`` is the sentinel.
    """
    c = cache if cache is not None else _LazyCache(grid)
    k = grid.edge_index(line)
    a, b = _endpoints(grid, k)
    kab = float(grid.coupling[k])
    p = grid.injections
    i, j = grid.edges.T
    keep = np.arange(grid.n_edges) != k
    if not c.bridges[k]:
        col = c.shifted_inv[:, a] - c.shifted_inv[:, b]
        theta = c.dc_angles + col * (c.dc_flows[k] / (1.0 - kab * (col[a] - col[b])))
        rho_ab = float(np.abs(theta[i] - theta[j])[keep].max(initial=0.0))
    elif c.splits[k]:
        rho_ab = SENTINEL
    else:
        post = grid.without_edge(k)
        theta = np.linalg.pinv(build_laplacian(post), hermitian=True) @ p
        rho_ab = float(np.abs(theta[post.edges[:, 0]] - theta[post.edges[:, 1]]).max(initial=0.0))
    strength = c.weighted_degree.copy()
    strength[a] -= kab
    strength[b] -= kab
    strength[np.abs(strength) < 1e-12 * max(1.0, kab)] = 0.0
    b_ab = float((np.abs(p) - strength).max())
    b_ratio = max(_ratio(float(abs(pi)), float(s)) for pi, s in zip(p, strength))
    return c.rho, rho_ab, b_ab, float(b_ratio)


@dataclass(frozen=True)
class LineFeatureVector:
    grid_id: str
    line: tuple[int, int]
    values: np.ndarray
    label: int | None = None

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURES, self.values.tolist()))


def featurize_line(grid: PowerGrid, steady: SteadyState, line, cache: GridCache | None = None
                   ) -> LineFeatureVector:
    """All features of one candidate failing line."""
    c = cache if cache is not None else GridCache(grid, steady)
    k = grid.edge_index(line)
    p_abs, l_ab, l_op = flow_features(grid, steady, k)
    tau, d_re, eps, core = topological_features(grid, k, c)
    lam_pre, lam_post, dlam, eps_cb, x_re = spectral_features(grid, k, c)
    x_sigma = rerouting_weighted(grid, k)
    l_dc = linearized_max_load_dc(grid, k, c)
    l_re = linearized_max_load_response(grid, steady, k, c)
    k_red, k_w, k_s, r, r_w, r_s, c_ab = redundancy_features(grid, steady, k, l_dc, c)
    rho, rho_ab, b_ab, b_ratio = cohesion_features(grid, k, c)
    row = {
        "r_ab": r, "r_w_ab": r_w, "r_sigma_ab": r_s, "K_red_ab": k_red, "K_red_w_ab": k_w,
        "K_red_sigma_ab": k_s, "l_re_ab": l_re, "l_dc_ab": l_dc, "c_ab": c_ab, "l_op": l_op,
        "l_ab": l_ab, "P_ab_abs": p_abs, "rho": rho, "rho_ab": rho_ab, "b_ab": b_ab,
        "b_ratio_ab": b_ratio, "X_re_ab": x_re, "X_sigma_ab": x_sigma, "eps_cb_ab": eps_cb,
        "lambda2_pre": lam_pre, "lambda2_post": lam_post, "delta_lambda2_ab": dlam, "d_re_ab": d_re,
        "eps_ab": eps, "tau_ab": tau, "coreness_ab": core,
    }
    values = np.array([row[name] for name in FEATURES], dtype=float)
    values = np.minimum(values, SENTINEL)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite feature for line {grid.edge_ids(k)} of {grid.name}")
    return LineFeatureVector(grid.name, grid.edge_ids(k), values)


def featurize_grid(grid: PowerGrid, steady: SteadyState | None = None, dc_base: str = "nonlinear",
                   response_mode: str = "linear") -> list[LineFeatureVector]:
    """Feature vectors for every line of ``grid``, in edge order."""
    cache = GridCache(grid, steady, dc_base=dc_base, response_mode=response_mode)
    return [featurize_line(grid, cache.steady, k, cache) for k in range(grid.n_edges)]


def _featurize_job(args):
    grid, steady, dc_base, response_mode = args
    return featurize_grid(grid, steady, dc_base, response_mode)


def featurize_grids(grids: Sequence[PowerGrid], steadies: Sequence[SteadyState | None] | None = None,
                    workers: int = 1, dc_base: str = "nonlinear", response_mode: str = "linear"
                    ) -> list[LineFeatureVector]:
    steadies = list(steadies) if steadies is not None else [None] * len(grids)
    jobs = [(g, s, dc_base, response_mode) for g, s in zip(grids, steadies)]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_featurize_job, jobs))
    else:
        parts = [_featurize_job(job) for job in jobs]
    return [v for part in parts for v in part]


def attach_labels(vectors: Iterable[LineFeatureVector], labels) -> list[LineFeatureVector]:
    """Join stability labels (``FailureLabel`` objects) on ``(grid_id, line)``; unmatched rows are dropped."""
    lookup = {(lab.grid_id, tuple(lab.line)): int(lab.critical) for lab in labels}
    out = []
    for v in vectors:
        key = (v.grid_id, tuple(v.line))
        if key in lookup:
            out.append(LineFeatureVector(v.grid_id, v.line, v.values, lookup[key]))
    return out


def schema() -> dict:
    return {
        "features": list(FEATURES),
        "higher_is_riskier": [HIGHER_IS_RISKIER[f] for f in FEATURES],
        "sentinel": SENTINEL,
    }


def write_features(vectors: Sequence[LineFeatureVector], path) -> None:
    """CSV with id columns, one column per feature and an optional label; schema beside it as JSON."""
    path = Path(path)
    with_labels = any(v.label is not None for v in vectors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["grid_id", "edge_i", "edge_j", *FEATURES] + (["label"] if with_labels else []))
        for v in vectors:
            row = [v.grid_id, v.line[0], v.line[1], *(repr(float(x)) for x in v.values)]
            if with_labels:
                row.append("" if v.label is None else int(v.label))
            w.writerow(row)
    path.with_suffix(".json").write_text(json.dumps(schema(), indent=2))


def read_features(path) -> list[LineFeatureVector]:
    path = Path(path)
    head = path.with_suffix(".json")
    if head.exists() and json.loads(head.read_text())["features"] != list(FEATURES):
        raise SchemaMismatch(f"{head}: feature list differs from this version")
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in FEATURES if f not in (reader.fieldnames or [])]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        for row in reader:
            label = row.get("label")
            out.append(LineFeatureVector(
                row["grid_id"], (int(row["edge_i"]), int(row["edge_j"])),
                np.array([float(row[f]) for f in FEATURES]),
                int(label) if label not in (None, "") else None,
            ))
    return out


def feature_matrix(vectors: Sequence[LineFeatureVector]) -> np.ndarray:
    return np.array([v.values for v in vectors]).reshape(len(vectors), len(FEATURES))
