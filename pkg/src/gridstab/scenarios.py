"""Synthetic grid families: growth-model topologies, power assignment, couplings.

The eight named families mirror the data-set table of the study this package
reproduces (``US``, ``US_circ``, ``US_P``, ``US_P_B``, ``US_het``, ``GB_het``,
``GB``, ``GB_pert``).
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EnsembleExhausted, GridStabError, InfeasibleRatio, ZeroLength
from .grid import PowerGrid, grid_to_dict, load_grid, save_grid, solve_steady_state

log = logging.getLogger(__name__)

LOADING_SWEEP = (1.5, 1.6, 1.7, 1.8, 1.9, 2.0)


@dataclass(frozen=True)
class GrowthParams:
    """Random growth model parameters (US-like regime by default).

    ``n0`` seed nodes are joined by a Euclidean minimum spanning tree; each
    later step either adds a node linked to its nearest neighbour (with
    redundancy links of probability ``p`` and ``q``) or, with probability
    ``s``, splits an existing line at its midpoint. Redundancy targets
    maximise ``(hop distance + 1)**r / euclidean distance``.
    """

    n0: int = 10
    p: float = 0.2
    q: float = 0.3
    r: float = 1 / 3
    s: float = 0.1


@dataclass(frozen=True)
class ScenarioConfig:
    family: str = "US"
    n_nodes: int = 50
    ratio: tuple[int, int] = (1, 1)
    consumer_power: tuple[float, ...] = (2.0,)
    coupling: str | float = "inverse-length"
    ensemble_size: int = 10
    seed: int = 0
    topology: str = "growth"  # or "fixed": one shared topology (GB families)
    remove_dead_ends: bool = False
    perturbation: float | None = None
    topology_file: str | None = None
    inertia: float = 1.0
    damping: float = 0.1

    @property
    def generator_power(self) -> tuple[float, ...]:
        ng, nc = self.ratio
        return tuple(nc * pc / ng for pc in self.consumer_power)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio"] = list(self.ratio)
        d["consumer_power"] = list(self.consumer_power)
        return d


FAMILIES = {
    "US": dict(n_nodes=50, ratio=(1, 1), consumer_power=(2.0,), coupling="inverse-length"),
    "US_circ": dict(n_nodes=50, ratio=(1, 1), consumer_power=(2.0,), coupling="inverse-length",
                    remove_dead_ends=True),
    "US_P": dict(n_nodes=50, ratio=(1, 1), consumer_power=LOADING_SWEEP, coupling="inverse-length"),
    "US_P_B": dict(n_nodes=50, ratio=(1, 1), consumer_power=LOADING_SWEEP, coupling=4.0),
    "US_het": dict(n_nodes=50, ratio=(1, 4), consumer_power=(0.75,), coupling="inverse-length"),
    "GB_het": dict(n_nodes=120, ratio=(1, 4), consumer_power=(1.0,), coupling="inverse-length",
                   topology="fixed"),
    "GB": dict(n_nodes=120, ratio=(1, 1), consumer_power=(1.0,), coupling="inverse-length",
               topology="fixed"),
    "GB_pert": dict(n_nodes=120, ratio=(1, 1), consumer_power=(1.0,), coupling="inverse-length",
                    topology="fixed", perturbation=0.2),
}

# (train, test) pairs for learning-transfer experiments; each family is tested once
TRANSFER_PAIRS = (
    ("US", "US_circ"),
    ("GB", "US"),
    ("US_P_B", "US_P"),
    ("US", "US_P_B"),
    ("GB_het", "US_het"),
    ("US_het", "GB_het"),
    ("US", "GB"),
    ("US_circ", "GB_pert"),
)


def family_config(family: str, **overrides) -> ScenarioConfig:
    if family not in FAMILIES:
        raise KeyError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    params = dict(FAMILIES[family])
    if "perturbation" in params and params["perturbation"] is not None:
        # default sigma scales with the consumer power
        params["perturbation"] = params["perturbation"] * params["consumer_power"][0]
    params.update(overrides)
    for key in ("ratio", "consumer_power"):
        if key in params and not isinstance(params[key], tuple):
            v = params[key]
            params[key] = tuple(v) if isinstance(v, (list, tuple)) else (v,)
    return ScenarioConfig(family=family, **params)


def sub_seed(*parts) -> int:
    """Stable 63-bit seed from a sequence of names/ints."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") >> 1


# ------------------------------------------------------------------ topology


def _mst(points: np.ndarray) -> list[tuple[int, int]]:
    n = len(points)
    if n < 2:
        return []
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    dist = np.linalg.norm(points - points[0], axis=1)
    parent = np.zeros(n, dtype=np.int64)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, dist)
        v = int(np.argmin(cand))
        edges.append((int(parent[v]), v))
        in_tree[v] = True
        d_new = np.linalg.norm(points - points[v], axis=1)
        closer = d_new < dist
        dist = np.where(closer, d_new, dist)
        parent = np.where(closer, v, parent)
    return edges


def _hops_from(adj: list[set], src: int) -> np.ndarray:
    dist = np.full(len(adj), np.inf)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] == np.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _redundancy_target(adj, points, i, r) -> int | None:
    hops = _hops_from(adj, i)
    d = np.linalg.norm(points - points[i], axis=1)
    score = np.full(len(adj), -np.inf)
    ok = np.ones(len(adj), dtype=bool)
    ok[i] = False
    ok[list(adj[i])] = False
    ok &= d > 0
    score[ok] = (hops[ok] + 1) ** r / d[ok]
    if not ok.any():
        return None
    return int(np.argmax(score))


def generate_topology(n: int, params: GrowthParams | None = None, seed: int = 0) -> PowerGrid:
    """Connected spatial graph from the random growth model, unit coupling."""
    if n < 2:
        raise ValueError("need at least two nodes")
    params = params or GrowthParams()
    rng = np.random.default_rng(seed)
    n0 = max(2, min(params.n0, n))
    points = list(rng.random((n0, 2)))
    adj: list[set] = [set() for _ in range(n0)]
    edges: list[tuple[int, int]] = []

    def link(a, b):
        adj[a].add(b)
        adj[b].add(a)
        edges.append((a, b))

    for a, b in _mst(np.array(points)):
        link(a, b)
    for _ in range(int(n0 * (1 - params.s) * (params.p + params.q))):
        i = int(rng.integers(len(points)))
        j = _redundancy_target(adj, np.array(points), i, params.r)
        if j is not None:
            link(i, j)

    while len(points) < n:
        if edges and rng.random() < params.s:
            k = int(rng.integers(len(edges)))
            a, b = edges.pop(k)
            adj[a].discard(b)
            adj[b].discard(a)
            points.append((points[a] + points[b]) / 2)
            adj.append(set())
            c = len(points) - 1
            link(a, c)
            link(c, b)
            continue
        points.append(rng.random(2))
        adj.append(set())
        c = len(points) - 1
        arr = np.array(points)
        d = np.linalg.norm(arr[:c] - arr[c], axis=1)
        link(c, int(np.argmin(d)))
        if rng.random() < params.p:
            j = _redundancy_target(adj, arr, c, params.r)
            if j is not None:
                link(c, j)
        if rng.random() < params.q:
            i = int(rng.integers(len(points)))
            j = _redundancy_target(adj, arr, i, params.r)
            if j is not None:
                link(i, j)

    pairs = np.array(sorted((min(a, b), max(a, b)) for a, b in edges), dtype=np.int64)
    return PowerGrid(np.zeros(n), pairs, np.ones(len(pairs)), positions=np.array(points))


# ------------------------------------------------------------------ powers


def assign_powers(topology: PowerGrid, ratio=(1, 1), consumer_power: float = 1.0, seed: int = 0) -> PowerGrid:
    """Randomly mark ``N_G`` generators (+|P_G|) and ``N_C`` consumers (-|P_C|)."""
    n = topology.n_nodes
    ng_part, nc_part = ratio
    if n % (ng_part + nc_part):
        raise InfeasibleRatio(f"ratio {ng_part}:{nc_part} does not divide {n} nodes")
    n_gen = n // (ng_part + nc_part) * ng_part
    n_con = n - n_gen
    p_gen = n_con * consumer_power / n_gen
    rng = np.random.default_rng(seed)
    p = np.full(n, -float(consumer_power))
    p[rng.permutation(n)[:n_gen]] = p_gen
    # exact balance: fold the rounding residue into one generator
    p[np.argmax(p)] -= p.sum()
    return topology.with_injections(p)


def apply_coupling(grid: PowerGrid, scheme: str | float = "inverse-length") -> PowerGrid:
    """``K_ij = 1 / L_ij`` from node positions, or one constant for all lines."""
    if scheme != "inverse-length":
        return grid.with_coupling(float(scheme))
    if grid.positions is None:
        raise ValueError("inverse-length coupling needs node positions")
    pos = grid.positions
    lengths = np.linalg.norm(pos[grid.edges[:, 0]] - pos[grid.edges[:, 1]], axis=1)
    if np.any(lengths == 0):
        raise ZeroLength("two connected nodes share a position")
    return grid.with_coupling(1.0 / lengths)


def remove_dead_ends(grid: PowerGrid) -> PowerGrid:
    """Link every degree-one node to its spatially nearest non-neighbour.

    Nodes are visited in index order and the sweep repeats until no dead end
    is left. New lines get unit coupling; apply couplings afterwards.
    """
    if grid.positions is None:
        raise ValueError("dead-end removal needs node positions")
    n = grid.n_nodes
    pos = grid.positions
    adj = [set() for _ in range(n)]
    for a, b in grid.edges.tolist():
        adj[a].add(b)
        adj[b].add(a)
    added = []
    changed = True
    while changed:
        changed = False
        for v in range(n):
            if len(adj[v]) != 1:
                continue
            d = np.linalg.norm(pos - pos[v], axis=1)
            d[v] = np.inf
            d[list(adj[v])] = np.inf
            if not np.isfinite(d).any():
                continue
            u = int(np.argmin(d))
            adj[v].add(u)
            adj[u].add(v)
            added.append((min(u, v), max(u, v)))
            changed = True
    if not added:
        return grid
    edges = np.vstack([grid.edges, np.array(added, dtype=np.int64)])
    coupling = np.concatenate([grid.coupling, np.ones(len(added))])
    return replace(grid, edges=edges, coupling=coupling)


def perturb_injections(grid: PowerGrid, sigma: float, seed: int = 0) -> PowerGrid:
    """Add i.i.d. normal noise of standard deviation ``sigma``, re-centred to sum zero."""
    if sigma == 0:
        return grid
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, grid.n_nodes)
    noise -= noise.mean()
    p = grid.injections + noise
    p -= p.mean()
    p[np.argmax(np.abs(p))] -= p.sum()
    return grid.with_injections(p)


# ------------------------------------------------------------------ ensembles


@dataclass
class EnsembleMember:
    grid: PowerGrid
    family: str
    seed: int
    loading: float
    index: int


@dataclass
class GridEnsemble:
    config: ScenarioConfig
    members: list[EnsembleMember] = field(default_factory=list)
    discarded: list[dict] = field(default_factory=list)

    @property
    def grids(self) -> list[PowerGrid]:
        return [m.grid for m in self.members]

    def __len__(self):
        return len(self.members)


def _shared_topology(config: ScenarioConfig) -> PowerGrid:
    if config.topology_file:
        path = Path(config.topology_file)
        if path.suffix == ".json":
            return load_grid(path)
        pairs = np.loadtxt(path, dtype=np.int64, ndmin=2)[:, :2]
        ids = np.unique(pairs)
        index = {int(v): k for k, v in enumerate(ids)}
        edges = np.array([[index[int(a)], index[int(b)]] for a, b in pairs])
        return PowerGrid(np.zeros(len(ids)), edges, np.ones(len(edges)), node_ids=ids)
    return generate_topology(config.n_nodes, seed=sub_seed(config.seed, config.family, "topology"))


def _draw(config: ScenarioConfig, draw: int, shared: PowerGrid | None) -> list[tuple[float, PowerGrid]]:
    """All loading variants of one random draw (topology + role assignment)."""
    if shared is None:
        topo = generate_topology(config.n_nodes, seed=sub_seed(config.seed, config.family, "topology", draw))
    else:
        topo = shared
    if config.remove_dead_ends:
        topo = remove_dead_ends(topo)
    topo = apply_coupling(topo, config.coupling)
    if config.perturbation is not None:
        # one reference assignment, perturbed per draw
        base = assign_powers(topo, config.ratio, config.consumer_power[0],
                             seed=sub_seed(config.seed, config.family, "assign"))
        grid = perturb_injections(base, config.perturbation, seed=sub_seed(config.seed, config.family, "perturb", draw))
        return [(config.consumer_power[0], grid)]
    out = []
    assign_seed = sub_seed(config.seed, config.family, "assign", draw)
    for pc in config.consumer_power:
        out.append((pc, assign_powers(topo, config.ratio, pc, seed=assign_seed)))
    return out


def build_ensemble(config: ScenarioConfig) -> GridEnsemble:
    """Draw grids until ``ensemble_size`` solvable members exist.

    Members without a stable pre-failure steady state are discarded and logged.
    """
    shared = _shared_topology(config) if config.topology == "fixed" else None
    if shared is not None and shared.n_nodes != config.n_nodes:
        config = replace(config, n_nodes=shared.n_nodes)
    ens = GridEnsemble(config)
    max_attempts = 10 * config.ensemble_size
    attempts = 0
    draw = 0
    while len(ens.members) < config.ensemble_size:
        if attempts >= max_attempts:
            raise EnsembleExhausted(
                f"{config.family}: {len(ens.members)} of {config.ensemble_size} members after {attempts} draws"
            )
        for loading, grid in _draw(config, draw, shared):
            if len(ens.members) >= config.ensemble_size:
                break
            attempts += 1
            name = f"{config.family}-{len(ens.members):05d}"
            grid = replace(grid, name=name, meta={
                "family": config.family, "draw": draw, "loading": loading,
                "inertia": config.inertia, "damping": config.damping,
            })
            try:
                solve_steady_state(grid)
            except GridStabError as exc:
                log.info("discarding %s draw %d (P_C=%s): %s", config.family, draw, loading, exc)
                ens.discarded.append({"draw": draw, "loading": loading, "reason": exc.code})
                continue
            ens.members.append(EnsembleMember(grid, config.family, sub_seed(config.seed, config.family, draw),
                                              loading, len(ens.members)))
        draw += 1
    return ens


def save_ensemble(ens: GridEnsemble, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for member in ens.members:
        save_grid(member.grid, directory / f"{member.grid.name}.json")
    manifest = {
        "family": ens.config.family,
        "config": ens.config.to_dict(),
        "members": [
            {"name": m.grid.name, "file": f"{m.grid.name}.json", "seed": m.seed, "loading": m.loading}
            for m in ens.members
        ],
        "discarded": ens.discarded,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_ensemble(directory) -> GridEnsemble:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    cfg = dict(manifest["config"])
    cfg["ratio"] = tuple(cfg["ratio"])
    cfg["consumer_power"] = tuple(cfg["consumer_power"])
    config = ScenarioConfig(**cfg)
    ens = GridEnsemble(config, discarded=list(manifest.get("discarded", [])))
    for k, rec in enumerate(manifest["members"]):
        grid = load_grid(directory / rec["file"])
        ens.members.append(EnsembleMember(grid, manifest["family"], rec["seed"], rec["loading"], k))
    return ens


def ensemble_digest(ens: GridEnsemble) -> str:
    h = hashlib.sha256()
    for m in ens.members:
        h.update(json.dumps(grid_to_dict(m.grid), sort_keys=True).encode())
    return h.hexdigest()


def mean_degree(grid: PowerGrid) -> float:
    return 2 * grid.n_edges / grid.n_nodes if grid.n_nodes else math.nan
