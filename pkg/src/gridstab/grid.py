"""Grid representation, Laplacians, DC flow and nonlinear steady states.

Nodes are indexed ``0..N-1`` internally. Lines are undirected records ``(i, j)``
with coupling ``K_ij > 0``; line flows are oriented ``i -> j`` in stored order.
"""
from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DisconnectedGrid, InvalidGrid, NoSteadyState

BALANCE_TOL = 1e-12

WEIGHTINGS = ("coupling", "cosine", "unit")


@dataclass(frozen=True, eq=False)
class PowerGrid:
    """Immutable oscillator-model grid.

    Parameters
    ----------
    injections : array (N,)
        Net real-power injection ``P_i`` per node (per unit), summing to zero.
    edges : array (M, 2)
        Line endpoints as node indices.
    coupling : array (M,)
        Coupling strength ``K_ij`` of each line.
    positions : array (N, 2), optional
        Node coordinates, needed for length-based couplings.
    node_ids : array (N,), optional
        External integer ids used in files; defaults to ``0..N-1``.
    name : str
        Grid identifier carried into labels and feature tables.
    """

    injections: np.ndarray
    edges: np.ndarray
    coupling: np.ndarray
    positions: np.ndarray | None = None
    node_ids: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.array(self.injections, dtype=float).reshape(-1)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        k = np.array(self.coupling, dtype=float).reshape(-1)
        n = p.size
        object.__setattr__(self, "injections", p)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "coupling", k)
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float).reshape(n, 2)
            object.__setattr__(self, "positions", pos)
        ids = np.arange(n) if self.node_ids is None else np.asarray(self.node_ids, dtype=np.int64)
        if ids.shape != (n,) or len(set(ids.tolist())) != n:
            raise InvalidGrid("node ids must be unique, one per node")
        object.__setattr__(self, "node_ids", ids)

        for arr in (p, k):
            arr.setflags(write=False)
        e.setflags(write=False)
        if k.shape[0] != e.shape[0]:
            raise InvalidGrid("one coupling value per edge required")
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InvalidGrid("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise InvalidGrid("self-loop")
        if np.any(~(k > 0)):
            raise InvalidGrid("coupling must be strictly positive")
        keys = np.sort(e, axis=1)
        if len({(int(a), int(b)) for a, b in keys}) != len(keys):
            raise InvalidGrid("duplicate edge")
        if abs(p.sum()) > BALANCE_TOL:
            raise InvalidGrid(f"injections not balanced (sum={p.sum():.3e})")

    @property
    def n_nodes(self) -> int:
        return self.injections.size

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge_index(self, line) -> int:
        """Index of ``line``, given either as an index or an ``(a, b)`` id pair."""
        if isinstance(line, (int, np.integer)):
            if not 0 <= line < self.n_edges:
                raise IndexError(f"line index {line} out of range")
            return int(line)
        a, b = (self._index_of(v) for v in line)
        hit = np.flatnonzero(
            ((self.edges[:, 0] == a) & (self.edges[:, 1] == b))
            | ((self.edges[:, 0] == b) & (self.edges[:, 1] == a))
        )
        if hit.size == 0:
            raise KeyError(f"no line between {line[0]} and {line[1]}")
        return int(hit[0])

    def _index_of(self, node_id) -> int:
        hit = np.flatnonzero(self.node_ids == node_id)
        if hit.size == 0:
            raise KeyError(f"unknown node id {node_id}")
        return int(hit[0])

    def edge_ids(self, k: int) -> tuple[int, int]:
        i, j = self.edges[k]
        return int(self.node_ids[i]), int(self.node_ids[j])

    def without_edge(self, line) -> "PowerGrid":
        k = self.edge_index(line)
        keep = np.arange(self.n_edges) != k
        return replace(self, edges=self.edges[keep], coupling=self.coupling[keep])

    def with_injections(self, injections) -> "PowerGrid":
        return replace(self, injections=np.asarray(injections, dtype=float))

    def with_coupling(self, coupling) -> "PowerGrid":
        return replace(self, coupling=np.broadcast_to(np.asarray(coupling, float), (self.n_edges,)).copy())

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def adjacency(self, removed: int | None = None) -> list[list[tuple[int, int]]]:
        """Neighbour lists of ``(neighbour, edge index)``, optionally skipping one edge."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_nodes)]
        for k, (i, j) in enumerate(self.edges.tolist()):
            if k == removed:
                continue
            adj[i].append((j, k))
            adj[j].append((i, k))
        return adj


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Solved operating point: angles, oriented line flows and loads."""

    angles: np.ndarray
    flows: np.ndarray
    loads: np.ndarray
    residual: float = 0.0
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class DCFlow:
    angles: np.ndarray
    flows: np.ndarray


def build_laplacian(grid: PowerGrid, weighting: str = "coupling", angles=None) -> np.ndarray:
    """Dense weighted graph Laplacian.

    ``weighting`` selects the line weight: ``"coupling"`` (``K_ij``), ``"cosine"``
    (``K_ij cos(delta_i - delta_j)``, requires ``angles``) or ``"unit"``.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"unknown weighting {weighting!r}")
    n = grid.n_nodes
    i, j = grid.edges[:, 0], grid.edges[:, 1]
    if weighting == "coupling":
        w = grid.coupling
    elif weighting == "unit":
        w = np.ones(grid.n_edges)
    else:
        if angles is None:
            raise ValueError("cosine weighting needs angles")
        angles = np.asarray(angles, dtype=float)
        w = grid.coupling * np.cos(angles[i] - angles[j])
    lap = np.zeros((n, n))
    lap[i, j] = -w
    lap[j, i] = -w
    lap[np.diag_indices(n)] = -lap.sum(axis=1)
    return lap


def connectivity_components(grid: PowerGrid, removed_edge=None) -> list[list[int]]:
    """Connected components (sorted node-index lists, ordered by smallest node)."""
    removed = None if removed_edge is None else grid.edge_index(removed_edge)
    adj = grid.adjacency(removed)
    seen = np.zeros(grid.n_nodes, dtype=bool)
    parts = []
    for start in range(grid.n_nodes):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = [start], deque([start])
        while queue:
            u = queue.popleft()
            for v, _ in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        parts.append(sorted(comp))
    return parts


def is_connected(grid: PowerGrid, removed_edge=None) -> bool:
    return len(connectivity_components(grid, removed_edge)) <= 1


def laplacian_pinv(lap: np.ndarray, connected: bool = True) -> np.ndarray:
    """Moore-Penrose pseudoinverse; closed form via the all-ones shift when connected."""
    n = lap.shape[0]
    if n == 0:
        return lap.copy()
    if not connected:
        return np.linalg.pinv(lap, hermitian=True)
    shift = np.full((n, n), 1.0 / n)
    return np.linalg.inv(lap + shift) - shift


def solve_dc_flow(grid: PowerGrid) -> DCFlow:
    """Linearised flow ``Y theta = P`` with mean-zero angles."""
    if not is_connected(grid):
        raise DisconnectedGrid("DC flow needs a connected grid")
    n = grid.n_nodes
    if n == 0:
        return DCFlow(np.zeros(0), np.zeros(0))
    lap = build_laplacian(grid)
    theta = np.linalg.solve(lap + np.full((n, n), 1.0 / n), grid.injections)
    theta -= theta.mean()
    i, j = grid.edges[:, 0], grid.edges[:, 1]
    return DCFlow(theta, grid.coupling * (theta[i] - theta[j]))


def nodal_residual(grid: PowerGrid, angles: np.ndarray) -> np.ndarray:
    """``P_i - sum_j K_ij sin(delta_i - delta_j)`` for every node."""
    i, j = grid.edges[:, 0], grid.edges[:, 1]
    f = grid.coupling * np.sin(angles[i] - angles[j])
    n = grid.n_nodes
    return grid.injections - np.bincount(i, f, n) + np.bincount(j, f, n)


def solve_steady_state(
    grid: PowerGrid,
    initial_angles=None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> SteadyState:
    """Stable fixed point of the swing equation by damped Newton-Raphson.

    Node 0 is the angle reference. Raises :class:`NoSteadyState` when Newton
    fails or ends on a root with any ``cos(delta_i - delta_j) <= 0``.
    """
    n = grid.n_nodes
    if not is_connected(grid):
        raise DisconnectedGrid("steady state needs a connected grid")
    delta = np.zeros(n) if initial_angles is None else np.array(initial_angles, dtype=float)
    if n <= 1:
        return SteadyState(delta, np.zeros(0), np.zeros(0))

    res = nodal_residual(grid, delta)
    norm = np.abs(res).max()
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise NoSteadyState(f"Newton did not converge in {max_iter} iterations (|F|={norm:.2e})")
        it += 1
        jac = build_laplacian(grid, "cosine", delta)[1:, 1:]
        try:
            step = np.linalg.solve(jac, res[1:])
        except np.linalg.LinAlgError as exc:
            raise NoSteadyState("singular Jacobian") from exc
        if not np.all(np.isfinite(step)):
            raise NoSteadyState("non-finite Newton step")
        scale = 1.0
        for _ in range(40):
            trial = delta.copy()
            trial[1:] += scale * step
            trial_res = nodal_residual(grid, trial)
            trial_norm = np.abs(trial_res).max()
            if trial_norm < norm:
                break
            scale *= 0.5
        else:
            raise NoSteadyState(f"line search stalled (|F|={norm:.2e})")
        delta, res, norm = trial, trial_res, trial_norm

    i, j = grid.edges[:, 0], grid.edges[:, 1]
    diff = delta[i] - delta[j]
    if np.any(np.cos(diff) <= 0):
        raise NoSteadyState("converged to an unstable fixed point")
    flows = grid.coupling * np.sin(diff)
    return SteadyState(delta, flows, np.abs(flows) / grid.coupling, float(norm), it)


# --------------------------------------------------------------------------- io


def grid_to_dict(grid: PowerGrid) -> dict:
    nodes = []
    for k in range(grid.n_nodes):
        rec = {"id": int(grid.node_ids[k]), "p": float(grid.injections[k])}
        if grid.positions is not None:
            rec["x"] = float(grid.positions[k, 0])
            rec["y"] = float(grid.positions[k, 1])
        nodes.append(rec)
    edges = [
        {"i": int(grid.node_ids[i]), "j": int(grid.node_ids[j]), "k": float(kk)}
        for (i, j), kk in zip(grid.edges.tolist(), grid.coupling)
    ]
    out = {"name": grid.name, "nodes": nodes, "edges": edges}
    if grid.meta:
        out["meta"] = grid.meta
    return out


def grid_from_dict(data: dict, name: str | None = None) -> PowerGrid:
    nodes = data["nodes"]
    ids = [int(rec["id"]) for rec in nodes]
    index = {v: k for k, v in enumerate(ids)}
    positions = None
    if nodes and all("x" in rec and "y" in rec for rec in nodes):
        positions = [[float(rec["x"]), float(rec["y"])] for rec in nodes]
    edges = [[index[int(rec["i"])], index[int(rec["j"])]] for rec in data["edges"]]
    return PowerGrid(
        injections=[float(rec.get("p", 0.0)) for rec in nodes],
        edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        coupling=[float(rec["k"]) for rec in data["edges"]],
        positions=positions,
        node_ids=ids,
        name=data.get("name", "") if name is None else name,
        meta=dict(data.get("meta", {})),
    )


def save_grid(grid: PowerGrid, path) -> None:
    Path(path).write_text(json.dumps(grid_to_dict(grid), indent=1) + "\n")


def load_grid(path) -> PowerGrid:
    return grid_from_dict(json.loads(Path(path).read_text()))


def write_state_csv(grid: PowerGrid, state: SteadyState, angles_path, flows_path) -> None:
    with open(angles_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "angle"])
        for k in range(grid.n_nodes):
            w.writerow([int(grid.node_ids[k]), repr(float(state.angles[k]))])
    with open(flows_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_i", "edge_j", "flow", "load"])
        for k in range(grid.n_edges):
            a, b = grid.edge_ids(k)
            w.writerow([a, b, repr(float(state.flows[k])), repr(float(state.loads[k]))])


def read_state_csv(grid: PowerGrid, angles_path) -> SteadyState:
    """Rebuild a steady state from stored angles (flows follow from them)."""
    by_id = {}
    with open(angles_path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_id[int(row["node_id"])] = float(row["angle"])
    angles = np.array([by_id[int(v)] for v in grid.node_ids])
    i, j = grid.edges[:, 0], grid.edges[:, 1]
    flows = grid.coupling * np.sin(angles[i] - angles[j])
    res = np.abs(nodal_residual(grid, angles)).max() if grid.n_nodes else 0.0
    return SteadyState(angles, flows, np.abs(flows) / grid.coupling, float(res))


def edge_list_grid(pairs: Sequence[tuple[int, int]], n: int | None = None, coupling=1.0, injections=None,
                   positions=None, name: str = "") -> PowerGrid:
    """Convenience constructor from an edge list."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if n is None:
        n = int(pairs.max()) + 1 if pairs.size else 0
    k = np.broadcast_to(np.asarray(coupling, dtype=float), (pairs.shape[0],)).copy()
    p = np.zeros(n) if injections is None else injections
    return PowerGrid(p, pairs, k, positions=positions, name=name)
