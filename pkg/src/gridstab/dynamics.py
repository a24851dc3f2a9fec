"""Swing-equation simulation of single-line failures and stability labels."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ._backend import kernels
from .errors import GridStabError, IntegratorFailure
from .grid import PowerGrid, SteadyState, connectivity_components, solve_steady_state

log = logging.getLogger(__name__)

STABLE = "stable"
CRITICAL = "critical"
IMBALANCE_TOL = 1e-9


@dataclass(frozen=True)
class DynamicsParams:
    """Swing-equation constants and the stability criterion.

    A failure is *stable* when ``max_i |omega_i| < omega_tol`` at every step
    in the final window ``[t_max - window, t_max]``.
    """

    inertia: float | np.ndarray = 1.0
    damping: float | np.ndarray = 0.1
    t_max: float = 100.0
    window: float = 10.0
    omega_tol: float = 1e-2
    rtol: float = 1e-7
    atol: float = 1e-9
    early_exit: bool = True
    early_t: float = 10.0
    early_omega: float = 1e-6
    early_residual: float = 1e-8
    max_step: float | None = None  # None: bounded by the fastest swing mode

    def __post_init__(self):
        if np.any(np.asarray(self.inertia) <= 0) or np.any(np.asarray(self.damping) <= 0):
            raise ValueError("inertia and damping must be positive")
        if not self.t_max > self.window > 0:
            raise ValueError("need t_max > window > 0")
        if self.omega_tol <= 0:
            raise ValueError("omega_tol must be positive")

    def step_limit(self, grid: PowerGrid) -> float:
        """Largest RK step; explicit steps much longer than the fastest swing period amplify round-off.

        The fastest undamped mode has angular frequency at most
        ``sqrt(max_i 2 sum_j K_ij / J_i)`` (Gershgorin bound on the Laplacian).
        """
        if self.max_step is not None:
            return float(self.max_step)
        j, _ = self.per_node(grid.n_nodes)
        strength = np.bincount(grid.edges.ravel(), np.repeat(grid.coupling, 2), grid.n_nodes)
        fastest = np.sqrt(np.max(2 * strength / j, initial=0.0))
        return 2.0 / fastest if fastest > 0 else np.inf

    def per_node(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        j = np.broadcast_to(np.asarray(self.inertia, dtype=float), (n,)).copy()
        d = np.broadcast_to(np.asarray(self.damping, dtype=float), (n,)).copy()
        return j, d


@dataclass
class Trajectory:
    t: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    status: int
    t_final: float
    window_max_omega: float
    n_steps: int
    n_rejected: int

    @property
    def final_delta(self) -> np.ndarray:
        return self.delta[-1]

    @property
    def final_omega(self) -> np.ndarray:
        return self.omega[-1]


@dataclass
class FailureLabel:
    grid_id: str
    line: tuple[int, int]
    label: str
    max_final_omega: float
    wall_time: float = 0.0
    disconnects: bool = False
    status: str = "integrated"

    @property
    def critical(self) -> bool:
        return self.label == CRITICAL


def integrate_swing(grid: PowerGrid, delta0, omega0, params: DynamicsParams = DynamicsParams(),
                    t_eval=None, t_end: float | None = None, early_exit: bool | None = None) -> Trajectory:
    """Integrate ``J w' + D w = P - sum_j K_ij sin(d_i - d_j)``, ``d' = w``.

    Samples are returned at ``t_eval`` (default: 201 evenly spaced points).
    """
    n = grid.n_nodes
    t_end = params.t_max if t_end is None else float(t_end)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, 201)
    t_eval = np.ascontiguousarray(t_eval, dtype=float)
    j, d = params.per_node(n)
    early = params.early_exit if early_exit is None else early_exit
    status, t_final, _, samples, n_filled, wmax, n_steps, n_rej = kernels.integrate_swing(
        np.ascontiguousarray(grid.edges[:, 0]), np.ascontiguousarray(grid.edges[:, 1]),
        np.ascontiguousarray(grid.coupling), np.ascontiguousarray(grid.injections), j, d,
        np.ascontiguousarray(delta0, dtype=float), np.ascontiguousarray(omega0, dtype=float),
        0.0, t_end, params.rtol, params.atol, t_eval, t_end - params.window,
        params.early_t if early else -1.0, params.early_omega, params.early_residual,
        params.step_limit(grid),
    )
    if status < 0:
        raise IntegratorFailure(f"step size collapsed at t={t_final:.4g}")
    return Trajectory(t_eval[:n_filled], samples[:n_filled, :n], samples[:n_filled, n:], status,
                      t_final, wmax, n_steps, n_rej)


def island_imbalance(grid: PowerGrid, removed) -> tuple[bool, float]:
    """Whether removing ``removed`` splits the grid, and the largest island imbalance."""
    parts = connectivity_components(grid, removed)
    if len(parts) <= 1:
        return False, 0.0
    return True, max(abs(grid.injections[p].sum()) for p in parts)


def simulate_line_failure(grid: PowerGrid, line, params: DynamicsParams = DynamicsParams(),
                          steady: SteadyState | None = None) -> FailureLabel:
    """Remove ``line`` from the pre-failure steady state and classify the outcome."""
    start = time.perf_counter()
    k = grid.edge_index(line)
    ids = grid.edge_ids(k)
    if steady is None:
        steady = solve_steady_state(grid)
    disconnects, imbalance = island_imbalance(grid, k)
    if disconnects and imbalance > IMBALANCE_TOL:
        return FailureLabel(grid.name, ids, CRITICAL, float("inf"), time.perf_counter() - start,
                            True, "islanded")
    post = grid.without_edge(k)
    traj = integrate_swing(post, steady.angles, np.zeros(grid.n_nodes), params, t_eval=np.zeros(0))
    label = STABLE if traj.window_max_omega < params.omega_tol else CRITICAL
    status = "early-exit" if traj.status == 1 else "integrated"
    return FailureLabel(grid.name, ids, label, float(traj.window_max_omega),
                        time.perf_counter() - start, disconnects, status)


def _sweep_grid(args) -> tuple[list[FailureLabel], list[dict]]:
    grid, params = args
    labels, errors = [], []
    try:
        steady = solve_steady_state(grid)
    except GridStabError as exc:
        return [], [{"grid_id": grid.name, "line": None, "error": exc.code, "message": str(exc)}]
    for k in range(grid.n_edges):
        try:
            labels.append(simulate_line_failure(grid, k, params, steady))
        except GridStabError as exc:
            errors.append({"grid_id": grid.name, "line": grid.edge_ids(k), "error": exc.code,
                           "message": str(exc)})
    return labels, errors


def sweep_failures(grids: Iterable[PowerGrid], params: DynamicsParams = DynamicsParams(),
                   workers: int = 1, errors: list | None = None) -> list[FailureLabel]:
    """One label per (grid, line); failed items are appended to ``errors``."""
    jobs = [(g, params) for g in grids]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_grid, jobs))
    else:
        results = [_sweep_grid(job) for job in jobs]
    out = []
    for grid_labels, grid_errors in results:
        out.extend(grid_labels)
        if grid_errors:
            log.warning("%d failed simulations in %s", len(grid_errors), grid_errors[0]["grid_id"])
            if errors is not None:
                errors.extend(grid_errors)
    out.sort(key=lambda lab: (lab.grid_id, lab.line))
    return out


LABEL_COLUMNS = ["grid_id", "edge_i", "edge_j", "label", "max_final_omega", "disconnects"]


def write_labels_csv(labels: list[FailureLabel], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for lab in labels:
            w.writerow([lab.grid_id, lab.line[0], lab.line[1], lab.label,
                        repr(float(lab.max_final_omega)), int(lab.disconnects)])


def read_labels_csv(path) -> list[FailureLabel]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(FailureLabel(row["grid_id"], (int(row["edge_i"]), int(row["edge_j"])), row["label"],
                                    float(row["max_final_omega"]), disconnects=bool(int(row["disconnects"]))))
    return out


def energy(grid: PowerGrid, delta, omega, params: DynamicsParams = DynamicsParams()) -> np.ndarray:
    """Kinetic plus coupling energy ``sum J w^2 / 2 + sum K (1 - cos)`` minus ``P . delta``."""
    j, _ = params.per_node(grid.n_nodes)
    delta = np.atleast_2d(delta)
    omega = np.atleast_2d(omega)
    i, k = grid.edges[:, 0], grid.edges[:, 1]
    kinetic = 0.5 * (j * omega**2).sum(axis=1)
    potential = (grid.coupling * (1 - np.cos(delta[:, i] - delta[:, k]))).sum(axis=1)
    return kinetic + potential - delta @ grid.injections
