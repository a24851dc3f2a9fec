"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

import gridstab.dynamics as dynamics
import gridstab.ml as ml
from gridstab import _backend, _fallback
from gridstab.grid import solve_steady_state
from gridstab.ml import Dataset, TrainParams, train_model, tree_shap
from gridstab.scenarios import build_ensemble, family_config


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases():
    grid = build_ensemble(family_config("US", ensemble_size=1, seed=0)).grids[0]
    steady = solve_steady_state(grid)
    line = int(np.argmax(steady.loads))
    params = dynamics.DynamicsParams(early_exit=False)

    def swing():
        dynamics.integrate_swing(grid.without_edge(line), steady.angles, np.zeros(grid.n_nodes), params)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(2000, 25))
    y = (X[:, 0] + 0.5 * X[:, 1] + 0.3 * rng.normal(size=2000) > 0.8).astype(int)
    data = Dataset(X, y, tuple(f"x{i}" for i in range(25)))
    tp = TrainParams(n_trees=50, max_depth=4, min_leaf=10)
    model = train_model("gbt", data, tp)

    return [
        ("integrate_swing (50 nodes, t=100)", dynamics, swing),
        ("train gbt (2000x25, 50 trees)", ml, lambda: train_model("gbt", data, tp)),
        ("tree_shap (2000 samples, 50 trees)", ml, lambda: tree_shap(model, data)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _backend.COMPILED:
        raise SystemExit("compiled extension not available; build with `pip install -e . --no-build-isolation`")
    print(f"{'kernel':40s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    for name, module, fn in cases():
        fast = _time(fn, args.repeat)
        compiled = module.kernels
        module.kernels = _fallback
        try:
            slow = _time(fn, max(1, args.repeat // 3))
        finally:
            module.kernels = compiled
        print(f"{name:40s} {fast:10.4f} {slow:10.4f} {slow / fast:8.1f}x")


if __name__ == "__main__":
    main()
