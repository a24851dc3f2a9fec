import numpy as np
import pytest

import gridstab.dynamics as dynamics
import gridstab.ml as ml
from gridstab import _backend, _fallback
from gridstab.grid import solve_steady_state
from gridstab.ml import TrainParams, train_model, tree_shap

from helpers import feasible_grid
from test_ml import synthetic

compiled = pytest.mark.skipif(not _backend.COMPILED, reason="compiled extension not built")


def _both(monkeypatch, module, fn):
    out = fn()
    monkeypatch.setattr(module, "kernels", _fallback)
    try:
        return out, fn()
    finally:
        monkeypatch.undo()


def test_backend_name():
    assert _backend.BACKEND in ("cython", "python")


@compiled
def test_integrators_agree(monkeypatch):
    for seed in range(3):
        g = feasible_grid(np.random.default_rng(seed), 12, load=0.5)
        s = solve_steady_state(g)
        omega0 = 0.2 * np.random.default_rng(seed).normal(size=12)
        t = np.linspace(0, 40, 81)
        fn = lambda: dynamics.integrate_swing(g.without_edge(0), s.angles, omega0,  # noqa: E731
                                              dynamics.DynamicsParams(early_exit=False), t_eval=t, t_end=40)
        a, b = _both(monkeypatch, dynamics, fn)
        np.testing.assert_allclose(a.omega, b.omega, atol=1e-9)
        np.testing.assert_allclose(a.delta, b.delta, atol=1e-9)


@compiled
def test_labels_agree(monkeypatch):
    g = feasible_grid(np.random.default_rng(5), 14, load=0.8)
    fn = lambda: [(x.label, x.status) for x in dynamics.sweep_failures([g])]  # noqa: E731
    a, b = _both(monkeypatch, dynamics, fn)
    assert a == b


@compiled
@pytest.mark.parametrize("kind", ["dt", "stumps", "gbt"])
def test_tree_growth_agrees(monkeypatch, kind):
    data = synthetic(400, noise=3, seed=2, flip=0.15)
    p = TrainParams(n_trees=20, max_depth=4, min_leaf=3, colsample=0.8, seed=1)
    a, b = _both(monkeypatch, ml, lambda: train_model(kind, data, p).dumps())
    assert a == b


@compiled
def test_tree_shap_agrees(monkeypatch):
    data = synthetic(300, noise=2)
    m = train_model("gbt", data, TrainParams(n_trees=25, max_depth=5, min_leaf=3))
    a, b = _both(monkeypatch, ml, lambda: tree_shap(m, data)[0])
    np.testing.assert_allclose(a, b, atol=1e-12)
