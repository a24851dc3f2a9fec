"""Tree models for line-failure risk: a decision tree, boosted stumps and boosted trees.

All models share one representation: a margin ``F0 + eta * sum_t tree_t(x)``
on the log-odds scale, turned into a probability with the logistic function.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._backend import kernels
from .errors import DegenerateData, MissingFeature, SchemaMismatch
from .features import FEATURES, LineFeatureVector
from .metrics import average_precision, stratified_folds, stratified_split

KINDS = ("dt", "stumps", "gbt")
ML_FEATURES: tuple[str, ...] = tuple(f for f in FEATURES if f != "c_ab")
LEAF_CLIP = 1e-6
MIN_GAIN = 1e-12
MAX_HALVINGS = 30
MODEL_FORMAT = "gridstab-tree-model"


def sigmoid(margin):
    m = np.asarray(margin, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * m))


def log_loss(y, margin) -> float:
    """Mean logistic loss computed stably from margins."""
    m = np.asarray(margin, dtype=float)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    features: tuple[str, ...]
    family: str = ""
    split: str = ""
    ids: tuple = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=np.int64).ravel()
        feats = tuple(self.features)
        if X.shape != (y.size, len(feats)):
            raise ValueError(f"feature matrix shape {X.shape} does not match {y.size} labels x {len(feats)} names")
        if len(set(feats)) != len(feats):
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix contains NaN or infinite values")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "ids", tuple(self.ids))

    def __len__(self) -> int:
        return self.y.size

    @property
    def prevalence(self) -> float:
        return float(self.y.mean()) if self.y.size else 0.0

    def subset(self, rows, split: str | None = None) -> "Dataset":
        rows = np.asarray(rows)
        ids = tuple(self.ids[i] for i in rows) if self.ids else ()
        return Dataset(self.X[rows], self.y[rows], self.features, self.family,
                       self.split if split is None else split, ids)

    def select(self, names: Sequence[str]) -> "Dataset":
        cols = [self.column_index(n) for n in names]
        return Dataset(self.X[:, cols], self.y, tuple(names), self.family, self.split, self.ids)

    def column_index(self, name: str) -> int:
        try:
            return self.features.index(name)
        except ValueError:
            raise MissingFeature(name) from None

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.column_index(name)]

    @classmethod
    def from_vectors(cls, vectors: Sequence[LineFeatureVector], family: str = "",
                     features: Sequence[str] = FEATURES) -> "Dataset":
        if any(v.label is None for v in vectors):
            raise ValueError("every feature vector needs a label")
        cols = [FEATURES.index(f) for f in features]
        X = np.array([v.values[cols] for v in vectors]).reshape(len(vectors), len(cols))
        y = np.array([v.label for v in vectors], dtype=np.int64)
        return cls(X, y, tuple(features), family, "", tuple((v.grid_id, *v.line) for v in vectors))


@dataclass
class Tree:
    """Binary tree in flat arrays; ``feature == -1`` marks a leaf. Go left when ``x <= threshold``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for nd in range(self.n_nodes):
            if self.feature[nd] >= 0:
                depth[self.left[nd]] = depth[self.right[nd]] = depth[nd] + 1
        return int(depth.max(initial=0))

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r, nd = rows[inner], node[inner]
            go_left = X[r, f[inner]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def expected_value(self) -> float:
        leaves = self.feature < 0
        return float(np.dot(self.cover[leaves], self.value[leaves]) / self.cover[0])

    def scaled(self, factor: float) -> "Tree":
        return replace(self, value=self.value * factor)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_dict(self, names: Sequence[str], node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": names[self.feature[node]],
            "threshold": float(self.threshold[node]),
            "cover": float(self.cover[node]),
            "left": self.to_dict(names, int(self.left[node])),
            "right": self.to_dict(names, int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, data: dict, names: Sequence[str]) -> "Tree":
        cols = {n: i for i, n in enumerate(names)}
        rows: list[list] = []

        def visit(d) -> int:
            idx = len(rows)
            rows.append([-1, 0.0, -1, -1, 0.0, float(d["cover"])])
            if "leaf" in d:
                rows[idx][4] = float(d["leaf"])
            else:
                if d["feature"] not in cols:
                    raise SchemaMismatch(f"tree splits on unknown feature {d['feature']!r}")
                rows[idx][0] = cols[d["feature"]]
                rows[idx][1] = float(d["threshold"])
                rows[idx][2] = visit(d["left"])
                rows[idx][3] = visit(d["right"])
            return idx

        visit(data)
        cols_ = list(zip(*rows))
        return cls(np.array(cols_[0], np.int32), np.array(cols_[1]), np.array(cols_[2], np.int32),
                   np.array(cols_[3], np.int32), np.array(cols_[4]), np.array(cols_[5]))


@dataclass(frozen=True)
class TrainParams:
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_leaf: int = 20
    colsample: float = 1.0
    l2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("n_trees >= 0, max_depth >= 1 and min_leaf >= 1 required")
        if not 0 < self.learning_rate <= 1 or not 0 < self.colsample <= 1 or self.l2 < 0:
            raise ValueError("learning_rate and colsample must lie in (0, 1], l2 >= 0")


@dataclass
class TreeEnsembleModel:
    kind: str
    features: tuple[str, ...]
    base_score: float
    learning_rate: float
    trees: list[Tree] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    train_loss: list[float] = field(default_factory=list)

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def expected_margin(self) -> float:
        return self.base_score + self.learning_rate * sum(t.expected_value() for t in self.trees)

    def used_features(self) -> set[str]:
        return {self.features[i] for t in self.trees for i in t.used_features()}

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": 1,
            "kind": self.kind,
            "features": list(self.features),
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "params": self.params,
            "train_loss": self.train_loss,
            "trees": [t.to_dict(self.features) for t in self.trees],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "TreeEnsembleModel":
        if data.get("format") != MODEL_FORMAT:
            raise SchemaMismatch("not a serialized tree model")
        feats = tuple(data["features"])
        return cls(data["kind"], feats, float(data["base_score"]), float(data["learning_rate"]),
                   [Tree.from_dict(t, feats) for t in data["trees"]], dict(data.get("params", {})),
                   [float(v) for v in data.get("train_loss", [])])


def save_model(model: TreeEnsembleModel, path) -> None:
    Path(path).write_text(model.dumps() + "\n")


def load_model(path) -> TreeEnsembleModel:
    return TreeEnsembleModel.from_dict(json.loads(Path(path).read_text()))


# ------------------------------------------------------------------ growing


def presort(X: np.ndarray) -> np.ndarray:
    """Stable argsort of every column, as a C-contiguous ``(n_features, n_rows)`` int32 array."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int32)


def grow_tree(X: np.ndarray, order: np.ndarray, target: np.ndarray, max_depth: int, min_leaf: int,
              feats: np.ndarray, criterion: int, leaf_value) -> Tree:
    """Level-wise greedy growth with exact threshold search.

    ``criterion`` 0 splits on squared-error reduction of ``target``; 1 on entropy
    reduction with ``target`` the 0/1 labels. ``leaf_value(rows)`` gives the value
    stored in a leaf holding the training rows ``rows``.
    """
    n = X.shape[0]
    feature, threshold, left, right, cover = [-1], [0.0], [-1], [-1], [float(n)]
    node_id = np.zeros(n, dtype=np.int64)      # tree node of every row
    slot = np.zeros(n, dtype=np.int32)          # frontier slot, -1 when settled
    frontier = [0]
    target = np.ascontiguousarray(target, dtype=float)
    feats = np.ascontiguousarray(feats, dtype=np.int32)
    for _ in range(max_depth):
        active = slot >= 0
        sums = np.bincount(slot[active], target[active], minlength=len(frontier))
        cnts = np.bincount(slot[active], minlength=len(frontier)).astype(np.int64)
        best_f, best_t, _ = kernels.best_splits(X, order, target, slot, sums, cnts, feats,
                                                int(min_leaf), int(criterion), MIN_GAIN)
        next_slot = np.full((len(frontier), 2), -1, dtype=np.int32)
        new_frontier = []
        for s, nd in enumerate(frontier):
            if best_f[s] < 0:
                continue
            feature[nd], threshold[nd] = int(best_f[s]), float(best_t[s])
            for side in (0, 1):
                child = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                cover.append(0.0)
                (left if side == 0 else right)[nd] = child
                next_slot[s, side] = len(new_frontier)
                new_frontier.append(child)
        if not new_frontier:
            break
        rows = np.flatnonzero(active)
        s = slot[rows]
        f = best_f[s]
        splitting = f >= 0
        rows, s, f = rows[splitting], s[splitting], f[splitting]
        side = (X[rows, f] > best_t[s]).astype(np.int64)
        slot[:] = -1
        slot[rows] = next_slot[s, side]
        node_id[rows] = np.asarray(new_frontier)[slot[rows]]
        frontier = new_frontier
    feature_a = np.array(feature, dtype=np.int32)
    n_nodes = feature_a.size
    cover_a = np.bincount(node_id, minlength=n_nodes).astype(float)
    for nd in range(n_nodes - 1, -1, -1):
        if feature_a[nd] >= 0:
            cover_a[nd] = cover_a[left[nd]] + cover_a[right[nd]]
    value = np.zeros(n_nodes)
    leaf_rows = np.argsort(node_id, kind="stable")
    bounds = np.searchsorted(node_id[leaf_rows], np.arange(n_nodes + 1))
    for nd in np.flatnonzero(feature_a < 0):
        value[nd] = leaf_value(leaf_rows[bounds[nd]:bounds[nd + 1]])
    return Tree(feature_a, np.array(threshold), np.array(left, np.int32), np.array(right, np.int32),
                value, cover_a)


def _check_classes(train: Dataset) -> None:
    if len(train) == 0 or train.y.min() == train.y.max():
        raise DegenerateData("training data must contain both classes")


def _column_draw(rng: np.random.Generator, n_features: int, colsample: float) -> np.ndarray:
    if colsample >= 1.0:
        return np.arange(n_features, dtype=np.int32)
    k = max(1, int(round(colsample * n_features)))
    return np.sort(rng.choice(n_features, size=k, replace=False)).astype(np.int32)


def log_odds(p: float) -> float:
    p = min(max(p, LEAF_CLIP), 1.0 - LEAF_CLIP)
    return math.log(p / (1.0 - p))


def train_decision_tree(train: Dataset, params: TrainParams = TrainParams()) -> TreeEnsembleModel:
    """Entropy-split classification tree whose leaves hold the log-odds of their training subset.

    Only ``max_depth`` and ``min_leaf`` apply; a single tree always sees every feature.
    """
    _check_classes(train)
    y = train.y.astype(float)
    feats = np.arange(len(train.features), dtype=np.int32)
    tree = grow_tree(np.ascontiguousarray(train.X), presort(train.X), y, params.max_depth, params.min_leaf,
                     feats, 1, lambda rows: log_odds(float(y[rows].mean())))
    model = TreeEnsembleModel("dt", train.features, 0.0, 1.0, [tree], _param_record("dt", params))
    model.train_loss = [log_loss(train.y, model.margin(train.X))]
    return model


def _param_record(kind: str, params: TrainParams) -> dict:
    rec = asdict(params)
    if kind == "dt":
        for k in ("n_trees", "learning_rate", "l2", "colsample", "seed"):
            rec.pop(k)
    if kind == "stumps":
        rec["max_depth"] = 1
    return rec


def train_gbt(train: Dataset, params: TrainParams = TrainParams(), depth_cap: int | None = None,
              order: np.ndarray | None = None) -> TreeEnsembleModel:
    """Logistic-loss gradient boosting with Newton leaf values.

    Each round fits a squared-error regression tree to the residuals
    ``y - sigmoid(F)``; a leaf holds ``sum(r) / (sum(p (1 - p)) + l2)``. If a
    round would raise the training loss, its tree is halved until it does not.
    With ``depth_cap=1`` the result is a boosted-stumps model.
    """
    _check_classes(train)
    depth = params.max_depth if depth_cap is None else min(params.max_depth, depth_cap)
    kind = "stumps" if depth == 1 else "gbt"
    params = replace(params, max_depth=depth)
    X = np.ascontiguousarray(train.X)
    y = train.y.astype(float)
    order = presort(X) if order is None else order
    prior = float(y.mean())
    f0 = math.log(prior / (1.0 - prior))
    margin = np.full(y.size, f0)
    loss = log_loss(y, margin)
    model = TreeEnsembleModel(kind, train.features, f0, params.learning_rate, [], _param_record(kind, params),
                              [loss])
    rng = np.random.default_rng(params.seed)
    for _ in range(params.n_trees):
        p = sigmoid(margin)
        resid = y - p
        hess = p * (1.0 - p)
        feats = _column_draw(rng, X.shape[1], params.colsample)
        tree = grow_tree(X, order, resid, depth, params.min_leaf, feats, 0,
                         lambda rows: float(resid[rows].sum() / (hess[rows].sum() + params.l2)))
        step = params.learning_rate * tree.predict(X)
        for _ in range(MAX_HALVINGS):
            new_loss = log_loss(y, margin + step)
            if new_loss <= loss:
                break
            tree = tree.scaled(0.5)
            step = 0.5 * step
        else:
            break
        margin = margin + step
        loss = new_loss
        model.trees.append(tree)
        model.train_loss.append(loss)
    return model


def train_model(kind: str, train: Dataset, params: TrainParams = TrainParams()) -> TreeEnsembleModel:
    if kind == "dt":
        return train_decision_tree(train, params)
    if kind == "stumps":
        return train_gbt(train, params, depth_cap=1)
    if kind == "gbt":
        return train_gbt(train, params)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


# ------------------------------------------------------------------ prediction


def _design(model: TreeEnsembleModel, features) -> np.ndarray:
    """Columns of ``features`` in the model's training order."""
    if isinstance(features, Dataset):
        return features.X[:, [features.column_index(f) for f in model.features]]
    if isinstance(features, Mapping):
        missing = [f for f in model.features if f not in features]
        if missing:
            raise MissingFeature(", ".join(missing))
        cols = [np.atleast_1d(np.asarray(features[f], dtype=float)) for f in model.features]
        return np.column_stack(cols) if cols else np.zeros((1, 0))
    if isinstance(features, LineFeatureVector):
        return _design(model, features.as_dict())
    X = np.atleast_2d(np.asarray(features, dtype=float))
    if X.shape[1] != len(model.features):
        raise MissingFeature(f"expected {len(model.features)} columns in model order, got {X.shape[1]}")
    return X


def predict_margin(model: TreeEnsembleModel, features) -> np.ndarray:
    return model.margin(_design(model, features))


def predict(model: TreeEnsembleModel, features) -> np.ndarray:
    """Probability that a failure is critical."""
    return sigmoid(predict_margin(model, features))


def classify(model: TreeEnsembleModel, features, threshold: float = 0.5) -> np.ndarray:
    """``"critical"`` where the predicted probability is at least ``threshold``, else ``"stable"``."""
    return np.where(predict(model, features) >= threshold, "critical", "stable")


# ------------------------------------------------------------------ tuning


@dataclass(frozen=True)
class HyperParamSpace:
    n_trees: tuple[int, int] = (50, 500)
    learning_rate: tuple[float, float] = (0.02, 0.3)
    max_depth: tuple[int, int] = (2, 8)
    min_leaf: tuple[int, int] = (5, 50)
    colsample: tuple[float, float] = (0.6, 1.0)
    draws: int = 40
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.n_trees, self.learning_rate, self.max_depth, self.min_leaf, self.colsample):
            if lo > hi:
                raise ValueError("empty hyper-parameter range")
        if self.draws < 1:
            raise ValueError("need at least one draw")
        if self.learning_rate[0] <= 0:
            raise ValueError("learning rate range must be positive")

    def sample(self) -> list[TrainParams]:
        rng = np.random.default_rng(self.seed)
        out = []
        for i in range(self.draws):
            lr = math.exp(rng.uniform(math.log(self.learning_rate[0]), math.log(self.learning_rate[1])))
            out.append(TrainParams(
                n_trees=int(rng.integers(self.n_trees[0], self.n_trees[1] + 1)),
                learning_rate=float(lr),
                max_depth=int(rng.integers(self.max_depth[0], self.max_depth[1] + 1)),
                min_leaf=int(rng.integers(self.min_leaf[0], self.min_leaf[1] + 1)),
                colsample=float(rng.uniform(*self.colsample)),
                seed=int(rng.integers(0, 2**31 - 1)),
            ))
        return out


@dataclass
class SearchResult:
    best: TrainParams
    best_score: float
    scores: list[float]
    draws: list[TrainParams]


def _score_draw(args) -> float:
    kind, params, train, valid = args
    model = train_model(kind, train, params)
    return average_precision(predict(model, valid), valid.y)


def random_search(space: HyperParamSpace, train: Dataset, valid: Dataset, kind: str = "gbt",
                  workers: int = 1) -> SearchResult:
    """Best validation-AP draw; ties go to the earliest draw."""
    draws = space.sample()
    jobs = [(kind, p, train, valid) for p in draws]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_score_draw, jobs))
    else:
        scores = [_score_draw(j) for j in jobs]
    best = int(np.argmax(scores))
    return SearchResult(draws[best], float(scores[best]), [float(s) for s in scores], draws)


def tune(kind: str, data: Dataset, space: HyperParamSpace = HyperParamSpace(), valid_fraction: float = 0.2,
         seed: int = 0, workers: int = 1) -> SearchResult:
    """Random search on a stratified train/validation split of ``data``."""
    tr, va = stratified_split(data.y, valid_fraction, seed)
    return random_search(space, data.subset(tr, "tune-train"), data.subset(va, "tune-valid"), kind, workers)


# ------------------------------------------------------------------ explanations


def tree_shap(model: TreeEnsembleModel, features) -> tuple[np.ndarray, float]:
    """Path-dependent TreeSHAP on the margin scale.

    Returns ``(phi, base)`` with ``phi`` of shape ``(n_samples, n_features)`` so that
    ``phi.sum(1) + base`` equals the model margin.
    """
    X = np.ascontiguousarray(_design(model, features), dtype=float)
    phi = np.zeros((X.shape[0], len(model.features)))
    for t in model.trees:
        if t.n_nodes == 1:
            continue
        kernels.tree_shap(t.feature, t.threshold, t.left, t.right, t.value, t.cover, t.depth, X, phi,
                          model.learning_rate)
    return phi, model.expected_margin()


def feature_importance(model: TreeEnsembleModel, features) -> np.ndarray:
    """Mean absolute SHAP value per feature, normalised to sum to one (all zero for a split-free model)."""
    phi, _ = tree_shap(model, features)
    imp = np.abs(phi).mean(axis=0)
    total = imp.sum()
    return imp / total if total > 0 else imp


@dataclass
class RFEStep:
    features: tuple[str, ...]
    cv_ap: float
    cv_std: float
    importance: np.ndarray
    dropped: str


@dataclass
class RFEResult:
    trace: list[RFEStep]
    optimal: tuple[str, ...]
    optimal_ap: float
    margin: float


def cross_validated_ap(kind: str, data: Dataset, params: TrainParams, folds: np.ndarray,
                       with_importance: bool = False):
    """Mean and std of test-fold AP; optionally the importances averaged over the fold models."""
    aps, imps = [], []
    for f in np.unique(folds):
        test = folds == f
        model = train_model(kind, data.subset(np.flatnonzero(~test)), params)
        held = data.subset(np.flatnonzero(test))
        aps.append(average_precision(predict(model, held), held.y))
        if with_importance:
            imps.append(feature_importance(model, held))
    out = (float(np.mean(aps)), float(np.std(aps)))
    return out + (np.mean(imps, axis=0),) if with_importance else out


def recursive_feature_elimination(data: Dataset, kind: str = "gbt", params: TrainParams = TrainParams(),
                                  n_folds: int = 4, seed: int = 0, margin: float = 0.002) -> RFEResult:
    """Drop the least important feature until two remain, scoring every set by cross-validated AP.

    The trace has one entry per evaluated set (``n_features - 1`` entries). The
    optimal set is the smallest one whose AP is within ``margin`` of the best.
    """
    if len(data.features) < 2:
        raise ValueError("feature elimination needs at least two features")
    folds = stratified_folds(data.y, n_folds, seed)
    current = list(data.features)
    trace: list[RFEStep] = []
    while len(current) >= 2:
        sub = data.select(current)
        ap, sd, imp = cross_validated_ap(kind, sub, params, folds, with_importance=True)
        drop = current[int(np.argmin(imp))]
        trace.append(RFEStep(tuple(current), ap, sd, imp, drop))
        current.remove(drop)
    best = max(s.cv_ap for s in trace)
    chosen = min((s for s in trace if s.cv_ap >= best - margin), key=lambda s: len(s.features))
    return RFEResult(trace, chosen.features, chosen.cv_ap, margin)
