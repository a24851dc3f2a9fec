"""Experiment protocols: univariate benchmarks, cross-validation and cross-family transfer."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SchemaMismatch
from .features import HIGHER_IS_RISKIER
from .metrics import average_precision, det_curve, pr_curve, stratified_folds, stratified_split
from .ml import KINDS, ML_FEATURES, Dataset, HyperParamSpace, TrainParams, predict, train_model, tune

BENCHMARK = "c_ab"


def univariate_threshold_model(column, labels, higher_is_riskier: bool = True) -> float:
    """AP of a single feature used directly as a risk score."""
    return average_precision(column, labels, higher_is_riskier)


def univariate_table(data: Dataset, features: Sequence[str] | None = None) -> dict[str, float]:
    """Univariate AP of every feature, oriented by the feature schema."""
    names = data.features if features is None else features
    return {f: univariate_threshold_model(data.column(f), data.y, HIGHER_IS_RISKIER.get(f, True)) for f in names}


@dataclass
class CVResult:
    kind: str
    mean_ap: float
    std_ap: float
    fold_ap: list[float]
    params: TrainParams | None
    folds: np.ndarray
    oof: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        return {"kind": self.kind, "mean_ap": self.mean_ap, "std_ap": self.std_ap, "fold_ap": self.fold_ap}


def _fold_job(args):
    kind, data, params, test_rows = args
    mask = np.zeros(len(data), dtype=bool)
    mask[test_rows] = True
    model = train_model(kind, data.subset(np.flatnonzero(~mask)), params)
    return predict(model, data.subset(test_rows))


def cross_validate(data: Dataset, kind: str, n_folds: int = 4, seed: int = 0, params: TrainParams | None = None,
                   space: HyperParamSpace | None = None, features: Sequence[str] = ML_FEATURES,
                   workers: int = 1) -> CVResult:
    """Stratified k-fold AP of one model kind, or of the univariate benchmark when ``kind == "c_ab"``.

    Without explicit ``params`` the model is tuned once, by random search on a
    stratified 80/20 split of the first fold's training part, and the tuned
    parameters are reused for every fold.
    """
    folds = stratified_folds(data.y, n_folds, seed)
    oof = np.zeros(len(data))
    if kind == BENCHMARK:
        fold_ap = []
        for f in range(n_folds):
            rows = np.flatnonzero(folds == f)
            score = data.column(BENCHMARK)[rows]
            oof[rows] = score
            fold_ap.append(univariate_threshold_model(score, data.y[rows]))
        return CVResult(kind, float(np.mean(fold_ap)), float(np.std(fold_ap)), fold_ap, None, folds, oof)
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    sub = data.select([f for f in features if f in data.features])
    if params is None:
        inner = sub.subset(np.flatnonzero(folds != 0))
        space = space or HyperParamSpace(seed=seed)
        params = tune(kind, inner, space, 0.2, seed, workers).best
    jobs = [(kind, sub, params, np.flatnonzero(folds == f)) for f in range(n_folds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_folds)) as pool:
            preds = list(pool.map(_fold_job, jobs))
    else:
        preds = [_fold_job(j) for j in jobs]
    fold_ap = []
    for (_, _, _, rows), p in zip(jobs, preds):
        oof[rows] = p
        fold_ap.append(average_precision(p, data.y[rows]))
    return CVResult(kind, float(np.mean(fold_ap)), float(np.std(fold_ap)), fold_ap, params, folds, oof)


@dataclass
class TransferReport:
    train_family: str
    test_family: str
    ap: dict[str, float]
    params: dict[str, TrainParams]
    probabilities: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def rows(self) -> list[dict]:
        return [{"train": self.train_family, "test": self.test_family, "model": k, "ap": v}
                for k, v in self.ap.items()]


def transfer_evaluate(train: Dataset, test: Dataset, kinds: Sequence[str] = KINDS, seed: int = 0,
                      space: HyperParamSpace | None = None, params: dict[str, TrainParams] | None = None,
                      features: Sequence[str] = ML_FEATURES, workers: int = 1) -> TransferReport:
    """Train on the whole ``train`` family, score the whole ``test`` family.

    Models are tuned on a stratified 80/20 split of the training family unless
    ``params`` supplies them. The univariate ``c_ab`` benchmark is scored on the
    test family as well.
    """
    if tuple(train.features) != tuple(test.features):
        raise SchemaMismatch("train and test datasets have different feature columns")
    cols = [f for f in features if f in train.features]
    tr, te = train.select(cols), test.select(cols)
    ap, used, probs = {}, {}, {}
    for kind in kinds:
        p = (params or {}).get(kind)
        if p is None:
            p = tune(kind, tr, space or HyperParamSpace(seed=seed), 0.2, seed, workers).best
        model = train_model(kind, tr, p)
        probs[kind] = predict(model, te)
        ap[kind] = average_precision(probs[kind], te.y)
        used[kind] = p
    if BENCHMARK in test.features:
        ap[BENCHMARK] = univariate_threshold_model(test.column(BENCHMARK), test.y)
    return TransferReport(train.family, test.family, ap, used, probs)


def projection(data: Dataset, probability: np.ndarray, threshold: float = 0.5) -> list[dict]:
    """Rows for a two-feature scatter of predictions: ``r_ab``, ``l_re_ab``, label, probability, correctness."""
    r, lre = data.column("r_ab"), data.column("l_re_ab")
    pred = (np.asarray(probability) >= threshold).astype(int)
    return [{"r_ab": float(a), "l_re_ab": float(b), "label": int(y), "predicted_probability": float(p),
             "correct_flag": int(q == y)}
            for a, b, y, p, q in zip(r, lre, data.y, probability, pred)]


def curve_rows(scores, labels, higher_is_riskier: bool = True) -> tuple[list[dict], list[dict]]:
    """PR and DET curve points as CSV-ready rows."""
    thr, prec, rec = pr_curve(scores, labels, higher_is_riskier)
    pr = [{"threshold": float(t), "precision": float(p), "recall": float(r)} for t, p, r in zip(thr, prec, rec)]
    thr, fpr, fnr = det_curve(scores, labels, higher_is_riskier)
    det = [{"threshold": float(t), "fpr": float(a), "fnr": float(b)} for t, a, b in zip(thr, fpr, fnr)]
    return pr, det


def write_rows(rows: Sequence[dict], path, columns: Sequence[str] | None = None) -> None:
    """CSV with a header row; floats written with ``repr`` so reruns are byte-identical."""
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])


def split_holdout(data: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    tr, te = stratified_split(data.y, test_fraction, seed)
    return data.subset(tr, "train"), data.subset(te, "test")

