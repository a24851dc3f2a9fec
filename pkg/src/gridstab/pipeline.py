"""Stage-per-command experiment pipeline with file handoffs and a run manifest.

Layout under the output directory::

    manifest.json
    <family>/ensemble/           grid JSON files and the ensemble manifest
    <family>/labels.csv          one stability label per (grid, line)
    <family>/states/             steady-state angles and flows per grid
    <family>/features.csv        feature rows joined with labels (+ features.json schema)
    <family>/models/<kind>.json  tuned model trained on the whole family
    <family>/reports/            cross-validation summary, out-of-fold scores, curves
    transfer.csv                 cross-family AP table
    figures/figN*.csv            plot data

Every random choice is seeded by ``sub_seed(seed, stage, ...)`` so stages can
be rerun in any order and reproduce identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .dynamics import DynamicsParams, read_labels_csv, sweep_failures, write_labels_csv
from .errors import ConfigError, MissingInput, SchemaMismatch
from .evaluation import (BENCHMARK, cross_validate, curve_rows, projection, univariate_table,
                         write_rows)
from .features import HIGHER_IS_RISKIER, attach_labels, featurize_grids, read_features, write_features
from .grid import read_state_csv, solve_steady_state, write_state_csv
from .metrics import average_precision
from .ml import (KINDS, ML_FEATURES, Dataset, HyperParamSpace, TrainParams, feature_importance, load_model,
                 predict, recursive_feature_elimination, save_model, train_model, tune)
from .scenarios import FAMILIES, ScenarioConfig, build_ensemble, family_config, load_ensemble, save_ensemble, sub_seed

log = logging.getLogger(__name__)

FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6")
WORKERS_ENV = "GRIDSTAB_WORKERS"
_SCENARIO_KEYS = {f.name for f in fields(ScenarioConfig)} - {"family", "seed"}
_DYNAMICS_KEYS = {f.name for f in fields(DynamicsParams)}
_SPACE_KEYS = {f.name for f in fields(HyperParamSpace)} - {"seed"}


# ------------------------------------------------------------------ configuration


@dataclass
class PipelineConfig:
    seed: int
    families: dict[str, dict] = field(default_factory=lambda: {"US": {}})
    dynamics: dict = field(default_factory=dict)
    features: dict = field(default_factory=lambda: {"dc_base": "nonlinear", "response_mode": "linear"})
    search: dict = field(default_factory=dict)
    folds: int = 4
    rfe_margin: float = 0.002
    kinds: tuple[str, ...] = KINDS
    transfer: list[tuple[str, str]] = field(default_factory=list)
    figures: tuple[str, ...] = FIGURES
    workers: int | None = None
    base_dir: Path = Path(".")

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("config needs an integer 'seed'")
        for fam, over in self.families.items():
            if fam not in FAMILIES:
                raise ConfigError(f"unknown family {fam!r}; choose from {sorted(FAMILIES)}")
            bad = set(over) - _SCENARIO_KEYS
            if bad:
                raise ConfigError(f"unknown scenario keys for {fam}: {sorted(bad)}")
        for name, allowed, given in (("dynamics", _DYNAMICS_KEYS, self.dynamics),
                                     ("search", _SPACE_KEYS, self.search),
                                     ("features", {"dc_base", "response_mode"}, self.features)):
            bad = set(given) - allowed
            if bad:
                raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ConfigError(f"unknown model kinds {bad}")
        bad = [f for f in self.figures if f not in FIGURES]
        if bad:
            raise ConfigError(f"unknown figures {bad}")
        self.transfer = [tuple(p) for p in self.transfer]
        for pair in self.transfer:
            if len(pair) != 2 or any(f not in self.families for f in pair):
                raise ConfigError(f"transfer pair {pair} must name two configured families")
        if self.folds < 2:
            raise ConfigError("need at least two folds")

    @classmethod
    def from_mapping(cls, data: Mapping, base_dir=".") -> "PipelineConfig":
        if "seed" not in data:
            raise ConfigError("config needs an integer 'seed'")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        bad = set(data) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        kw = dict(data)
        if "families" in kw:
            fams = kw["families"]
            if isinstance(fams, (list, tuple)):
                fams = {f: {} for f in fams}
            kw["families"] = {f: dict(v or {}) for f, v in fams.items()}
        for key in ("kinds", "figures"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw, base_dir=Path(base_dir))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "families": self.families, "dynamics": self.dynamics, "features": self.features,
            "search": self.search, "folds": self.folds, "rfe_margin": self.rfe_margin,
            "kinds": list(self.kinds), "transfer": [list(p) for p in self.transfer],
            "figures": list(self.figures),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def scenario(self, family: str) -> ScenarioConfig:
        over = dict(self.families.get(family, {}))
        if over.get("topology_file"):
            over["topology_file"] = str(self.base_dir / over["topology_file"])
        return family_config(family, seed=sub_seed(self.seed, "generate", family), **over)

    def space(self, family: str, kind: str) -> HyperParamSpace:
        return HyperParamSpace(**self.search, seed=sub_seed(self.seed, "search", family, kind))

    def check_inputs(self) -> None:
        for fam in self.families:
            path = self.families[fam].get("topology_file")
            if path and not (self.base_dir / path).exists():
                raise MissingInput(f"topology file {self.base_dir / path} not found")


def load_config(path=None, seed: int | None = None) -> PipelineConfig:
    """Read a YAML or JSON config (JSON is valid YAML); ``seed`` overrides the file's seed."""
    if path is None:
        if seed is None:
            raise ConfigError("either --config or --seed is required")
        return PipelineConfig(seed=seed)
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping at top level")
    if seed is not None:
        data = {**data, "seed": seed}
    cfg = PipelineConfig.from_mapping(data, path.parent)
    cfg.check_inputs()
    return cfg


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


# ------------------------------------------------------------------ manifest


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _expand(paths: Iterable[Path]) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        out.extend(sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p])
    return out


class RunManifest:
    """``manifest.json``: tool version, config hash and per-stage file hashes and timings."""

    def __init__(self, root, config: PipelineConfig):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        self.data = {"tool": "gridstab", "version": __version__, "config_hash": config.digest(),
                     "seed": config.seed, "stages": {}}
        if self.path.exists():
            old = json.loads(self.path.read_text())
            if old.get("config_hash") == self.data["config_hash"]:
                self.data["stages"] = old.get("stages", {})

    def _hashes(self, paths) -> dict[str, str]:
        return {str(p.relative_to(self.root)) if p.is_relative_to(self.root) else str(p): file_hash(p)
                for p in _expand(paths) if p.exists()}

    def record(self, stage: str, inputs, outputs, seconds: float) -> dict:
        entry = {"inputs": self._hashes(inputs), "outputs": self._hashes(outputs), "seconds": round(seconds, 3)}
        self.data["stages"][stage] = entry
        self.root.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n")
        return entry


# ------------------------------------------------------------------ stages


class Run:
    """Paths and shared state of one output directory."""

    def __init__(self, config: PipelineConfig, out, workers: int | None = None):
        self.config = config
        self.root = Path(out)
        self.workers = workers or config.workers or default_workers()
        self.manifest = RunManifest(self.root, config)

    def fam(self, family: str) -> Path:
        return self.root / family

    def ensemble_dir(self, family):
        return self.fam(family) / "ensemble"

    def labels_path(self, family):
        return self.fam(family) / "labels.csv"

    def states_dir(self, family):
        return self.fam(family) / "states"

    def features_path(self, family):
        return self.fam(family) / "features.csv"

    def model_path(self, family, kind):
        return self.fam(family) / "models" / f"{kind}.json"

    def reports_dir(self, family):
        return self.fam(family) / "reports"

    def figures_dir(self):
        return self.root / "figures"

    def _stage(self, name, inputs, fn):
        missing = [p for p in inputs if not Path(p).exists()]
        if missing:
            raise MissingInput(f"{name}: missing upstream artifact {missing[0]}")
        start = time.perf_counter()
        outputs = fn()
        self.manifest.record(name, inputs, outputs, time.perf_counter() - start)
        log.info("%s done in %.1fs", name, time.perf_counter() - start)
        return outputs

    def dataset(self, family: str) -> Dataset:
        path = self.features_path(family)
        if not path.exists():
            raise MissingInput(f"{path} not found; run featurize first")
        vectors = read_features(path)
        if any(v.label is None for v in vectors):
            raise SchemaMismatch(f"{path} has unlabelled rows")
        return Dataset.from_vectors(vectors, family)


def cmd_generate(run: Run, family: str) -> Path:
    def work():
        ens = build_ensemble(run.config.scenario(family))
        out = run.ensemble_dir(family)
        if out.exists():
            for old in out.glob("*.json"):
                old.unlink()
        save_ensemble(ens, out)
        return [out]

    run._stage(f"generate:{family}", [], work)
    return run.ensemble_dir(family)


def cmd_simulate(run: Run, family: str) -> Path:
    ens_dir = run.ensemble_dir(family)

    def work():
        ens = load_ensemble(ens_dir)
        cfg = ens.config
        params = DynamicsParams(**{"inertia": cfg.inertia, "damping": cfg.damping, **run.config.dynamics})
        states = run.states_dir(family)
        states.mkdir(parents=True, exist_ok=True)
        for g in ens.grids:
            write_state_csv(g, solve_steady_state(g), states / f"{g.name}_angles.csv",
                            states / f"{g.name}_flows.csv")
        errors: list[dict] = []
        labels = sweep_failures(ens.grids, params, run.workers, errors)
        write_labels_csv(labels, run.labels_path(family))
        err_path = run.fam(family) / "simulate_errors.json"
        err_path.write_text(json.dumps(errors, indent=1, default=list) + "\n")
        return [run.labels_path(family), states, err_path]

    run._stage(f"simulate:{family}", [ens_dir], work)
    return run.labels_path(family)


def cmd_featurize(run: Run, family: str) -> Path:
    ens_dir, states, labels_path = run.ensemble_dir(family), run.states_dir(family), run.labels_path(family)

    def work():
        ens = load_ensemble(ens_dir)
        steadies = []
        for g in ens.grids:
            path = states / f"{g.name}_angles.csv"
            if not path.exists():
                raise MissingInput(f"steady state {path} not found; run simulate first")
            steadies.append(read_state_csv(g, path))
        vectors = featurize_grids(ens.grids, steadies, run.workers, **run.config.features)
        vectors = attach_labels(vectors, read_labels_csv(labels_path))
        write_features(vectors, run.features_path(family))
        return [run.features_path(family), run.features_path(family).with_suffix(".json")]

    run._stage(f"featurize:{family}", [ens_dir, states, labels_path], work)
    return run.features_path(family)


def _ml_view(data: Dataset) -> Dataset:
    return data.select([f for f in ML_FEATURES if f in data.features])


def cmd_train(run: Run, family: str, kind: str) -> Path:
    """Tune on a stratified 80/20 split of the family, then fit on all of it."""
    def work():
        data = _ml_view(run.dataset(family))
        best = tune(kind, data, run.config.space(family, kind), 0.2,
                    sub_seed(run.config.seed, "train", family), run.workers).best
        model = train_model(kind, data, best)
        path = run.model_path(family, kind)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path)
        return [path]

    run._stage(f"train:{family}:{kind}", [run.features_path(family)], work)
    return run.model_path(family, kind)


def _folds_seed(run: Run, family: str) -> int:
    return sub_seed(run.config.seed, "folds", family)


def cmd_evaluate(run: Run, family: str, kind: str) -> Path:
    """Cross-validated AP, out-of-fold scores and PR/DET curves; SHAP importances of the saved model."""
    rep = run.reports_dir(family)
    inputs = [run.features_path(family)]
    model_path = run.model_path(family, kind)
    if kind != BENCHMARK and model_path.exists():
        inputs.append(model_path)

    def work():
        data = run.dataset(family)
        res = cross_validate(data, kind, run.config.folds, _folds_seed(run, family),
                             space=run.config.space(family, kind), workers=run.workers)
        rep.mkdir(parents=True, exist_ok=True)
        summary = res.summary()
        summary["params"] = None if res.params is None else asdict(res.params)
        summary["n_samples"] = len(data)
        summary["n_positive"] = int(data.y.sum())
        outs = [rep / f"{kind}_cv.json", rep / f"{kind}_oof.csv", rep / f"{kind}_pr.csv", rep / f"{kind}_det.csv"]
        outs[0].write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        write_rows([{"grid_id": i[0], "edge_i": i[1], "edge_j": i[2], "fold": int(f), "score": float(s),
                     "label": int(y)} for i, f, s, y in zip(data.ids, res.folds, res.oof, data.y)], outs[1])
        pr, det = curve_rows(res.oof, data.y)
        write_rows(pr, outs[2], ["threshold", "precision", "recall"])
        write_rows(det, outs[3], ["threshold", "fpr", "fnr"])
        if len(inputs) > 1:
            model = load_model(model_path)
            imp = feature_importance(model, data)
            outs.append(rep / f"{kind}_importance.csv")
            write_rows([{"feature": f, "importance": float(v)} for f, v in zip(model.features, imp)], outs[-1])
        return outs

    run._stage(f"evaluate:{family}:{kind}", inputs, work)
    return rep / f"{kind}_cv.json"


def _cv(run: Run, family: str, kind: str) -> dict:
    """Stored CV summary of ``kind`` on ``family``, evaluating first if it is absent."""
    path = run.reports_dir(family) / f"{kind}_cv.json"
    if not path.exists():
        cmd_evaluate(run, family, kind)
    return json.loads(path.read_text())


def _oof(run: Run, family: str, kind: str) -> np.ndarray:
    _cv(run, family, kind)
    with open(run.reports_dir(family) / f"{kind}_oof.csv") as fh:
        next(fh)
        return np.array([float(line.rsplit(",", 2)[1]) for line in fh])


def _model(run: Run, family: str, kind: str):
    path = run.model_path(family, kind)
    if not path.exists():
        cmd_train(run, family, kind)
    return load_model(path)


def transfer_rows(run: Run, pairs: Sequence[tuple[str, str]], kinds: Sequence[str]) -> list[dict]:
    rows = []
    for train_fam, test_fam in pairs:
        test = run.dataset(test_fam)
        within = _cv(run, test_fam, "gbt")["mean_ap"] if "gbt" in kinds else float("nan")
        for kind in kinds:
            model = _model(run, train_fam, kind)
            ap = average_precision(predict(model, test), test.y)
            rows.append({"train": train_fam, "test": test_fam, "model": kind, "ap": ap,
                         "within_family_gbt_ap": within})
        rows.append({"train": train_fam, "test": test_fam, "model": BENCHMARK,
                     "ap": average_precision(test.column(BENCHMARK), test.y), "within_family_gbt_ap": within})
    return rows


TRANSFER_COLUMNS = ["train", "test", "model", "ap", "within_family_gbt_ap"]


def cmd_transfer(run: Run, pairs: Sequence[tuple[str, str]] | None = None) -> Path:
    """Apply each training family's saved models to the test family of every pair."""
    pairs = [tuple(p) for p in (pairs if pairs is not None else run.config.transfer)]
    if not pairs:
        raise ConfigError("no transfer pairs configured")
    fams = sorted({f for p in pairs for f in p})
    path = run.root / "transfer.csv"

    def work():
        write_rows(transfer_rows(run, pairs, run.config.kinds), path, TRANSFER_COLUMNS)
        return [path]

    run._stage("transfer", [run.features_path(f) for f in fams], work)
    return path


# ------------------------------------------------------------------ figures


def _fig2(run, families):
    rows = []
    for fam in families:
        for feat, ap in univariate_table(run.dataset(fam)).items():
            rows.append({"family": fam, "feature": feat, "ap": ap, "higher_is_riskier": int(HIGHER_IS_RISKIER[feat])})
    write_rows(rows, run.figures_dir() / "fig2.csv", ["family", "feature", "ap", "higher_is_riskier"])
    return [run.figures_dir() / "fig2.csv"]


def _fig3(run, families):
    fig = run.figures_dir()
    summary, rfe_rows, det_rows = [], [], []
    for fam in families:
        data = run.dataset(fam)
        for kind in (*run.config.kinds, BENCHMARK):
            cv = _cv(run, fam, kind)
            summary.append({"family": fam, "model": kind, "mean_ap": cv["mean_ap"], "std_ap": cv["std_ap"],
                            **{f"fold{i}_ap": v for i, v in enumerate(cv["fold_ap"])}})
            _, det = curve_rows(_oof(run, fam, kind), data.y)
            det_rows.extend({"family": fam, "model": kind, **r} for r in det)
        params = _cv(run, fam, "gbt")["params"]
        rfe = recursive_feature_elimination(_ml_view(data), "gbt", TrainParams(**params), run.config.folds,
                                            _folds_seed(run, fam), run.config.rfe_margin)
        for step in rfe.trace:
            rfe_rows.append({"family": fam, "n_features": len(step.features), "cv_ap": step.cv_ap,
                             "cv_std": step.cv_std, "dropped": step.dropped,
                             "optimal": int(step.features == rfe.optimal), "features": " ".join(step.features)})
    cols = ["family", "model", "mean_ap", "std_ap"] + [f"fold{i}_ap" for i in range(run.config.folds)]
    write_rows(summary, fig / "fig3.csv", cols)
    write_rows(rfe_rows, fig / "fig3_rfe.csv",
               ["family", "n_features", "cv_ap", "cv_std", "dropped", "optimal", "features"])
    write_rows(det_rows, fig / "fig3_det.csv", ["family", "model", "threshold", "fpr", "fnr"])
    return [fig / "fig3.csv", fig / "fig3_rfe.csv", fig / "fig3_det.csv"]


def _fig4(run, families):
    rows = []
    for fam in families:
        model = _model(run, fam, "gbt")
        imp = feature_importance(model, run.dataset(fam))
        rows.extend({"family": fam, "feature": f, "importance": float(v)} for f, v in zip(model.features, imp))
    write_rows(rows, run.figures_dir() / "fig4.csv", ["family", "feature", "importance"])
    return [run.figures_dir() / "fig4.csv"]


def _fig5(run, families):
    rows = []
    for fam in families:
        rows.extend({"family": fam, **r} for r in projection(run.dataset(fam), _oof(run, fam, "gbt")))
    cols = ["family", "r_ab", "l_re_ab", "label", "predicted_probability", "correct_flag"]
    write_rows(rows, run.figures_dir() / "fig5.csv", cols)
    return [run.figures_dir() / "fig5.csv"]


def _fig6(run, families):
    pairs = [p for p in run.config.transfer if p[0] in families and p[1] in families]
    write_rows(transfer_rows(run, pairs, run.config.kinds), run.figures_dir() / "fig6.csv", TRANSFER_COLUMNS)
    return [run.figures_dir() / "fig6.csv"]


_FIGURE_FNS = {"fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5, "fig6": _fig6}


def cmd_reproduce(run: Run, figure: str, families: Sequence[str] | None = None) -> list[Path]:
    if figure not in _FIGURE_FNS:
        raise ConfigError(f"unknown figure {figure!r}; choose from {FIGURES}")
    families = list(families or run.config.families)
    run.figures_dir().mkdir(parents=True, exist_ok=True)
    return run._stage(f"reproduce:{figure}", [run.features_path(f) for f in families],
                      lambda: _FIGURE_FNS[figure](run, families))


def cmd_pipeline(run: Run, families: Sequence[str] | None = None) -> Path:
    """Every stage for every configured family, then transfer and the configured figures."""
    families = list(families or run.config.families)
    for fam in families:
        cmd_generate(run, fam)
        cmd_simulate(run, fam)
        cmd_featurize(run, fam)
        for kind in run.config.kinds:
            cmd_train(run, fam, kind)
            cmd_evaluate(run, fam, kind)
        cmd_evaluate(run, fam, BENCHMARK)
    if run.config.transfer:
        cmd_transfer(run)
    for fig in run.config.figures:
        cmd_reproduce(run, fig, families)
    return run.manifest.path


def output_digest(root, exclude: Sequence[str] = ("manifest.json",)) -> dict[str, str]:
    """Hash of every output file, keyed by relative path; the manifest (timings) is left out."""
    root = Path(root)
    return {str(p.relative_to(root)): file_hash(p) for p in _expand([root])
            if str(p.relative_to(root)) not in exclude}
