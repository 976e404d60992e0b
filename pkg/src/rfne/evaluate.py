"""Holdout benchmarks and cross-validated grid search over the four methods.

Methods and their parameters:

* ``knn``: ``k``
* ``rf``: ``n_estimators``, ``max_depth``
* ``logistic``: ``penalty`` (``"l2"`` or ``"none"``), ``max_iter``
* ``rfne``: ``walk_length``, ``walks_per_node``, ``dim``; the forest comes
  from ``settings.rfne`` and the downstream logistic model from
  ``settings.logistic``, normally the values selected for ``rf`` and
  ``logistic`` on the plain data.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import EncodedDataset, stratified_folds
from .exceptions import DataError
from .forest import fit_forest
from .graphwalk import WalkParams
from .models import auc, fit_knn, fit_logistic, knn_score, predict_proba
from .pipeline import RfneConfig, fit_rfne, transform

log = logging.getLogger(__name__)

METHODS = ("knn", "rf", "logistic", "rfne")
PARAM_NAMES = {
    "knn": ("k",),
    "rf": ("n_estimators", "max_depth"),
    "logistic": ("penalty", "max_iter"),
    "rfne": ("walk_length", "walks_per_node", "dim"),
}


@dataclass(frozen=True)
class MethodSettings:
    """Everything a method needs besides its grid parameters."""

    seed: int = 0
    n_jobs: int | None = None
    logistic_alpha: float = 1.0
    standardize: bool = True
    rf: dict = field(default_factory=lambda: {"n_estimators": 200, "max_depth": 5})
    logistic: dict = field(default_factory=lambda: {"penalty": "l2", "max_iter": 100})
    rfne: RfneConfig = field(default_factory=RfneConfig)


def _check_params(method: str, params: dict) -> None:
    if method not in PARAM_NAMES:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    unknown = set(params) - set(PARAM_NAMES[method])
    if unknown:
        raise ValueError(f"unknown {method} parameters: {sorted(unknown)}")


def rfne_config(params: dict, settings: MethodSettings) -> RfneConfig:
    base = settings.rfne
    walk = WalkParams(params.get("walk_length", base.walk.length),
                      params.get("walks_per_node", base.walk.walks_per_node),
                      base.walk.p, base.walk.q)
    embed = replace(base.embed, dim=params.get("dim", base.embed.dim),
                    window=max(1, min(base.embed.window, walk.length - 1)))
    return replace(base, walk=walk, embed=embed)


def fit_score(method: str, params: dict, train: EncodedDataset, test_X,
              settings: MethodSettings) -> np.ndarray:
    """Fit ``method`` on ``train`` and return positive-class scores for ``test_X``."""
    _check_params(method, params)
    X, y = train.matrix, train.target
    if method == "knn":
        return knn_score(fit_knn(X, y, params.get("k", 5), settings.standardize), test_X)
    if method == "rf":
        fp = replace(settings.rfne.forest,
                     n_estimators=params.get("n_estimators", settings.rf["n_estimators"]),
                     max_depth=params.get("max_depth", settings.rf["max_depth"]))
        forest = fit_forest(X, y, fp, settings.seed, settings.n_jobs)
        return forest.leaf_probability(test_X)
    lr = {**settings.logistic, **(params if method == "logistic" else {})}
    if method == "logistic":
        model = fit_logistic(X, y, lr["penalty"], settings.logistic_alpha, lr["max_iter"],
                             settings.standardize)
        return predict_proba(model, test_X)
    config = rfne_config(params, settings)
    rf_model = fit_rfne(train, config, settings.n_jobs)
    feats_train = transform(rf_model, train).matrix
    feats_test = transform(rf_model, np.asarray(test_X)).matrix
    model = fit_logistic(feats_train, y, lr["penalty"], settings.logistic_alpha,
                         lr["max_iter"], settings.standardize)
    return predict_proba(model, feats_test)


def grid_points(grid: dict) -> list[dict]:
    """Cartesian product of a ``{name: [values]}`` grid, in declaration order."""
    if not grid:
        return [{}]
    names = list(grid)
    values = [v if isinstance(v, (list, tuple)) else [v] for v in grid.values()]
    if any(len(v) == 0 for v in values):
        raise ValueError("grid axes must be non-empty")
    return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def _sort_key(params: dict, method: str):
    return tuple((str(type(params[n]).__name__), params[n]) if params[n] is not None else ("", "")
                 for n in PARAM_NAMES[method] if n in params)


@dataclass
class GridResult:
    method: str
    points: list[dict]
    fold_scores: np.ndarray  # (n_points, n_folds)
    best_index: int

    @property
    def best_params(self) -> dict:
        return self.points[self.best_index]

    @property
    def mean(self) -> np.ndarray:
        return self.fold_scores.mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        return self.fold_scores.std(axis=1)

    def to_text(self) -> str:
        lines = [f"Grid search for {self.method} ({self.fold_scores.shape[1]}-fold CV AUC)"]
        for i, point in enumerate(self.points):
            mark = " *" if i == self.best_index else ""
            desc = ", ".join(f"{k}={v}" for k, v in point.items()) or "(defaults)"
            lines.append(f"  {desc:<50} {self.mean[i]:.4f} +/- {self.std[i]:.4f}{mark}")
        return "\n".join(lines)

    def to_csv(self, delimiter=",") -> str:
        names = list(self.points[0]) if self.points else []
        head = names + ["mean_auc", "std_auc"] + [f"fold{j}" for j in range(self.fold_scores.shape[1])]
        out = [delimiter.join(head)]
        for i, point in enumerate(self.points):
            row = [str(point[n]) for n in names] + [repr(float(self.mean[i])), repr(float(self.std[i]))]
            row += [repr(float(s)) for s in self.fold_scores[i]]
            out.append(delimiter.join(row))
        return "\n".join(out) + "\n"


def select_best(points, mean_scores, method: str) -> int:
    """Highest mean AUC; ties go to the smallest parameter tuple, then the earliest point."""
    best = None
    for i, (point, score) in enumerate(zip(points, mean_scores)):
        key = (-score, _sort_key(point, method), i)
        if best is None or key < best[0]:
            best = (key, i)
    return best[1]


def cross_validate_grid(train: EncodedDataset, method: str, grid: dict, folds: int = 5,
                        seed: int = 0, settings: MethodSettings | None = None) -> GridResult:
    """Stratified k-fold CV over every grid point; selects the best mean AUC.

    Random forest points that differ only in ``n_estimators`` share one
    forest per fold: the first ``n`` trees of a seeded forest are exactly the
    forest of size ``n``.
    """
    settings = settings or MethodSettings(seed=seed)
    points = grid_points(grid)
    for p in points:
        _check_params(method, p)
    held_out = stratified_folds(train.target, folds, seed)
    scores = np.zeros((len(points), folds))
    for f, test_idx in enumerate(held_out):
        mask = np.ones(len(train), dtype=bool)
        mask[test_idx] = False
        fold_train, fold_test = train.subset(np.flatnonzero(mask)), train.subset(test_idx)
        for part in (fold_train, fold_test):
            if np.unique(part.target).size < 2:
                raise DataError(f"fold {f} contains a single class")
        if method == "rf":
            _score_rf_fold(points, fold_train, fold_test, settings, scores[:, f])
            continue
        for i, p in enumerate(points):
            s = fit_score(method, p, fold_train, fold_test.matrix, settings)
            scores[i, f] = auc(s, fold_test.target)
            log.info("%s %s fold %d: AUC %.4f", method, p, f, scores[i, f])
    best = select_best(points, scores.mean(axis=1), method)
    return GridResult(method, points, scores, best)


def _score_rf_fold(points, fold_train, fold_test, settings, out):
    by_depth: dict = {}
    for i, p in enumerate(points):
        depth = p.get("max_depth", settings.rf["max_depth"])
        by_depth.setdefault(depth, []).append(i)
    for depth, idx in by_depth.items():
        sizes = [points[i].get("n_estimators", settings.rf["n_estimators"]) for i in idx]
        fp = replace(settings.rfne.forest, n_estimators=max(sizes), max_depth=depth)
        forest = fit_forest(fold_train.matrix, fold_train.target, fp, settings.seed,
                            settings.n_jobs)
        per_tree = np.array([(t.counts[:, 1] / t.counts.sum(axis=1))[t.apply(fold_test.matrix)]
                             for t in forest.trees])
        cumulative = np.cumsum(per_tree, axis=0)
        for i, n in zip(idx, sizes):
            out[i] = auc(cumulative[n - 1] / n, fold_test.target)


@dataclass
class EvalReport:
    rows: list[dict]  # method, auc, params, fold_scores

    def to_text(self) -> str:
        width = max([len("Method")] + [len(r["method"]) for r in self.rows]) + 2
        lines = [f"{'Method':<{width}}{'AUC':>8}  parameters", "-" * (width + 40)]
        for r in self.rows:
            params = ", ".join(f"{k}={v}" for k, v in r["params"].items())
            lines.append(f"{r['method']:<{width}}{r['auc']:>8.3f}  {params}")
        return "\n".join(lines) + "\n"

    def to_csv(self, delimiter=",") -> str:
        out = [delimiter.join(["method", "auc", "params"])]
        for r in self.rows:
            params = ";".join(f"{k}={v}" for k, v in r["params"].items())
            out.append(delimiter.join([r["method"], repr(float(r["auc"])), params]))
        return "\n".join(out) + "\n"

    def auc_of(self, method: str) -> float:
        for r in self.rows:
            if r["method"] == method:
                return r["auc"]
        raise KeyError(method)


def evaluate_holdout(train: EncodedDataset, test: EncodedDataset, methods, params: dict,
                     settings: MethodSettings) -> EvalReport:
    """Fit each method on ``train`` with fixed parameters and report test AUC."""
    rows = []
    for method in methods:
        p = params.get(method, {})
        scores = fit_score(method, p, train, test.matrix, settings)
        shown = dict(p)
        if method == "rfne":
            cfg = rfne_config(p, settings)
            shown = {"n_estimators": cfg.k, "max_depth": cfg.forest.max_depth,
                     "walk_length": cfg.walk.length, "walks_per_node": cfg.walk.walks_per_node,
                     "dim": cfg.d, **settings.logistic}
        rows.append({"method": method, "auc": auc(scores, test.target), "params": shown})
        log.info("%s: AUC %.4f", method, rows[-1]["auc"])
    return EvalReport(rows)
