"""Segment discovery in the node-embedding space.

The workflow regresses a binary variable on the embedding features, picks
the tree whose dimensions carry the strongest positive and significant
effect, finds the leaf of that tree closest to the mean embedding of the
positive rows, decodes the leaf's root-to-leaf path into a readable rule and
tests the resulting segment with a 2x2 chi-square test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy import stats

from .data import CATEGORICAL, MISSING, NUMERIC, Dataset, EncodingMap, encode
from .embed import EmbeddingModel
from .exceptions import DataError, SingularMatrixError
from .forest import DecisionTree
from .models import (InferenceTable, collinear_columns, fit_logistic,
                     logistic_objective, logistic_inference, _design)
from .pipeline import RfneModel, transform


# -- rules ----------------------------------------------------------------------

@dataclass(frozen=True)
class NumericInterval:
    """``lower < value <= upper``; ``missing_ok`` says whether a missing value
    (encoded as the imputed median) falls inside."""

    feature: str
    lower: float = -math.inf
    upper: float = math.inf
    missing_ok: bool = False

    def mask(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        missing = np.isnan(values)
        with np.errstate(invalid="ignore"):
            inside = (values > self.lower) & (values <= self.upper)
        return np.where(missing, self.missing_ok, inside)

    def describe(self) -> str:
        parts = []
        if math.isfinite(self.upper):
            parts.append(f"{self.feature} <= {_fmt(self.upper)}")
        if math.isfinite(self.lower):
            parts.append(f"{self.feature} > {_fmt(self.lower)}")
        # missing_ok is kept out of the text; see SegmentRule.missing_note
        return " and ".join(parts) or f"{self.feature} is any"


@dataclass(frozen=True)
class CategoryIn:
    feature: str
    categories: frozenset

    def mask(self, values) -> np.ndarray:
        return np.isin(np.asarray(values, dtype=object), list(self.categories))

    def describe(self) -> str:
        if len(self.categories) == 1:
            return f"{self.feature} == {next(iter(self.categories))!r}"
        return f"{self.feature} in {sorted(self.categories)!r}"


@dataclass(frozen=True)
class CategoryNot:
    feature: str
    categories: frozenset

    def mask(self, values) -> np.ndarray:
        return ~np.isin(np.asarray(values, dtype=object), list(self.categories))

    def describe(self) -> str:
        if len(self.categories) == 1:
            return f"{self.feature} != {next(iter(self.categories))!r}"
        return f"{self.feature} not in {sorted(self.categories)!r}"


Predicate = Union[NumericInterval, CategoryIn, CategoryNot]


@dataclass(frozen=True)
class SegmentRule:
    predicates: tuple[Predicate, ...] = ()

    def __post_init__(self):
        seen_num, seen_in, seen_not = set(), set(), set()
        for p in self.predicates:
            if isinstance(p, NumericInterval):
                if p.feature in seen_num:
                    raise ValueError(f"two intervals on {p.feature!r}")
                seen_num.add(p.feature)
            elif isinstance(p, CategoryIn):
                seen_in.add(p.feature)
            else:
                seen_not.add(p.feature)
        if seen_in & seen_not:
            raise ValueError("a feature cannot carry both in- and not-in predicates")

    @property
    def features(self) -> list[str]:
        return [p.feature for p in self.predicates]

    def describe(self) -> str:
        return " and ".join(p.describe() for p in self.predicates) or "(all rows)"

    __str__ = describe

    def missing_note(self) -> str:
        names = [p.feature for p in self.predicates
                 if isinstance(p, NumericInterval) and p.missing_ok]
        return "missing values pass the bounds on: " + ", ".join(names) if names else ""

    def conjoin(self, other: "SegmentRule") -> "SegmentRule":
        """Rule matching rows that satisfy both ``self`` and ``other``."""
        return merge_predicates(self.predicates + other.predicates)

    def to_dict(self) -> dict:
        out = []
        for p in self.predicates:
            if isinstance(p, NumericInterval):
                out.append({"type": "interval", "feature": p.feature,
                            "lower": None if math.isinf(p.lower) else p.lower,
                            "upper": None if math.isinf(p.upper) else p.upper,
                            "missing_ok": p.missing_ok})
            else:
                kind = "in" if isinstance(p, CategoryIn) else "not_in"
                out.append({"type": kind, "feature": p.feature,
                            "categories": sorted(p.categories)})
        return {"predicates": out, "text": self.describe()}

    @classmethod
    def from_dict(cls, spec: dict) -> "SegmentRule":
        preds = []
        for p in spec.get("predicates", []):
            kind = p["type"]
            if kind == "interval":
                lo = -math.inf if p.get("lower") is None else float(p["lower"])
                hi = math.inf if p.get("upper") is None else float(p["upper"])
                preds.append(NumericInterval(p["feature"], lo, hi, bool(p.get("missing_ok"))))
            elif kind == "in":
                preds.append(CategoryIn(p["feature"], frozenset(p["categories"])))
            elif kind == "not_in":
                preds.append(CategoryNot(p["feature"], frozenset(p["categories"])))
            else:
                raise ValueError(f"unknown predicate type {kind!r}")
        return merge_predicates(preds)


def merge_predicates(preds) -> SegmentRule:
    """Combine predicates into one per feature: intervals intersect, sets intersect."""
    order, groups = [], {}
    for p in preds:
        if p.feature not in groups:
            order.append(p.feature)
        groups.setdefault(p.feature, []).append(p)
    merged = []
    for name in order:
        group = groups[name]
        if all(isinstance(p, NumericInterval) for p in group):
            merged.append(NumericInterval(name, max(p.lower for p in group),
                                          min(p.upper for p in group),
                                          all(p.missing_ok for p in group)))
            continue
        if any(isinstance(p, NumericInterval) for p in group):
            raise ValueError(f"feature {name!r} mixes numeric and category predicates")
        ins = [p.categories for p in group if isinstance(p, CategoryIn)]
        outs = frozenset().union(*[p.categories for p in group if isinstance(p, CategoryNot)])
        if ins:
            merged.append(CategoryIn(name, frozenset.intersection(*ins) - outs))
        else:
            merged.append(CategoryNot(name, outs))
    return SegmentRule(tuple(merged))


def save_rule(rule: SegmentRule, path) -> None:
    with open(path, "w") as fh:
        json.dump(rule.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_rule(path) -> SegmentRule:
    try:
        with open(path) as fh:
            return SegmentRule.from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise DataError(f"rule file not found: {path}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"invalid rule file {path}: {exc}") from exc


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def extract_rule(tree: DecisionTree, leaf_id: int, encoding: EncodingMap) -> SegmentRule:
    """Decode the root-to-leaf path of ``leaf_id`` into a conjunction of predicates.

    Numeric splits tighten one interval per feature.  A split on the
    indicator of category ``c`` adds ``c`` to the excluded set when the path
    goes left and pins the feature to ``c`` when it goes right.  Excluded
    sets are rewritten as the complementary inclusion whenever that lists
    fewer categories.
    """
    if not 0 <= leaf_id < tree.n_nodes or not tree.is_leaf(leaf_id):
        raise ValueError(f"node {leaf_id} is not a leaf of this tree")
    path = tree.path(leaf_id)
    order: list[str] = []
    bounds: dict[str, list[float]] = {}
    pinned: dict[str, str] = {}
    excluded: dict[str, set] = {}
    for node, child in zip(path[:-1], path[1:]):
        col = encoding.decode(int(tree.feature[node]))
        thr = float(tree.threshold[node])
        left = child == tree.left[node]
        if col.feature not in order:
            order.append(col.feature)
        if not col.is_indicator:
            lo_hi = bounds.setdefault(col.feature, [-math.inf, math.inf])
            if left:
                lo_hi[1] = min(lo_hi[1], thr)
            else:
                lo_hi[0] = max(lo_hi[0], thr)
        elif left:
            # indicator columns hold 0/1, so the left branch means "not this category"
            excluded.setdefault(col.feature, set()).add(col.category)
        else:
            pinned[col.feature] = col.category

    schema = encoding.schema
    preds = []
    for name in order:
        feat = schema[name]
        if name in bounds:
            lo, hi = bounds[name]
            impute = encoding.columns[encoding.block(name)[0]].impute
            preds.append(NumericInterval(name, lo, hi, bool(lo < impute <= hi)))
        elif name in pinned:
            preds.append(CategoryIn(name, frozenset([pinned[name]])))
        elif name in excluded:
            universe = set(feat.categories) | {MISSING}
            out = excluded[name]
            rest = universe - out
            if len(rest) < len(out):
                preds.append(CategoryIn(name, frozenset(rest)))
            else:
                preds.append(CategoryNot(name, frozenset(out)))
    return SegmentRule(tuple(preds))


def effective_categories(values, categories) -> np.ndarray:
    """Raw categorical values with missing and unseen levels mapped to ``missing``."""
    known = set(categories)
    return np.array([v if (v is not None and v in known) else MISSING for v in values],
                    dtype=object)


def apply_rule(data: Dataset, rule: SegmentRule) -> np.ndarray:
    """Boolean mask of rows satisfying every predicate, evaluated on raw values."""
    mask = np.ones(len(data), dtype=bool)
    names = set(data.schema.feature_names)
    for p in rule.predicates:
        if p.feature not in names:
            raise DataError(f"rule refers to unknown feature {p.feature!r}")
        feat = data.schema[p.feature]
        values = data.frame[p.feature]
        if isinstance(p, NumericInterval):
            if feat.kind != NUMERIC:
                raise DataError(f"interval predicate on categorical feature {p.feature!r}")
            mask &= p.mask(values.to_numpy(dtype=float))
        else:
            if feat.kind != CATEGORICAL:
                raise DataError(f"category predicate on numeric feature {p.feature!r}")
            mask &= p.mask(effective_categories(values, feat.categories))
    return mask


# -- nearest leaf and chi-square ------------------------------------------------

def nearest_leaf(embedding: EmbeddingModel, tree: DecisionTree, query) -> tuple[int, float]:
    """Closest leaf (Euclidean) to ``query``; equal distances prefer the smaller id."""
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (embedding.dim,):
        raise ValueError(f"query must have length {embedding.dim}")
    leaves = tree.leaves
    dist = np.sqrt(((embedding.vectors[leaves] - query) ** 2).sum(axis=1))
    best = int(np.argmin(dist))
    return int(leaves[best]), float(dist[best])


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    p_value: float
    expected: np.ndarray
    dof: int = 1


def chi_square(table) -> ChiSquareResult:
    """Pearson chi-square test of independence on a 2x2 table, no continuity correction."""
    obs = np.asarray(table, dtype=np.float64)
    if obs.shape != (2, 2):
        raise ValueError("chi_square expects a 2x2 table")
    if np.any(obs < 0):
        raise ValueError("counts must be non-negative")
    total = obs.sum()
    rows, cols = obs.sum(axis=1), obs.sum(axis=0)
    if total <= 0 or np.any(rows == 0) or np.any(cols == 0):
        raise ValueError("contingency table has a zero row or column total")
    expected = np.outer(rows, cols) / total
    statistic = float(((obs - expected) ** 2 / expected).sum())
    return ChiSquareResult(statistic, float(stats.chi2.sf(statistic, 1)), expected)


# -- discovery ------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentStats:
    table: np.ndarray  # rows: in/out of segment, columns: outcome 1/0
    rate_in: float
    rate_out: float
    chi2: ChiSquareResult | None

    @property
    def size(self) -> int:
        return int(self.table[0].sum())

    @property
    def lift(self) -> float:
        return self.rate_in / self.rate_out if self.rate_out > 0 else math.inf

    def to_text(self, labels=("in segment", "rest")) -> str:
        width = max(len(s) for s in labels) + 2
        lines = [f"{'':<{width}}{'outcome=1':>12}{'outcome=0':>12}{'rate':>10}"]
        for label, row, rate in zip(labels, self.table, (self.rate_in, self.rate_out)):
            lines.append(f"{label:<{width}}{int(row[0]):>12}{int(row[1]):>12}{rate:>10.3%}")
        if self.chi2 is not None:
            lines.append(f"chi2 = {self.chi2.statistic:.4f}, dof = 1, "
                         f"p-value = {self.chi2.p_value:.4g}")
        else:
            lines.append("chi2 undefined (empty row or column)")
        return "\n".join(lines)

    def to_csv(self, delimiter=",") -> str:
        stat = "" if self.chi2 is None else repr(self.chi2.statistic)
        p = "" if self.chi2 is None else repr(self.chi2.p_value)
        head = ["group", "outcome_1", "outcome_0", "rate", "chi2", "p_value"]
        out = [delimiter.join(head)]
        for label, row, rate in zip(("in_segment", "rest"), self.table,
                                    (self.rate_in, self.rate_out)):
            out.append(delimiter.join([label, str(int(row[0])), str(int(row[1])),
                                       repr(float(rate)), stat, p]))
        return "\n".join(out) + "\n"


def segment_stats(mask, outcome) -> SegmentStats:
    mask = np.asarray(mask, dtype=bool)
    outcome = np.asarray(outcome, dtype=np.int64)
    table = np.array([[np.sum(mask & (outcome == 1)), np.sum(mask & (outcome == 0))],
                      [np.sum(~mask & (outcome == 1)), np.sum(~mask & (outcome == 0))]])
    rate_in = table[0, 0] / table[0].sum() if table[0].sum() else float("nan")
    rate_out = table[1, 0] / table[1].sum() if table[1].sum() else float("nan")
    try:
        chi = chi_square(table)
    except ValueError:
        chi = None
    return SegmentStats(table, float(rate_in), float(rate_out), chi)


@dataclass(frozen=True)
class DiscoveryReport:
    target: str
    alpha: float
    inference: InferenceTable | None
    dropped_columns: tuple[str, ...]
    omnibus_p: float | None
    tree_index: int | None = None
    candidate_dims: tuple[int, ...] = ()
    leaf_id: int | None = None
    distance: float | None = None
    rule: SegmentRule | None = None
    stats: SegmentStats | None = None
    message: str = ""

    @property
    def found(self) -> bool:
        return self.rule is not None

    def to_text(self) -> str:
        out = [f"Discovery for target {self.target!r} (alpha = {self.alpha})", ""]
        if self.inference is not None:
            out += ["Embedding feature effects:", self.inference.to_text(), ""]
        if self.dropped_columns:
            out.append("Dropped collinear columns: " + ", ".join(self.dropped_columns))
        if self.omnibus_p is not None:
            out.append(f"Omnibus likelihood-ratio p-value: {self.omnibus_p:.4g}")
        if not self.found:
            out.append(self.message or "no significant tree")
            return "\n".join(out) + "\n"
        dims = ", ".join(str(d) for d in self.candidate_dims)
        out += [f"Selected tree: {self.tree_index} (dimensions {dims})",
                f"Nearest leaf: {self.leaf_id} (distance {self.distance:.6f})", "",
                "rule = " + self.rule.describe()]
        if self.rule.missing_note():
            out.append(self.rule.missing_note())
        out += ["",
                self.stats.to_text()]
        return "\n".join(out) + "\n"


def binary_outcome(data: Dataset, target, positive_label=None) -> tuple[np.ndarray, np.ndarray, str]:
    """0/1 outcome vector, a validity mask (missing values excluded) and a label."""
    if isinstance(target, str):
        if target == data.schema.target:
            return data.target, np.ones(len(data), dtype=bool), target
        if target not in data.schema.feature_names:
            raise DataError(f"unknown target column {target!r}")
        feat = data.schema[target]
        raw = data.frame[target]
        valid = raw.notna().to_numpy()
        levels = sorted({str(v) for v in raw[valid]})
        if len(levels) != 2:
            raise DataError(f"column {target!r} is not binary (levels: {levels[:5]})")
        if positive_label is None:
            positive_label = levels[-1] if feat.kind == CATEGORICAL else levels[-1]
        if feat.kind == NUMERIC:
            y = (raw.to_numpy(dtype=float) == float(positive_label)).astype(np.int64)
        else:
            y = (raw.astype(str) == str(positive_label)).to_numpy().astype(np.int64)
        return y, valid, target
    y = np.asarray(target, dtype=np.int64)
    if y.shape[0] != len(data):
        raise DataError("target length does not match the data")
    return y, np.ones(len(data), dtype=bool), "target"


def _omnibus_p(Z, y, beta) -> float:
    """Likelihood-ratio test of the fitted model against the intercept-only model."""
    A = _design(Z)
    full = logistic_objective(beta, A, y.astype(float), 0.0)[0]
    rate = y.mean()
    null = -(y.sum() * math.log(rate) + (y.size - y.sum()) * math.log(1.0 - rate))
    stat = max(2.0 * (null - full), 0.0)
    return float(stats.chi2.sf(stat, Z.shape[1]))


def discover_rule(model: RfneModel, data: Dataset, target, alpha: float = 0.05, *,
                  positive_label=None, center: str = "positive", omnibus: bool = True,
                  max_iter: int = 1000) -> DiscoveryReport:
    """Find a segment enriched in ``target`` through the embedding space.

    ``center="positive"`` averages the selected tree's embeddings over rows
    with outcome 1; ``"all"`` uses every row.  With ``omnibus`` on, the
    per-feature selection only runs when the likelihood-ratio test of all
    embedding features together is significant at ``alpha``.
    """
    if center not in ("positive", "all"):
        raise ValueError("center must be 'positive' or 'all'")
    y_all, valid, label = binary_outcome(data, target, positive_label)
    if np.unique(y_all[valid]).size < 2:
        raise DataError("discovery target needs both classes")
    encoded = encode(data, model.encoding)
    feats = transform(model, encoded, include_original=False)
    X, y = feats.matrix[valid], y_all[valid]

    names = [f"feature_{i}" for i in range(X.shape[1])]
    keep = np.arange(X.shape[1])
    dropped = collinear_columns((X - X.mean(0)) / np.where(X.std(0) > 0, X.std(0), 1), names)
    dropped = [c for c in dropped if c != "Intercept"]
    if dropped:
        drop_idx = {names.index(c) for c in dropped}
        keep = np.array([i for i in keep if i not in drop_idx], dtype=np.int64)
    fit = fit_logistic(X[:, keep], y, penalty="none", max_iter=max_iter,
                       feature_names=[names[i] for i in keep])
    try:
        table = logistic_inference(fit, X[:, keep], y)
    except SingularMatrixError as exc:
        return DiscoveryReport(label, alpha, None, tuple(dropped), None,
                               message=f"no significant tree ({exc})")
    omni = _omnibus_p(fit.standardizer(X[:, keep]), y, fit.coefficients)
    base = DiscoveryReport(label, alpha, table, tuple(dropped), omni)
    if omnibus and not omni < alpha:
        return replace(base, message="no significant tree (omnibus test not significant)")

    lo, p = table.log_odds[1:], table.p_value[1:]
    cand = keep[(p < alpha) & (lo > 0)]
    if cand.size == 0:
        return replace(base, message="no significant tree (no positive significant feature)")
    d = model.d
    weights: dict[int, float] = {}
    for col, effect in zip(keep, lo):
        if col in set(cand.tolist()):
            weights[col // d] = weights.get(col // d, 0.0) + float(effect)
    tree_index = min(weights, key=lambda t: (-weights[t], t))
    dims = tuple(int(c % d) for c in cand if c // d == tree_index)

    block = feats.matrix[:, tree_index * d: (tree_index + 1) * d]
    rows = valid & (y_all == 1) if center == "positive" else valid
    query = block[rows].mean(axis=0)
    tree = model.forest.trees[tree_index]
    leaf, dist = nearest_leaf(model.embeddings[tree_index], tree, query)
    rule = extract_rule(tree, leaf, model.encoding)
    mask = apply_rule(data, rule)
    seg = segment_stats(mask[valid], y)
    return replace(base, tree_index=tree_index, candidate_dims=dims, leaf_id=leaf,
                    distance=dist, rule=rule, stats=seg, message="segment found")
