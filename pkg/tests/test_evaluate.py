import numpy as np
import pytest

from rfne.data import split, stratified_folds
from rfne.evaluate import (METHODS, MethodSettings, cross_validate_grid, evaluate_holdout,
                           fit_score, grid_points, rfne_config, select_best)
from rfne.forest import ForestParams, fit_forest
from rfne.graphwalk import WalkParams
from rfne.models import auc
from rfne.pipeline import RfneConfig

FAST = MethodSettings(seed=0, n_jobs=1,
                      rf={"n_estimators": 5, "max_depth": 3},
                      rfne=RfneConfig(ForestParams(3, 3), WalkParams(4, 5)))


def test_grid_points_order():
    pts = grid_points({"a": [1, 2], "b": ["x", "y"]})
    assert pts == [{"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 2, "b": "x"}, {"a": 2, "b": "y"}]
    assert grid_points({}) == [{}]
    assert grid_points({"k": 3}) == [{"k": 3}]
    with pytest.raises(ValueError):
        grid_points({"k": []})


def test_one_point_grid_echoes_back(mixed_encoded):
    res = cross_validate_grid(mixed_encoded, "knn", {"k": [3]}, folds=5, seed=0, settings=FAST)
    assert res.best_params == {"k": 3}
    assert res.fold_scores.shape == (1, 5)
    assert np.all((res.fold_scores >= 0) & (res.fold_scores <= 1))
    assert "k=3" in res.to_text() and res.to_csv().startswith("k,mean_auc,std_auc,fold0")


def test_identical_points_first_wins(mixed_encoded):
    res = cross_validate_grid(mixed_encoded, "logistic",
                              {"penalty": ["l2", "l2"], "max_iter": [100]}, folds=3, settings=FAST)
    assert res.fold_scores[0].tolist() == res.fold_scores[1].tolist()
    assert res.best_index == 0


def test_select_best_tie_rule():
    points = [{"k": 7}, {"k": 3}, {"k": 5}]
    assert select_best(points, [0.8, 0.8, 0.7], "knn") == 1
    assert select_best(points, [0.8, 0.81, 0.81], "knn") == 1
    assert select_best(points, [0.9, 0.8, 0.7], "knn") == 0


def test_unknown_method_or_parameter(mixed_encoded):
    with pytest.raises(ValueError):
        cross_validate_grid(mixed_encoded, "svm", {}, settings=FAST)
    with pytest.raises(ValueError):
        cross_validate_grid(mixed_encoded, "knn", {"depth": [2]}, settings=FAST)


def test_rf_prefix_shortcut_matches_direct_fits(mixed_encoded):
    grid = {"n_estimators": [2, 5], "max_depth": [2, 3]}
    res = cross_validate_grid(mixed_encoded, "rf", grid, folds=3, seed=1, settings=FAST)
    held = stratified_folds(mixed_encoded.target, 3, 1)
    for f, test_idx in enumerate(held):
        mask = np.ones(len(mixed_encoded), bool)
        mask[test_idx] = False
        tr, te = mixed_encoded.subset(np.flatnonzero(mask)), mixed_encoded.subset(test_idx)
        for i, p in enumerate(res.points):
            forest = fit_forest(tr.matrix, tr.target, ForestParams(p["n_estimators"], p["max_depth"]),
                                FAST.seed)
            direct = auc(forest.leaf_probability(te.matrix), te.target)
            assert res.fold_scores[i, f] == pytest.approx(direct, abs=1e-12)


def test_separable_data_all_methods_beat_chance(mixed_encoded):
    data = mixed_encoded
    # make the target a clean function of age so every scorer can find it
    age = data.matrix[:, data.map.column_names.index("age")]
    easy = type(data)(data.matrix, (age > np.median(age)).astype(int), data.map)
    train, test = split(easy, 0.75, 0)
    report = evaluate_holdout(train, test, METHODS, {"knn": {"k": 3}}, FAST)
    for m in METHODS:
        assert report.auc_of(m) >= 0.5
    assert report.auc_of("rf") > 0.95
    text = report.to_text()
    assert all(m in text for m in METHODS)
    assert report.to_csv().splitlines()[0] == "method,auc,params"


def test_rfne_config_overrides_walk_and_dim_only():
    cfg = rfne_config({"walk_length": 3, "dim": 7}, FAST)
    assert cfg.walk.length == 3 and cfg.walk.walks_per_node == 5
    assert cfg.d == 7 and cfg.forest == FAST.rfne.forest
    assert cfg.embed.window <= 2


def test_fit_score_shapes(mixed_encoded):
    train, test = split(mixed_encoded, 0.8, 2)
    for m in METHODS:
        s = fit_score(m, {}, train, test.matrix, FAST)
        assert s.shape == (len(test),) and np.all((s >= 0) & (s <= 1))
