import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from rfne.data import NUMERIC, EncodedColumn, EncodedDataset, EncodingMap, Feature, Schema
from rfne.embed import EmbedConfig, EmbeddingModel
from rfne.exceptions import DataError, ModelFormatError, ModelVersionError
from rfne.forest import DecisionTree, Forest, ForestParams
from rfne.graphwalk import WalkParams
from rfne.pipeline import (MAGIC, RFNETransformer, RfneConfig, RfneModel, dumps_model,
                           embedding_provenance, fit_rfne, load_model, loads_model,
                           save_model, transform)


def numeric_encoding(p: int) -> EncodingMap:
    schema = Schema(tuple(Feature(f"x{i}", NUMERIC) for i in range(p)), "y")
    return EncodingMap(schema, tuple(EncodedColumn(f"x{i}", None, 0.0) for i in range(p)))


def toy_data(n=200, p=4, seed=0) -> EncodedDataset:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (X[:, 0] - X[:, 1] + rng.normal(scale=0.3, size=n) > 0).astype(int)
    return EncodedDataset(X, y, numeric_encoding(p))


def small_config(k=2, d=3, include_original=True, seed=0) -> RfneConfig:
    return RfneConfig(ForestParams(k, 3), WalkParams(4, 10), EmbedConfig(dim=d, window=2),
                      seed, include_original)


@pytest.fixture(scope="module")
def toy_model():
    return fit_rfne(toy_data(), small_config())


def test_width_formula(toy_model):
    data = toy_data()
    assert transform(toy_model, data).width == 4 + 6 == toy_model.width()
    assert transform(toy_model, data, include_original=False).width == 6


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.booleans())
def test_width_invariant_property(k, d, original):
    data = toy_data(n=60, p=3)
    model = fit_rfne(data, small_config(k, d, original))
    fm = transform(model, data)
    assert fm.width == (3 if original else 0) + k * d
    emb = [p for p in fm.provenance if p is not None]
    assert emb == [(t, j) for t in range(k) for j in range(d)]


def test_provenance_mapping():
    assert embedding_provenance(0, 10) == (0, 0)
    assert embedding_provenance(23, 10) == (2, 3)
    assert embedding_provenance(3, 2) == (1, 1)


def hand_model():
    """Two stumps over 2 columns with known vectors."""
    t0 = DecisionTree([0, -1, -1], [0.0, 0, 0], [1, -1, -1], [2, -1, -1], [0, 1, 1],
                      [[2, 2], [2, 0], [0, 2]], 2)
    t1 = DecisionTree([1, -1, -1], [5.0, 0, 0], [1, -1, -1], [2, -1, -1], [0, 1, 1],
                      [[2, 2], [1, 1], [1, 1]], 2)
    cfg = RfneConfig(ForestParams(2, 1), WalkParams(2, 1), EmbedConfig(dim=2, window=1))
    e0 = EmbeddingModel([[0, 0], [1, 2], [3, 4]], cfg.embed)
    e1 = EmbeddingModel([[0, 0], [-1, -2], [-3, -4]], cfg.embed)
    return RfneModel(Forest((t0, t1), cfg.forest, 0), (e0, e1), numeric_encoding(2), cfg)


def test_hand_routed_oracle():
    model = hand_model()
    rows = np.array([[-1.0, 0.0], [1.0, 0.0], [-1.0, 9.0], [2.0, 6.0]])
    expected = np.array([[1, 2, -1, -2], [3, 4, -1, -2], [1, 2, -3, -4], [3, 4, -3, -4]],
                        dtype=float)
    fm = transform(model, rows, include_original=False)
    assert np.array_equal(fm.matrix, expected)
    assert np.array_equal(transform(model, rows).matrix[:, 2:], expected)
    assert fm.columns == ("tree0_dim0", "tree0_dim1", "tree1_dim0", "tree1_dim1")


def test_same_leaves_same_blocks(toy_model):
    data = toy_data(n=300, seed=5)
    leaves = toy_model.forest.apply(data.matrix)
    fm = transform(toy_model, data, include_original=False).matrix
    _, first = np.unique(leaves, axis=0, return_inverse=True)
    for g in np.unique(first):
        block = fm[first.ravel() == g]
        assert np.all(block == block[0])


def test_single_leaf_tree_block_constant():
    data = toy_data(n=50)
    cfg = RfneConfig(ForestParams(1, 0), WalkParams(3, 5), EmbedConfig(dim=4, window=2))
    model = fit_rfne(data, cfg)
    block = transform(model, data, include_original=False).matrix
    assert model.forest.trees[0].n_nodes == 1
    assert np.all(block == block[0])


def test_out_of_sample_rows_and_width_errors(toy_model):
    far = np.random.default_rng(1).normal(scale=100, size=(20, 4))
    assert np.all(np.isfinite(transform(toy_model, far).matrix))
    with pytest.raises(DataError):
        transform(toy_model, np.zeros((2, 5)))


def test_model_invariants(toy_model):
    assert len(toy_model.embeddings) == len(toy_model.forest.trees) == toy_model.k
    for tree, emb in zip(toy_model.forest.trees, toy_model.embeddings):
        assert emb.n_nodes == tree.n_nodes
    with pytest.raises(ValueError):
        RfneModel(toy_model.forest, toy_model.embeddings[:1], toy_model.encoding,
                  toy_model.config)


def test_save_load_round_trip(tmp_path, toy_model):
    path = tmp_path / "m.rfne"
    save_model(toy_model, path)
    loaded = load_model(path)
    rows = np.random.default_rng(2).normal(size=(100, 4))
    a, b = transform(toy_model, rows), transform(loaded, rows)
    assert np.array_equal(a.matrix, b.matrix) and a.columns == b.columns
    assert dumps_model(loaded) == path.read_bytes()
    assert loaded.config == toy_model.config


def test_header_fields(toy_model):
    buf = dumps_model(toy_model)
    header = json.loads(buf[len(MAGIC): buf.index(b"\n", len(MAGIC))])
    for key in ("format_version", "k", "d", "l", "r", "p", "q", "master_seed"):
        assert key in header
    assert (header["k"], header["d"], header["l"], header["r"]) == (2, 3, 4, 10)


def test_truncated_and_corrupt_files(toy_model):
    buf = dumps_model(toy_model)
    for cut in (len(buf) - 1, len(buf) // 2, len(MAGIC) + 5, 3):
        with pytest.raises(ModelFormatError):
            loads_model(buf[:cut])
    flipped = bytearray(buf)
    flipped[len(buf) // 2] ^= 0xFF
    with pytest.raises(ModelFormatError):
        loads_model(bytes(flipped))
    with pytest.raises(ModelFormatError):
        load_model("/nonexistent/model.rfne")


def test_future_version_rejected(toy_model):
    buf = dumps_model(toy_model)
    eol = buf.index(b"\n", len(MAGIC))
    header = json.loads(buf[len(MAGIC): eol])
    header["format_version"] = 99
    bumped = MAGIC + json.dumps(header, sort_keys=True).encode() + buf[eol:]
    with pytest.raises(ModelVersionError):
        loads_model(bumped)


def test_determinism_across_workers():
    data = toy_data()
    cfg = small_config(k=4)
    assert dumps_model(fit_rfne(data, cfg, n_jobs=1)) == dumps_model(fit_rfne(data, cfg, n_jobs=2))
    other = small_config(k=4, seed=1)
    assert dumps_model(fit_rfne(data, cfg)) != dumps_model(fit_rfne(data, other))


def test_default_window_follows_walk_length():
    assert RfneConfig(walk=WalkParams(3, 1)).embed.window == 2
    assert RfneConfig(walk=WalkParams(15, 1)).embed.window == 5
    cfg = small_config()
    assert RfneConfig.from_dict(cfg.to_dict()) == cfg


def test_transformer_estimator():
    data = toy_data()
    est = RFNETransformer(n_estimators=3, max_depth=3, walk_length=4, walks_per_node=5, dim=2)
    assert clone(est).get_params() == est.get_params()
    out = est.fit(data.matrix, data.target).transform(data.matrix)
    assert out.shape == (len(data), 4 + 3 * 2)
    names = est.get_feature_names_out()
    assert len(names) == out.shape[1] and names[-1] == "tree2_dim1"
