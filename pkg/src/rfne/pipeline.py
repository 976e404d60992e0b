"""Random forest node embeddings: fit, transform and model persistence.

A fitted :class:`RfneModel` holds the forest, one embedding table per tree
and the encoding map.  Rows are turned into features by routing them to a
leaf in every tree and concatenating the leaf vectors in tree order,
optionally after the original encoded columns.  Embedding column ``f``
(counted from the first embedding column) belongs to tree ``f // d``,
dimension ``f % d``.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import EncodedDataset, EncodingMap
from .embed import EmbedConfig, EmbeddingModel, train_skipgram
from .exceptions import DataError, ModelFormatError, ModelVersionError
from .forest import DecisionTree, Forest, ForestParams, fit_forest
from .graphwalk import WalkParams, generate_walks, tree_to_graph

FORMAT_VERSION = 1
MAGIC = b"RFNE-MODEL\n"
_SECTION = b"SECT"
_END = b"END!"


@dataclass(frozen=True)
class RfneConfig:
    forest: ForestParams = field(default_factory=ForestParams)
    walk: WalkParams = field(default_factory=WalkParams)
    embed: EmbedConfig | None = None
    master_seed: int = 0
    include_original: bool = True

    def __post_init__(self):
        if self.embed is None:
            window = max(1, min(5, self.walk.length - 1))
            object.__setattr__(self, "embed", EmbedConfig(window=window))

    @property
    def k(self) -> int:
        return self.forest.n_estimators

    @property
    def d(self) -> int:
        return self.embed.dim

    def to_dict(self) -> dict:
        return {"forest": asdict(self.forest), "walk": asdict(self.walk),
                "embed": asdict(self.embed), "master_seed": self.master_seed,
                "include_original": self.include_original}

    @classmethod
    def from_dict(cls, spec: dict) -> "RfneConfig":
        return cls(ForestParams(**spec["forest"]), WalkParams(**spec["walk"]),
                   EmbedConfig(**spec["embed"]), int(spec["master_seed"]),
                   bool(spec["include_original"]))


def stage_seed(master_seed: int, tree_index: int, stage: int) -> np.random.SeedSequence:
    """Seed for the walk (stage 1) or SGNS (stage 2) step of one tree."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(tree_index), stage))


def embed_tree(tree: DecisionTree, walk: WalkParams, embed: EmbedConfig, master_seed: int,
               tree_index: int) -> EmbeddingModel:
    graph = tree_to_graph(tree)
    corpus = generate_walks(graph, walk, stage_seed(master_seed, tree_index, 1))
    return train_skipgram(corpus, embed, stage_seed(master_seed, tree_index, 2),
                          n_nodes=tree.n_nodes)


@dataclass(frozen=True)
class FeatureMatrix:
    matrix: np.ndarray
    columns: tuple[str, ...]
    provenance: tuple[tuple[int, int] | None, ...]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def embedding_columns(self) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.provenance) if p is not None])


@dataclass(frozen=True)
class RfneModel:
    forest: Forest
    embeddings: tuple[EmbeddingModel, ...]
    encoding: EncodingMap
    config: RfneConfig

    def __post_init__(self):
        if len(self.embeddings) != len(self.forest.trees):
            raise ValueError("one embedding model per tree is required")
        for tree, emb in zip(self.forest.trees, self.embeddings):
            if emb.n_nodes != tree.n_nodes:
                raise ValueError("embedding domain differs from tree node ids")

    @property
    def k(self) -> int:
        return self.forest.k

    @property
    def d(self) -> int:
        return self.config.d

    def width(self, include_original: bool | None = None) -> int:
        if include_original is None:
            include_original = self.config.include_original
        return (len(self.encoding) if include_original else 0) + self.k * self.d

    def tree_block(self, tree_index: int, include_original: bool | None = None) -> slice:
        """Columns of tree ``tree_index`` within a transformed matrix."""
        if include_original is None:
            include_original = self.config.include_original
        start = (len(self.encoding) if include_original else 0) + tree_index * self.d
        return slice(start, start + self.d)


def fit_rfne(train: EncodedDataset, config: RfneConfig, n_jobs: int | None = None) -> RfneModel:
    """Fit the forest, then walks and SGNS vectors for each tree."""
    if len(train) == 0:
        raise DataError("cannot fit on an empty dataset")
    forest = fit_forest(train.matrix, train.target, config.forest, config.master_seed, n_jobs)
    jobs = [(tree, i) for i, tree in enumerate(forest.trees)]
    if n_jobs in (None, 1):
        embeddings = [embed_tree(t, config.walk, config.embed, config.master_seed, i)
                      for t, i in jobs]
    else:
        embeddings = Parallel(n_jobs=n_jobs)(
            delayed(embed_tree)(t, config.walk, config.embed, config.master_seed, i)
            for t, i in jobs)
    return RfneModel(forest, tuple(embeddings), train.map, config)


def transform(model: RfneModel, rows, include_original: bool | None = None) -> FeatureMatrix:
    """Concatenate leaf embeddings (and optionally the encoded columns) per row."""
    if include_original is None:
        include_original = model.config.include_original
    X = rows.matrix if isinstance(rows, EncodedDataset) else np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.encoding):
        raise DataError(f"expected {len(model.encoding)} encoded columns, got shape {X.shape}")
    blocks, names, prov = [], [], []
    if include_original:
        blocks.append(X)
        names.extend(model.encoding.column_names)
        prov.extend([None] * X.shape[1])
    for i, (tree, emb) in enumerate(zip(model.forest.trees, model.embeddings)):
        blocks.append(emb.vectors[tree.apply(X)])
        names.extend(f"tree{i}_dim{j}" for j in range(model.d))
        prov.extend((i, j) for j in range(model.d))
    matrix = np.hstack(blocks) if blocks else np.zeros((X.shape[0], 0))
    return FeatureMatrix(matrix, tuple(names), tuple(prov))


def embedding_provenance(feature_index: int, d: int) -> tuple[int, int]:
    """(tree index, dimension) of global embedding feature ``feature_index``."""
    return feature_index // d, feature_index % d


# -- persistence -------------------------------------------------------------

def _pack_section(out: io.BytesIO, name: str, payload: bytes) -> None:
    raw = name.encode("ascii")
    out.write(_SECTION + struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(payload)))
    out.write(payload)


def _array_bytes(arr, dtype) -> bytes:
    return np.ascontiguousarray(arr, dtype=dtype).tobytes()


def dumps_model(model: RfneModel) -> bytes:
    cfg = model.config
    header = {
        "format_version": FORMAT_VERSION, "k": model.k, "d": model.d,
        "l": cfg.walk.length, "r": cfg.walk.walks_per_node, "p": cfg.walk.p,
        "q": cfg.walk.q, "master_seed": cfg.master_seed, "config": cfg.to_dict(),
    }
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    _pack_section(out, "encoding", json.dumps(model.encoding.to_dict(), sort_keys=True).encode())
    for i, (tree, emb) in enumerate(zip(model.forest.trees, model.embeddings)):
        table = struct.pack("<QQ", tree.n_nodes, tree.n_columns)
        table += _array_bytes(tree.feature, "<i8") + _array_bytes(tree.threshold, "<f8")
        table += _array_bytes(tree.left, "<i8") + _array_bytes(tree.right, "<i8")
        table += _array_bytes(tree.depth, "<i8") + _array_bytes(tree.counts, "<i8")
        _pack_section(out, f"tree/{i}", table)
        _pack_section(out, f"embedding/{i}", _array_bytes(emb.vectors, "<f8"))
    body = out.getvalue()
    return body + _END + struct.pack("<I", zlib.crc32(body))


def save_model(model: RfneModel, path) -> None:
    Path(path).write_bytes(dumps_model(model))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("model file is truncated")
        chunk = self.buf[self.pos: self.pos + n]
        self.pos += n
        return chunk


def _read_tree(payload: bytes) -> DecisionTree:
    n, width = struct.unpack_from("<QQ", payload)
    if len(payload) != 16 + n * 8 * 7:
        raise ModelFormatError("tree section has the wrong size")
    cols = np.frombuffer(payload, offset=16, dtype="<i8", count=n * 7)
    feature = cols[:n]
    threshold = np.frombuffer(payload, offset=16 + 8 * n, dtype="<f8", count=n)
    left, right, depth = cols[2 * n: 3 * n], cols[3 * n: 4 * n], cols[4 * n: 5 * n]
    counts = cols[5 * n:].reshape(n, 2)
    return DecisionTree(feature, threshold, left, right, depth, counts, width)


def loads_model(buf: bytes) -> RfneModel:
    if not buf.startswith(MAGIC):
        raise ModelFormatError("not an RFNE model file")
    eol = buf.find(b"\n", len(MAGIC))
    if eol < 0:
        raise ModelFormatError("model file is truncated")
    try:
        header = json.loads(buf[len(MAGIC): eol])
    except ValueError as exc:
        raise ModelFormatError("corrupt model header") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    if len(buf) < eol + 9 or buf[-8:-4] != _END:
        raise ModelFormatError("model file is truncated")
    body, (crc,) = buf[:-8], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError("model file checksum mismatch")

    reader = _Reader(body, eol + 1)
    sections = {}
    while reader.pos < len(body):
        if reader.take(4) != _SECTION:
            raise ModelFormatError("corrupt section marker")
        (name_len,) = struct.unpack("<H", reader.take(2))
        name = reader.take(name_len).decode("ascii")
        (size,) = struct.unpack("<Q", reader.take(8))
        sections[name] = reader.take(size)

    try:
        config = RfneConfig.from_dict(header["config"])
        encoding = EncodingMap.from_dict(json.loads(sections["encoding"]))
        trees, embeddings = [], []
        for i in range(header["k"]):
            tree = _read_tree(sections[f"tree/{i}"])
            vec = np.frombuffer(sections[f"embedding/{i}"], dtype="<f8")
            embeddings.append(EmbeddingModel(vec.reshape(tree.n_nodes, header["d"]), config.embed))
            trees.append(tree)
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model content: {exc}") from exc
    forest = Forest(tuple(trees), config.forest, config.master_seed)
    return RfneModel(forest, tuple(embeddings), encoding, config)


def load_model(path) -> RfneModel:
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    return loads_model(path.read_bytes())


class RFNETransformer(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer producing node-embedding features.

    Expects an already encoded float matrix.  Without an ``encoding`` the
    columns get generic names.
    """

    def __init__(self, n_estimators=200, max_depth=5, features_per_split=None,
                 min_samples_leaf=1, walk_length=5, walks_per_node=50, p=1.0, q=1.0,
                 dim=10, window=None, negatives=5, epochs=5, lr_start=0.025, lr_end=0.0001,
                 include_original=True, random_state=0, n_jobs=None, encoding=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.features_per_split = features_per_split
        self.min_samples_leaf = min_samples_leaf
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.p = p
        self.q = q
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.include_original = include_original
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.encoding = encoding

    def _config(self) -> RfneConfig:
        window = self.window or max(1, min(5, self.walk_length - 1))
        return RfneConfig(
            ForestParams(self.n_estimators, self.max_depth, self.features_per_split,
                         self.min_samples_leaf),
            WalkParams(self.walk_length, self.walks_per_node, self.p, self.q),
            EmbedConfig(self.dim, window, self.negatives, self.epochs, self.lr_start,
                        self.lr_end),
            self.random_state, self.include_original)

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        encoding = self.encoding
        if encoding is None:
            from .data import EncodedColumn, Feature, Schema
            feats = tuple(Feature(f"x{i}", "numeric") for i in range(X.shape[1]))
            encoding = EncodingMap(Schema(feats, "y"),
                                   tuple(EncodedColumn(f"x{i}", None, 0.0)
                                         for i in range(X.shape[1])))
        data = EncodedDataset(X, np.asarray(y), encoding)
        self.model_ = fit_rfne(data, self._config(), self.n_jobs)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return transform(self.model_, check_array(X, dtype=np.float64)).matrix

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        names = []
        if self.include_original:
            names.extend(self.model_.encoding.column_names)
        names.extend(f"tree{i}_dim{j}" for i in range(self.model_.k) for j in range(self.model_.d))
        return np.asarray(names, dtype=object)
