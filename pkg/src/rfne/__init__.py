"""Random forest node embeddings for tabular binary classification.

Trees of a random forest are turned into graphs, node2vec-style walks over
each graph train a skip-gram model, and every row is represented by the
vectors of the leaves it reaches.  The package also covers the baselines, a
grid search, and segment discovery in the embedding space.
"""

from .data import Dataset, EncodedDataset, Schema, encode, fit_encoding, load_csv, split
from .discover import SegmentRule, apply_rule, discover_rule, extract_rule
from .embed import EmbedConfig, train_skipgram
from .exceptions import (ConfigError, DataError, ModelFormatError, ModelVersionError,
                         NumericalError, RFNEError, SchemaMismatchError, SingularMatrixError)
from .forest import ForestParams, RandomForest, fit_forest
from .graphwalk import WalkParams, generate_walks, tree_to_graph
from .models import KNNScorer, LogisticRegression, auc, fit_logistic, logistic_inference
from .pipeline import (RFNETransformer, RfneConfig, fit_rfne, load_model, save_model,
                       transform)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "EmbedConfig", "EncodedDataset", "ForestParams",
    "KNNScorer", "LogisticRegression", "ModelFormatError", "ModelVersionError",
    "NumericalError", "RFNEError", "RFNETransformer", "RandomForest", "RfneConfig",
    "Schema", "SchemaMismatchError", "SegmentRule", "SingularMatrixError", "WalkParams",
    "apply_rule", "auc", "discover_rule", "encode", "extract_rule", "fit_encoding",
    "fit_forest", "fit_logistic", "fit_rfne", "generate_walks", "load_csv", "load_model",
    "logistic_inference", "save_model", "split", "train_skipgram", "transform",
    "tree_to_graph",
]
