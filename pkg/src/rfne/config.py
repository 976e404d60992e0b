"""Run configuration files (YAML).

Grammar, top-level keys (all optional unless noted)::

    data:        path, delimiter, schema ("infer" or a schema YAML path; required),
                 target (required with "infer"), positive_label, missing
    split:       train_fraction, seed
    seed:        master seed for every model
    n_jobs:      worker count (null = all cores)
    rfne:        n_estimators, max_depth, features_per_split, min_samples_leaf,
                 walk_length, walks_per_node, p, q, dim, window, negatives,
                 epochs, lr_start, lr_end, include_original
    logistic:    alpha, standardize
    methods:     fixed evaluation parameters per method (knn, rf, logistic, rfne)
    grids:       parameter lists per method for grid search
    cv:          folds
    discover:    alpha, center ("positive" or "all"), omnibus
    output_dir:  where reports and models go

Unknown keys are rejected.  Relative paths resolve against the config file.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .data import DEFAULT_MISSING_MARKERS
from .embed import EmbedConfig
from .exceptions import ConfigError
from .forest import ForestParams
from .graphwalk import WalkParams
from .pipeline import RfneConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Strict):
    path: Optional[str] = None
    delimiter: str = ","
    schema_: str = Field(alias="schema")
    target: Optional[str] = None
    positive_label: Optional[str] = None
    missing: list[str] = list(DEFAULT_MISSING_MARKERS)


class SplitSection(_Strict):
    train_fraction: float = 0.8
    seed: int = 0

    @field_validator("train_fraction")
    @classmethod
    def _fraction(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")
        return v


class RfneSection(_Strict):
    n_estimators: int = 200
    max_depth: int = 5
    features_per_split: Optional[int] = None
    min_samples_leaf: int = 1
    walk_length: int = 5
    walks_per_node: int = 50
    p: float = 1.0
    q: float = 1.0
    dim: int = 10
    window: Optional[int] = None
    negatives: int = 5
    epochs: int = 5
    lr_start: float = 0.025
    lr_end: float = 0.0001
    include_original: bool = True


class LogisticSection(_Strict):
    alpha: float = 1.0
    standardize: bool = True


class KnnParams(_Strict):
    k: int = 3


class RfParams(_Strict):
    n_estimators: int = 200
    max_depth: int = 5


class LogisticParams(_Strict):
    penalty: Literal["l2", "none"] = "l2"
    max_iter: int = 100


class RfneParams(_Strict):
    # unset values fall back to the rfne section
    walk_length: Optional[int] = None
    walks_per_node: Optional[int] = None
    dim: Optional[int] = None


class MethodsSection(_Strict):
    knn: KnnParams = KnnParams()
    rf: RfParams = RfParams()
    logistic: LogisticParams = LogisticParams()
    rfne: RfneParams = RfneParams()


class GridsSection(_Strict):
    knn: dict[str, list] = {"k": list(range(1, 11))}
    rf: dict[str, list] = {"n_estimators": list(range(10, 201, 10)),
                           "max_depth": list(range(2, 21))}
    logistic: dict[str, list] = {"penalty": ["none", "l2"],
                                 "max_iter": list(range(100, 501, 100))}
    rfne: dict[str, list] = {"walk_length": [5, 10, 15],
                             "walks_per_node": list(range(20, 101, 20)),
                             "dim": [1, 2, 3, 4, 5, 10, 50]}


class CvSection(_Strict):
    folds: int = 5


class DiscoverSection(_Strict):
    alpha: float = 0.05
    center: Literal["positive", "all"] = "positive"
    omnibus: bool = True


class RunConfig(_Strict):
    data: DataSection
    split: SplitSection = SplitSection()
    seed: int = 0
    n_jobs: Optional[int] = None
    rfne: RfneSection = RfneSection()
    logistic: LogisticSection = LogisticSection()
    methods: MethodsSection = MethodsSection()
    grids: GridsSection = GridsSection()
    cv: CvSection = CvSection()
    discover: DiscoverSection = DiscoverSection()
    output_dir: str = "runs"

    base_dir: Path = Field(default=Path("."), exclude=True)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(os.path.normpath(self.base_dir / p))

    @property
    def data_path(self) -> Path | None:
        return self.resolve(self.data.path)

    @property
    def schema_source(self):
        s = self.data.schema_
        return s if s == "infer" else self.resolve(s)

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.output_dir)

    def method_params(self) -> dict:
        return {name: {k: v for k, v in getattr(self.methods, name).model_dump().items()
                       if v is not None}
                for name in ("knn", "rf", "logistic", "rfne")}

    def rfne_config(self) -> RfneConfig:
        r = self.rfne
        window = r.window or max(1, min(5, r.walk_length - 1))
        try:
            return RfneConfig(
                ForestParams(r.n_estimators, r.max_depth, r.features_per_split,
                             r.min_samples_leaf),
                WalkParams(r.walk_length, r.walks_per_node, r.p, r.q),
                EmbedConfig(r.dim, window, r.negatives, r.epochs, r.lr_start, r.lr_end),
                self.seed, r.include_original)
        except ValueError as exc:
            raise ConfigError(f"invalid rfne section: {exc}") from exc


def parse_config(spec: dict, base_dir=".") -> RunConfig:
    if not isinstance(spec, dict):
        raise ConfigError("config must be a mapping")
    if "base_dir" in spec:
        raise ConfigError("unknown key 'base_dir'")
    try:
        cfg = RunConfig.model_validate(spec)
    except ValidationError as exc:
        raise ConfigError(_summarize(exc)) from exc
    cfg.base_dir = Path(base_dir)
    cfg.rfne_config()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        spec = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(spec, path.parent)


def _summarize(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(parts)
