"""Command-line front end: ``rfne <command> [options]``.

Commands: fetch, train, evaluate, gridsearch, discover, apply.  Reports go to
stdout and to files in the output directory; diagnostics go to stderr.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  ``RFNE_DATA_DIR`` sets the dataset cache directory.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import shutil
import sys
import urllib.request
import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .config import RunConfig, load_config
from .data import Dataset, encode, fit_encoding, load_csv, split_indices
from .discover import (DiscoveryReport, SegmentRule, apply_rule, binary_outcome,
                       discover_rule, load_rule, merge_predicates, save_rule,
                       segment_stats)
from .evaluate import (METHODS, MethodSettings, cross_validate_grid, evaluate_holdout)
from .exceptions import ConfigError, DataError, ModelFormatError, NumericalError
from .pipeline import fit_rfne, load_model, save_model

log = logging.getLogger("rfne")

UCI_URL = "https://archive.ics.uci.edu/static/public/222/bank+marketing.zip"

DATASETS = {
    # name: (file inside the UCI archive, expected data rows, first header field)
    "bank-marketing": ("bank-additional-full.csv", 41188, "age"),
    "bank-full": ("bank-full.csv", 45211, "age"),
}


# -- helpers --------------------------------------------------------------------

def data_dir() -> Path:
    return Path(os.environ.get("RFNE_DATA_DIR") or Path.home() / ".cache" / "rfne")


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _find_member(blob: bytes, name: str) -> bytes | None:
    """Search a zip archive, including nested archives, for a member by basename."""
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        for info in zf.infolist():
            if Path(info.filename).name == name:
                return zf.read(info)
        for info in zf.infolist():
            if info.filename.endswith(".zip"):
                found = _find_member(zf.read(info), name)
                if found is not None:
                    return found
    return None


def _check_content(path: Path, rows: int, first_field: str) -> None:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8", "replace")
        n = sum(1 for line in fh if line.strip())
    if header.strip().strip('"').split('"')[0].split(";")[0].split(",")[0] != first_field:
        raise DataError(f"{path.name}: unexpected header {header.strip()[:60]!r}")
    if n != rows:
        raise DataError(f"{path.name}: expected {rows} data rows, found {n}")


def fetch_dataset(name: str, source: str | None = None, expected_sha256: str | None = None,
                  directory: Path | None = None) -> tuple[Path, bool]:
    """Place dataset ``name`` in the cache; returns (path, cache_hit).

    ``source`` may be a local CSV, a local zip archive or a URL (defaults to
    the UCI archive).  A ``.sha256`` sidecar written on first fetch guards the
    cached copy against later corruption.
    """
    if name not in DATASETS:
        raise ConfigError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}")
    filename, rows, first = DATASETS[name]
    directory = Path(directory or data_dir())
    target = directory / filename
    sidecar = target.with_name(filename + ".sha256")

    if target.exists():
        digest = sha256_of(target)
        pinned = expected_sha256 or (sidecar.read_text().split()[0] if sidecar.exists() else None)
        if pinned is None:
            raise DataError(f"cached {target} has no checksum; delete it and fetch again")
        if digest != pinned:
            raise DataError(f"checksum mismatch for {target}: expected {pinned}, got {digest}")
        return target, True

    source = source or UCI_URL
    if "://" in source:
        log.info("downloading %s", source)
        try:
            with urllib.request.urlopen(source, timeout=60) as resp:
                blob = resp.read()
        except OSError as exc:
            raise DataError(f"download of {source} failed: {exc}") from exc
    else:
        src = Path(source)
        if not src.exists():
            raise DataError(f"source not found: {src}")
        blob = src.read_bytes()
    if zipfile.is_zipfile(io.BytesIO(blob)):
        member = _find_member(blob, filename)
        if member is None:
            raise DataError(f"{filename} not found in {source}")
        blob = member

    directory.mkdir(parents=True, exist_ok=True)
    partial = target.with_name(filename + ".part")
    partial.write_bytes(blob)
    try:
        _check_content(partial, rows, first)
        digest = sha256_of(partial)
        if expected_sha256 and digest != expected_sha256:
            raise DataError(f"checksum mismatch for {filename}: expected {expected_sha256}, "
                            f"got {digest}")
    except DataError:
        partial.unlink()
        raise
    shutil.move(partial, target)
    sidecar.write_text(f"{digest}  {filename}\n")
    return target, False


def _load(cfg: RunConfig, data_path=None) -> Dataset:
    path = Path(data_path) if data_path else cfg.data_path
    if path is None:
        raise ConfigError("no data path: set data.path in the config or pass --data")
    d = cfg.data
    return load_csv(path, cfg.schema_source, target=d.target, positive_label=d.positive_label,
                    delimiter=d.delimiter, missing=d.missing)


def _settings(cfg: RunConfig, n_jobs) -> MethodSettings:
    params = cfg.method_params()
    return MethodSettings(seed=cfg.seed, n_jobs=n_jobs, logistic_alpha=cfg.logistic.alpha,
                          standardize=cfg.logistic.standardize, rf=params["rf"],
                          logistic=params["logistic"], rfne=cfg.rfne_config())


def _prepare(cfg: RunConfig, data: Dataset):
    """Stratified split, encoding fitted on the training part."""
    train_idx, test_idx = split_indices(data.target, cfg.split.train_fraction, cfg.split.seed)
    train_raw = data.subset(train_idx)
    encoding = fit_encoding(train_raw)
    test = encode(data.subset(test_idx), encoding) if test_idx.size else None
    return encode(train_raw, encoding), test


def _out_dir(cfg: RunConfig, override) -> Path:
    out = Path(override) if override else cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _n_jobs(cfg: RunConfig, flag) -> int:
    n = flag if flag is not None else cfg.n_jobs
    return n if n else (os.cpu_count() or 1)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if getattr(args, "split_seed", None) is not None:
        cfg = cfg.model_copy(update={"split": cfg.split.model_copy(update={"seed": args.split_seed})})
    return cfg


def _emit(text: str, *paths_and_texts) -> None:
    sys.stdout.write(text)
    for path, content in paths_and_texts:
        Path(path).write_text(content)


# -- commands -------------------------------------------------------------------

def cmd_fetch(args) -> int:
    path, hit = fetch_dataset(args.dataset, args.source, args.sha256,
                              Path(args.data_dir) if args.data_dir else None)
    log.info("%s %s", "cache hit" if hit else "fetched", path)
    print(path)
    return 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    n_jobs = _n_jobs(cfg, args.n_jobs)
    data = _load(cfg, args.data)
    train, _ = _prepare(cfg, data)
    rcfg = cfg.rfne_config()
    log.info("fitting %d trees on %d rows with %d workers", rcfg.k, len(train), n_jobs)
    model = fit_rfne(train, rcfg, n_jobs)
    out = _out_dir(cfg, args.output_dir)
    model_path = Path(args.model) if args.model else out / "model.rfne"
    save_model(model, model_path)
    log.info("wrote %s", model_path)
    lines = [
        f"data: {args.data or cfg.data_path}",
        f"rows: {len(data)} (train {len(train)})",
        f"split: train_fraction={cfg.split.train_fraction} seed={cfg.split.seed}",
        f"master_seed: {rcfg.master_seed}",
        "tree seeds: SeedSequence(entropy=master_seed, spawn_key=(i,)); "
        "walks spawn_key=(i, 1); skip-gram spawn_key=(i, 2)",
        f"forest: {json.dumps(rcfg.to_dict()['forest'], sort_keys=True)}",
        f"walk: {json.dumps(rcfg.to_dict()['walk'], sort_keys=True)}",
        f"embed: {json.dumps(rcfg.to_dict()['embed'], sort_keys=True)}",
        f"include_original: {rcfg.include_original}",
        f"encoded columns: {len(model.encoding)}",
        f"embedding width k*d: {model.k} * {model.d} = {model.k * model.d}",
        f"model: {model_path}",
    ]
    text = "\n".join(lines) + "\n"
    _emit(text, (out / "train.log", text))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    n_jobs = _n_jobs(cfg, args.n_jobs)
    methods = args.method or list(METHODS)
    train, test = _prepare(cfg, _load(cfg, args.data))
    if test is None:
        raise ConfigError("evaluation needs a test part: train_fraction must be below 1")
    report = evaluate_holdout(train, test, methods, cfg.method_params(), _settings(cfg, n_jobs))
    out = _out_dir(cfg, args.output_dir)
    _emit(report.to_text(), (out / "evaluate.txt", report.to_text()),
          (out / "evaluate.csv", report.to_csv()))
    return 0


def cmd_gridsearch(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    n_jobs = _n_jobs(cfg, args.n_jobs)
    methods = args.method or ["rf", "logistic", "knn", "rfne"]
    train, _ = _prepare(cfg, _load(cfg, args.data))
    settings = _settings(cfg, n_jobs)
    out = _out_dir(cfg, args.output_dir)
    best, chunks = {}, []
    # rfne runs last so it can reuse the forest and logistic settings picked above
    for method in sorted(methods, key=["rf", "logistic", "knn", "rfne"].index):
        result = cross_validate_grid(train, method, getattr(cfg.grids, method), cfg.cv.folds,
                                     cfg.split.seed, settings)
        best[method] = result.best_params
        (out / f"grid_{method}.txt").write_text(result.to_text() + "\n")
        (out / f"grid_{method}.csv").write_text(result.to_csv())
        chunks.append(result.to_text())
        if method == "rf":
            forest = replace(settings.rfne.forest, **result.best_params)
            settings = replace(settings, rf={**settings.rf, **result.best_params},
                               rfne=replace(settings.rfne, forest=forest))
        elif method == "logistic":
            settings = replace(settings, logistic={**settings.logistic, **result.best_params})
    summary = yaml.safe_dump(best, sort_keys=False)
    (out / "best_params.yaml").write_text(summary)
    _emit("\n\n".join(chunks) + "\n\nBest parameters:\n" + summary)
    return 0


def cmd_discover(args) -> int:
    cfg = load_config(args.config)
    alpha = args.alpha if args.alpha is not None else cfg.discover.alpha
    model = load_model(args.model)
    data = _load(cfg, args.data)
    report: DiscoveryReport = discover_rule(
        model, data, args.target, alpha, positive_label=args.positive_label,
        center=cfg.discover.center, omnibus=cfg.discover.omnibus)
    out = _out_dir(cfg, args.output_dir)
    files = [(out / "report.txt", report.to_text())]
    if report.inference is not None:
        files.append((out / "inference.csv", report.inference.to_csv()))
    if report.found:
        save_rule(report.rule, out / "rule.json")
        files.append((out / "segment.csv", report.stats.to_csv()))
    _emit(report.to_text(), *files)
    return 0


def cmd_apply(args) -> int:
    cfg = load_config(args.config)
    data = _load(cfg, args.data)
    rules = [load_rule(p) for p in args.rule]
    rule = merge_predicates([p for r in rules for p in r.predicates]) if rules else SegmentRule(())
    mask = apply_rule(data, rule)
    outcome = args.outcome or data.schema.target
    y, valid, label = binary_outcome(data, outcome, args.positive_label)
    stats = segment_stats(mask[valid], y[valid])
    out = _out_dir(cfg, args.output_dir)

    rows = data.frame.copy()
    rows[data.schema.target] = data.target
    rows = rows[mask]
    text = (f"rule = {rule.describe()}\noutcome = {label!r}\n"
            f"rows in segment: {int(mask.sum())} of {len(data)}\n\n" + stats.to_text() + "\n")
    _emit(text, (out / "contingency.txt", text), (out / "contingency.csv", stats.to_csv()))
    rows.to_csv(out / "segment_rows.csv", index=False)
    if len(rules) > 1:
        save_rule(rule, out / "combined_rule.json")
    return 0


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rfne", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and verify a benchmark dataset")
    p.add_argument("dataset", choices=sorted(DATASETS))
    p.add_argument("--source", help="local CSV, zip archive or URL (default: UCI)")
    p.add_argument("--sha256", help="expected checksum of the extracted CSV")
    p.add_argument("--data-dir", help="cache directory (default: $RFNE_DATA_DIR)")
    p.set_defaults(func=cmd_fetch)

    def common(p, seeds=True):
        p.add_argument("--config", required=True)
        p.add_argument("--data", help="override data.path")
        p.add_argument("--output-dir", help="override output_dir")
        if seeds:
            p.add_argument("--seed", type=int, help="override the master seed")
            p.add_argument("--split-seed", type=int, help="override split.seed")
            p.add_argument("--n-jobs", type=int, help="worker count (default: all cores)")

    p = sub.add_parser("train", help="fit forest and node embeddings, write a model file")
    common(p)
    p.add_argument("--model", help="model file path (default: <output-dir>/model.rfne)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="holdout AUC for each method")
    common(p)
    p.add_argument("--method", action="append", choices=METHODS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gridsearch", help="cross-validated grid search")
    common(p)
    p.add_argument("--method", action="append", choices=METHODS)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("discover", help="find an enriched segment for a binary column")
    common(p, seeds=False)
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--positive-label")
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("apply", help="select rows matching one or more rule files")
    common(p, seeds=False)
    p.add_argument("--rule", action="append", default=[])
    p.add_argument("--outcome", help="binary column to tabulate (default: the target)")
    p.add_argument("--positive-label")
    p.set_defaults(func=cmd_apply)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 1),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ModelFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
