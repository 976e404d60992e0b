"""End-to-end acceptance checks on bank-full.

Each test prints one ``[PASS]`` or ``[FAIL]`` line, also when pytest captures
output, so ``pytest -v`` shows the verdicts in order.  Run directly with
``python tests/test_acceptance.py`` for the lines alone.
"""

import subprocess
import sys
import time

import numpy as np
import pytest

from rfne.cli import _load, _prepare, _settings, main
from rfne.config import load_config
from rfne.discover import discover_rule
from rfne.evaluate import METHODS, evaluate_holdout
from rfne.pipeline import fit_rfne

from conftest import ROOT, needs_bank

pytestmark = [needs_bank, pytest.mark.slow]

D1 = ROOT / "configs" / "d1.yaml"
DISCOVER = ROOT / "configs" / "discover_d1.yaml"

# reference holdout AUCs and tolerances
TARGETS = {"rf": (0.922, 0.02), "rfne": (0.907, 0.02), "logistic": (0.861, 0.02),
           "knn": (0.849, 0.03)}
MIN_GAIN = 0.02
LIFT, ALPHA = 1.2, 0.05
ORACLE_FILES = ["test_forest.py", "test_graphwalk.py", "test_embed.py", "test_models.py",
                "test_pipeline.py", "test_discover.py"]


def verdict(number, ok, detail, capsys=None):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


@pytest.fixture(scope="module")
def holdout():
    cfg = load_config(D1)
    train, test = _prepare(cfg, _load(cfg))
    return evaluate_holdout(train, test, METHODS, cfg.method_params(), _settings(cfg, 1))


@pytest.fixture(scope="module")
def discovery_runs():
    cfg = load_config(DISCOVER)
    data = _load(cfg)
    train, _ = _prepare(cfg, data)
    runs = []
    for seed in range(10):
        model = fit_rfne(train, cfg.model_copy(update={"seed": seed}).rfne_config(), 1)
        runs.append((model, discover_rule(model, data, "loan", cfg.discover.alpha)))
    return data, runs


def check_holdout_aucs(report):
    misses = []
    parts = []
    for method, (target, tol) in TARGETS.items():
        got = report.auc_of(method)
        parts.append(f"{method} {got:.3f} (target {target} +/- {tol})")
        if abs(got - target) > tol:
            misses.append(method)
    return not misses, "; ".join(parts) + (f"; outside: {', '.join(misses)}" if misses else "")


def test_criterion_1_holdout_aucs(holdout, capsys):
    ok, detail = check_holdout_aucs(holdout)
    assert verdict(1, ok, detail, capsys), detail


def test_criterion_2_embedding_gain_over_logistic(holdout, capsys):
    gain = holdout.auc_of("rfne") - holdout.auc_of("logistic")
    detail = f"rfne - logistic = {gain:+.3f} (need >= {MIN_GAIN})"
    assert verdict(2, gain >= MIN_GAIN, detail, capsys), detail


def test_criterion_3_loan_segment_over_seeds(discovery_runs, capsys):
    _, runs = discovery_runs
    good = [r.found and r.stats.lift >= LIFT and r.stats.chi2.p_value < ALPHA for _, r in runs]
    lifts = ", ".join(f"{r.stats.lift:.2f}" if r.found else "none" for _, r in runs)
    detail = f"{sum(good)}/10 seeds with lift >= {LIFT} and p < {ALPHA} (lifts: {lifts})"
    assert verdict(3, sum(good) >= 8, detail, capsys), detail


def test_criterion_4_oracle_suite_is_fast(capsys):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(ROOT / "tests" / f) for f in ORACLE_FILES]],
                          capture_output=True, text=True, cwd=ROOT)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 60
    detail = f"oracle tests {summary!r} in {elapsed:.1f}s (limit 60s)"
    assert verdict(4, ok, detail, capsys), detail


def test_criterion_5_training_is_byte_identical(tmp_path, capsys):
    blobs = {}
    for jobs in ("1", "2"):
        path = tmp_path / f"model_{jobs}.rfne"
        code = main(["train", "--config", str(D1), "--n-jobs", jobs, "--model", str(path),
                     "--output-dir", str(tmp_path / f"out_{jobs}")])
        assert code == 0
        blobs[jobs] = path.read_bytes()
    same = blobs["1"] == blobs["2"]
    detail = f"model files at n_jobs 1 and 2 {'identical' if same else 'differ'} ({len(blobs['1'])} bytes)"
    assert verdict(5, same, detail, capsys), detail


def test_criterion_6_null_outcomes_stay_quiet(discovery_runs, capsys):
    data, runs = discovery_runs
    model = runs[0][0]
    rate = float(np.mean(data.frame["loan"].astype(str) == "yes"))
    quiet = 0
    for sim in range(100):
        y = (np.random.default_rng(10_000 + sim).random(len(data)) < rate).astype(int)
        quiet += not discover_rule(model, data, y, ALPHA).found
    detail = f"{quiet}/100 null outcomes report no significant tree (need >= 85)"
    assert verdict(6, quiet >= 85, detail, capsys), detail


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
