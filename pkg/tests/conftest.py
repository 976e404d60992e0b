from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from rfne.data import Dataset, encode, fit_encoding, load_csv

ROOT = Path(__file__).resolve().parent.parent
BANK = ROOT / "data" / "bank-full.csv"

needs_bank = pytest.mark.skipif(not BANK.exists(), reason="bank-full.csv not present")


def write_csv(path: Path, header, rows, delimiter=",") -> Path:
    lines = [delimiter.join(header)] + [delimiter.join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def mixed_frame(n: int, seed: int = 0):
    """Rows with two numeric and two categorical columns plus a noisy binary target."""
    rng = np.random.default_rng(seed)
    age = rng.integers(18, 90, n)
    balance = np.round(rng.normal(1000, 800, n), 1)
    job = rng.choice(["admin", "blue", "tech", "retired"], n)
    marital = rng.choice(["single", "married", "divorced"], n)
    logit = 0.04 * (age - 50) + 1.2 * (job == "retired") - 0.8 * (marital == "single")
    y = np.where(rng.random(n) < 1 / (1 + np.exp(-logit)), "yes", "no")
    return ["age", "balance", "job", "marital", "y"], list(zip(age, balance, job, marital, y))


@pytest.fixture
def mixed_dataset(tmp_path) -> Dataset:
    header, rows = mixed_frame(400)
    return load_csv(write_csv(tmp_path / "mixed.csv", header, rows), target="y")


@pytest.fixture
def mixed_encoded(mixed_dataset):
    return encode(mixed_dataset, fit_encoding(mixed_dataset))


@pytest.fixture
def mixed_csv(tmp_path) -> Path:
    header, rows = mixed_frame(400)
    return write_csv(tmp_path / "mixed.csv", header, rows)
