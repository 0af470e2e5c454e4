"""Shared fixtures. The trained toy detector is expensive (minutes on one CPU),
so it is cached in pytest's cache dir keyed by a hash of the code that
determines it; any change to that code retrains."""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest
import torch

import catattack

PKG = Path(catattack.__file__).parent
TRAIN_SOURCES = ["detector/model.py", "detector/train.py", "harness/data.py"]

torch.set_num_threads(1)


def source_hash(paths) -> str:
    h = hashlib.sha256()
    for rel in sorted(paths):
        h.update(rel.encode())
        h.update((PKG / rel).read_bytes())
    return h.hexdigest()[:16]


def package_hash() -> str:
    return source_hash(str(p.relative_to(PKG)) for p in PKG.rglob("*.py"))


def cached_model(cache_dir: Path, seed: int, train_count: int = 2000, epochs: int = 40):
    from catattack.detector import load_model, save_model, train_toy_detector
    from catattack.harness.data import generate_scenes, scenes_to_set

    path = cache_dir / f"toy_s{seed}_n{train_count}_e{epochs}_{source_hash(TRAIN_SOURCES)}.npz"
    if not path.exists():
        train = scenes_to_set(generate_scenes(train_count, 0, "train"))
        save_model(train_toy_detector(train, epochs=epochs, seed=seed), path)
    return load_model(path)


@pytest.fixture(scope="session")
def cache_dir(request) -> Path:
    return Path(request.config.cache.mkdir("catattack"))


@pytest.fixture(scope="session")
def trained_model(cache_dir):
    return cached_model(cache_dir, seed=7)


@pytest.fixture(scope="session")
def test_split():
    from catattack.harness.data import generate_scenes, scenes_to_set

    return scenes_to_set(generate_scenes(200, 0, "test"))


@pytest.fixture(scope="session")
def circle_fixture():
    """Canonical one-circle image: mid-grey noise background, one centred circle."""
    from catattack.harness.data import IMAGE_SIZE

    rng = np.random.default_rng(0)
    img = np.clip(rng.normal(120, 6, (IMAGE_SIZE, IMAGE_SIZE, 3)), 0, 255)
    yy, xx = np.mgrid[:IMAGE_SIZE, :IMAGE_SIZE] + 0.5
    cy, cx, rad = 46.0, 50.0, 12.0
    inside = np.clip(rad + 0.5 - np.hypot(yy - cy, xx - cx), 0, 1)
    img = img * (1 - inside[..., None]) + np.array([220.0, 40.0, 40.0]) * inside[..., None]
    box = (cx - rad, cy - rad, cx + rad, cy + rad)
    return np.rint(img).astype(np.uint8), (0, box)
