"""Shared fixtures: tiny on-disk datasets for training and CLI tests."""

import numpy as np
import pytest

from intentlab import synthetic, training


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_dataset(tmp_path):
    """A 16-image 32x32 planted-region dataset with masks, 4 classes."""
    root = tmp_path / "tiny_data"
    manifest = synthetic.make_synthetic_dataset(
        root, n_images=16, image_size=32, block_size=16, seed=0,
        noise_level=3, num_classes=4)
    rows = training.read_manifest(manifest, num_classes=4)
    object_classes, context_classes = synthetic.object_context_split(4)
    return {
        "manifest": manifest,
        "rows": rows,
        "object_classes": object_classes,
        "context_classes": context_classes,
        "num_classes": 4,
    }
