import numpy as np
import pytest
import torch

from semfuse import SynthSpec, TrainConfig, generate_synthetic


@pytest.fixture
def tiny_config():
    """Small everything: fast to build, fast to train a few steps."""
    return TrainConfig(
        scales=2,
        base_channels=4,
        seg_width=0.25,
        warm_start_epochs=2,
        semantic_epochs=2,
        batch_size=2,
        seed=7,
    )


@pytest.fixture
def tiny_pairs():
    """Eight 16x16 labelled pairs; enough for mechanics tests."""
    return generate_synthetic(SynthSpec(size=16, count=8, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_image(rng, h=8, w=8):
    return torch.tensor(rng.uniform(0.0, 1.0, size=(h, w)))
