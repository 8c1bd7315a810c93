import numpy as np
import pytest

from mixbt.schemas import RunConfig
from mixbt.services.data import load_run_datasets


def tiny_config(**overrides) -> RunConfig:
    """A run small enough to train in well under a second: 4 steps per epoch, 2 epochs."""
    fields = dict(
        dataset="synthetic",
        synthetic_classes=2,
        synthetic_per_class=16,
        synthetic_test_per_class=8,
        synthetic_dim=16,
        synthetic_separation=10.0,
        hidden_dims=[12],
        projector_hidden_dim=10,
        d=4,
        batch_size=8,
        epochs=2,
        warmup_epochs=1,
        eval_every=1,
        knn_k=3,
        seed=7,
    )
    fields.update(overrides)
    return RunConfig(**fields)


@pytest.fixture
def tiny_cfg() -> RunConfig:
    return tiny_config()


@pytest.fixture
def tiny_splits(tiny_cfg):
    return load_run_datasets(tiny_cfg, tiny_cfg.seed)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
