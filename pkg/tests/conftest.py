import numpy as np
import pytest

from chartadapter import RunConfig
from chartadapter.config import StageSettings


def tiny_run_config(seed=0, **overrides) -> RunConfig:
    """A configuration small enough for second-scale unit tests."""
    base = dict(
        seed=seed,
        d_v=12,
        d_t=16,
        n_q=4,
        n_layers=1,
        n_heads=2,
        d_hidden_mlp=12,
        d_l=16,
        max_patches=16,
        lm_blocks=1,
        lm_heads=2,
        lm_d_ff=32,
        max_seq=96,
        n_samples=8,
        eval_split="train",
        stage1=StageSettings(epochs=50, lr=3e-4, batch_size=8, max_steps=8),
        stage2=StageSettings(epochs=50, lr=1e-3, batch_size=8, max_steps=8),
        stage3=StageSettings(epochs=50, lr=1e-3, batch_size=8, max_steps=12),
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
