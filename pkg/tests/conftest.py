import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session", autouse=True)
def _torch_threads():
    torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def torch_gen():
    return torch.Generator().manual_seed(0)


def make_tiny_dataset(actions=("squat", "walk-in-place", "wave-left-arm"),
                      sequences_per_action=6, duration=16, seed=0,
                      rotation_noise_std=0.0, translation_noise_std=0.0):
    from actor.data import DatasetSpec, generate_dataset

    spec = DatasetSpec(
        actions=actions,
        sequences_per_action=sequences_per_action,
        duration=duration,
        seed=seed,
        rotation_noise_std=rotation_noise_std,
        translation_noise_std=translation_noise_std,
    )
    return generate_dataset(spec)


def tiny_model_config(num_actions=3, **overrides):
    from actor.model import ModelConfig

    defaults = dict(
        num_actions=num_actions, latent_dim=32, layers=1, heads=2,
        ff_dim=64, dropout=0.1,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


@pytest.fixture()
def tiny_dataset():
    return make_tiny_dataset()
