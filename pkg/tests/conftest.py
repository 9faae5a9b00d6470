import numpy as np
import pytest

from amhop.data import SyntheticSpec, generate_synthetic, synthetic_meta
from amhop.network import ModelConfig, ModelParams


def tiny_spec(n_samples=4, seed=0, rule="xor3", noise=0.3):
    return SyntheticSpec(
        n_samples=n_samples,
        min_len=2,
        max_len=4,
        audio_dim=5,
        video_dim=7,
        vocab_size=9,
        n_classes=4,
        noise=noise,
        rule=rule,
        seed=seed,
    )


def tiny_config(kind="amh", n_hops=3, hidden_dim=8, spec=None, **overrides):
    spec = spec or tiny_spec()
    base = dict(
        kind=kind,
        n_hops=n_hops,
        hidden_dim=hidden_dim,
        embed_dim=4,
        vocab_size=spec.vocab_size,
        audio_dim=spec.audio_dim,
        video_dim=spec.video_dim,
        labels=synthetic_meta(spec).labels,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(kind="amh", n_hops=3, hidden_dim=8, seed=0, spec=None, **overrides):
    config = tiny_config(kind=kind, n_hops=n_hops, hidden_dim=hidden_dim, spec=spec, **overrides)
    return ModelParams.init(config, np.random.default_rng(seed))


def tiny_samples(n=4, seed=0, rule="xor3", noise=0.3):
    return generate_synthetic(tiny_spec(n_samples=n, seed=seed, rule=rule, noise=noise))


@pytest.fixture
def samples4():
    return tiny_samples(4)
