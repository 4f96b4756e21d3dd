import numpy as np
import pytest

from edgederm import backbone, bundle
from edgederm.dataset import CLASS_NAMES


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def tiny_config():
    return backbone.build_tiny_config()


@pytest.fixture(scope="session")
def tiny_bundle(tiny_config):
    weights = backbone.init_weights(tiny_config, seed=1)
    return bundle.new_float_bundle(tiny_config, weights, CLASS_NAMES)


def make_random_bundle(seed: int, with_head: bool = True) -> bundle.ModelBundle:
    """Small random float bundle for serialization tests."""
    config = backbone.build_tiny_config()
    weights = backbone.init_weights(config, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    head_w = head_b = None
    if with_head:
        head_w = rng.normal(0, 0.2, size=(config.embedding_dim, 7)).astype(np.float32)
        head_b = rng.normal(0, 0.05, size=7).astype(np.float32)
    return bundle.new_float_bundle(
        config, weights, CLASS_NAMES, head_weights=head_w, head_bias=head_b
    )


def bundles_bitwise_equal(a: bundle.ModelBundle, b: bundle.ModelBundle) -> bool:
    if (a.config, a.labels, a.preprocessing, a.precision, a.version) != (
        b.config,
        b.labels,
        b.preprocessing,
        b.precision,
        b.version,
    ):
        return False
    if len(a.tensors) != len(b.tensors):
        return False
    for ta, tb in zip(a.tensors, b.tensors):
        if ta.name != tb.name or ta.quant != tb.quant:
            return False
        if ta.values.dtype != tb.values.dtype or ta.values.shape != tb.values.shape:
            return False
        if ta.values.tobytes() != tb.values.tobytes():
            return False
    return True
