import numpy as np
import pytest

from pyheadseg.enums import Architecture
from pyheadseg.network import Network, NetworkConfig, build
from pyheadseg.phantom import generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def phantoms():
    """
    20 easy 64x64 phantoms (16 train / 4 val), shared read-only across the session.
    """
    return generate_dataset(20, (64, 64), "easy", seed=42)


@pytest.fixture
def tiny_config():
    def make(architecture=Architecture.ATTRESUNET, **overrides) -> NetworkConfig:
        values = dict(encoder_channels=(4, 8, 8, 16), bottleneck_channels=16, input_size=(16, 16))
        values.update(overrides)
        return NetworkConfig.for_architecture(architecture, **values)

    return make


@pytest.fixture
def tiny_net(tiny_config):
    def make(architecture=Architecture.ATTRESUNET, **overrides) -> Network:
        return build(tiny_config(architecture, **overrides))

    return make
