import numpy as np
import pytest

from aoisched.layout import (ChannelConfig, ChannelParams, DeviceLayout,
                             derive_channel, generate_layout)


def make_channel(n_links, seed=0, noise_w=1e-9, region=500.0, d_min=2.0, d_max=65.0):
    """Random layout + channel with enough noise that rho < 1 visibly."""
    lay = generate_layout(seed=seed, n_links=n_links, region_size=region,
                          d_min=d_min, d_max=d_max)
    return lay, derive_channel(lay, ChannelConfig(noise_w=noise_w))


def symmetric_channel(b, rho=1.0, n_links=2):
    """Hand-built channel where every cross pair has the same
    interference weight b (and hence gain ratio (1-b)/b)."""
    d = (1.0 - b) / b
    D = np.full((n_links, n_links), d)
    np.fill_diagonal(D, np.inf)
    B = np.full((n_links, n_links), b)
    np.fill_diagonal(B, 0.0)
    return ChannelParams(rho=np.full(n_links, float(rho)), D=D, B=B)


def square_layout(direct=10.0, separation=5.0, region=500.0):
    """Two parallel links: equal direct distances, equal cross distances."""
    tx = np.array([[0.0, 0.0], [0.0, separation]])
    rx = np.array([[direct, 0.0], [direct, separation]])
    return DeviceLayout(n_links=2, region_size=region, tx=tx, rx=rx,
                        seed=0, d_min=direct, d_max=direct)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
