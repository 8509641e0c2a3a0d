import json
import math

import numpy as np
import pytest

from aoisched.errors import ConfigError
from aoisched.layout import (ChannelConfig, channel_config_from_dict,
                             channel_config_to_dict, derive_channel,
                             generate_layout, layout_from_dict, layout_to_dict,
                             load_layout, path_gain, save_layout)
from conftest import square_layout


def test_generate_respects_geometry():
    lay = generate_layout(seed=7, n_links=1, region_size=500, d_min=2, d_max=65)
    d = lay.link_distance[0]
    assert 2.0 <= d <= 65.0
    assert np.all(lay.tx >= 0) and np.all(lay.tx <= 500)
    assert np.all(lay.rx >= 0) and np.all(lay.rx <= 500)


def test_generate_matches_sampling_law():
    # distances uniform in [d_min, d_max], positions inside the plane
    lay = generate_layout(seed=123, n_links=300, region_size=500, d_min=2, d_max=65)
    d = lay.link_distance
    assert np.all((d >= 2.0) & (d <= 65.0))
    assert np.all((lay.rx >= 0.0) & (lay.rx <= 500.0))
    # crude uniformity check on the distance distribution
    assert abs(d.mean() - 33.5) < 5.0


def test_generate_deterministic():
    a = generate_layout(seed=99, n_links=50, region_size=500, d_min=2, d_max=65)
    b = generate_layout(seed=99, n_links=50, region_size=500, d_min=2, d_max=65)
    assert np.array_equal(a.tx, b.tx) and np.array_equal(a.rx, b.rx)
    c = generate_layout(seed=100, n_links=50, region_size=500, d_min=2, d_max=65)
    assert not np.array_equal(a.tx, c.tx)


def test_generate_rejects_impossible_geometry():
    with pytest.raises(ConfigError):
        generate_layout(seed=1, n_links=5, region_size=100, d_min=2, d_max=100)
    with pytest.raises(ConfigError):
        generate_layout(seed=1, n_links=5, region_size=100, d_min=0, d_max=10)
    with pytest.raises(ConfigError):
        generate_layout(seed=1, n_links=0, region_size=100, d_min=2, d_max=10)


def test_path_gain_power_law_unit_distance():
    cfg = ChannelConfig(alpha=3.0)
    ant2 = cfg.antenna_gain ** 2
    assert path_gain(1.0, cfg) == pytest.approx(ant2)
    assert path_gain(10.0, cfg) == pytest.approx(ant2 * 1e-3)


def test_path_gain_itu1411_frozen_value():
    # oracle: hand evaluation of the breakpoint formula at 20 m, 2.4 GHz,
    # 1.5 m antennas -> 60.05178954442884 dB loss before antenna gains
    cfg = ChannelConfig(pathloss_model="itu1411_los", antenna_gain=1.0)
    assert path_gain(20.0, cfg) == pytest.approx(9.881458375239403e-07, rel=1e-12)
    # beyond the breakpoint (40 dB/decade branch), with 2.5 dBi per end
    cfg2 = ChannelConfig(pathloss_model="itu1411_los")
    assert path_gain(100.0, cfg2) == pytest.approx(6.488215739563146e-08, rel=1e-12)


@pytest.mark.parametrize("model", ["power_law", "itu1411_los"])
def test_path_gain_monotone_decreasing(model):
    cfg = ChannelConfig(pathloss_model=model)
    d = np.linspace(1.0, 400.0, 512)
    g = path_gain(d, cfg)
    assert np.all(np.diff(g) < 0)


def test_path_gain_domain_error():
    with pytest.raises(ValueError):
        path_gain(0.0, ChannelConfig())
    with pytest.raises(ValueError):
        path_gain(-3.0, ChannelConfig())


def test_derive_channel_no_noise_gives_rho_one():
    lay = generate_layout(seed=3, n_links=4, region_size=500, d_min=2, d_max=65)
    ch = derive_channel(lay, ChannelConfig(noise_w=0.0))
    assert np.all(ch.rho == 1.0)


def test_derive_channel_symmetric_square():
    lay = square_layout(direct=10.0, separation=5.0)
    ch = derive_channel(lay, ChannelConfig())
    assert ch.D[0, 1] == pytest.approx(ch.D[1, 0], rel=1e-12)
    assert ch.B[0, 1] == pytest.approx(ch.B[1, 0], rel=1e-12)


def test_derive_channel_reference_noise_config():
    # 40 dBm tx power with -169 dBm/Hz noise density over 5 MHz
    cfg = ChannelConfig()
    assert cfg.tx_power_w == pytest.approx(10.0)
    assert cfg.noise_w == pytest.approx(6.294627058970857e-14, rel=1e-12)
    lay = generate_layout(seed=4, n_links=6, region_size=500, d_min=2, d_max=65)
    ch = derive_channel(lay, cfg)
    assert np.all((ch.rho > 0.0) & (ch.rho < 1.0))


def test_channel_invariants_random_layouts():
    for seed in range(5):
        lay = generate_layout(seed=seed, n_links=12, region_size=500, d_min=2, d_max=65)
        ch = derive_channel(lay, ChannelConfig(noise_w=1e-9))
        off = ~np.eye(12, dtype=bool)
        assert np.all((ch.B[off] >= 0) & (ch.B[off] < 1))
        assert np.all(ch.B[np.eye(12, dtype=bool)] == 0)
        assert np.all((ch.rho > 0) & (ch.rho <= 1))
        # B and D consistent to machine precision
        assert np.allclose(ch.B[off] * (1.0 + ch.D[off]), 1.0, rtol=0, atol=1e-15)


def test_layout_json_round_trip(tmp_path):
    lay = generate_layout(seed=11, n_links=8, region_size=500, d_min=2, d_max=65)
    path = tmp_path / "layout.json"
    save_layout(path, lay)
    back = load_layout(path)
    assert np.array_equal(back.tx, lay.tx) and np.array_equal(back.rx, lay.rx)
    assert back.seed == lay.seed and back.d_max == lay.d_max


def test_layout_schema_errors():
    obj = layout_to_dict(generate_layout(seed=1, n_links=2, region_size=500,
                                         d_min=2, d_max=65))
    bad = dict(obj)
    del bad["tx"]
    with pytest.raises(ConfigError, match="tx"):
        layout_from_dict(bad)
    bad = dict(obj)
    bad["schema_version"] = 99
    with pytest.raises(ConfigError, match="schema_version"):
        layout_from_dict(bad)


def test_channel_config_round_trip():
    cfg = ChannelConfig(beta=np.array([1.0, 2.0]), pathloss_model="itu1411_los")
    back = channel_config_from_dict(channel_config_to_dict(cfg))
    assert back.tx_power_w == pytest.approx(cfg.tx_power_w, rel=1e-12)
    assert back.noise_w == pytest.approx(cfg.noise_w, rel=1e-12)
    assert np.allclose(back.beta_vector(2), cfg.beta_vector(2))
    assert back.pathloss_model == "itu1411_los"
    # noise-free configs survive the trip exactly
    quiet = ChannelConfig(noise_w=0.0)
    assert channel_config_from_dict(channel_config_to_dict(quiet)).noise_w == 0.0


def test_channel_config_validation():
    with pytest.raises(ConfigError):
        ChannelConfig(tx_power_w=0.0)
    with pytest.raises(ConfigError):
        ChannelConfig(alpha=1.5)
    with pytest.raises(ConfigError):
        ChannelConfig(pathloss_model="hata")
    with pytest.raises(ConfigError, match="beta_db"):
        channel_config_from_dict({"tx_power_dbm": 40, "noise_psd_dbm_per_hz": -169,
                                  "bandwidth_hz": 5e6, "alpha": 3,
                                  "pathloss_model": "power_law",
                                  "antenna_gain_dbi": 2.5})
