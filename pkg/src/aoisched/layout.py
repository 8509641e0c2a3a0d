"""Device layouts and the static channel parameters derived from them.

A layout drops N transmitter/receiver pairs on an L x L plane.  The
channel stage turns that geometry into the two quantities the rest of the
package consumes: the per-link noise survival factor (how likely a link
decodes when nobody interferes) and the pairwise interference ratios that
couple the links.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import substream

LAYOUT_SCHEMA_VERSION = 1
SPEED_OF_LIGHT = 2.998e8  # m/s

_PATHLOSS_MODELS = ("power_law", "itu1411_los")


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.flags.writeable = False
    return out


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def db_to_linear(db) -> float:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class DeviceLayout:
    """Transmitter/receiver coordinates of N links on an L x L plane."""

    n_links: int
    region_size: float
    tx: np.ndarray  # (N, 2) metres
    rx: np.ndarray  # (N, 2) metres
    seed: int
    d_min: float
    d_max: float

    def __post_init__(self):
        object.__setattr__(self, "tx", _frozen(self.tx))
        object.__setattr__(self, "rx", _frozen(self.rx))
        n, L = self.n_links, self.region_size
        if n < 1:
            raise ConfigError("n_links must be >= 1")
        if self.tx.shape != (n, 2) or self.rx.shape != (n, 2):
            raise ConfigError("tx/rx must have shape (n_links, 2)")
        tol = 1e-9 * max(L, 1.0)
        for name, pts in (("tx", self.tx), ("rx", self.rx)):
            if np.any(pts < -tol) or np.any(pts > L + tol):
                raise ConfigError(f"{name} coordinates fall outside the region")
        d = self.link_distance
        if np.any(d < self.d_min - tol) or np.any(d > self.d_max + tol):
            raise ConfigError("transceiver distance violates [d_min, d_max]")
        # every tx must be strictly apart from every rx, else a path gain blows up
        cross = np.linalg.norm(self.tx[:, None, :] - self.rx[None, :, :], axis=2)
        if np.any(cross <= 0.0):
            raise ConfigError("coincident transmitter/receiver positions")

    @property
    def link_distance(self) -> np.ndarray:
        """Per-link tx-to-own-rx distance, metres."""
        return np.linalg.norm(self.tx - self.rx, axis=1)


def generate_layout(seed: int, n_links: int, region_size: float,
                    d_min: float, d_max: float) -> DeviceLayout:
    """Drop transmitters uniformly and place each receiver at a uniform
    distance/angle from its transmitter, resampling draws that land
    outside the plane so the distance law stays exact."""
    if n_links < 1:
        raise ConfigError("n_links must be >= 1")
    if not (0.0 < d_min <= d_max):
        raise ConfigError("need 0 < d_min <= d_max")
    if d_max >= region_size:
        raise ConfigError("d_max must be smaller than the region size")

    rng = substream(seed, "layout")
    tx = rng.uniform(0.0, region_size, size=(n_links, 2))
    rx = np.empty_like(tx)
    pending = np.arange(n_links)
    while pending.size:
        dist = rng.uniform(d_min, d_max, size=pending.size)
        ang = rng.uniform(0.0, 2.0 * np.pi, size=pending.size)
        cand = tx[pending] + np.column_stack((dist * np.cos(ang), dist * np.sin(ang)))
        ok = np.all((cand >= 0.0) & (cand <= region_size), axis=1)
        rx[pending[ok]] = cand[ok]
        pending = pending[~ok]
    return DeviceLayout(n_links=n_links, region_size=float(region_size),
                        tx=tx, rx=rx, seed=int(seed),
                        d_min=float(d_min), d_max=float(d_max))


@dataclass(frozen=True)
class ChannelConfig:
    """Radio parameters; defaults follow the usual short-range outdoor
    setup (40 dBm transmit power, -169 dBm/Hz noise over 5 MHz, 0 dB
    decode threshold, 2.5 dBi per antenna end)."""

    tx_power_w: float = dbm_to_watt(40.0)
    noise_w: float = dbm_to_watt(-169.0) * 5e6
    beta: float | np.ndarray = 1.0          # linear SINR threshold
    pathloss_model: str = "power_law"
    alpha: float = 3.0                       # power-law exponent
    antenna_gain: float = db_to_linear(2.5)  # linear power ratio, per end
    carrier_hz: float = 2.4e9
    bandwidth_hz: float = 5e6
    antenna_height_m: float = 1.5

    def __post_init__(self):
        if self.tx_power_w <= 0:
            raise ConfigError("tx_power_w must be positive")
        if self.noise_w < 0:
            raise ConfigError("noise_w must be non-negative")
        if np.any(np.asarray(self.beta, dtype=float) <= 0):
            raise ConfigError("beta must be positive")
        if self.pathloss_model not in _PATHLOSS_MODELS:
            raise ConfigError(f"unknown pathloss_model {self.pathloss_model!r}")
        if self.pathloss_model == "power_law" and self.alpha <= 2.0:
            raise ConfigError("power-law exponent alpha must exceed 2")
        if self.antenna_gain <= 0 or self.carrier_hz <= 0 or self.antenna_height_m <= 0:
            raise ConfigError("antenna/carrier parameters must be positive")

    def beta_vector(self, n_links: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.beta, dtype=float), (n_links,)).copy()


def path_gain(distance, cfg: ChannelConfig) -> np.ndarray:
    """Linear power gain over `distance` metres, antenna gains included
    (one gain factor per link end, hence squared)."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("path_gain requires distance > 0")
    ends = cfg.antenna_gain ** 2
    if cfg.pathloss_model == "power_law":
        return ends * d ** (-cfg.alpha)
    # ITU-R P.1411 line-of-sight lower bound: free-space-like 20 dB/decade
    # up to the breakpoint 4*h1*h2/lambda, 40 dB/decade beyond it.
    lam = SPEED_OF_LIGHT / cfg.carrier_hz
    h2 = cfg.antenna_height_m ** 2
    r_bp = 4.0 * h2 / lam
    l_bp = abs(20.0 * math.log10(lam ** 2 / (8.0 * math.pi * h2)))
    ratio = d / r_bp
    loss_db = l_bp + np.where(ratio <= 1.0,
                              20.0 * np.log10(ratio),
                              40.0 * np.log10(ratio))
    return ends * 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Static channel state derived from a layout.

    rho[i]  -- probability the fading beats the noise-only decode
               threshold on link i (exactly 1 when the noise power is 0).
    D[j, i] -- direct-gain-to-cross-gain ratio for interferer j hitting
               receiver i, scaled by i's threshold; +inf on the diagonal
               so it drops out of products.
    B[j, i] -- 1 / (1 + D[j, i]), the steady-state interference weight of
               j on i; 0 on the diagonal.
    """

    rho: np.ndarray
    D: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "D", _frozen(self.D))
        object.__setattr__(self, "B", _frozen(self.B))
        n = self.rho.shape[0]
        if self.D.shape != (n, n) or self.B.shape != (n, n):
            raise ConfigError("D and B must be square and match rho")
        if np.any(self.rho <= 0) or np.any(self.rho > 1):
            raise ConfigError("rho must lie in (0, 1]")

    @property
    def n_links(self) -> int:
        return self.rho.shape[0]

    @property
    def inv_d(self) -> np.ndarray:
        """1/D with an exact 0 diagonal; handy for interference sums."""
        with np.errstate(divide="ignore"):
            out = 1.0 / self.D
        np.fill_diagonal(out, 0.0)
        return out


def derive_channel(layout: DeviceLayout, cfg: ChannelConfig) -> ChannelParams:
    """Geometry -> (rho, D, B).  Cross distances run from the transmitter
    of j to the receiver of i."""
    n = layout.n_links
    diff = layout.tx[:, None, :] - layout.rx[None, :, :]
    dist = np.linalg.norm(diff, axis=2)  # dist[j, i] = |tx_j - rx_i|
    gains = path_gain(dist, cfg)
    g_dir = np.diag(gains).copy()
    beta = cfg.beta_vector(n)
    rho = np.exp(-beta * cfg.noise_w / (cfg.tx_power_w * g_dir))
    D = g_dir[None, :] / (beta[None, :] * gains)
    np.fill_diagonal(D, np.inf)
    B = 1.0 / (1.0 + D)
    np.fill_diagonal(B, 0.0)
    return ChannelParams(rho=rho, D=D, B=B)


# ---------------------------------------------------------------------------
# file formats


def layout_to_dict(layout: DeviceLayout) -> dict:
    return {
        "schema_version": LAYOUT_SCHEMA_VERSION,
        "seed": layout.seed,
        "n_links": layout.n_links,
        "region_size_m": layout.region_size,
        "d_min_m": layout.d_min,
        "d_max_m": layout.d_max,
        "tx": layout.tx.tolist(),
        "rx": layout.rx.tolist(),
    }


def layout_from_dict(obj: dict) -> DeviceLayout:
    for field in ("schema_version", "seed", "n_links", "region_size_m",
                  "d_min_m", "d_max_m", "tx", "rx"):
        if field not in obj:
            raise ConfigError(f"layout file missing field {field!r}")
    if obj["schema_version"] != LAYOUT_SCHEMA_VERSION:
        raise ConfigError(f"unsupported layout schema_version {obj['schema_version']!r}")
    try:
        return DeviceLayout(n_links=int(obj["n_links"]),
                            region_size=float(obj["region_size_m"]),
                            tx=np.asarray(obj["tx"], dtype=float),
                            rx=np.asarray(obj["rx"], dtype=float),
                            seed=int(obj["seed"]),
                            d_min=float(obj["d_min_m"]),
                            d_max=float(obj["d_max_m"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed layout file: {exc}") from exc


def save_layout(path, layout: DeviceLayout) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layout_to_dict(layout), fh, indent=2)
        fh.write("\n")


def load_layout(path) -> DeviceLayout:
    with open(path, encoding="utf-8") as fh:
        return layout_from_dict(json.load(fh))


def channel_config_to_dict(cfg: ChannelConfig) -> dict:
    beta = np.asarray(cfg.beta, dtype=float)
    beta_db = 10.0 * np.log10(beta)
    return {
        "tx_power_dbm": 30.0 + 10.0 * math.log10(cfg.tx_power_w),
        # null encodes a noise-free channel (a PSD of -inf dBm/Hz)
        "noise_psd_dbm_per_hz": (None if cfg.noise_w == 0.0 else
                                 30.0 + 10.0 * math.log10(cfg.noise_w / cfg.bandwidth_hz)),
        "bandwidth_hz": cfg.bandwidth_hz,
        "beta_db": beta_db.tolist() if beta_db.ndim else float(beta_db),
        "alpha": cfg.alpha,
        "pathloss_model": cfg.pathloss_model,
        "antenna_gain_dbi": 10.0 * math.log10(cfg.antenna_gain),
        "carrier_hz": cfg.carrier_hz,
        "antenna_height_m": cfg.antenna_height_m,
    }


def channel_config_from_dict(obj: dict) -> ChannelConfig:
    for field in ("tx_power_dbm", "noise_psd_dbm_per_hz", "bandwidth_hz",
                  "beta_db", "alpha", "pathloss_model", "antenna_gain_dbi"):
        if field not in obj:
            raise ConfigError(f"channel config missing field {field!r}")
    try:
        psd = obj["noise_psd_dbm_per_hz"]
        bw = float(obj["bandwidth_hz"])
        noise_w = 0.0 if psd is None else dbm_to_watt(float(psd)) * bw
        beta_db = np.asarray(obj["beta_db"], dtype=float)
        beta = db_to_linear(beta_db)
        return ChannelConfig(
            tx_power_w=dbm_to_watt(float(obj["tx_power_dbm"])),
            noise_w=noise_w,
            beta=beta if beta.ndim else float(beta),
            pathloss_model=str(obj["pathloss_model"]),
            alpha=float(obj["alpha"]),
            antenna_gain=float(db_to_linear(float(obj["antenna_gain_dbi"]))),
            carrier_hz=float(obj.get("carrier_hz", 2.4e9)),
            bandwidth_hz=bw,
            antenna_height_m=float(obj.get("antenna_height_m", 1.5)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed channel config: {exc}") from exc


def save_channel_config(path, cfg: ChannelConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(channel_config_to_dict(cfg), fh, indent=2)
        fh.write("\n")


def load_channel_config(path) -> ChannelConfig:
    with open(path, encoding="utf-8") as fh:
        return channel_config_from_dict(json.load(fh))
