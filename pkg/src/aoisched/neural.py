"""Learned scheduler: location grids in, activation probabilities out.

The network never sees channel gains.  Device coordinates are rasterized
into two M x M occupancy grids (transmitters and receivers), each entry
weighted by the current activation probability so that frequently active
devices register as stronger interference sources.  Both grids pass
through the same three stacked convolutions; after every layer each link
taps the transmitter-path output at its *receiver* cell and the
receiver-path output at its *transmitter* cell, summarizing the crowd
around each end of the link at three spatial scales.  Those six numbers,
the link's previous probability, its normalized transceiver distance, the
arrival rate and the trade-off weight feed a small per-link fully
connected head (ReLU hiddens, sigmoid output).

Inference runs the whole block several times in a feedback loop, starting
from all-ones probabilities and re-rasterizing with each round's output.

Training is unsupervised: the loss is the scalarized age/throughput
objective evaluated at the inferred policy, its derivative with respect
to the policy comes from the implicit-gradient machinery, and manual
backpropagation through the final feedback round (earlier rounds treated
as constants) carries it onto the filters and weights.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .errors import ConfigError, NumericsError, SchedulerError
from .gradient import grad_objective
from .layout import ChannelConfig, DeviceLayout, derive_channel, generate_layout
from .meanfield import EPS_P, Policy, evaluate
from .rng import substream

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
PARAMS_VERSION = "1"
N_FEATURES = 10


@dataclass(frozen=True)
class GridConfig:
    grid_size: int
    filter_sizes: tuple[int, int, int] = (5, 5, 5)
    hidden_sizes: tuple[int, int] = (16, 16)
    feedback_rounds: int = 5
    # The trade-off weight enters the loss as lam but conditions the
    # network as u = 1 + log10(lam)/5, the uniform variable behind the
    # log-spaced sampling law.  Feeding lam directly (flag below) leaves
    # the feature piled up near zero and the network blind to the weight:
    # measured outputs differed by < 1e-3 between lam = 1e-5 and lam = 1.
    loss_weight_feature: bool = False

    def __post_init__(self):
        if self.grid_size < max(self.filter_sizes):
            raise ConfigError("grid_size must be at least the largest filter")
        if any(k < 1 or k % 2 == 0 for k in self.filter_sizes):
            raise ConfigError("filter sizes must be odd and >= 1")
        if any(m < 1 for m in self.hidden_sizes):
            raise ConfigError("hidden sizes must be >= 1")
        if self.feedback_rounds < 1:
            raise ConfigError("feedback_rounds must be >= 1")

    @classmethod
    def desk(cls) -> "GridConfig":
        return cls(grid_size=32, filter_sizes=(5, 5, 5), hidden_sizes=(16, 16),
                   feedback_rounds=5)

    @classmethod
    def full_scale(cls) -> "GridConfig":
        return cls(grid_size=125, filter_sizes=(15, 15, 15), hidden_sizes=(30, 30),
                   feedback_rounds=5)

    def to_dict(self) -> dict:
        return {"grid_size": self.grid_size,
                "filter_sizes": list(self.filter_sizes),
                "hidden_sizes": list(self.hidden_sizes),
                "feedback_rounds": self.feedback_rounds,
                "loss_weight_feature": self.loss_weight_feature}

    @classmethod
    def from_dict(cls, obj: dict) -> "GridConfig":
        try:
            return cls(grid_size=int(obj["grid_size"]),
                       filter_sizes=tuple(int(k) for k in obj["filter_sizes"]),
                       hidden_sizes=tuple(int(m) for m in obj["hidden_sizes"]),
                       feedback_rounds=int(obj["feedback_rounds"]),
                       loss_weight_feature=bool(obj.get("loss_weight_feature", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed grid config: {exc}") from exc


@dataclass(frozen=True)
class GliGrids:
    g_tx: np.ndarray       # (M, M) activation-weighted transmitter occupancy
    g_rx: np.ndarray
    tx_cells: np.ndarray   # (N, 2) int cell indices
    rx_cells: np.ndarray


_PARAM_NAMES = ("f1", "f2", "f3", "w1", "b1", "w2", "b2", "w3", "b3")


@dataclass(frozen=True)
class NetParams:
    """Three shared convolution filters plus the fully connected head."""

    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    version: str = PARAMS_VERSION

    @classmethod
    def init(cls, grid_cfg: GridConfig, seed: int) -> "NetParams":
        """Centered-uniform fan-in init, zero biases."""
        rng = substream(seed, "net-init")
        n1, n2, n3 = grid_cfg.filter_sizes
        m1, m2 = grid_cfg.hidden_sizes

        def u(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(f1=u((n1, n1), n1 * n1), f2=u((n2, n2), n2 * n2),
                   f3=u((n3, n3), n3 * n3),
                   w1=u((m1, N_FEATURES), N_FEATURES), b1=np.zeros(m1),
                   w2=u((m2, m1), m1), b2=np.zeros(m2),
                   w3=u((m2,), m2), b3=np.zeros(1))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "NetParams":
        return replace(self, **arrays)

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.arrays()[n].ravel() for n in _PARAM_NAMES])

    def with_flat(self, flat: np.ndarray) -> "NetParams":
        out, pos = {}, 0
        for name in _PARAM_NAMES:
            a = self.arrays()[name]
            out[name] = flat[pos:pos + a.size].reshape(a.shape).copy()
            pos += a.size
        return self.with_arrays(out)


def cell_index(coords: np.ndarray, grid_size: int, region_size: float) -> np.ndarray:
    """Coordinate -> 0-based cell index; coordinate 0 lands in the first
    cell, coordinate L in the last."""
    c = np.ceil(np.asarray(coords, dtype=float) * grid_size / region_size)
    return (np.clip(c, 1, grid_size) - 1).astype(np.intp)


def rasterize(layout: DeviceLayout, policy_weights, grid_cfg: GridConfig) -> GliGrids:
    """Weighted one-hot occupancy grids; coincident devices add up."""
    m = grid_cfg.grid_size
    w = np.asarray(policy_weights, dtype=float)
    txc = cell_index(layout.tx, m, layout.region_size)
    rxc = cell_index(layout.rx, m, layout.region_size)
    g_tx = np.zeros((m, m))
    g_rx = np.zeros((m, m))
    np.add.at(g_tx, (txc[:, 0], txc[:, 1]), w)
    np.add.at(g_rx, (rxc[:, 0], rxc[:, 1]), w)
    return GliGrids(g_tx=g_tx, g_rx=g_rx, tx_cells=txc, rx_cells=rxc)


def _conv_same(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    return correlate2d(x, f, mode="same", boundary="fill", fillvalue=0.0)


def _conv_input_grad(dout: np.ndarray, f: np.ndarray) -> np.ndarray:
    return convolve2d(dout, f, mode="same", boundary="fill", fillvalue=0.0)


def _conv_filter_grad(x: np.ndarray, dout: np.ndarray, ksize: int) -> np.ndarray:
    pad = (ksize - 1) // 2
    return correlate2d(np.pad(x, pad), dout, mode="valid")


def _weight_feature(lam: float, grid_cfg: GridConfig) -> float:
    if grid_cfg.loss_weight_feature:
        return float(lam)
    return float(np.clip(1.0 + np.log10(max(lam, 1e-300)) / 5.0, 0.0, 1.0))


def _forward_cached(layout: DeviceLayout, xi: float, lam: float, params: NetParams,
                    grid_cfg: GridConfig, p_prev: np.ndarray) -> dict:
    grids = rasterize(layout, p_prev, grid_cfg)
    c1t = _conv_same(grids.g_tx, params.f1)
    c2t = _conv_same(c1t, params.f2)
    c3t = _conv_same(c2t, params.f3)
    c1r = _conv_same(grids.g_rx, params.f1)
    c2r = _conv_same(c1r, params.f2)
    c3r = _conv_same(c2r, params.f3)
    rx_i, rx_j = grids.rx_cells[:, 0], grids.rx_cells[:, 1]
    tx_i, tx_j = grids.tx_cells[:, 0], grids.tx_cells[:, 1]
    n = layout.n_links
    feats = np.empty((n, N_FEATURES))
    feats[:, 0] = c1t[rx_i, rx_j]
    feats[:, 1] = c2t[rx_i, rx_j]
    feats[:, 2] = c3t[rx_i, rx_j]
    feats[:, 3] = c1r[tx_i, tx_j]
    feats[:, 4] = c2r[tx_i, tx_j]
    feats[:, 5] = c3r[tx_i, tx_j]
    feats[:, 6] = p_prev
    feats[:, 7] = layout.link_distance / layout.d_max
    feats[:, 8] = xi
    feats[:, 9] = _weight_feature(lam, grid_cfg)
    z1 = feats @ params.w1.T + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2.T + params.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ params.w3 + params.b3[0]
    p_hat = 1.0 / (1.0 + np.exp(-z3))
    return {"grids": grids, "c1t": c1t, "c2t": c2t, "c3t": c3t,
            "c1r": c1r, "c2r": c2r, "c3r": c3r, "feats": feats,
            "z1": z1, "a1": a1, "z2": z2, "a2": a2, "p_hat": p_hat}


def forward(layout: DeviceLayout, xi: float, lam: float, params: NetParams,
            grid_cfg: GridConfig, policy_in) -> np.ndarray:
    """One pass of the network; returns raw sigmoid outputs in (0, 1)."""
    p_prev = np.asarray(policy_in, dtype=float)
    if p_prev.shape != (layout.n_links,):
        raise ConfigError("policy_in must have one entry per link")
    return _forward_cached(layout, xi, lam, params, grid_cfg, p_prev)["p_hat"]


def infer(layout: DeviceLayout, xi: float, lam: float, params: NetParams,
          grid_cfg: GridConfig) -> tuple[Policy, float]:
    """Feedback-loop inference from the all-ones start; returns the
    clamped policy and the sup-norm change of the last round."""
    p = np.ones(layout.n_links)
    change = 0.0
    for _ in range(grid_cfg.feedback_rounds):
        p_new = forward(layout, xi, lam, params, grid_cfg, p)
        change = float(np.max(np.abs(p_new - p)))
        p = p_new
    return Policy.clipped(p), change


def _backward(cache: dict, d_p_hat: np.ndarray, params: NetParams,
              grid_cfg: GridConfig) -> dict[str, np.ndarray]:
    """Parameter gradients for one sample given dLoss/d(p_hat)."""
    p_hat = cache["p_hat"]
    dz3 = d_p_hat * p_hat * (1.0 - p_hat)
    a2, a1, feats = cache["a2"], cache["a1"], cache["feats"]
    gw3 = a2.T @ dz3
    gb3 = np.array([dz3.sum()])
    da2 = np.outer(dz3, params.w3)
    dz2 = da2 * (cache["z2"] > 0.0)
    gw2 = dz2.T @ a1
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ params.w2
    dz1 = da1 * (cache["z1"] > 0.0)
    gw1 = dz1.T @ feats
    gb1 = dz1.sum(axis=0)
    d_feats = dz1 @ params.w1

    grids = cache["grids"]
    m = grid_cfg.grid_size
    gf1 = np.zeros_like(params.f1)
    gf2 = np.zeros_like(params.f2)
    gf3 = np.zeros_like(params.f3)
    paths = (
        (grids.g_tx, cache["c1t"], cache["c2t"], grids.rx_cells, (0, 1, 2)),
        (grids.g_rx, cache["c1r"], cache["c2r"], grids.tx_cells, (3, 4, 5)),
    )
    for g_in, c1, c2, cells, cols in paths:
        taps = []
        for col in cols:
            d = np.zeros((m, m))
            np.add.at(d, (cells[:, 0], cells[:, 1]), d_feats[:, col])
            taps.append(d)
        d3 = taps[2]
        gf3 += _conv_filter_grad(c2, d3, grid_cfg.filter_sizes[2])
        d2 = taps[1] + _conv_input_grad(d3, params.f3)
        gf2 += _conv_filter_grad(c1, d2, grid_cfg.filter_sizes[1])
        d1 = taps[0] + _conv_input_grad(d2, params.f2)
        gf1 += _conv_filter_grad(g_in, d1, grid_cfg.filter_sizes[0])
    return {"f1": gf1, "f2": gf2, "f3": gf3, "w1": gw1, "b1": gb1,
            "w2": gw2, "b2": gb2, "w3": gw3, "b3": gb3}


@dataclass(frozen=True)
class TrainSample:
    layout: DeviceLayout
    xi: float
    lam: float


def sample_stream(seed: int, n_links: int, region_size: float = 500.0,
                  d_min: float = 2.0, d_max: float = 65.0):
    """Endless training samples: fresh layout per draw, arrival rate
    uniform on (0, 1], trade-off weight log-uniform on [1e-5, 1]."""
    lay_rng = substream(seed, "train-layout")
    mix_rng = substream(seed, "train-mix")
    while True:
        sub_seed = int(lay_rng.integers(0, 2 ** 63))
        layout = generate_layout(sub_seed, n_links, region_size, d_min, d_max)
        xi = 1.0 - mix_rng.random()
        u = 1.0 - mix_rng.random()
        yield TrainSample(layout=layout, xi=float(xi),
                          lam=float(10.0 ** (-5.0 * (1.0 - u))))


def loss_and_grad(batch: list[TrainSample], params: NetParams, grid_cfg: GridConfig,
                  channel_cfg: ChannelConfig | None = None,
                  fp_tol: float = 1e-9) -> tuple[float, dict[str, np.ndarray]]:
    """Mean scalarized objective over the batch and its parameter
    gradient.

    Per sample: run the feedback rounds, evaluate the objective at the
    final (clamped) policy, take dObjective/d(policy) from the implicit
    gradient, and backpropagate through the final round only.  Samples
    whose fixed point or sensitivity solve fails are skipped with a
    warning; the batch fails only if every sample does.
    """
    if not batch:
        raise ConfigError("batch must be non-empty")
    channel_cfg = channel_cfg if channel_cfg is not None else ChannelConfig()
    total = {name: np.zeros_like(a) for name, a in params.arrays().items()}
    loss_sum = 0.0
    n_ok = 0
    for sample in batch:
        try:
            channel = derive_channel(sample.layout, channel_cfg)
            p_prev = np.ones(sample.layout.n_links)
            for _ in range(grid_cfg.feedback_rounds - 1):
                p_prev = forward(sample.layout, sample.xi, sample.lam, params,
                                 grid_cfg, p_prev)
            cache = _forward_cached(sample.layout, sample.xi, sample.lam, params,
                                    grid_cfg, p_prev)
            p_hat = cache["p_hat"]
            policy = Policy.clipped(p_hat)
            state = evaluate(channel, policy, sample.xi, sample.lam, tol=fp_tol)
            d_policy = grad_objective(channel, policy, state.mu, sample.xi, sample.lam)
            d_policy = np.where(p_hat < EPS_P, 0.0, d_policy)  # clamped outputs
            grads = _backward(cache, d_policy, params, grid_cfg)
        except SchedulerError as exc:
            log.warning("skipping sample (seed %s): %s", sample.layout.seed, exc)
            continue
        loss_sum += state.objective
        for name in total:
            total[name] += grads[name]
        n_ok += 1
    if n_ok == 0:
        raise NumericsError("every sample in the batch failed")
    mean_grads = {name: a / n_ok for name, a in total.items()}
    return loss_sum / n_ok, mean_grads


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    batch_size: int = 32
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")

    def to_dict(self) -> dict:
        return {"steps": self.steps, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2,
                "adam_eps": self.adam_eps, "seed": self.seed,
                "checkpoint_every": self.checkpoint_every}


class _Adam:
    def __init__(self, params: NetParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        self.v = {k: np.zeros_like(a) for k, a in params.arrays().items()}
        self.t = 0

    def step(self, params: NetParams, grads: dict[str, np.ndarray]) -> NetParams:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.adam_beta1 ** self.t
        bc2 = 1.0 - c.adam_beta2 ** self.t
        new = {}
        for k, a in params.arrays().items():
            g = grads[k]
            self.m[k] = c.adam_beta1 * self.m[k] + (1.0 - c.adam_beta1) * g
            self.v[k] = c.adam_beta2 * self.v[k] + (1.0 - c.adam_beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            new[k] = a - c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)
        return params.with_arrays(new)


@dataclass(frozen=True)
class TrainResult:
    params: NetParams
    loss_trace: np.ndarray
    steps: int


def train(stream, params_init: NetParams, train_cfg: TrainConfig,
          grid_cfg: GridConfig, channel_cfg: ChannelConfig | None = None,
          checkpoint_dir=None) -> TrainResult:
    """Adam on the implicit objective; deterministic given the stream and
    config seeds.  Non-finite losses or gradients abort immediately."""
    params = params_init
    opt = _Adam(params, train_cfg)
    losses = np.empty(train_cfg.steps)
    for step in range(1, train_cfg.steps + 1):
        batch = [next(stream) for _ in range(train_cfg.batch_size)]
        loss, grads = loss_and_grad(batch, params, grid_cfg, channel_cfg)
        if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericsError(f"non-finite loss/gradient at step {step} "
                                f"(loss={loss!r})")
        params = opt.step(params, grads)
        losses[step - 1] = loss
        if step % 200 == 0 or step == train_cfg.steps:
            log.info("step %d/%d loss %.4f", step, train_cfg.steps, loss)
        if checkpoint_dir is not None and step % train_cfg.checkpoint_every == 0:
            save_checkpoint(f"{checkpoint_dir}/checkpoint_{step:06d}.json",
                            params, grid_cfg, step, train_cfg)
    return TrainResult(params=params, loss_trace=losses, steps=train_cfg.steps)


# ---------------------------------------------------------------------------
# checkpoints: a single JSON container with flat arrays + explicit shapes


def save_checkpoint(path, params: NetParams, grid_cfg: GridConfig, step: int,
                    train_cfg: TrainConfig | None = None) -> None:
    obj = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "params_version": params.version,
        "step": int(step),
        "grid_cfg": grid_cfg.to_dict(),
        "train_cfg": train_cfg.to_dict() if train_cfg is not None else None,
        "params": {name: {"shape": list(a.shape), "data": a.ravel().tolist()}
                   for name, a in params.arrays().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path) -> tuple[NetParams, GridConfig, int]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version "
                          f"{obj.get('format_version')!r}")
    grid_cfg = GridConfig.from_dict(obj["grid_cfg"])
    raw = obj["params"]
    arrays = {}
    for name in _PARAM_NAMES:
        if name not in raw:
            raise ConfigError(f"checkpoint missing parameter {name!r}")
        entry = raw[name]
        arrays[name] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
    params = NetParams(version=str(obj.get("params_version", PARAMS_VERSION)), **arrays)
    return params, grid_cfg, int(obj["step"])
