"""Slot-level Monte Carlo of the true system, no decoupling assumptions.

Each slot runs, in order: Bernoulli packet arrivals into unit buffers that
keep only the freshest packet, Bernoulli activation draws, per-pair
exponential fading, SINR decode decisions over the links that actually
transmit, and the age bookkeeping.  Success of link i is decided by the
equivalent threshold test

    h_ii > -ln(rho_i) + sum_j h_ji * t_j / D[j, i]

which is SINR > beta rearranged so only the derived channel parameters
are needed (and it stays well-defined when the noise power is zero).

Randomness comes from three named substreams (arrivals, activations,
fading) whose consumption does not depend on the policy, so runs with the
same seed see identical randomness under different policies.  A full
fading matrix is drawn every slot -- entries of pairs that do not
transmit are simply unused, which keeps the streams aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .layout import ChannelParams
from .meanfield import Policy
from .rng import substream

NUM_BATCHES = 50  # non-overlapping batch means for standard errors


@dataclass(frozen=True)
class SimConfig:
    horizon: int                 # K slots
    warmup: int | None = None    # slots discarded; default horizon // 10
    seed: int = 0
    record_traces: bool = False

    def __post_init__(self):
        if self.horizon < 2:
            raise ConfigError("horizon must be at least 2 slots")
        w = self.resolved_warmup
        if not 0 <= w < self.horizon:
            raise ConfigError("warmup must satisfy 0 <= warmup < horizon")

    @property
    def resolved_warmup(self) -> int:
        return self.horizon // 10 if self.warmup is None else self.warmup


@dataclass(frozen=True)
class SimTrace:
    """Per-slot history of one replication (all arrays (horizon, N))."""

    g: np.ndarray       # receiver-side age at the start of the slot
    delta: np.ndarray   # freshest-packet age after the arrival step
    a: np.ndarray       # activation draw
    n: np.ndarray       # buffer non-empty after the arrival step
    b: np.ndarray       # decode success


@dataclass(frozen=True)
class SimStats:
    delta_link: np.ndarray
    thr_link: np.ndarray
    delta_link_se: np.ndarray
    thr_link_se: np.ndarray
    delta_avg: float
    thr_avg: float
    delta_avg_se: float
    thr_avg_se: float
    horizon: int
    warmup: int
    seed: int
    trace: SimTrace | None = None

    def to_dict(self) -> dict:
        return {
            "horizon_slots": self.horizon,
            "warmup_slots": self.warmup,
            "seed": self.seed,
            "delta_link": self.delta_link.tolist(),
            "thr_link": self.thr_link.tolist(),
            "delta_link_se": self.delta_link_se.tolist(),
            "thr_link_se": self.thr_link_se.tolist(),
            "delta_avg": self.delta_avg,
            "thr_avg": self.thr_avg,
            "delta_avg_se": self.delta_avg_se,
            "thr_avg_se": self.thr_avg_se,
        }


@dataclass(frozen=True)
class ReplicationSummary:
    """Across-replication means with standard errors of the mean."""

    n_reps: int
    delta_avg: float
    thr_avg: float
    delta_avg_se: float
    thr_avg_se: float
    delta_link: np.ndarray
    thr_link: np.ndarray
    delta_link_se: np.ndarray
    thr_link_se: np.ndarray

    def to_dict(self) -> dict:
        return {
            "n_reps": self.n_reps,
            "delta_avg": self.delta_avg,
            "thr_avg": self.thr_avg,
            "delta_avg_se": self.delta_avg_se,
            "thr_avg_se": self.thr_avg_se,
            "delta_link": self.delta_link.tolist(),
            "thr_link": self.thr_link.tolist(),
            "delta_link_se": self.delta_link_se.tolist(),
            "thr_link_se": self.thr_link_se.tolist(),
        }


def _batch_map(window: int) -> tuple[np.ndarray, np.ndarray]:
    """Slot-in-window -> batch id, plus batch sizes."""
    nb = min(NUM_BATCHES, window)
    ids = (np.arange(window, dtype=np.int64) * nb) // window
    return ids, np.bincount(ids, minlength=nb).astype(float)


def _stats_from_batch_sums(sum_g, sum_b, counts, horizon, warmup, seed, trace=None) -> list[SimStats]:
    """sum_g/sum_b: (nb, R, N) per-batch sums over the measurement window."""
    nb, n_reps, _ = sum_g.shape
    window = float(counts.sum())
    cnt = counts[:, None, None]
    batch_g = sum_g / cnt          # (nb, R, N) per-batch mean age
    batch_b = sum_b / cnt
    delta_link = sum_g.sum(axis=0) / window
    thr_link = sum_b.sum(axis=0) / window
    if nb >= 2:
        delta_link_se = batch_g.std(axis=0, ddof=1) / np.sqrt(nb)
        thr_link_se = batch_b.std(axis=0, ddof=1) / np.sqrt(nb)
        delta_avg_se = batch_g.mean(axis=2).std(axis=0, ddof=1) / np.sqrt(nb)
        thr_avg_se = batch_b.mean(axis=2).std(axis=0, ddof=1) / np.sqrt(nb)
    else:
        delta_link_se = np.full_like(delta_link, np.nan)
        thr_link_se = np.full_like(thr_link, np.nan)
        delta_avg_se = np.full(n_reps, np.nan)
        thr_avg_se = np.full(n_reps, np.nan)
    out = []
    for r in range(n_reps):
        out.append(SimStats(
            delta_link=delta_link[r], thr_link=thr_link[r],
            delta_link_se=delta_link_se[r], thr_link_se=thr_link_se[r],
            delta_avg=float(delta_link[r].mean()), thr_avg=float(thr_link[r].mean()),
            delta_avg_se=float(delta_avg_se[r]), thr_avg_se=float(thr_avg_se[r]),
            horizon=horizon, warmup=warmup, seed=seed,
            trace=trace if n_reps == 1 else None))
    return out


def _run(channel: ChannelParams, policy: Policy, xi: float, cfg: SimConfig,
         n_reps: int) -> list[SimStats]:
    if not 0.0 < xi <= 1.0:
        raise ConfigError("xi must lie in (0, 1]")
    n = channel.n_links
    if policy.n_links != n:
        raise ConfigError("policy size does not match channel")
    horizon, warmup = cfg.horizon, cfg.resolved_warmup
    window = horizon - warmup
    record = cfg.record_traces
    if record and n_reps != 1:
        raise ConfigError("traces can only be recorded for a single replication")

    p = policy.p
    thr0 = -np.log(channel.rho)          # noise part of the decode threshold
    inv_d = channel.inv_d
    arr_rng = substream(cfg.seed, "arrival")
    act_rng = substream(cfg.seed, "activation")
    fad_rng = substream(cfg.seed, "fading")

    shape = (n_reps, n)
    delta = np.zeros(shape, dtype=np.int64)
    g = np.ones(shape, dtype=np.int64)
    buf = np.zeros(shape, dtype=bool)

    bid, counts = _batch_map(window)
    nb = counts.size
    sum_g = np.zeros((nb, n_reps, n))
    sum_b = np.zeros((nb, n_reps, n))

    if record:
        tr_g = np.zeros((horizon, n), dtype=np.int64)
        tr_delta = np.zeros((horizon, n), dtype=np.int64)
        tr_a = np.zeros((horizon, n), dtype=np.int8)
        tr_n = np.zeros((horizon, n), dtype=np.int8)
        tr_b = np.zeros((horizon, n), dtype=np.int8)

    # chunk the pre-drawn randomness to bound memory (~4 MB of fading)
    chunk = int(np.clip(2 ** 22 // max(1, 8 * n_reps * n * n), 16, 4096))
    k = 0
    while k < horizon:
        c = min(chunk, horizon - k)
        arrivals = arr_rng.random((c, n_reps, n)) < xi
        act = act_rng.random((c, n_reps, n)) < p
        h = fad_rng.standard_exponential((c, n_reps, n, n))
        h_own = h[:, :, np.arange(n), np.arange(n)]
        h_int = h * inv_d[None, None, :, :]
        for s in range(c):
            e = arrivals[s]
            delta = np.where(e, 0, delta + 1)
            buf = buf | e
            t = act[s] & buf
            interf = np.einsum("rj,rji->ri", t.astype(float), h_int[s])
            b = t & (h_own[s] > thr0 + interf)
            if k >= warmup:
                i = bid[k - warmup]
                sum_g[i] += g
                sum_b[i] += b
            if record:
                tr_g[k] = g[0]
                tr_delta[k] = delta[0]
                tr_a[k] = act[s][0]
                tr_n[k] = buf[0]
                tr_b[k] = b[0]
            g = np.where(b, delta + 1, g + 1)
            buf = buf & ~b
            k += 1

    trace = None
    if record:
        trace = SimTrace(g=tr_g, delta=tr_delta, a=tr_a, n=tr_n, b=tr_b)
    return _stats_from_batch_sums(sum_g, sum_b, counts, horizon, warmup, cfg.seed, trace)


def simulate(channel: ChannelParams, policy: Policy, xi: float, cfg: SimConfig) -> SimStats:
    """One replication."""
    return _run(channel, policy, xi, cfg, n_reps=1)[0]


def simulate_batch(channel: ChannelParams, policy: Policy, xi: float, cfg: SimConfig,
                   n_reps: int) -> list[SimStats]:
    """`n_reps` replications advanced in lockstep (vectorized across the
    replication axis; the random draws for replication r depend on
    (seed, n_reps) jointly)."""
    if n_reps < 1:
        raise ConfigError("n_reps must be >= 1")
    return _run(channel, policy, xi, cfg, n_reps=n_reps)


def empirical_metrics(trace: SimTrace, warmup: int = 0, seed: int = 0) -> SimStats:
    """Time averages and batch-means standard errors from a recorded trace."""
    g = np.asarray(trace.g, dtype=float)
    b = np.asarray(trace.b, dtype=float)
    if g.ndim != 2 or g.shape[0] == 0:
        raise ConfigError("empty trace")
    horizon = g.shape[0]
    if not 0 <= warmup < horizon:
        raise ConfigError("warmup must satisfy 0 <= warmup < horizon")
    window = horizon - warmup
    bid, counts = _batch_map(window)
    nb = counts.size
    n = g.shape[1]
    sum_g = np.zeros((nb, 1, n))
    sum_b = np.zeros((nb, 1, n))
    np.add.at(sum_g[:, 0, :], bid, g[warmup:])
    np.add.at(sum_b[:, 0, :], bid, b[warmup:])
    return _stats_from_batch_sums(sum_g, sum_b, counts, horizon, warmup, seed, trace)[0]


def merge_stats(stats: list[SimStats]) -> ReplicationSummary:
    """Pool replications: means across runs, SEs of those means."""
    if not stats:
        raise ConfigError("no replications to merge")
    r = len(stats)
    d_avg = np.array([s.delta_avg for s in stats])
    t_avg = np.array([s.thr_avg for s in stats])
    d_link = np.stack([s.delta_link for s in stats])
    t_link = np.stack([s.thr_link for s in stats])
    if r >= 2:
        d_avg_se = float(d_avg.std(ddof=1) / np.sqrt(r))
        t_avg_se = float(t_avg.std(ddof=1) / np.sqrt(r))
        d_link_se = d_link.std(axis=0, ddof=1) / np.sqrt(r)
        t_link_se = t_link.std(axis=0, ddof=1) / np.sqrt(r)
    else:
        d_avg_se = stats[0].delta_avg_se
        t_avg_se = stats[0].thr_avg_se
        d_link_se = stats[0].delta_link_se
        t_link_se = stats[0].thr_link_se
    return ReplicationSummary(
        n_reps=r,
        delta_avg=float(d_avg.mean()), thr_avg=float(t_avg.mean()),
        delta_avg_se=d_avg_se, thr_avg_se=t_avg_se,
        delta_link=d_link.mean(axis=0), thr_link=t_link.mean(axis=0),
        delta_link_se=d_link_se, thr_link_se=t_link_se)
