"""Brute-force ground truth at tiny scale.

Two engines: the exact stationary distribution of the joint
buffer-occupancy Markov chain (fading integrated out analytically per
transmit pattern), which certifies throughput without any decoupling
assumption, and an exhaustive grid search over the policy cube.  Both are
exponential in N and intended purely as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SolverError
from .layout import ChannelParams
from .meanfield import EPS_P, Policy

MAX_CHAIN_LINKS = 6
MAX_GRID_LINKS = 3
STATIONARY_TOL = 1e-12


@dataclass(frozen=True)
class ExactChainResult:
    stationary: np.ndarray        # (2^N,) over buffer-occupancy bitmasks
    thr_link: np.ndarray          # (N,) exact throughput
    success_by_state: np.ndarray  # (2^N, N) E[success_i | occupancy state]
    residual: float


def _bits(mask: int, n: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n)], dtype=float)


def _subsets(mask: int):
    """All submasks of `mask`, including 0 and mask itself."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def exact_buffer_chain(channel: ChannelParams, policy: Policy, xi: float) -> ExactChainResult:
    """Stationary distribution of the joint buffer chain and the exact
    per-link throughput it implies.

    The per-slot order matches the simulator: arrivals top up buffers,
    activations pick the transmit set t, and given t the link successes
    are independent with probability mu_i(t) (each receiver sees its own
    disjoint set of fading variables).
    """
    n = channel.n_links
    if n > MAX_CHAIN_LINKS:
        raise ConfigError(f"exact chain supports at most {MAX_CHAIN_LINKS} links")
    if not 0.0 < xi <= 1.0:
        raise ConfigError("xi must lie in (0, 1]")
    p = policy.p
    n_states = 1 << n
    full = n_states - 1

    # conditional success probability for every transmit pattern
    ln_fac = -np.log1p(channel.inv_d)          # (j, i): interferer j on receiver i
    mu_pat = np.empty((n_states, n))
    for t in range(n_states):
        tv = _bits(t, n)
        mu_pat[t] = channel.rho * np.exp(tv @ ln_fac)

    # success-outcome distribution per transmit pattern: list of
    # (success mask, probability) pairs
    succ_dist: list[list[tuple[int, float]]] = [[] for _ in range(n_states)]
    for t in range(n_states):
        mu_t = mu_pat[t]
        for s in _subsets(t):
            prob = 1.0
            for i in range(n):
                if not (t >> i) & 1:
                    continue
                prob *= mu_t[i] if (s >> i) & 1 else 1.0 - mu_t[i]
            succ_dist[t].append((s, prob))

    trans = np.zeros((n_states, n_states))
    success_by_state = np.zeros((n_states, n))
    for state in range(n_states):
        empty = full & ~state
        for e in _subsets(empty):
            pe = 1.0
            for i in range(n):
                if (empty >> i) & 1:
                    pe *= xi if (e >> i) & 1 else 1.0 - xi
            m = state | e
            for t in _subsets(m):
                pt = pe
                for i in range(n):
                    if (m >> i) & 1:
                        pt *= p[i] if (t >> i) & 1 else 1.0 - p[i]
                if pt == 0.0:
                    continue
                success_by_state[state] += pt * _bits(t, n) * mu_pat[t]
                for s, ps in succ_dist[t]:
                    trans[state, m & ~s] += pt * ps

    # stationary distribution: pi^T trans = pi^T, sum(pi) = 1
    a = trans.T - np.eye(n_states)
    a[-1, :] = 1.0
    rhs = np.zeros(n_states)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"stationary solve failed: {exc}") from exc
    residual = float(np.max(np.abs(pi @ trans - pi)))
    if residual > STATIONARY_TOL or np.any(pi < -STATIONARY_TOL):
        raise SolverError(f"stationary distribution residual {residual:.3e}")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    thr = pi @ success_by_state
    return ExactChainResult(stationary=pi, thr_link=thr,
                            success_by_state=success_by_state, residual=residual)


def grid_search_policy(channel: ChannelParams, lam: float, xi: float,
                       resolution: float = 1e-3) -> tuple[Policy, float]:
    """Exhaustive minimization of the scalarized objective on the policy
    grid [EPS_P, 1]^N; ties break toward the larger activation sum.
    Returns (best policy, best objective)."""
    n = channel.n_links
    if n > MAX_GRID_LINKS:
        raise ConfigError(f"grid search supports at most {MAX_GRID_LINKS} links")
    if resolution < 1e-3:
        raise ConfigError("resolution must be at least 1e-3")
    n_pts = int(round((1.0 - EPS_P) / resolution)) + 1
    axis = np.linspace(EPS_P, 1.0, n_pts)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)   # (G, N)

    best_obj = np.inf
    best_sum = -np.inf
    best_p = None
    block = max(1, int(5e6) // max(1, n * n))
    for lo in range(0, pts.shape[0], block):
        chunk = pts[lo:lo + block]
        mu = _mu_on_grid(channel, chunk, xi)
        x = chunk * mu
        delta = 1.0 / xi + 1.0 / x - 1.0
        thr = xi * x / (xi + (1.0 - xi) * x)
        d_avg = delta.mean(axis=1)
        t_avg = thr.mean(axis=1)
        obj = lam * d_avg if lam == 1.0 else lam * d_avg + (1.0 - lam) / t_avg
        i = int(np.argmin(obj))
        ties = np.flatnonzero(obj == obj[i])
        sums = chunk[ties].sum(axis=1)
        j = ties[int(np.argmax(sums))]
        if (obj[j] < best_obj
                or (obj[j] == best_obj and chunk[j].sum() > best_sum)):
            best_obj = float(obj[j])
            best_sum = float(chunk[j].sum())
            best_p = chunk[j].copy()
    return Policy(best_p), best_obj


def _mu_on_grid(channel: ChannelParams, pts: np.ndarray, xi: float,
                tol: float = 1e-9, max_iter: int = 10_000) -> np.ndarray:
    """Vectorized steady-state mu for a batch of policies (G, N)."""
    if xi == 1.0:
        factors = 1.0 - pts[:, :, None] * channel.B[None, :, :]
        return channel.rho[None, :] * np.prod(factors, axis=1)
    mu = np.zeros_like(pts)
    for _ in range(max_iter):
        nu = xi / (xi + (1.0 - xi) * pts * mu)
        factors = 1.0 - (pts * nu)[:, :, None] * channel.B[None, :, :]
        mu_new = channel.rho[None, :] * np.prod(factors, axis=1)
        resid = float(np.max(np.abs(mu_new - mu)))
        mu = mu_new
        if resid < tol:
            return mu
    raise ConfigError("grid fixed point failed to converge")
