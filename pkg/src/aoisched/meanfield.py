"""Steady-state analysis of the coupled transmit queues.

Treating buffer occupancies as independent across links, each sitting at
its steady-state non-empty probability, decouples the queue interaction.
The resulting pair (success probability mu, non-empty probability nu) is
the fixed point of a monotone alternating iteration; once it is known,
per-link age and throughput have closed forms, and their product is
exactly 1 for every link.

With packets arriving every slot (xi = 1) the buffers are always full,
nu = 1, and mu has an explicit product form: no decoupling assumption is
needed and the iteration terminates after reproducing that product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, InfiniteAoIError
from .layout import ChannelParams

# Lower bound enforced on activation probabilities.  The open constraint
# p > 0 admits no minimum; the floor keeps every average age finite and is
# far below any probability an optimizer ever prefers.
EPS_P = 1e-6

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class Policy:
    """Stationary randomized policy: link i activates with probability p[i]."""

    p: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.p, dtype=float))
        if p.ndim != 1 or p.size < 1:
            raise ConfigError("policy must be a non-empty 1-D probability vector")
        if np.any(p < EPS_P) or np.any(p > 1.0):
            raise ConfigError(f"activation probabilities must lie in [{EPS_P}, 1]")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def n_links(self) -> int:
        return self.p.size

    @classmethod
    def uniform(cls, n_links: int, value: float) -> "Policy":
        return cls(np.full(n_links, float(value)))

    @classmethod
    def ones(cls, n_links: int) -> "Policy":
        return cls(np.ones(n_links))

    @classmethod
    def clipped(cls, p) -> "Policy":
        """Policy from an arbitrary vector, clamped into [EPS_P, 1]."""
        return cls(np.clip(np.asarray(p, dtype=float), EPS_P, 1.0))


@dataclass(frozen=True)
class FixedPoint:
    mu: np.ndarray
    nu: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class MeanFieldState:
    """Converged steady state plus the derived metrics."""

    mu: np.ndarray
    nu: np.ndarray
    delta_link: np.ndarray
    thr_link: np.ndarray
    delta_avg: float
    thr_avg: float
    objective: float
    lam: float
    xi: float
    iterations: int
    residual: float


def conditional_success(channel: ChannelParams, active, nonempty) -> np.ndarray:
    """Per-link decode probability over the fading, conditioned on the
    activation and buffer pattern.  A value is returned for every link;
    whether link i actually transmits is the caller's concern."""
    n = channel.n_links
    a = np.asarray(active, dtype=float)
    m = np.asarray(nonempty, dtype=float)
    if a.shape != (n,) or m.shape != (n,):
        raise ConfigError("active/nonempty must be length-N vectors")
    t = a * m
    # factor of interferer j on receiver i: 1 + t_j / D[j, i]; diagonal 1
    denom = np.prod(1.0 + t[:, None] * channel.inv_d, axis=0)
    return channel.rho / denom


def fixed_point(channel: ChannelParams, policy: Policy, xi: float,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> FixedPoint:
    """Alternate the steady-state updates for mu and nu from mu = 0 until
    the sup-norm change of mu drops below `tol`.

    Starting at mu = 0 makes the first nu equal 1, after which the mu
    iterates increase monotonically toward the fixed point (each nu
    update can only shrink the interference weights).
    """
    if not 0.0 < xi <= 1.0:
        raise ConfigError("xi must lie in (0, 1]")
    if tol <= 0.0:
        raise ConfigError("tol must be positive")
    p = policy.p
    if p.size != channel.n_links:
        raise ConfigError("policy size does not match channel")
    B = channel.B
    mu = np.zeros_like(p)
    nu = np.ones_like(p)
    residual = np.inf
    for it in range(1, max_iter + 1):
        mu_new = channel.rho * np.prod(1.0 - (p * nu)[:, None] * B, axis=0)
        residual = float(np.max(np.abs(mu_new - mu)))
        assert np.all(mu_new >= mu - 1e-12), "mu iterates must be non-decreasing"
        mu = mu_new
        nu = xi / (xi + (1.0 - xi) * p * mu)
        if residual < tol:
            return FixedPoint(mu=mu, nu=nu, iterations=it, residual=residual)
    raise ConvergenceError(
        f"fixed point not converged after {max_iter} iterations "
        f"(residual {residual:.3e})", residual=residual, iterations=max_iter)


def explicit_mu_full_buffers(channel: ChannelParams, policy: Policy) -> np.ndarray:
    """Closed-form mu for xi = 1 (buffers never empty)."""
    return channel.rho * np.prod(1.0 - policy.p[:, None] * channel.B, axis=0)


def link_metrics(mu: np.ndarray, policy: Policy, xi: float):
    """Per-link average age (slots) and throughput (packets/slot).

    delta_i = 1/xi + 1/(p_i mu_i) - 1 and thr_i = xi p_i mu_i /
    (xi + (1-xi) p_i mu_i); their product is identically 1.
    """
    x = policy.p * np.asarray(mu, dtype=float)
    if np.any(x <= 0.0):
        raise InfiniteAoIError("p_i * mu_i = 0 makes the average age infinite")
    delta = 1.0 / xi + 1.0 / x - 1.0
    thr = xi * x / (xi + (1.0 - xi) * x)
    return delta, thr


def network_metrics(delta_link: np.ndarray, thr_link: np.ndarray):
    """Arithmetic means over links (numpy's pairwise summation keeps the
    reduction accurate for large N)."""
    return float(np.mean(delta_link)), float(np.mean(thr_link))


def objective(lam: float, delta_avg: float, thr_avg: float) -> float:
    """Scalarized trade-off lam * delta_avg + (1 - lam) / thr_avg."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lam must lie in [0, 1]")
    if lam == 1.0:
        return float(lam * delta_avg)
    if thr_avg <= 0.0:
        return float("inf")
    return float(lam * delta_avg + (1.0 - lam) / thr_avg)


def evaluate(channel: ChannelParams, policy: Policy, xi: float, lam: float = 1.0,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> MeanFieldState:
    """Fixed point plus all derived metrics for one policy."""
    fp = fixed_point(channel, policy, xi, tol=tol, max_iter=max_iter)
    delta, thr = link_metrics(fp.mu, policy, xi)
    delta_avg, thr_avg = network_metrics(delta, thr)
    obj = objective(lam, delta_avg, thr_avg)
    if __debug__ and xi == 1.0:
        # full-buffer case: the generic value must agree with the explicit
        # product form of the objective
        x = policy.p * explicit_mu_full_buffers(channel, policy)
        explicit = lam * float(np.mean(1.0 / x))
        if lam < 1.0:
            explicit += (1.0 - lam) / float(np.mean(x))
        assert abs(obj - explicit) <= 1e-9 * max(1.0, abs(explicit))
    return MeanFieldState(mu=fp.mu, nu=fp.nu, delta_link=delta, thr_link=thr,
                          delta_avg=delta_avg, thr_avg=thr_avg, objective=obj,
                          lam=float(lam), xi=float(xi),
                          iterations=fp.iterations, residual=fp.residual)


def state_to_report(state: MeanFieldState, policy: Policy, layout_ref: str | None = None) -> dict:
    """JSON-ready evaluation report."""
    return {
        "layout_ref": layout_ref,
        "xi": state.xi,
        "lambda": state.lam,
        "p": policy.p.tolist(),
        "mu": state.mu.tolist(),
        "nu": state.nu.tolist(),
        "delta_link": state.delta_link.tolist(),
        "thr_link": state.thr_link.tolist(),
        "delta_avg": state.delta_avg,
        "thr_avg": state.thr_avg,
        "objective": state.objective,
        "iterations": state.iterations,
        "residual": state.residual,
    }
