"""Analytic gradient of the scalarized objective through the fixed point.

The steady-state success probabilities are only implicitly defined, so
d(mu)/d(p) is obtained by differentiating the logarithm of the
self-consistency equation

    ln mu_i = ln rho_i + sum_{j != i} ln(1 - p_j B[j, i] / (1 + q p_j mu_j))

with q = (1 - xi) / xi, collecting the unknown partials into the linear
system P M = Q, and solving it with a dense LU factorization.  M[j, i] is
d(mu_j)/d(p_i).  For q = 0 (packets every slot) P is diagonal and M has
the closed form -mu_j B[i, j] / (1 - B[i, j] p_i) off the diagonal.

The chain rule to the objective uses the exact derivatives of the
closed-form per-link metrics:

    d(delta_j)/d(p_j mu_j) = -1 / (p_j mu_j)^2
    d(thr_j)/d(p_j mu_j)   = xi^2 / (xi + (1 - xi) p_j mu_j)^2

A central finite-difference check over the whole pipeline is the
arbiter for every sign and index convention here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, ConvergenceError, SolverError
from .layout import ChannelParams
from .meanfield import (DEFAULT_MAX_ITER, EPS_P, Policy, explicit_mu_full_buffers,
                        fixed_point, link_metrics, network_metrics, objective)

RESIDUAL_RTOL = 1e-8          # on ||P M - Q||_inf relative to ||Q||_inf
CONSISTENCY_TOL = 1e-6        # mu must satisfy its own steady-state equation


@dataclass(frozen=True)
class GradientWorkspace:
    P: np.ndarray
    Q: np.ndarray
    M: np.ndarray              # M[j, i] = d(mu_j)/d(p_i)
    q: float
    grad_delta: np.ndarray
    grad_thr: np.ndarray
    grad_obj: np.ndarray


def assemble_pq(channel: ChannelParams, policy: Policy, mu: np.ndarray, xi: float,
                consistency_tol: float = CONSISTENCY_TOL):
    """Build the linear system P M = Q at a converged fixed point."""
    if not 0.0 < xi <= 1.0:
        raise ConfigError("xi must lie in (0, 1]")
    p = policy.p
    mu = np.asarray(mu, dtype=float)
    q = (1.0 - xi) / xi
    u = p * mu
    # reject a mu that does not solve the steady-state equations
    nu = xi / (xi + (1.0 - xi) * u)
    mu_back = channel.rho * np.prod(1.0 - (p * nu)[:, None] * channel.B, axis=0)
    drift = float(np.max(np.abs(mu_back - mu)))
    if drift > consistency_tol:
        raise ConvergenceError(
            f"mu is not a fixed point (self-consistency residual {drift:.3e})",
            residual=drift)
    # column i of both matrices depends on link i's own quantities; the
    # interference weight couples transmitter i to receiver j, i.e. B[i, j]
    bt = channel.B.T                       # bt[j, i] = B[i, j]
    c = 1.0 + q * u
    denom = c[None, :] * (c[None, :] - bt * p[None, :])
    Q = bt / denom
    P = q * (p ** 2)[None, :] * Q
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(P, -1.0 / mu)
    return P, Q


def solve_dmu_dp(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Dense solve of P M = Q with a residual guard."""
    try:
        M = scipy.linalg.solve(P, Q)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"singular sensitivity system: {exc}",
                          cond=float(np.linalg.cond(P))) from exc
    q_norm = float(np.max(np.abs(Q)))
    resid = float(np.max(np.abs(P @ M - Q)))
    if resid > RESIDUAL_RTOL * max(q_norm, np.finfo(float).tiny):
        raise SolverError(
            f"sensitivity solve residual {resid:.3e} exceeds "
            f"{RESIDUAL_RTOL:.0e} * ||Q||", cond=float(np.linalg.cond(P)))
    return M


def grad_objective(channel: ChannelParams, policy: Policy, mu: np.ndarray,
                   xi: float, lam: float, return_workspace: bool = False):
    """All N partial derivatives of the scalarized objective.

    Uses d(p_j mu_j)/d(p_i) = p_j M[j, i] + mu_j [i == j] and the exact
    metric derivatives quoted in the module docstring.
    """
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lam must lie in [0, 1]")
    p = policy.p
    mu = np.asarray(mu, dtype=float)
    n = p.size
    P, Q = assemble_pq(channel, policy, mu, xi)
    M = solve_dmu_dp(P, Q)
    u = p * mu
    dx = M * p[:, None]
    dx[np.arange(n), np.arange(n)] += mu   # dx[j, i] = d(p_j mu_j)/d(p_i)
    grad_delta = -(1.0 / u ** 2) @ dx / n
    w_thr = xi ** 2 / (xi + (1.0 - xi) * u) ** 2
    grad_thr = (w_thr @ dx) / n
    thr_avg = float(np.mean(xi * u / (xi + (1.0 - xi) * u)))
    grad = lam * grad_delta
    if lam < 1.0:
        grad = grad - (1.0 - lam) / thr_avg ** 2 * grad_thr
    if return_workspace:
        return grad, GradientWorkspace(P=P, Q=Q, M=M, q=(1.0 - xi) / xi,
                                       grad_delta=grad_delta, grad_thr=grad_thr,
                                       grad_obj=grad)
    return grad


def _objective_of_policy(channel, p, xi, lam, fp_tol):
    pol = Policy(p)
    fp = fixed_point(channel, pol, xi, tol=fp_tol, max_iter=DEFAULT_MAX_ITER)
    delta, thr = link_metrics(fp.mu, pol, xi)
    d_avg, t_avg = network_metrics(delta, thr)
    return objective(lam, d_avg, t_avg)


def finite_difference_check(channel: ChannelParams, policy: Policy, xi: float,
                            lam: float, step: float = 1e-6,
                            fp_tol: float = 1e-12) -> dict:
    """Central differences of the full pipeline p -> fixed point ->
    objective against the analytic gradient.

    The reported error is scale-normalized: max_i |analytic_i - fd_i|
    divided by the largest finite-difference component, which avoids
    blowing up at individual near-zero partials.
    """
    if step <= 0.0:
        raise ConfigError("step must be positive")
    fp = fixed_point(channel, policy, xi, tol=fp_tol)
    analytic = grad_objective(channel, policy, fp.mu, xi, lam)
    p = policy.p
    fd = np.empty_like(p)
    for i in range(p.size):
        hi = min(p[i] + step, 1.0)
        lo = max(p[i] - step, EPS_P)
        ph = p.copy(); ph[i] = hi
        pl = p.copy(); pl[i] = lo
        fd[i] = (_objective_of_policy(channel, ph, xi, lam, fp_tol)
                 - _objective_of_policy(channel, pl, xi, lam, fp_tol)) / (hi - lo)
    scale = max(float(np.max(np.abs(fd))), np.finfo(float).tiny)
    err = np.abs(analytic - fd) / scale
    worst = int(np.argmax(err))
    return {
        "n": int(p.size),
        "xi": float(xi),
        "lambda": float(lam),
        "fd_step": float(step),
        "max_rel_err": float(err[worst]),
        "argmax_index": worst,
        "grad_analytic": analytic.tolist(),
        "grad_fd": fd.tolist(),
    }


def explicit_grad_full_buffers(channel: ChannelParams, policy: Policy, lam: float) -> np.ndarray:
    """Independent xi = 1 gradient straight from the product form of mu;
    used to cross-check the linear-system route."""
    p = policy.p
    n = p.size
    mu = explicit_mu_full_buffers(channel, policy)
    x = p * mu
    # dmu[j, i] = d(mu_j)/d(p_i): zero on the diagonal
    factor = 1.0 - channel.B.T * p[None, :]
    dmu = -mu[:, None] * channel.B.T / factor
    np.fill_diagonal(dmu, 0.0)
    dx = dmu * p[:, None]
    dx[np.arange(n), np.arange(n)] += mu
    grad_delta = -(1.0 / x ** 2) @ dx / n
    grad = lam * grad_delta
    if lam < 1.0:
        grad = grad - (1.0 - lam) / float(np.mean(x)) ** 2 * (np.ones(n) @ dx) / n
    return grad
