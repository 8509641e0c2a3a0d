"""Policy optimizers and the trade-off sweep.

Three ways to produce a stationary policy: cyclic per-link minimization
against the explicit full-buffer objective (the strongest baseline, only
valid when packets arrive every slot), projected gradient descent on the
implicit objective (any arrival rate), and the best common activation
probability (slotted-ALOHA style).  A sweep over the trade-off weight
traces the age/throughput frontier, warm-starting each weight from the
previous solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnsupportedCaseError
from .gradient import grad_objective
from .layout import ChannelParams
from .meanfield import (EPS_P, MeanFieldState, Policy, evaluate,
                        explicit_mu_full_buffers)

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_TOL = 1e-8


@dataclass(frozen=True)
class OptResult:
    policy: Policy
    objective_trace: np.ndarray
    delta_avg: float
    thr_avg: float
    objective: float
    method: str
    iterations: int
    lam: float
    xi: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "lambda": self.lam,
            "xi": self.xi,
            "iterations": self.iterations,
            "objective": self.objective,
            "delta_avg": self.delta_avg,
            "thr_avg": self.thr_avg,
            "p": self.policy.p.tolist(),
            "objective_trace": np.asarray(self.objective_trace).tolist(),
        }
        out.update({k: (v.tolist() if isinstance(v, np.ndarray) else v)
                    for k, v in self.extras.items()})
        return out


def golden_section(f, a: float, b: float, tol: float = GOLDEN_TOL):
    """Derivative-free 1-D minimization on [a, b].

    Tracks the best point over every evaluation, including both
    endpoints, so boundary minima are returned exactly."""
    evals = [(f(a), a), (f(b), b)]
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals += [(fc, c), (fd, d)]
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
            evals.append((fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
            evals.append((fd, d))
    best = min(evals, key=lambda t: t[0])
    return best[1], best[0]


def _objective_full_buffers(channel: ChannelParams, p: np.ndarray, lam: float) -> float:
    x = p * explicit_mu_full_buffers(channel, Policy(p))
    obj = lam * float(np.mean(1.0 / x))
    if lam < 1.0:
        obj += (1.0 - lam) / float(np.mean(x))
    return obj


def block_coordinate_min(channel: ChannelParams, lam: float, n_iters: int = 20,
                         xi: float = 1.0, init: Policy | None = None,
                         p_tol: float = GOLDEN_TOL) -> OptResult:
    """Cyclic per-link minimization of the explicit full-buffer objective.

    Each univariate subproblem is solved by golden section on
    [EPS_P, 1]; a move is accepted only if the recomputed full objective
    does not increase, so the trace is non-increasing by construction.
    """
    if xi != 1.0:
        raise UnsupportedCaseError("per-link cyclic minimization requires xi = 1")
    if n_iters < 1:
        raise ConfigError("n_iters must be >= 1")
    n = channel.n_links
    p = np.ones(n) if init is None else init.p.copy()
    rho = channel.rho
    B = channel.B
    cur = _objective_full_buffers(channel, p, lam)
    trace = [cur]
    for _ in range(n_iters):
        for k in range(n):
            # mu with link k's interference factored out: mu_i(pk) =
            # base_i * (1 - pk * B[k, i]); B[k, k] = 0 keeps link k exact
            factors = 1.0 - p[:, None] * B
            factors[k, :] = 1.0
            base = rho * np.prod(factors, axis=0)
            bk = B[k, :]
            others = np.delete(np.arange(n), k)

            def phi(pk):
                mu = base * (1.0 - pk * bk)
                x = p * mu
                x[k] = pk * mu[k]
                obj = lam * float(np.mean(1.0 / x))
                if lam < 1.0:
                    obj += (1.0 - lam) / float(np.mean(x))
                return obj

            pk_new, _ = golden_section(phi, EPS_P, 1.0, tol=p_tol)
            cand = p.copy()
            cand[k] = pk_new
            obj_new = _objective_full_buffers(channel, cand, lam)
            if obj_new <= cur:
                p = cand
                cur = obj_new
        trace.append(cur)
    pol = Policy(p)
    state = evaluate(channel, pol, 1.0, lam)
    return OptResult(policy=pol, objective_trace=np.asarray(trace),
                     delta_avg=state.delta_avg, thr_avg=state.thr_avg,
                     objective=state.objective, method="itermin",
                     iterations=n_iters, lam=float(lam), xi=1.0)


def projected_gradient(channel: ChannelParams, lam: float, xi: float,
                       steps: int = 500, lr0: float = 0.1,
                       init: Policy | None = None,
                       max_halvings: int = 30) -> OptResult:
    """Projected gradient descent on the implicit objective.

    p <- clip(p - eta * grad, EPS_P, 1) with eta halved until the
    objective stops increasing.  Each step's search warm-starts from
    double the previously accepted eta (capped at lr0), so the step size
    tracks the local gradient scale instead of re-paying the halvings on
    badly scaled instances; the run terminates early once no halving
    helps.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    n = channel.n_links
    p = np.ones(n) if init is None else init.p.copy()

    def eval_p(vec):
        return evaluate(channel, Policy(vec), xi, lam)

    state = eval_p(p)
    cur = state.objective
    trace = [cur]
    done = 0
    eta_start = lr0
    for _ in range(steps):
        grad = grad_objective(channel, Policy(p), state.mu, xi, lam)
        eta = eta_start
        improved = False
        for _ in range(max_halvings + 1):
            cand = np.clip(p - eta * grad, EPS_P, 1.0)
            if np.array_equal(cand, p):
                break
            cand_state = eval_p(cand)
            if cand_state.objective <= cur:
                p, state, cur = cand, cand_state, cand_state.objective
                eta_start = min(lr0, 2.0 * eta)
                improved = True
                break
            eta *= 0.5
        done += 1
        trace.append(cur)
        if not improved:
            break
    pol = Policy(p)
    return OptResult(policy=pol, objective_trace=np.asarray(trace),
                     delta_avg=state.delta_avg, thr_avg=state.thr_avg,
                     objective=cur, method="pgd", iterations=done,
                     lam=float(lam), xi=float(xi))


def optimal_aloha(channel: ChannelParams, lam: float, xi: float,
                  n_brackets: int = 10, scan_points: int = 201) -> OptResult:
    """Best common activation probability.

    The scalar objective can be multimodal, so golden section runs on a
    uniform partition of [EPS_P, 1] into `n_brackets` sub-intervals and
    the overall best point wins.  A uniform scan is returned for audit.
    """
    n = channel.n_links
    cache: dict[float, float] = {}

    def f(ps: float) -> float:
        if ps not in cache:
            cache[ps] = evaluate(channel, Policy.uniform(n, ps), xi, lam).objective
        return cache[ps]

    edges = np.linspace(EPS_P, 1.0, n_brackets + 1)
    best_p, best_obj = None, np.inf
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, fx = golden_section(f, float(lo), float(hi))
        if fx < best_obj:
            best_p, best_obj = x, fx
    scan_p = np.linspace(EPS_P, 1.0, scan_points)
    scan_obj = np.array([f(float(v)) for v in scan_p])
    pol = Policy.uniform(n, best_p)
    state = evaluate(channel, pol, xi, lam)
    return OptResult(policy=pol, objective_trace=np.asarray([state.objective]),
                     delta_avg=state.delta_avg, thr_avg=state.thr_avg,
                     objective=state.objective, method="aloha", iterations=1,
                     lam=float(lam), xi=float(xi),
                     extras={"scan_p": scan_p, "scan_objective": scan_obj})


METHODS = ("itermin", "pgd", "aloha")


def lambda_grid_uniform(n_points: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_points)


def lambda_grid_log5(n_points: int) -> np.ndarray:
    """Log-spaced weights 10^(-5 (1 - u)) for u uniform on [0, 1]; spans
    [1e-5, 1] and concentrates resolution where the age term is cheap."""
    u = np.linspace(0.0, 1.0, n_points)
    return 10.0 ** (-5.0 * (1.0 - u))


@dataclass(frozen=True)
class ParetoPoint:
    lam: float
    delta_avg: float
    thr_avg: float
    objective: float
    policy: Policy
    iterations: int
    method: str


def pareto_sweep(channel: ChannelParams, xi: float, lambda_grid, method: str = "itermin",
                 warm_start: bool = True, **kwargs) -> list[ParetoPoint]:
    """Run the chosen optimizer across the weight grid; each run is
    warm-started from the previous weight's policy (cold start available
    for bias checks).  Points come back sorted by weight."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    grid = np.asarray(lambda_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or np.any(grid > 1):
        raise ConfigError("lambda grid must be a non-empty vector in [0, 1]")
    points = []
    prev: Policy | None = None
    for lam in grid:
        if method == "itermin":
            res = block_coordinate_min(channel, float(lam), xi=xi, init=prev, **kwargs)
        elif method == "pgd":
            res = projected_gradient(channel, float(lam), xi, init=prev, **kwargs)
        else:
            res = optimal_aloha(channel, float(lam), xi, **kwargs)
        if warm_start:
            prev = res.policy
        points.append(ParetoPoint(lam=float(lam), delta_avg=res.delta_avg,
                                  thr_avg=res.thr_avg, objective=res.objective,
                                  policy=res.policy, iterations=res.iterations,
                                  method=method))
    points.sort(key=lambda pt: pt.lam)
    return points


def non_dominated(points: list[ParetoPoint]) -> list[ParetoPoint]:
    """Filter to points not beaten in both coordinates (lower age and
    higher throughput) by any other point."""
    keep = []
    for a in points:
        dominated = any(
            (b.delta_avg <= a.delta_avg and b.thr_avg >= a.thr_avg
             and (b.delta_avg < a.delta_avg or b.thr_avg > a.thr_avg))
            for b in points)
        if not dominated:
            keep.append(a)
    return keep
