import numpy as np
import pytest

from aoisched.errors import ConvergenceError
from aoisched.gradient import (assemble_pq, explicit_grad_full_buffers,
                               finite_difference_check, grad_objective,
                               solve_dmu_dp)
from aoisched.layout import ChannelParams
from aoisched.meanfield import Policy, explicit_mu_full_buffers, fixed_point
from conftest import make_channel, symmetric_channel


def test_single_link_system_is_trivial():
    ch = symmetric_channel(0.5, rho=0.8, n_links=1)
    pol = Policy.uniform(1, 0.6)
    fp = fixed_point(ch, pol, xi=0.7, tol=1e-12)
    P, Q = assemble_pq(ch, pol, fp.mu, 0.7)
    assert P.shape == (1, 1) and P[0, 0] == pytest.approx(-1.0 / fp.mu[0])
    assert Q[0, 0] == 0.0
    assert solve_dmu_dp(P, Q)[0, 0] == 0.0


def test_full_buffers_closed_form_sensitivities(rng):
    _, ch = make_channel(6, seed=4)
    pol = Policy(rng.uniform(0.2, 0.9, 6))
    mu = explicit_mu_full_buffers(ch, pol)
    P, Q = assemble_pq(ch, pol, mu, xi=1.0)
    assert np.allclose(np.diag(P), -1.0 / mu)
    assert np.count_nonzero(P - np.diag(np.diag(P))) == 0  # diagonal at q=0
    M = solve_dmu_dp(P, Q)
    expected = -mu[:, None] * ch.B.T / (1.0 - ch.B.T * pol.p[None, :])
    np.fill_diagonal(expected, 0.0)
    assert np.allclose(M, expected, rtol=1e-10, atol=1e-12)
    # more interference never helps a bystander
    off = ~np.eye(6, dtype=bool)
    assert np.all(M[off] <= 0.0)


def test_sensitivities_match_finite_differences(rng):
    _, ch = make_channel(5, seed=7)
    pol = Policy(rng.uniform(0.2, 0.8, 5))
    xi = 0.6
    fp = fixed_point(ch, pol, xi, tol=1e-12)
    P, Q = assemble_pq(ch, pol, fp.mu, xi)
    M = solve_dmu_dp(P, Q)
    h = 1e-6
    fd = np.empty_like(M)
    for i in range(5):
        hi = pol.p.copy(); hi[i] += h
        lo = pol.p.copy(); lo[i] -= h
        mu_hi = fixed_point(ch, Policy(hi), xi, tol=1e-12).mu
        mu_lo = fixed_point(ch, Policy(lo), xi, tol=1e-12).mu
        fd[:, i] = (mu_hi - mu_lo) / (2 * h)
    assert np.max(np.abs(M - fd)) / np.max(np.abs(fd)) < 1e-5


def test_residual_guard():
    _, ch = make_channel(4, seed=2)
    pol = Policy.uniform(4, 0.5)
    fp = fixed_point(ch, pol, 0.5, tol=1e-12)
    P, Q = assemble_pq(ch, pol, fp.mu, 0.5)
    M = solve_dmu_dp(P, Q)
    assert np.max(np.abs(P @ M - Q)) <= 1e-8 * np.max(np.abs(Q))


def test_nonconverged_mu_rejected():
    _, ch = make_channel(4, seed=2)
    pol = Policy.uniform(4, 0.5)
    with pytest.raises(ConvergenceError):
        assemble_pq(ch, pol, np.full(4, 0.123), 0.5)


def test_single_link_objective_gradient():
    # age-only and throughput-only weights coincide for one link at xi=1:
    # d(1/(p rho))/dp = -1/(rho p^2)
    ch = symmetric_channel(0.5, rho=0.8, n_links=1)
    pol = Policy.uniform(1, 0.4)
    mu = explicit_mu_full_buffers(ch, pol)
    expected = -1.0 / (0.8 * 0.4 ** 2)
    for lam in (1.0, 0.0):
        g = grad_objective(ch, pol, mu, xi=1.0, lam=lam)
        assert g[0] == pytest.approx(expected, rel=1e-12)


def test_objective_gradient_matches_fd(rng):
    _, ch = make_channel(8, seed=14)
    pol = Policy(rng.uniform(0.15, 0.85, 8))
    rep = finite_difference_check(ch, pol, xi=0.7, lam=0.3, step=1e-6, fp_tol=1e-12)
    assert rep["max_rel_err"] < 1e-5
    assert set(rep) >= {"n", "xi", "lambda", "fd_step", "max_rel_err",
                        "argmax_index"}


def test_transposed_interference_orientation_fails_fd(rng):
    # mutation check: flipping the interference matrix orientation must be
    # caught loudly by the finite-difference audit
    _, ch = make_channel(5, seed=3)
    flipped = ChannelParams(rho=ch.rho, D=ch.D.T, B=ch.B.T)
    pol = Policy(rng.uniform(0.2, 0.8, 5))
    xi, lam = 0.6, 0.5
    fp = fixed_point(ch, pol, xi, tol=1e-12)
    fp_flip = fixed_point(flipped, pol, xi, tol=1e-12)
    good = grad_objective(ch, pol, fp.mu, xi, lam)
    bad = grad_objective(flipped, pol, fp_flip.mu, xi, lam)
    rep = finite_difference_check(ch, pol, xi, lam, step=1e-6, fp_tol=1e-12)
    fd = np.asarray(rep["grad_fd"])
    scale = np.max(np.abs(fd))
    assert np.max(np.abs(good - fd)) / scale < 1e-5
    assert np.max(np.abs(bad - fd)) / scale > 1e-2


def test_extra_buffer_term_variant_rejected_by_fd(rng):
    # a tempting variant adds d(nu)/d(p mu) inside the age derivative; the
    # audit rejects it away from full buffers
    _, ch = make_channel(5, seed=5)
    pol = Policy(rng.uniform(0.2, 0.8, 5))
    xi, lam = 0.5, 0.5
    fp = fixed_point(ch, pol, xi, tol=1e-12)
    P, Q = assemble_pq(ch, pol, fp.mu, xi)
    M = solve_dmu_dp(P, Q)
    n = 5
    u = pol.p * fp.mu
    dx = M * pol.p[:, None]
    dx[np.arange(n), np.arange(n)] += fp.mu
    w_var = 1.0 / u ** 2 + (1 - xi) / (xi + (1 - xi) * u) ** 2
    gd_var = -(w_var @ dx) / n
    w_thr = xi ** 2 / (xi + (1 - xi) * u) ** 2
    gt = (w_thr @ dx) / n
    t_avg = float(np.mean(xi * u / (xi + (1 - xi) * u)))
    variant = lam * gd_var - (1 - lam) / t_avg ** 2 * gt
    rep = finite_difference_check(ch, pol, xi, lam, step=1e-6, fp_tol=1e-12)
    fd = np.asarray(rep["grad_fd"])
    assert rep["max_rel_err"] < 1e-5
    assert np.max(np.abs(variant - fd)) / np.max(np.abs(fd)) > 1e-2


def test_full_buffers_dual_analytic_paths(rng):
    _, ch = make_channel(7, seed=8)
    pol = Policy(rng.uniform(0.2, 0.95, 7))
    mu = explicit_mu_full_buffers(ch, pol)
    for lam in (0.0, 0.4, 1.0):
        via_system = grad_objective(ch, pol, mu, xi=1.0, lam=lam)
        direct = explicit_grad_full_buffers(ch, pol, lam)
        err = np.max(np.abs(via_system - direct)) / np.max(np.abs(direct))
        assert err < 1e-10


def test_fd_convergence_is_second_order():
    # halving the step should shrink the FD-analytic gap about 4x once the
    # fixed-point tolerance is tight enough
    _, ch = make_channel(4, seed=20)
    pol = Policy.uniform(4, 0.5)
    r1 = finite_difference_check(ch, pol, 0.5, 0.5, step=2e-4, fp_tol=1e-13)
    r2 = finite_difference_check(ch, pol, 0.5, 0.5, step=1e-4, fp_tol=1e-13)
    assert r2["max_rel_err"] < r1["max_rel_err"]
    ratio = r1["max_rel_err"] / max(r2["max_rel_err"], 1e-300)
    assert 2.0 < ratio < 8.0
