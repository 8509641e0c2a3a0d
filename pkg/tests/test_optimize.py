import numpy as np
import pytest

from aoisched.errors import ConfigError, UnsupportedCaseError
from aoisched.meanfield import EPS_P, Policy
from aoisched.optimize import (block_coordinate_min, golden_section,
                               lambda_grid_log5, lambda_grid_uniform,
                               non_dominated, optimal_aloha, pareto_sweep,
                               projected_gradient)
from aoisched.oracle import grid_search_policy
from conftest import make_channel, symmetric_channel


def test_golden_section_interior_and_boundary():
    x, fx = golden_section(lambda t: (t - 0.3) ** 2, 0.0, 1.0)
    assert abs(x - 0.3) < 1e-6 and fx == pytest.approx(0.0, abs=1e-12)
    # decreasing objective: exact boundary point returned
    x, _ = golden_section(lambda t: -t, 0.0, 1.0)
    assert x == 1.0


def test_block_coordinate_single_link_saturates():
    ch = symmetric_channel(0.5, rho=0.9, n_links=1)
    res = block_coordinate_min(ch, lam=1.0)
    assert res.policy.p[0] == 1.0
    assert res.objective == pytest.approx(1.0 / 0.9)


def test_block_coordinate_requires_full_buffers():
    ch = symmetric_channel(0.5)
    with pytest.raises(UnsupportedCaseError):
        block_coordinate_min(ch, lam=1.0, xi=0.5)


def test_block_coordinate_matches_grid_under_strong_coupling():
    ch = symmetric_channel(0.9, rho=1.0)
    grid_pol, grid_obj = grid_search_policy(ch, lam=1.0, xi=1.0, resolution=1e-3)
    res = block_coordinate_min(ch, lam=1.0)
    assert res.objective <= grid_obj + 1e-3
    assert np.all(np.abs(np.sort(res.policy.p) - np.sort(grid_pol.p)) < 1e-3)


def test_block_coordinate_trace_non_increasing():
    for seed in (0, 1):
        _, ch = make_channel(12, seed=seed)
        res = block_coordinate_min(ch, lam=0.5)
        assert np.all(np.diff(res.objective_trace) <= 0.0)


def test_pgd_single_link_converges_to_one():
    ch = symmetric_channel(0.5, rho=0.9, n_links=1)
    res = projected_gradient(ch, lam=1.0, xi=1.0, init=Policy.uniform(1, 0.5))
    assert res.policy.p[0] == pytest.approx(1.0, abs=1e-6)


def test_pgd_trace_non_increasing_and_bounded():
    _, ch = make_channel(10, seed=3)
    res = projected_gradient(ch, lam=0.7, xi=0.6, steps=60)
    assert np.all(np.diff(res.objective_trace) <= 0.0)
    assert np.all((res.policy.p >= EPS_P) & (res.policy.p <= 1.0))


def test_pgd_reaches_grid_optimum_two_links():
    ch = symmetric_channel(0.8, rho=1.0)
    _, grid_obj = grid_search_policy(ch, lam=0.5, xi=0.5, resolution=1e-3)
    res = projected_gradient(ch, lam=0.5, xi=0.5)
    assert res.objective <= grid_obj + 1e-3


def test_pgd_close_to_block_coordinate_full_buffers():
    better = 0
    for seed in range(10):
        _, ch = make_channel(20, seed=100 + seed)
        bc = block_coordinate_min(ch, lam=1.0)
        pg = projected_gradient(ch, lam=1.0, xi=1.0)
        if pg.objective <= 1.02 * bc.objective:
            better += 1
    assert better >= 9


def test_aloha_single_link():
    ch = symmetric_channel(0.5, rho=0.9, n_links=1)
    res = optimal_aloha(ch, lam=1.0, xi=1.0)
    assert res.policy.p[0] == pytest.approx(1.0, abs=1e-6)


def test_aloha_matches_symmetric_grid_restriction():
    ch = symmetric_channel(0.8, rho=1.0)
    res = optimal_aloha(ch, lam=1.0, xi=1.0)
    # scalar restriction of the objective on a fine grid
    ps = np.linspace(EPS_P, 1.0, 1001)
    objs = [np.mean(1.0 / (p * (1.0 - 0.8 * p))) for p in ps]
    assert res.objective <= min(objs) + 1e-6
    assert np.all(res.policy.p == res.policy.p[0])


def test_aloha_emits_scan_for_audit():
    _, ch = make_channel(4, seed=5)
    res = optimal_aloha(ch, lam=0.5, xi=0.8)
    assert "scan_p" in res.extras and "scan_objective" in res.extras
    scan_p = res.extras["scan_p"]
    scan_obj = res.extras["scan_objective"]
    assert len(scan_p) == len(scan_obj) == 201
    assert res.objective <= scan_obj.min() + 1e-9


def test_lambda_grids():
    g = lambda_grid_log5(6)
    assert g[0] == pytest.approx(1e-5) and g[-1] == 1.0
    assert np.all(np.diff(np.log10(g)) > 0)
    u = lambda_grid_uniform(5)
    assert u[0] == 0.0 and u[-1] == 1.0


def test_pareto_sweep_sorted_and_endpoint():
    _, ch = make_channel(6, seed=2)
    pts = pareto_sweep(ch, xi=1.0, lambda_grid=lambda_grid_log5(5),
                       method="itermin", n_iters=8)
    lams = [pt.lam for pt in pts]
    assert lams == sorted(lams)
    # the age-weighted endpoint carries the lowest average age of the sweep
    assert pts[-1].lam == 1.0
    assert pts[-1].delta_avg == min(pt.delta_avg for pt in pts)


def test_pareto_sweep_deterministic():
    _, ch = make_channel(5, seed=4)
    a = pareto_sweep(ch, xi=1.0, lambda_grid=lambda_grid_log5(4),
                     method="itermin", n_iters=5)
    b = pareto_sweep(ch, xi=1.0, lambda_grid=lambda_grid_log5(4),
                     method="itermin", n_iters=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.policy.p, y.policy.p)
        assert x.objective == y.objective


def test_pareto_sweep_validates_inputs():
    _, ch = make_channel(3, seed=1)
    with pytest.raises(ConfigError):
        pareto_sweep(ch, 1.0, [0.5], method="simplex")
    with pytest.raises(ConfigError):
        pareto_sweep(ch, 1.0, [1.5], method="itermin")


def test_non_dominated_filter():
    _, ch = make_channel(6, seed=2)
    pts = pareto_sweep(ch, xi=1.0, lambda_grid=lambda_grid_log5(7),
                       method="aloha")
    kept = non_dominated(pts)
    assert kept
    for a in kept:
        for b in kept:
            if a is b:
                continue
            assert not (b.delta_avg <= a.delta_avg and b.thr_avg >= a.thr_avg
                        and (b.delta_avg < a.delta_avg or b.thr_avg > a.thr_avg))
