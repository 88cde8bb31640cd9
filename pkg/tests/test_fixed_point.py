import numpy as np
import pytest
import sympy as s

from slipflow.errors import (
    BallEscape,
    ConfigurationError,
    ContinuationStalled,
    OuterNoConvergence,
    SmallnessViolation,
)
from slipflow.fields import lp_norm
from slipflow.fixed_point import (
    HISTORY_COLUMNS,
    SolveConfig,
    ball_radius_for,
    boundary_flux,
    continue_to_zero,
    random_smooth_perturbation,
    solve_regularized,
    uniqueness_probe,
    with_overrides,
)
from slipflow.grid import Grid
from slipflow.manufactured import X1, X2, manufactured_solution, observed_rates
from slipflow.operators import BoundaryData

from conftest import bump_data


def test_config_validation():
    for bad in (dict(N=4), dict(eps_schedule=()), dict(eps_schedule=(1e-2, 1e-1)), dict(outer_tol=0),
                dict(damping=1.5), dict(scheme="spectral"), dict(ball_radius=-1)):
        with pytest.raises(ConfigurationError):
            SolveConfig(**bad)
    assert SolveConfig(outer_tol=1e-8).inner_tolerance == pytest.approx(1e-9)
    assert with_overrides(SolveConfig(), N=16).N == 16


def test_ball_radius_quadratic_map():
    C = 3.0
    r = ball_radius_for(C)
    D = r * r
    # C (D + r^2) <= r for the quadratic bound
    assert C * C * D <= 0.25 + 1e-15
    assert C * (D + r * r) <= r * (1 + 1e-15)


def test_zero_data_converges_immediately(grid16, params):
    cfg = SolveConfig(N=16)
    data = BoundaryData.constant_flow(grid16)
    one = solve_regularized(1e-2, cfg, params, data)
    assert one.iterations == 1 and not one.pert.to_vector().any()
    sol = continue_to_zero(cfg, params, data)
    assert np.all(sol.v.values[0] == 1.0) and np.all(sol.v.values[1] == 0.0)
    assert np.all(sol.rho.values == 1.0)
    assert sol.mass_flux_defect == 0.0


def test_linear_response_at_fixed_eps(grid32, params):
    cfg = SolveConfig(N=32)
    norms = {}
    for delta in (1e-3, 1e-4):
        sol = solve_regularized(1e-2, cfg, params, bump_data(grid32, delta))
        norms[delta] = sol.pert.norm(params.p)
        assert norms[delta] <= 50 * delta
        for row in sol.history:
            assert row["u_w2p"] + row["w_w1p"] <= cfg.ball_radius
    assert norms[1e-3] / 1e-3 == pytest.approx(norms[1e-4] / 1e-4, rel=0.05)


def test_history_columns(small_solution16):
    for row in small_solution16.history:
        assert tuple(row) == HISTORY_COLUMNS


def test_small_solution_properties(small_solution16):
    sol = small_solution16
    assert sol.gaps[-1][1] <= 10 * SolveConfig().outer_tol
    assert sol.limit_residual < 1e-8
    assert sol.mass_flux_defect < 1e-5
    assert abs(boundary_flux(sol.v, sol.rho)) == sol.mass_flux_defect
    assert np.abs(sol.rho.values - 1).max() < 1e-2


def test_ball_escape(grid16, params):
    data = bump_data(grid16, 1e-3)
    with pytest.raises(BallEscape) as exc:
        solve_regularized(1e-2, SolveConfig(N=16, ball_radius=2e-3), params, data)
    assert exc.value.record()["exit_code"] == 4


def test_large_data_rejected(grid16, params):
    with pytest.raises(SmallnessViolation):
        solve_regularized(1e-2, SolveConfig(N=16), params, bump_data(grid16, 5.0))


def test_outer_nonconvergence(grid16, params):
    with pytest.raises(OuterNoConvergence) as exc:
        solve_regularized(1e-2, SolveConfig(N=16, max_outer=1), params, bump_data(grid16, 1e-3))
    assert exc.value.record()["exit_code"] == 3


def test_continuation_stalls_without_extension(grid16, params):
    cfg = SolveConfig(N=16, eps_schedule=(1e-1, 1e-2), max_extra_eps=0)
    with pytest.raises(ContinuationStalled) as exc:
        continue_to_zero(cfg, params, bump_data(grid16, 1e-3))
    assert len(exc.value.details["gaps"]) == 1


def test_random_start_norm(grid16, rng):
    p = random_smooth_perturbation(grid16, 0.2, 4.0, rng)
    assert p.norm(4.0) == pytest.approx(0.2)


def test_uniqueness_zero_data(grid16, params):
    cfg = SolveConfig(N=16)
    rep = uniqueness_probe(None, cfg, params, BoundaryData.constant_flow(grid16), n_starts=3, seed=3)
    assert rep.all_converged
    assert rep.max_distance <= 1e-9


def test_uniqueness_outside_start_is_recorded(grid16, params, small_solution16):
    cfg = SolveConfig(N=16)
    rep = uniqueness_probe(small_solution16, cfg, params, bump_data(grid16, 1e-3), n_starts=2, seed=1,
                           outside=True)
    assert len(rep.starts) == 3
    assert rep.starts[-1]["inside_ball"] is False
    assert rep.starts[-1]["status"] in ("converged", "escaped", "failed")
    converged = [s for s in rep.starts if s["status"] == "converged"]
    assert len(converged) >= 2
    assert rep.max_distance <= 1e-7


# -- manufactured solutions -------------------------------------------------------------

def test_manufactured_mass_flux_is_divergence_free():
    ms = manufactured_solution(0.01)
    # rebuild the exact fields symbolically and check div(rho v) = 0
    from slipflow.manufactured import DEFAULT_PSI, DEFAULT_R

    dl = s.Float(0.01)
    rho = 1 + dl * DEFAULT_R
    m = s.Matrix([1 - dl * s.diff(DEFAULT_PSI, X2), dl * s.diff(DEFAULT_PSI, X1)])
    assert s.simplify(s.diff(m[0], X1) + s.diff(m[1], X2)) == 0
    g = Grid(32)
    v, r = ms.exact(g)
    assert np.allclose(r.values, s.lambdify((X1, X2), rho)(g.x1, g.x2))
    # v.n vanishes on the walls
    assert np.abs(v.values[1][:, 0]).max() < 1e-14 and np.abs(v.values[1][:, -1]).max() < 1e-14


def test_manufactured_constant_flow_limit():
    ms = manufactured_solution(1e-12)
    g = Grid(16)
    data = ms.boundary_data(g)
    assert data.amplitude() < 1e-9
    assert lp_norm(ms.params().body_force_on(g), 2.0) < 1e-9


def test_observed_rates():
    assert observed_rates([4.0, 1.0, 0.25]) == [2.0, 2.0]
