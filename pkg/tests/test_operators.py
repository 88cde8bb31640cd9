import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipflow.errors import ConfigurationError, DensityFloor, SmallnessViolation
from slipflow.fields import ScalarField, VectorField, lp_norm, sobolev_norm
from slipflow.grid import Grid
from slipflow.operators import (
    BoundaryData,
    PhysicalParams,
    advect,
    assemble_F_G,
    build_extensions,
    coefficients,
    deformation,
    div,
    grad,
    grad_perp,
    laplacian,
    mollify,
    mollify_sweeps,
    normal_trace,
    rot2d,
    slip_operator,
    stress_residual_slip,
)

G16, G32 = Grid(16), Grid(32)


def test_params_validation():
    for bad in (dict(mu=0), dict(gamma=1.0), dict(f=-1), dict(p=2.0), dict(mu=1, nu=-5)):
        with pytest.raises(ConfigurationError):
            PhysicalParams(**bad)
    assert PhysicalParams(mu=2, nu=1).lam == 5


def test_grad_of_constant_is_zero():
    f = ScalarField.from_function(G16, lambda x, y: 7 + 0 * x)
    assert np.abs(grad(f).values).max() < 1e-12


def test_div_of_affine_field_exact():
    u = VectorField.from_function(G16, lambda x, y: (x, y))
    assert np.abs(div(u).values - 2.0).max() < 1e-10


def test_quadratics_exact():
    f = ScalarField.from_function(G16, lambda x, y: x**2 - 3 * x * y + y**2)
    assert np.abs(laplacian(f).values - 4.0).max() < 1e-9


def test_rot_grad_vanishes():
    # the tensor-product difference operators commute, so the identity holds
    # to rounding on every grid, which is stronger than O(h^2)
    fn = lambda x, y: np.sin(2 * x) * np.exp(y)  # noqa: E731
    for N in (16, 32):
        assert np.abs(rot2d(grad(ScalarField.from_function(Grid(N), fn))).values).max() < 1e-9


def test_grad_perp_is_divergence_free_for_polynomials():
    f = ScalarField.from_function(G16, lambda x, y: x**2 * y)
    assert np.abs(div(grad_perp(f)).values).max() < 1e-9


def test_deformation_examples():
    trans = VectorField.from_function(G16, lambda x, y: (2 + 0 * x, -1 + 0 * x))
    assert np.abs(deformation(trans)).max() < 1e-12
    sym = VectorField.from_function(G16, lambda x, y: (y, x))
    D = deformation(sym)
    assert np.allclose(D[0, 0], 0, atol=1e-12) and np.allclose(D[1, 1], 0, atol=1e-12)
    assert np.allclose(D[0, 1], 1, atol=1e-12) and np.allclose(D[1, 0], 1, atol=1e-12)


def test_slip_residual_of_zero():
    g = G16
    zero = VectorField.zeros(g)
    res = stress_residual_slip(zero, PhysicalParams(), np.zeros(g.shape))
    assert np.abs(res).max() == 0.0


def test_slip_operator_friction_term():
    # translation: only f u.tau survives on the walls (tau = (1,0) bottom, (-1,0) top)
    g = G16
    u = VectorField.from_function(g, lambda x, y: (1 + 0 * x, 0 * x))
    s = slip_operator(u, PhysicalParams(f=10))
    assert np.allclose(s[1:-1, 0], 10.0) and np.allclose(s[1:-1, -1], -10.0)


def test_advect_constant_velocity():
    a = VectorField.from_function(G16, lambda x, y: (1 + 0 * x, 0 * x))
    f = ScalarField.from_function(G16, lambda x, y: x * y)
    assert np.allclose(advect(a, f).values, G16.x2, atol=1e-12)


# -- extensions ---------------------------------------------------------------------

def test_constant_flow_extension_is_zero(params):
    ext = build_extensions(BoundaryData.constant_flow(G16), params)
    assert not ext.u0.values.any() and not ext.w0.values.any()


def _dense_w0(N, rho):
    """Independent oracle: loop-assembled 5-point Laplacian with mirrored ghosts
    off the inflow edge, Dirichlet data on it, solved densely."""
    n = N + 1
    A = np.zeros((n * n, n * n))
    b = np.zeros(n * n)
    k = lambda i, j: i * n + j  # noqa: E731
    mirror = lambda m: 2 * N - m if m > N else abs(m)  # noqa: E731
    for i in range(n):
        for j in range(n):
            r = k(i, j)
            if i == 0:
                A[r, r] = 1.0
                b[r] = rho[j]
                continue
            A[r, r] = -4.0
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                A[r, k(mirror(i + di), mirror(j + dj))] += 1.0
    return np.linalg.solve(A, b).reshape(n, n)


def test_density_extension_matches_dense_oracle(params):
    delta = 1e-3
    data = BoundaryData.from_perturbations(G16, rho=lambda x1, x2: delta * np.sin(np.pi * x2))
    ext = build_extensions(data, params)
    oracle = _dense_w0(16, delta * np.sin(np.pi * G16.x2[0]))
    assert np.abs(ext.w0.values - oracle).max() < 1e-14
    g64 = Grid(64)
    ext64 = build_extensions(BoundaryData.from_perturbations(g64, rho=lambda x1, x2: delta * np.sin(np.pi * x2)), params)
    assert sobolev_norm(ext64.w0, params.p, 1) <= 2 * delta


def test_outflow_normal_velocity_extension(params):
    delta = 1e-3
    prof = lambda x1, x2: delta * x2 * (1 - x2)  # noqa: E731
    data = BoundaryData.from_perturbations(G16, d={"outflow": prof})
    ext = build_extensions(data, params)
    ii, jj = G16.segments["outflow"].index
    assert np.abs(ext.u0.values[0][ii, jj] - prof(1.0, G16.x2[-1])).max() < 1e-10
    # tangential trace vanishes
    assert np.abs(ext.u0.values[1][ii, jj]).max() < 1e-14


def test_wall_normal_data_rejected():
    with pytest.raises(ConfigurationError):
        BoundaryData.from_perturbations(G16, d={"top": 0.1})


def test_extension_cap(params):
    data = BoundaryData.from_perturbations(G16, rho=0.5)
    with pytest.raises(SmallnessViolation):
        build_extensions(data, params, cap=1e-3)


def test_from_physical_constant_flow_is_zero(params):
    b = {"inflow": 0.0, "outflow": 0.0, "bottom": params.f, "top": -params.f}
    data = BoundaryData.from_physical(G16, params, b, {"inflow": -1.0, "outflow": 1.0}, 1.0)
    assert data.is_zero()


# -- mollifier ----------------------------------------------------------------------

def test_mollify_constant_unchanged():
    f = ScalarField.from_function(G16, lambda x, y: 3.5 + 0 * x)
    assert np.array_equal(mollify(f, 0.05).values, f.values)


def test_mollify_zero_sweeps_is_identity():
    f = ScalarField(G16, np.random.default_rng(0).standard_normal(G16.shape))
    assert mollify_sweeps(16, 1e-3) == 0
    assert np.array_equal(mollify(f, 1e-3).values, f.values)


def test_mollify_sweep_cap():
    assert mollify_sweeps(16, 1.0) == 16
    assert mollify_sweeps(32, 1e-2) == 10


def test_mollify_rejects_nonpositive_eps():
    with pytest.raises(ConfigurationError):
        mollify(ScalarField.zeros(G16), 0.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from([4e-3, 1e-2, 5e-2]))
def test_mollify_does_not_increase_w1p(seed, eps):
    f = ScalarField(G16, np.random.default_rng(seed).standard_normal(G16.shape))
    assert sobolev_norm(mollify(f, eps), 4.0, 1) <= sobolev_norm(f, 4.0, 1) * (1 + 1e-10)


# -- coefficients and nonlinear terms ---------------------------------------------------

def test_coefficients_at_base_state(params):
    z = ScalarField.zeros(G16)
    c = coefficients(z, z, params)
    assert np.all(c.a1 == params.gamma) and np.all(c.a2 == params.gamma)
    assert np.allclose(c.a0, params.gamma / params.lam)


def test_coefficient_a1_example():
    prm = PhysicalParams(gamma=2.0)
    w = ScalarField.from_function(G16, lambda x, y: 0.1 + 0 * x)
    c = coefficients(w, ScalarField.zeros(G16), prm)
    assert np.abs(c.a1 - 2.2).max() < 1e-12


def test_density_floor(params):
    w = ScalarField.zeros(G16)
    w.values[4, 5] = -0.9
    with pytest.raises(DensityFloor) as exc:
        coefficients(w, ScalarField.zeros(G16), params)
    assert exc.value.details["node"] == (4, 5)


def test_forcing_vanishes_at_base_state(params):
    zu, zw = VectorField.zeros(G16), ScalarField.zeros(G16)
    nl = assemble_F_G(zu, zw, zu, zw, params)
    assert not nl.F.values.any() and not nl.G.values.any()


def test_body_force_enters_F():
    prm = PhysicalParams(body_force=lambda x, y: (1 + 0 * x, 0 * x))
    zu, zw = VectorField.zeros(G16), ScalarField.zeros(G16)
    nl = assemble_F_G(zu, zw, zu, zw, prm)
    assert np.allclose(nl.F.values[0], 1.0) and not nl.F.values[1].any()


def test_normal_trace_of_tangential_field():
    u = VectorField.from_function(G16, lambda x, y: (np.sin(np.pi * x), np.sin(np.pi * y)))
    assert np.abs(normal_trace(u)).max() < 1e-15
    assert lp_norm(u, 2.0) > 0
