import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipflow.errors import PreconditionError
from slipflow.fields import ScalarField, VectorField, lp_norm
from slipflow.grid import Grid
from slipflow.helmholtz import decompose, spectral_div_rot, tangential_component, vorticity_solve
from slipflow.operators import PhysicalParams

G16, G32 = Grid(16), Grid(32)
PI = np.pi


def perp_of_sines(g):
    # grad_perp of A0 = sin(pi x1) sin(pi x2)
    return VectorField.from_function(
        g, lambda x, y: (-PI * np.sin(PI * x) * np.cos(PI * y), PI * np.cos(PI * x) * np.sin(PI * y))
    )


def tangential_random(g, seed, modes=5):
    rng = np.random.default_rng(seed)
    k = np.arange(1, modes + 1)
    c = rng.standard_normal((2, modes, modes))
    s = lambda x: np.sin(PI * k[:, None, None] * x[None])  # noqa: E731
    cs = lambda x: np.cos(PI * (k - 1)[:, None, None] * x[None])  # noqa: E731
    u1 = np.einsum("ab,aij,bij->ij", c[0], s(g.x1), cs(g.x2))
    u2 = np.einsum("ab,aij,bij->ij", c[1], cs(g.x1), s(g.x2))
    return VectorField(g, np.stack([u1, u2]))


def test_divergence_free_input():
    parts = decompose(perp_of_sines(G16))
    A0 = np.sin(PI * G16.x1) * np.sin(PI * G16.x2)
    assert np.abs(parts.phi.values).max() < 1e-12
    assert np.abs(parts.A.values - A0).max() < 1e-12


def test_zero_field():
    parts = decompose(VectorField.zeros(G16))
    assert not parts.phi.values.any() and not parts.A.values.any()
    assert parts.reconstruction_error == 0.0 and parts.orthogonality == 0.0


def test_normal_trace_precondition():
    u = VectorField.from_function(G16, lambda x, y: (1 + 0 * x, 0 * x))
    with pytest.raises(PreconditionError):
        decompose(u)


def test_gradient_input_has_no_stream_part():
    # grad of cos(pi x1) cos(2 pi x2)
    u = VectorField.from_function(
        G16, lambda x, y: (-PI * np.sin(PI * x) * np.cos(2 * PI * y), -2 * PI * np.cos(PI * x) * np.sin(2 * PI * y))
    )
    parts = decompose(u)
    assert np.abs(parts.A.values).max() < 1e-12
    assert np.abs(parts.phi.values - np.cos(PI * G16.x1) * np.cos(2 * PI * G16.x2)).max() < 1e-12


def test_spectral_div_rot():
    d, r = spectral_div_rot(perp_of_sines(G16))
    A0 = np.sin(PI * G16.x1) * np.sin(PI * G16.x2)
    assert np.abs(d.values).max() < 1e-11
    assert np.abs(r.values - (-2 * PI**2) * A0).max() < 1e-11


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.sampled_from([8, 16, 24]))
def test_decomposition_identities(seed, N):
    g = Grid(N)
    u = tangential_random(g, seed, modes=min(5, N // 2))
    parts = decompose(u)
    assert parts.reconstruction_error <= 1e-10 * max(1.0, lp_norm(u, 2.0))
    assert parts.orthogonality <= 1e-10
    d_u, r_u = spectral_div_rot(u)
    d_phi, _ = spectral_div_rot(parts.grad_phi)
    _, r_A = spectral_div_rot(parts.perp_A)
    assert np.abs(d_phi.values - d_u.values).max() <= 1e-9 * max(1.0, np.abs(d_u.values).max())
    assert np.abs(r_A.values - r_u.values).max() <= 1e-9 * max(1.0, np.abs(r_u.values).max())


# -- vorticity problem ------------------------------------------------------------------

def test_vorticity_homogeneous():
    prm = PhysicalParams()
    zeros = np.zeros(G16.shape)
    alpha = vorticity_solve(ScalarField.zeros(G16), zeros, zeros, prm)
    assert np.abs(alpha.values).max() == 0.0


def _alpha_source(g, mu, a, ax, axx, ayy):
    return ScalarField.from_function(g, lambda x, y: ax(x, y) - mu * (axx(x, y) + ayy(x, y)))


def test_vorticity_polynomial_recovered():
    # alpha* = x1(1-x1) x2(1-x2) is quadratic in each variable, where the stencils are exact
    prm = PhysicalParams(mu=1.0)
    a = lambda x, y: x * (1 - x) * y * (1 - y)  # noqa: E731
    src = _alpha_source(
        G16, prm.mu, a,
        lambda x, y: (1 - 2 * x) * y * (1 - y),
        lambda x, y: -2 * y * (1 - y),
        lambda x, y: -2 * x * (1 - x),
    )
    zeros = np.zeros(G16.shape)
    alpha = vorticity_solve(src, zeros, zeros, prm)
    assert np.abs(alpha.values - a(G16.x1, G16.x2)).max() < 1e-12


def test_vorticity_second_order():
    prm = PhysicalParams(mu=0.5)
    a = lambda x, y: np.sin(PI * x) * np.sin(PI * y) * np.exp(x)  # noqa: E731
    errs = []
    for N in (16, 32):
        g = Grid(N)
        src = _alpha_source(
            g, prm.mu, a,
            lambda x, y: np.sin(PI * y) * np.exp(x) * (PI * np.cos(PI * x) + np.sin(PI * x)),
            lambda x, y: np.sin(PI * y) * np.exp(x) * (2 * PI * np.cos(PI * x) + (1 - PI**2) * np.sin(PI * x)),
            lambda x, y: -(PI**2) * a(x, y),
        )
        zeros = np.zeros(g.shape)
        errs.append(lp_norm(vorticity_solve(src, zeros, zeros, prm) - a(g.x1, g.x2), 2.0))
    assert 1.7 <= np.log2(errs[0] / errs[1]) <= 2.3


def test_vorticity_boundary_data():
    prm = PhysicalParams(mu=2.0, f=10.0)
    c = 0.3
    B = np.full(G16.shape, prm.mu * c)
    alpha = vorticity_solve(ScalarField.zeros(G16), np.zeros(G16.shape), B, prm)
    assert np.abs(alpha.values[G16.boundary_mask] - c).max() < 1e-12


def test_tangential_component():
    u = VectorField.from_function(G16, lambda x, y: (1 + 0 * x, 2 + 0 * x))
    t = tangential_component(u)
    assert t[0, 5] == -2.0 and t[-1, 5] == 2.0 and t[5, 0] == 1.0 and t[5, -1] == -1.0
