"""Differential operators, boundary data, extensions and the nonlinear terms.

The physical solution is written as ``v = (1, 0) + u0 + u`` and
``rho = 1 + w0 + w``, where ``(u0, w0)`` extend the boundary data into the
square and ``(u, w)`` vanish in the boundary conditions that ``(u0, w0)``
carry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DensityFloor, SmallnessViolation
from .fields import ScalarField, VectorField, sobolev_norm
from .grid import Grid
from .stencils import stencils

BodyForce = VectorField | Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class PhysicalParams:
    mu: float = 1.0
    nu: float = 0.0
    gamma: float = 1.4
    f: float = 10.0
    p: float = 4.0
    body_force: BodyForce | None = None
    rho_min: float = 0.5

    def __post_init__(self):
        checks = [
            (self.mu > 0, f"mu must be > 0, got {self.mu}"),
            (self.nu + 2 * self.mu > 0, f"nu + 2 mu must be > 0, got {self.nu + 2 * self.mu}"),
            (self.gamma > 1, f"gamma must be > 1, got {self.gamma}"),
            (self.f > 0, f"friction f must be > 0, got {self.f}"),
            (self.p > 2, f"p must be > 2, got {self.p}"),
            (0 < self.rho_min < 1, f"rho_min must lie in (0, 1), got {self.rho_min}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigurationError(msg)

    @property
    def lam(self) -> float:
        """The bulk combination ``nu + 2 mu``."""
        return self.nu + 2 * self.mu

    def body_force_on(self, grid: Grid) -> VectorField | None:
        bf = self.body_force
        if bf is None or isinstance(bf, VectorField):
            return bf
        return VectorField.from_function(grid, bf)


# -- pointwise operators -------------------------------------------------------

def _d(grid: Grid, D: sp.spmatrix, a: np.ndarray) -> np.ndarray:
    return (D @ a.ravel()).reshape(grid.shape)


def grad(f: ScalarField) -> VectorField:
    st = stencils(f.grid.N)
    return VectorField(f.grid, np.stack([_d(f.grid, st.Dx, f.values), _d(f.grid, st.Dy, f.values)]))


def div(u: VectorField) -> ScalarField:
    st = stencils(u.grid.N)
    g = u.grid
    return ScalarField(g, _d(g, st.Dx, u.values[0]) + _d(g, st.Dy, u.values[1]))


def laplacian(f: ScalarField | VectorField) -> ScalarField | VectorField:
    st = stencils(f.grid.N)
    if isinstance(f, VectorField):
        return VectorField(f.grid, np.stack([_d(f.grid, st.lap, c) for c in f.values]))
    return ScalarField(f.grid, _d(f.grid, st.lap, f.values))


def rot2d(u: VectorField) -> ScalarField:
    st = stencils(u.grid.N)
    g = u.grid
    return ScalarField(g, _d(g, st.Dx, u.values[1]) - _d(g, st.Dy, u.values[0]))


def grad_perp(f: ScalarField) -> VectorField:
    """``(-d2 f, d1 f)``."""
    g = grad(f)
    return VectorField(f.grid, np.stack([-g.values[1], g.values[0]]))


def jacobian(u: VectorField) -> np.ndarray:
    """``J[c, k] = d_k u_c`` as an array of shape ``(2, 2, N+1, N+1)``."""
    st = stencils(u.grid.N)
    g = u.grid
    return np.array([[_d(g, D, u.values[c]) for D in (st.Dx, st.Dy)] for c in range(2)])


def advect(a: VectorField, b: VectorField | ScalarField) -> VectorField | ScalarField:
    """``(a . grad) b`` with central differences."""
    st = stencils(a.grid.N)
    g = a.grid
    if isinstance(b, ScalarField):
        return ScalarField(g, a.values[0] * _d(g, st.Dx, b.values) + a.values[1] * _d(g, st.Dy, b.values))
    J = jacobian(b)
    return VectorField(g, np.einsum("kij,ckij->cij", a.values, J))


def deformation(u: VectorField) -> np.ndarray:
    """Symmetric gradient ``D(u)`` with shape ``(2, 2, N+1, N+1)``."""
    J = jacobian(u)
    return 0.5 * (J + J.transpose(1, 0, 2, 3))


def slip_operator(u: VectorField, params: PhysicalParams) -> np.ndarray:
    """``n . 2 mu D(u) . tau + f u . tau`` on open boundary nodes, zero elsewhere."""
    n1, n2, t1, t2 = u.grid.edge_frames
    D = deformation(u)
    ndt = n1 * (D[0, 0] * t1 + D[0, 1] * t2) + n2 * (D[1, 0] * t1 + D[1, 1] * t2)
    return 2 * params.mu * ndt + params.f * (u.values[0] * t1 + u.values[1] * t2)


def stress_residual_slip(u: VectorField, params: PhysicalParams, B: np.ndarray) -> np.ndarray:
    """Residual of the slip condition per node (zero off the open boundary)."""
    open_b = u.grid.boundary_mask & ~u.grid.corner_mask
    return np.where(open_b, slip_operator(u, params) - B, 0.0)


def normal_trace(u: VectorField) -> np.ndarray:
    n1, n2, _, _ = u.grid.edge_frames
    return u.values[0] * n1 + u.values[1] * n2


# -- boundary data -------------------------------------------------------------

def _edge_array(grid: Grid, value, seg_name: str) -> np.ndarray:
    seg = grid.segments[seg_name]
    if value is None:
        return np.zeros(grid.N + 1)
    if callable(value):
        ii, jj = seg.index
        return np.broadcast_to(value(grid.x1[ii, jj], grid.x2[ii, jj]), (grid.N + 1,)).astype(float)
    arr = np.broadcast_to(np.asarray(value, dtype=float), (grid.N + 1,))
    return arr.copy()


@dataclass
class BoundaryData:
    """Perturbations of the boundary data away from the constant flow.

    ``b_pert = b - f tau1`` and ``d_pert = d - n1`` are stored per edge
    (arrays of length ``N+1`` ordered like the edge nodes);
    ``rho_pert = rho_in - 1`` lives on the inflow edge.
    """

    grid: Grid
    b_pert: dict[str, np.ndarray]
    d_pert: dict[str, np.ndarray]
    rho_pert: np.ndarray

    def __post_init__(self):
        for name in ("bottom", "top"):
            if np.any(self.d_pert.get(name, 0.0) != 0.0):
                raise ConfigurationError(f"normal velocity data must vanish on the wall '{name}'")
        for table in (self.b_pert, self.d_pert):
            for name in self.grid.segments:
                table.setdefault(name, np.zeros(self.grid.N + 1))

    @classmethod
    def constant_flow(cls, grid: Grid) -> "BoundaryData":
        return cls.from_perturbations(grid)

    @classmethod
    def from_perturbations(cls, grid: Grid, b=None, d=None, rho=None) -> "BoundaryData":
        """Build from per-edge profiles.

        ``b`` and ``d`` map edge names to a callable ``(x1, x2) -> values``,
        an array or a constant; ``rho`` is the same for the inflow edge.
        """
        b, d = b or {}, d or {}
        unknown = (set(b) | set(d)) - set(grid.segments)
        if unknown:
            raise ConfigurationError(f"unknown boundary segments {sorted(unknown)}")
        return cls(
            grid,
            {k: _edge_array(grid, b.get(k), k) for k in grid.segments},
            {k: _edge_array(grid, d.get(k), k) for k in grid.segments},
            _edge_array(grid, rho, "inflow"),
        )

    @classmethod
    def from_physical(cls, grid: Grid, params: PhysicalParams, b, d, rho_in) -> "BoundaryData":
        """Build from the physical ``b``, ``d`` and ``rho_in`` profiles."""
        bp, dp = {}, {}
        for name, seg in grid.segments.items():
            bp[name] = _edge_array(grid, b.get(name), name) - params.f * seg.tangent[0]
            dp[name] = _edge_array(grid, d.get(name), name) - seg.normal[0]
        return cls(grid, bp, dp, _edge_array(grid, rho_in, "inflow") - 1.0)

    def scaled(self, s: float) -> "BoundaryData":
        return BoundaryData(
            self.grid,
            {k: s * v for k, v in self.b_pert.items()},
            {k: s * v for k, v in self.d_pert.items()},
            s * self.rho_pert,
        )

    def nodal(self, table: dict[str, np.ndarray]) -> np.ndarray:
        """Scatter per-edge values onto open boundary nodes of a nodal array."""
        out = np.zeros(self.grid.shape)
        for name, seg in self.grid.segments.items():
            ii, jj = seg.index
            out[ii[1:-1], jj[1:-1]] = table[name][1:-1]
        return out

    def amplitude(self) -> float:
        vals = [np.abs(v).max() for v in self.b_pert.values()]
        vals += [np.abs(v).max() for v in self.d_pert.values()]
        vals.append(np.abs(self.rho_pert).max())
        return float(max(vals))

    def is_zero(self) -> bool:
        return self.amplitude() == 0.0


# -- extensions ----------------------------------------------------------------

@dataclass
class Extensions:
    u0: VectorField
    w0: ScalarField
    norms: dict[str, float] = field(default_factory=dict)

    @classmethod
    def zero(cls, grid: Grid) -> "Extensions":
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid), {"u0_w2p": 0.0, "w0_w1p": 0.0})


def _dirichlet_laplace(grid: Grid, dirichlet: np.ndarray, lap: sp.spmatrix) -> sp.csc_matrix:
    rows = np.where(dirichlet.ravel(), 1.0, 0.0)
    keep = sp.diags(1.0 - rows)
    return (keep @ lap + sp.diags(rows)).tocsc()


def build_extensions(
    data: BoundaryData, params: PhysicalParams | None = None, cap: float | None = None
) -> Extensions:
    """Discrete harmonic extensions of the boundary data.

    ``u0`` is componentwise harmonic with ``u0 = d_pert n`` on the boundary
    (corners add the contributions of both adjacent edges), so its tangential
    trace vanishes. ``w0`` is harmonic with ``w0 = rho_pert`` on the inflow
    edge and a mirrored-ghost zero-slope condition elsewhere.
    """
    grid = data.grid
    p = params.p if params is not None else 4.0
    if data.is_zero():
        ext = Extensions.zero(grid)
    else:
        st = stencils(grid.N)
        g0 = np.zeros((2, *grid.shape))
        for name, seg in grid.segments.items():
            ii, jj = seg.index
            g0[0][ii, jj] += data.d_pert[name] * seg.normal[0]
            g0[1][ii, jj] += data.d_pert[name] * seg.normal[1]
        A = _dirichlet_laplace(grid, grid.boundary_mask, st.lap)
        solve = spla.factorized(A)
        u0 = np.stack([solve(np.where(grid.boundary_mask, g, 0.0).ravel()).reshape(grid.shape) for g in g0])

        rhs = np.zeros(grid.shape)
        rhs[0, :] = data.rho_pert
        Aw = _dirichlet_laplace(grid, grid.inflow_mask, st.lap_reflect)
        w0 = spla.spsolve(Aw, rhs.ravel()).reshape(grid.shape)
        ext = Extensions(VectorField(grid, u0), ScalarField(grid, w0))
        ext.norms = {"u0_w2p": sobolev_norm(ext.u0, p, 2), "w0_w1p": sobolev_norm(ext.w0, p, 1)}
    if cap is not None and max(ext.norms.values()) > cap:
        raise SmallnessViolation(
            f"extension norms {ext.norms} exceed the smallness cap {cap}", cap=cap, **ext.norms
        )
    return ext


def mollify_sweeps(N: int, eps: float) -> int:
    return int(min(np.floor(eps * N * N + 1e-12), N))


def mollify(f: ScalarField | VectorField, eps: float) -> ScalarField | VectorField:
    """Iterated nearest-neighbour averaging ``(4 c + sum of 4 neighbours) / 8``.

    ``floor(eps / h^2)`` sweeps, capped at ``N``; boundary nodes are left
    untouched, so all boundary data are preserved.
    """
    if not eps > 0:
        raise ConfigurationError(f"eps must be > 0, got {eps}")
    k = mollify_sweeps(f.grid.N, eps)
    vals = f.values.copy()
    inner = (..., slice(1, -1), slice(1, -1))
    for _ in range(k):
        nb = vals[..., :-2, 1:-1] + vals[..., 2:, 1:-1] + vals[..., 1:-1, :-2] + vals[..., 1:-1, 2:]
        vals[inner] = (4 * vals[inner] + nb) / 8
    return type(f)(f.grid, vals)


# -- nonlinear terms -----------------------------------------------------------

@dataclass
class Coefficients:
    rho: np.ndarray  # w_bar + w0 + 1
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray


def coefficients(w_bar: ScalarField, w0: ScalarField, params: PhysicalParams) -> Coefficients:
    rho = w_bar.values + w0.values + 1.0
    low = rho < params.rho_min
    if low.any():
        node = tuple(int(k) for k in np.argwhere(low)[0])
        raise DensityFloor(
            f"density {rho[node]:.6g} below floor {params.rho_min} at node {node}",
            node=node,
            rho=float(rho[node]),
        )
    g = params.gamma
    return Coefficients(rho, g * rho**g / params.lam, g * rho ** (g - 1), g * rho ** (g - 2))


@dataclass
class NonlinearTerms:
    F: VectorField
    G: ScalarField
    coeffs: Coefficients


def assemble_F_G(
    u_bar: VectorField,
    w_bar: ScalarField,
    u0: VectorField,
    w0: ScalarField,
    params: PhysicalParams,
    transport: str = "upwind2",
) -> NonlinearTerms:
    """Right-hand sides of the perturbed momentum and mass equations.

    Expanding ``rho v.grad v`` about the constant flow leaves the convective
    terms ``-(w + w0) d1 u - rho d1 u0`` besides the products with ``u0``;
    they are part of ``F`` here so that the equation for ``(u, w)`` is exact.
    ``transport`` selects the stencil for ``d1 w0`` and must match the one
    used for ``d1 w`` in the mass rows.
    """
    grid = u_bar.grid
    c = coefficients(w_bar, w0, params)
    rho = c.rho[None]
    st = stencils(grid.N)
    d1 = lambda a: _d(grid, st.Dx, a)  # noqa: E731

    conv = (
        np.stack([d1(x) for x in u0.values])
        + advect(u0, u_bar).values
        + advect(u_bar, u0).values
        + advect(u_bar, u_bar).values
        + advect(u0, u0).values
    )
    F = (
        -rho * conv
        - (w_bar.values + w0.values)[None] * np.stack([d1(x) for x in u_bar.values])
        - c.a1[None] * grad(w0).values
        + params.mu * laplacian(u0).values
        + (params.nu + params.mu) * grad(div(u0)).values
    )
    bf = params.body_force_on(grid)
    if bf is not None:
        F = F + rho * bf.values
    G = (
        -c.rho * div(u0).values
        - advect(u_bar + u0, w0).values
        - _d(grid, st.transport_x(transport), w0.values)
    )
    return NonlinearTerms(VectorField(grid, F), ScalarField(grid, G), c)


def boundary_forcing(data: BoundaryData, u0: VectorField, params: PhysicalParams) -> np.ndarray:
    """``B = b_pert - 2 mu n.D(u0).tau - f u0.tau`` on open boundary nodes."""
    return data.nodal(data.b_pert) - slip_operator(u0, params)
