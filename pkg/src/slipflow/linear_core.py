"""The linearized, elliptically regularized system and the map T_eps.

Unknowns are stacked as ``[u1, u2, w]``, each block flattened over all
nodes, so the system has ``3 (N+1)^2`` rows. Row ``r`` of block ``c``
holds the equation attached to node ``r`` for that block:

* interior nodes: momentum component ``c`` or the regularized mass equation;
* open boundary nodes: in the block of the normal component ``n.u = 0``,
  in the other block the slip condition; the mass equation is kept at every
  node off the inflow edge, with the zero-slope condition built into its
  mirrored-ghost Laplacian;
* corners: ``u = 0``; inflow nodes: ``w = 0``.

The constant-coefficient matrix depends only on the grid, the viscosities,
``gamma``, ``f``, ``eps`` and the transport stencil, so its factorization is
reused for every application of ``S``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, InnerNoConvergence, SmallnessViolation, SolverDiverged
from .fields import NormReport, ScalarField, VectorField, norm_report, sobolev_norm
from .grid import Grid
from .operators import (
    BoundaryData,
    Extensions,
    PhysicalParams,
    assemble_F_G,
    boundary_forcing,
    build_extensions,
    coefficients,
    mollify,
)
from .stencils import stencils

TRANSPORT_SCHEMES = ("upwind2", "central", "upwind1")
SOLVE_RTOL = 1e-10


@dataclass
class Perturbation:
    """A pair ``(u, w)`` of velocity and density perturbations."""

    u: VectorField
    w: ScalarField

    @classmethod
    def zeros(cls, grid: Grid) -> "Perturbation":
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid))

    @classmethod
    def from_vector(cls, grid: Grid, x: np.ndarray) -> "Perturbation":
        M = grid.n_nodes
        return cls(
            VectorField(grid, x[: 2 * M].reshape(2, *grid.shape)),
            ScalarField(grid, x[2 * M :].reshape(grid.shape)),
        )

    @property
    def grid(self) -> Grid:
        return self.w.grid

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.u.values.ravel(), self.w.values.ravel()])

    def norm(self, p: float) -> float:
        """``||u||_{W^2_p} + ||w||_{W^1_p}``."""
        return sobolev_norm(self.u, p, 2) + sobolev_norm(self.w, p, 1)

    def __sub__(self, other: "Perturbation") -> "Perturbation":
        return Perturbation(self.u - other.u, self.w - other.w)

    def __add__(self, other: "Perturbation") -> "Perturbation":
        return Perturbation(self.u + other.u, self.w + other.w)

    def scaled(self, s: float) -> "Perturbation":
        return Perturbation(self.u * s, self.w * s)

    def copy(self) -> "Perturbation":
        return Perturbation(self.u.copy(), self.w.copy())


@dataclass
class LinearSolveReport:
    residual: float
    iterations: int
    norms: dict[str, NormReport] = field(default_factory=dict)
    increments: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    damping: float = 1.0


# -- assembly --------------------------------------------------------------------

@dataclass(frozen=True)
class RowMasks:
    """Which equation each (block, node) row carries."""

    momentum: np.ndarray  # interior nodes
    normal_u1: np.ndarray  # open nodes on vertical edges
    normal_u2: np.ndarray  # open nodes on horizontal edges
    corner: np.ndarray
    w_dirichlet: np.ndarray
    mass: np.ndarray

    @classmethod
    def for_grid(cls, grid: Grid) -> "RowMasks":
        return cls(
            momentum=grid.interior_mask.ravel(),
            normal_u1=grid.vertical_edge_mask.ravel(),
            normal_u2=grid.horizontal_edge_mask.ravel(),
            corner=grid.corner_mask.ravel(),
            w_dirichlet=grid.inflow_mask.ravel(),
            mass=~grid.inflow_mask.ravel(),
        )


def _pick(mask: np.ndarray) -> sp.dia_matrix:
    return sp.diags(mask.astype(float))


def _diag(a: np.ndarray) -> sp.dia_matrix:
    return sp.diags(np.ravel(a))


def _slip_blocks(grid: Grid, params: PhysicalParams) -> tuple[sp.spmatrix, sp.spmatrix]:
    st = stencils(grid.N)
    n1, n2, t1, t2 = (_diag(a) for a in grid.edge_frames)
    mu = params.mu
    b1 = mu * (2 * n1 @ t1 @ st.Dx + (n1 @ t2 + n2 @ t1) @ st.Dy) + params.f * t1
    b2 = mu * ((n2 @ t1 + n1 @ t2) @ st.Dx + 2 * n2 @ t2 @ st.Dy) + params.f * t2
    return b1, b2


def assemble_matrix(
    grid: Grid,
    params: PhysicalParams,
    eps: float,
    scheme: str = "upwind2",
    a1: np.ndarray | float | None = None,
    rho: np.ndarray | float | None = None,
    velocity: VectorField | None = None,
    regularize: bool = True,
) -> sp.csr_matrix:
    """System matrix; with ``a1``, ``rho`` and ``velocity`` left out this is
    the constant-coefficient operator, otherwise the variable one with
    ``a1(w_bar)``, ``w_bar + w0 + 1`` and ``u_bar + u0`` as coefficients.
    ``regularize=False`` drops ``-eps lap w`` (the limit operator)."""
    if regularize and not eps > 0:
        raise ConfigurationError(f"eps must be > 0, got {eps}")
    if scheme not in TRANSPORT_SCHEMES:
        raise ConfigurationError(f"unknown transport scheme {scheme!r}")
    st = stencils(grid.N)
    rm = RowMasks.for_grid(grid)
    mu, nu = params.mu, params.nu
    A1 = _diag(np.broadcast_to(params.gamma if a1 is None else a1, grid.shape))
    R = _diag(np.broadcast_to(1.0 if rho is None else rho, grid.shape))

    m11 = st.Dx - mu * st.lap - (nu + mu) * st.Dxx
    m12 = -(nu + mu) * st.Dxy
    m22 = st.Dx - mu * st.lap - (nu + mu) * st.Dyy
    s1, s2 = _slip_blocks(grid, params)

    P = _pick(rm.momentum)
    Pn1, Pn2, Pc = _pick(rm.normal_u1), _pick(rm.normal_u2), _pick(rm.corner)
    row_u1 = sp.hstack([P @ m11 + Pn1 + Pn2 @ s1 + Pc, P @ m12 + Pn2 @ s2, P @ A1 @ st.Dx])
    row_u2 = sp.hstack([P @ m12 + Pn1 @ s1, P @ m22 + Pn2 + Pn1 @ s2 + Pc, P @ A1 @ st.Dy])

    transport = st.transport_x(scheme)
    if regularize:
        transport = transport - eps * st.lap_reflect
    if velocity is not None:
        transport = transport + _diag(velocity.values[0]) @ st.Dx + _diag(velocity.values[1]) @ st.Dy
    Pm, Pd = _pick(rm.mass), _pick(rm.w_dirichlet)
    row_w = sp.hstack([Pm @ R @ st.Dx, Pm @ R @ st.Dy, Pm @ transport + Pd])
    return sp.vstack([row_u1, row_u2, row_w]).tocsr()


def assemble_rhs(grid: Grid, F: VectorField, G: ScalarField, B: np.ndarray) -> np.ndarray:
    rm = RowMasks.for_grid(grid)
    B = np.ravel(B)
    r1 = np.where(rm.momentum, F.values[0].ravel(), 0.0) + np.where(rm.normal_u2, B, 0.0)
    r2 = np.where(rm.momentum, F.values[1].ravel(), 0.0) + np.where(rm.normal_u1, B, 0.0)
    r3 = np.where(rm.mass, G.values.ravel(), 0.0)
    return np.concatenate([r1, r2, r3])


class LinearCore:
    """Factorized constant-coefficient operator for one ``(grid, params, eps, scheme)``."""

    def __init__(self, grid: Grid, params: PhysicalParams, eps: float, scheme: str = "upwind2"):
        self.grid, self.params, self.eps, self.scheme = grid, params, eps, scheme
        self.matrix = assemble_matrix(grid, params, eps, scheme)
        self._lock = threading.Lock()

    @cached_property
    def _lu(self):
        try:
            return spla.splu(self.matrix.tocsc())
        except RuntimeError as exc:
            raise SolverDiverged(f"factorization failed: {exc}", eps=self.eps, N=self.grid.N) from exc

    def solve_vector(self, rhs: np.ndarray) -> np.ndarray:
        with self._lock:
            x = self._lu.solve(rhs)
        res = np.linalg.norm(self.matrix @ x - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        if not np.isfinite(res) or res > SOLVE_RTOL * scale and res > 1e-13:
            raise SolverDiverged(
                f"linear solve relative residual {res / scale:.3e} above {SOLVE_RTOL}",
                residual_history=[float(res / scale)],
            )
        return x

    def solve(self, F: VectorField, G: ScalarField, B: np.ndarray) -> Perturbation:
        return Perturbation.from_vector(self.grid, self.solve_vector(assemble_rhs(self.grid, F, G, B)))


@lru_cache(maxsize=32)
def _cached_core(N: int, mu: float, nu: float, gamma: float, f: float, eps: float, scheme: str) -> LinearCore:
    return LinearCore(Grid(N), PhysicalParams(mu=mu, nu=nu, gamma=gamma, f=f), eps, scheme)


def linear_core(grid: Grid, params: PhysicalParams, eps: float, scheme: str = "upwind2") -> LinearCore:
    if not eps > 0:
        raise ConfigurationError(f"eps must be > 0, got {eps}")
    return _cached_core(grid.N, params.mu, params.nu, params.gamma, params.f, float(eps), scheme)


def dump_matrix(A: sp.spmatrix, path: str | Path) -> None:
    """Write ``row col value`` triplets, one per line."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for r, c, v in zip(C.row, C.col, C.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def solve_const_coeff(
    F: VectorField,
    G: ScalarField,
    B: np.ndarray,
    eps: float,
    params: PhysicalParams,
    scheme: str = "upwind2",
) -> Perturbation:
    return linear_core(F.grid, params, eps, scheme).solve(F, G, B)


# -- the regularized problem ------------------------------------------------------

class RegularizedProblem:
    """Data of the linearized system at one ``eps``: extensions, their
    mollifications, ``B`` and the factorized constant-coefficient core."""

    def __init__(
        self,
        data: BoundaryData,
        params: PhysicalParams,
        eps: float,
        scheme: str = "upwind2",
        ext: Extensions | None = None,
        smallness_cap: float | None = None,
    ):
        if not eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {eps}")
        self.grid = data.grid
        self.data, self.params, self.eps, self.scheme = data, params, eps, scheme
        self.ext = ext if ext is not None else build_extensions(data, params)
        self.u0_eps = mollify(self.ext.u0, eps)
        self.w0_eps = mollify(self.ext.w0, eps)
        self.B = boundary_forcing(data, self.ext.u0, params)
        self.core = linear_core(self.grid, params, eps, scheme)
        self.smallness_cap = smallness_cap

    def forcing(self, bar: Perturbation):
        """``F_eps(u_bar, w_bar)`` and ``G_eps(u_bar, w_bar)``."""
        return assemble_F_G(bar.u, bar.w, self.u0_eps, self.w0_eps, self.params, self.scheme)

    def variable_matrix(self, bar: Perturbation, regularize: bool = True) -> sp.csr_matrix:
        c = coefficients(bar.w, self.ext.w0, self.params)
        return assemble_matrix(
            self.grid, self.params, self.eps, self.scheme,
            a1=c.a1, rho=c.rho, velocity=bar.u + self.ext.u0, regularize=regularize,
        )

    def variable_rhs(self, bar: Perturbation) -> np.ndarray:
        nl = self.forcing(bar)
        return assemble_rhs(self.grid, nl.F, nl.G, self.B)

    def residual(self, sol: Perturbation, bar: Perturbation) -> np.ndarray:
        """Row residual of the variable-coefficient system."""
        return self.variable_matrix(bar) @ sol.to_vector() - self.variable_rhs(bar)

    def limit_residual(self, sol: Perturbation) -> np.ndarray:
        """Row residual of the nonlinear system without regularization, evaluated
        with the unmollified extensions. The zero-slope condition is not part
        of that system and drops out with the ``eps`` term."""
        nl = assemble_F_G(sol.u, sol.w, self.ext.u0, self.ext.w0, self.params, self.scheme)
        A = self.variable_matrix(sol, regularize=False)
        return A @ sol.to_vector() - assemble_rhs(self.grid, nl.F, nl.G, self.B)

    def check_smallness(self, bar: Perturbation) -> None:
        if self.smallness_cap is None:
            return
        n = bar.norm(self.params.p)
        if n > self.smallness_cap:
            raise SmallnessViolation(
                f"iterate norm {n:.3e} exceeds the smallness cap {self.smallness_cap:.3e}",
                norm=n, cap=self.smallness_cap,
            )


def apply_S(
    problem: RegularizedProblem,
    bar: Perturbation,
    tilde: Perturbation,
    lam: float = 1.0,
) -> Perturbation:
    """One application of ``S`` for coefficients frozen at ``bar``.

    The variable parts of the coefficients act on ``tilde`` and move to the
    right-hand side; ``lam`` scales the whole right-hand side including ``B``.
    """
    problem.check_smallness(bar)
    st = stencils(problem.grid.N)
    g = problem.grid
    ext = problem.ext
    c = coefficients(bar.w, ext.w0, problem.params)
    nl = problem.forcing(bar)
    wt = tilde.w.values.ravel()
    gx = (st.Dx @ wt).reshape(g.shape)
    gy = (st.Dy @ wt).reshape(g.shape)
    div_t = (st.Dx @ tilde.u.values[0].ravel() + st.Dy @ tilde.u.values[1].ravel()).reshape(g.shape)
    vel = bar.u.values + ext.u0.values
    da = c.a1 - problem.params.gamma
    F = VectorField(g, np.stack([-da * gx, -da * gy]) + nl.F.values)
    G = ScalarField(g, -(c.rho - 1.0) * div_t - (vel[0] * gx + vel[1] * gy) + nl.G.values)
    rhs = assemble_rhs(g, F, G, problem.B)
    return Perturbation.from_vector(g, problem.core.solve_vector(lam * rhs))


def apply_T(
    problem: RegularizedProblem,
    bar: Perturbation,
    inner_tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 1.0,
    start: Perturbation | None = None,
    lam: float = 1.0,
) -> tuple[Perturbation, LinearSolveReport]:
    """Solve the variable-coefficient system by Picard iteration of ``S``.

    Increments are measured in ``W^2_p x W^1_p``; the damping factor is
    halved whenever an increment grows.
    """
    p = problem.params.p
    cur = start.copy() if start is not None else Perturbation.zeros(problem.grid)
    theta = damping
    increments: list[float] = []
    ratios: list[float] = []
    for it in range(1, max_iter + 1):
        new = apply_S(problem, bar, cur, lam)
        if theta != 1.0:
            new = cur + (new - cur).scaled(theta)
        inc = (new - cur).norm(p)
        if not np.isfinite(inc):
            raise SolverDiverged("inner iteration produced non-finite values", increments=increments)
        if increments and increments[-1] > 0:
            ratios.append(inc / increments[-1])
            if ratios[-1] > 1.0:
                theta *= 0.5
        increments.append(inc)
        cur = new
        scale = max(1.0, cur.norm(p))
        if inc <= inner_tol * scale:
            res = problem.residual(cur, bar) if lam == 1.0 else np.zeros(1)
            report = LinearSolveReport(
                residual=float(np.abs(res).max()),
                iterations=it,
                norms={"u": norm_report(cur.u, p), "w": norm_report(cur.w, p, with_w2p=False)},
                increments=increments,
                ratios=ratios,
                damping=theta,
            )
            return cur, report
    raise InnerNoConvergence(
        f"inner iteration did not reach {inner_tol:.1e} in {max_iter} steps",
        increments=increments[-10:],
        ratios=ratios[-10:],
    )


def lambda_family(
    problem: RegularizedProblem, bar: Perturbation, lams=(0.0, 0.5, 1.0), inner_tol: float = 1e-10
) -> dict[float, Perturbation]:
    """Fixed points of ``lam * S`` for each ``lam``."""
    return {lam: apply_T(problem, bar, inner_tol, lam=lam)[0] for lam in lams}
