"""Manufactured solutions with exact mass conservation.

The density is ``rho* = 1 + delta r`` and the mass flux is
``m = (1, 0) + delta grad_perp psi``; the velocity ``v* = m / rho*`` then
satisfies ``div(rho* v*) = 0`` identically. Choosing ``psi`` with double
roots on the walls makes ``v*.n`` vanish there. The momentum equation is
balanced by a body force ``rho* F``; ``b``, ``d`` and ``rho_in`` are read off
the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as s

from .fields import ScalarField, VectorField
from .grid import Grid
from .operators import BoundaryData, PhysicalParams

X1, X2 = s.symbols("x1 x2", real=True)

DEFAULT_R = (1 + X1) * s.sin(s.pi * X2) / 2
DEFAULT_PSI = 8 * X2**2 * (1 - X2) ** 2 * (1 + X1)


@dataclass(frozen=True)
class Manufactured:
    delta: float
    mu: float
    nu: float
    gamma: float
    f: float
    v: Callable
    rho: Callable
    force: Callable
    b: dict[str, Callable]
    d: dict[str, Callable]
    rho_in: Callable

    def params(self, p: float = 4.0) -> PhysicalParams:
        return PhysicalParams(mu=self.mu, nu=self.nu, gamma=self.gamma, f=self.f, p=p, body_force=self.force)

    def boundary_data(self, grid: Grid) -> BoundaryData:
        return BoundaryData.from_physical(grid, self.params(), self.b, self.d, self.rho_in)

    def exact(self, grid: Grid) -> tuple[VectorField, ScalarField]:
        return VectorField.from_function(grid, self.v), ScalarField.from_function(grid, self.rho)


def _lambdify_vec(expr) -> Callable:
    fns = [s.lambdify((X1, X2), e, "numpy") for e in expr]

    def fn(x1, x2):
        return tuple(np.broadcast_to(g(x1, x2), np.shape(x1)).astype(float) for g in fns)

    return fn


def _lambdify(expr) -> Callable:
    g = s.lambdify((X1, X2), expr, "numpy")
    return lambda x1, x2: np.broadcast_to(g(x1, x2), np.shape(x1)).astype(float)


@lru_cache(maxsize=16)
def manufactured_solution(
    delta: float = 0.01,
    mu: float = 1.0,
    nu: float = 0.0,
    gamma: float = 1.4,
    f: float = 10.0,
    r_expr: str | None = None,
    psi_expr: str | None = None,
) -> Manufactured:
    r = DEFAULT_R if r_expr is None else s.sympify(r_expr, locals={"x1": X1, "x2": X2})
    psi = DEFAULT_PSI if psi_expr is None else s.sympify(psi_expr, locals={"x1": X1, "x2": X2})
    dl = s.Float(delta)
    rho = 1 + dl * r
    m = s.Matrix([1 - dl * s.diff(psi, X2), dl * s.diff(psi, X1)])
    v = m / rho

    def grad_s(e):
        return s.Matrix([s.diff(e, X1), s.diff(e, X2)])

    jac = v.jacobian([X1, X2])
    conv = jac * v
    lap = s.Matrix([s.diff(c, X1, 2) + s.diff(c, X2, 2) for c in v])
    divv = s.diff(v[0], X1) + s.diff(v[1], X2)
    lhs = rho * conv - mu * lap - (nu + mu) * grad_s(divv) + grad_s(rho**gamma)
    force = lhs / rho

    D = (jac + jac.T) / 2
    edges = {
        "inflow": ((-1, 0), (0, -1), {X1: 0}),
        "outflow": ((1, 0), (0, 1), {X1: 1}),
        "bottom": ((0, -1), (1, 0), {X2: 0}),
        "top": ((0, 1), (-1, 0), {X2: 1}),
    }
    b, d = {}, {}
    for name, (n, t, _) in edges.items():
        nv, tv = s.Matrix(n), s.Matrix(t)
        b[name] = _lambdify((2 * mu * (nv.T * D * tv)[0] + f * (v.T * tv)[0]))
        if name in ("inflow", "outflow"):
            d[name] = _lambdify((v.T * nv)[0])
    return Manufactured(
        delta=delta, mu=mu, nu=nu, gamma=gamma, f=f,
        v=_lambdify_vec(v), rho=_lambdify(rho), force=_lambdify_vec(force),
        b=b, d=d, rho_in=_lambdify(rho),
    )


@dataclass
class MMSLevel:
    N: int
    error_v: float
    error_rho: float
    eps: float
    mass_flux_defect: float
    solution: object = field(default=None, repr=False)


def observed_rates(errors: list[float]) -> list[float]:
    """Base-2 logarithms of successive error ratios (grids refined by 2)."""
    return [float(np.log2(a / b)) for a, b in zip(errors, errors[1:])]


def mms_study(
    levels=(16, 32, 64),
    delta: float = 0.01,
    params: PhysicalParams | None = None,
    config=None,
) -> list[MMSLevel]:
    """Solve the manufactured problem on each grid and record L2 errors of
    ``v`` and ``rho`` against the exact fields."""
    from .fields import lp_norm
    from .fixed_point import SolveConfig, continue_to_zero

    base = params if params is not None else PhysicalParams()
    ms = manufactured_solution(delta, base.mu, base.nu, base.gamma, base.f)
    prm = ms.params(base.p)
    out = []
    for N in levels:
        grid = Grid(N)
        cfg = SolveConfig(N=N) if config is None else config
        sol = continue_to_zero(cfg, prm, ms.boundary_data(grid))
        v_ex, rho_ex = ms.exact(grid)
        out.append(
            MMSLevel(N, lp_norm(sol.v - v_ex, 2.0), lp_norm(sol.rho - rho_ex, 2.0), sol.eps, sol.mass_flux_defect, sol)
        )
    return out
