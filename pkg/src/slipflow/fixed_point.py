"""Outer fixed-point iteration of T_eps, continuation in eps and the
uniqueness probe."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BallEscape,
    ConfigurationError,
    ContinuationStalled,
    OuterNoConvergence,
    SlipFlowError,
    SmallnessViolation,
)
from .fields import ScalarField, VectorField, h1_norm, lp_norm, sobolev_norm
from .grid import Grid
from .linear_core import TRANSPORT_SCHEMES, Perturbation, RegularizedProblem, apply_T
from .operators import BoundaryData, Extensions, PhysicalParams, build_extensions

HISTORY_COLUMNS = ("eps", "outer_iter", "increment_norm", "u_w2p", "w_w1p", "residual")


@dataclass(frozen=True)
class SolveConfig:
    N: int = 32
    eps_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    outer_tol: float = 1e-9
    max_outer: int = 100
    inner_tol: float | None = None
    max_inner: int = 200
    damping: float = 1.0
    ball_radius: float = 1.0
    scheme: str = "upwind2"
    cauchy_factor: float = 10.0
    max_extra_eps: int = 6

    def __post_init__(self):
        if isinstance(self.N, bool) or not isinstance(self.N, (int, np.integer)) or self.N < 8:
            raise ConfigurationError(f"N must be an integer >= 8, got {self.N!r}")
        sched = tuple(float(e) for e in self.eps_schedule)
        object.__setattr__(self, "eps_schedule", sched)
        if not sched or any(e <= 0 for e in sched):
            raise ConfigurationError("eps_schedule must be a non-empty list of positive numbers")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ConfigurationError(f"eps_schedule must be strictly decreasing, got {list(sched)}")
        if not self.outer_tol > 0 or (self.inner_tol is not None and not self.inner_tol > 0):
            raise ConfigurationError("tolerances must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigurationError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.ball_radius > 0:
            raise ConfigurationError(f"ball_radius must be positive, got {self.ball_radius}")
        if self.scheme not in TRANSPORT_SCHEMES:
            raise ConfigurationError(f"scheme must be one of {TRANSPORT_SCHEMES}, got {self.scheme!r}")
        if self.max_outer < 1 or self.max_inner < 1 or self.max_extra_eps < 0:
            raise ConfigurationError("iteration limits must be positive")

    @property
    def inner_tolerance(self) -> float:
        return self.inner_tol if self.inner_tol is not None else self.outer_tol / 10


def ball_radius_for(C: float) -> float:
    """Radius ``sqrt(D)`` with ``D = 1 / (4 C^2)``, for which the quadratic
    bound ``C (D_data + ||x||^2)`` maps the ball into itself."""
    return 1.0 / (2.0 * C)


@dataclass
class RegularizedSolution:
    eps: float
    pert: Perturbation
    problem: RegularizedProblem
    iterations: int
    history: list[dict] = field(default_factory=list)


def solve_regularized(
    eps: float,
    config: SolveConfig,
    params: PhysicalParams,
    data: BoundaryData,
    start: Perturbation | None = None,
    ext: Extensions | None = None,
) -> RegularizedSolution:
    """Iterate ``x <- T_eps(x)`` from ``start`` (default zero) until the
    ``W^2_p x W^1_p`` increment drops below ``outer_tol`` (relative to the
    iterate once its norm exceeds one)."""
    p = params.p
    problem = RegularizedProblem(data, params, eps, config.scheme, ext=ext)
    ext_norm = sum(problem.ext.norms.values())
    if ext_norm > config.ball_radius:
        raise SmallnessViolation(
            f"extension norms {ext_norm:.3e} exceed the ball radius {config.ball_radius}",
            **problem.ext.norms,
        )
    cur = start.copy() if start is not None else Perturbation.zeros(data.grid)
    inner = None
    history = []
    increments = []
    for it in range(1, config.max_outer + 1):
        new, rep = apply_T(
            problem, cur, config.inner_tolerance, config.max_inner, config.damping, start=inner
        )
        inc = (new - cur).norm(p)
        increments.append(inc)
        u_n, w_n = sobolev_norm(new.u, p, 2), sobolev_norm(new.w, p, 1)
        history.append(
            dict(eps=eps, outer_iter=it, increment_norm=inc, u_w2p=u_n, w_w1p=w_n, residual=rep.residual)
        )
        if u_n + w_n > config.ball_radius:
            raise BallEscape(
                f"iterate norm {u_n + w_n:.3e} left the ball of radius {config.ball_radius}",
                eps=eps, iteration=it, norm=u_n + w_n, radius=config.ball_radius,
            )
        cur, inner = new, new
        if inc <= config.outer_tol * max(1.0, u_n + w_n):
            return RegularizedSolution(eps, cur, problem, it, history)
    raise OuterNoConvergence(
        f"outer iteration at eps={eps:g} did not reach {config.outer_tol:g} in {config.max_outer} steps",
        eps=eps, increments=increments[-10:],
    )


@dataclass
class FlowSolution:
    v: VectorField
    rho: ScalarField
    pert: Perturbation
    ext: Extensions
    eps: float
    norms: dict[str, float]
    mass_flux_defect: float
    limit_residual: float
    history: list[dict] = field(default_factory=list)
    gaps: list[tuple[float, float]] = field(default_factory=list)
    solves: list[RegularizedSolution] = field(default_factory=list, repr=False)

    @property
    def grid(self) -> Grid:
        return self.rho.grid


def boundary_flux(v: VectorField, rho: ScalarField) -> float:
    """Trapezoidal ``int_Gamma rho v.n``, edge by edge."""
    g = v.grid
    total = 0.0
    for seg in g.segments.values():
        ii, jj = seg.index
        vn = v.values[0][ii, jj] * seg.normal[0] + v.values[1][ii, jj] * seg.normal[1]
        total += float(np.sum(g.edge_weights * rho.values[ii, jj] * vn))
    return total


def reconstruct(pert: Perturbation, ext: Extensions) -> tuple[VectorField, ScalarField]:
    """``v = (1, 0) + u0 + u`` and ``rho = 1 + w0 + w``."""
    base = np.array([1.0, 0.0])[:, None, None]
    return pert.u + ext.u0 + base, pert.w + ext.w0 + 1.0


def _nodal_l2(res: np.ndarray, grid: Grid) -> float:
    r = res.reshape(3, *grid.shape)
    return float(np.sqrt(np.sum(grid.weights * (r**2).sum(axis=0))))


def continue_to_zero(
    config: SolveConfig,
    params: PhysicalParams,
    data: BoundaryData,
    start: Perturbation | None = None,
) -> FlowSolution:
    """Solve along the eps schedule with warm starts.

    Convergence is declared once two successive eps-solutions differ by at
    most ``cauchy_factor * outer_tol``. If the schedule runs out while the
    gaps are still shrinking, it is extended geometrically by up to
    ``max_extra_eps`` further levels.
    """
    p = params.p
    ext = build_extensions(data, params)
    sched = list(config.eps_schedule)
    ratio = sched[-1] / sched[-2] if len(sched) > 1 else 0.1
    target = config.cauchy_factor * config.outer_tol
    solves: list[RegularizedSolution] = []
    gaps: list[tuple[float, float]] = []
    cur = start
    k = 0
    while True:
        eps = sched[k]
        sol = solve_regularized(eps, config, params, data, start=cur, ext=ext)
        if solves:
            gaps.append((eps, (sol.pert - solves[-1].pert).norm(p)))
        solves.append(sol)
        cur = sol.pert
        if gaps and gaps[-1][1] <= target:
            break
        k += 1
        if k < len(sched):
            continue
        extra = len(sched) - len(config.eps_schedule)
        shrinking = len(gaps) < 2 or gaps[-1][1] < gaps[-2][1]
        if extra >= config.max_extra_eps or not shrinking:
            raise ContinuationStalled(
                f"eps-continuation not Cauchy to {target:g}; last gap {gaps[-1][1] if gaps else float('nan'):.3e}",
                gaps=[list(g) for g in gaps],
            )
        sched.append(sched[-1] * ratio)

    final = solves[-1]
    v, rho = reconstruct(final.pert, ext)
    res = final.problem.limit_residual(final.pert)
    history = [row for s in solves for row in s.history]
    return FlowSolution(
        v=v,
        rho=rho,
        pert=final.pert,
        ext=ext,
        eps=final.eps,
        norms={
            "u_w2p": sobolev_norm(final.pert.u, p, 2),
            "w_w1p": sobolev_norm(final.pert.w, p, 1),
            "v_minus_vbar_w2p": sobolev_norm(v - np.array([1.0, 0.0])[:, None, None], p, 2),
            "rho_minus_1_w1p": sobolev_norm(rho - 1.0, p, 1),
        },
        mass_flux_defect=abs(boundary_flux(v, rho)),
        limit_residual=_nodal_l2(res, data.grid),
        history=history,
        gaps=gaps,
        solves=solves,
    )


# -- uniqueness ------------------------------------------------------------------

def random_smooth_perturbation(grid: Grid, norm: float, p: float, rng: np.random.Generator, modes: int = 3) -> Perturbation:
    """Random low-mode sine series scaled to ``||u||_{W^2_p} + ||w||_{W^1_p} = norm``."""
    k = np.arange(1, modes + 1)
    sx = np.sin(np.pi * k[:, None, None] * grid.x1[None])
    sy = np.sin(np.pi * k[:, None, None] * grid.x2[None])

    def series():
        c = rng.standard_normal((modes, modes)) / np.add.outer(k, k) ** 2
        return np.einsum("ab,aij,bij->ij", c, sx, sy)

    pert = Perturbation(VectorField(grid, np.stack([series(), series()])), ScalarField(grid, series()))
    return pert.scaled(norm / pert.norm(p))


def solution_distance(a: FlowSolution, b: FlowSolution) -> float:
    """``||v_a - v_b||_{H^1} + ||rho_a - rho_b||_{L_2}``."""
    return h1_norm(a.v - b.v) + lp_norm(a.rho - b.rho, 2.0)


@dataclass
class UniquenessReport:
    starts: list[dict]
    distances: list[list[float]]
    max_distance: float
    seed: int
    solutions: list[FlowSolution] = field(default_factory=list, repr=False)

    @property
    def all_converged(self) -> bool:
        return all(s["status"] == "converged" for s in self.starts)


def uniqueness_probe(
    solution: FlowSolution | None,
    config: SolveConfig,
    params: PhysicalParams,
    data: BoundaryData,
    n_starts: int = 3,
    seed: int = 0,
    start_fraction: float = 0.2,
    outside: bool = False,
    workers: int = 1,
) -> UniquenessReport:
    """Rerun the continuation from random smooth starts and compare.

    Starts have norm ``start_fraction * ball_radius``; with ``outside`` one
    extra start of norm ``10 * ball_radius`` is added, outside the ball. A
    failed restart is recorded, not raised. ``solution`` (if given) joins the
    pairwise comparison.
    """
    rng = np.random.default_rng(seed)
    grid = data.grid
    amps = [start_fraction * config.ball_radius] * n_starts
    if outside:
        amps.append(10.0 * config.ball_radius)
    starts = [random_smooth_perturbation(grid, a, params.p, rng) for a in amps]

    def run(start: Perturbation):
        try:
            return continue_to_zero(config, params, data, start=start), None
        except SlipFlowError as exc:
            return None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    records, sols = [], []
    for amp, (sol, err) in zip(amps, results):
        rec = {"start_norm": amp, "inside_ball": amp <= config.ball_radius}
        if sol is None:
            rec.update(status="escaped" if isinstance(err, SmallnessViolation) else "failed",
                       error=type(err).__name__, message=str(err))
        else:
            rec.update(status="converged", eps=sol.eps)
            sols.append(sol)
        records.append(rec)
    if solution is not None:
        sols.insert(0, solution)
    n = len(sols)
    dist = [[solution_distance(sols[i], sols[j]) if i != j else 0.0 for j in range(n)] for i in range(n)]
    max_d = max((max(r) for r in dist), default=0.0)
    return UniquenessReport(records, dist, float(max_d) if n > 1 else math.nan, seed, sols)


def with_overrides(config: SolveConfig, **kw) -> SolveConfig:
    return replace(config, **kw)
