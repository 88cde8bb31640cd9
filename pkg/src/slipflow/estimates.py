"""Numerical checks of the inequalities behind the existence proof.

Each verifier returns an :class:`EstimateReport` with both sides of the
inequality and the implied constant ``lhs / core``, where ``core`` is the
data-dependent bracket on the right. A report passes when its precondition
holds and ``lhs <= bound * core``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid

from .errors import NumericError
from .fields import (
    ScalarField,
    VectorField,
    boundary_lp_norm,
    boundary_trace_norm,
    fractional_norm,
    h1_norm,
    lp_norm,
    sobolev_norm,
)
from .grid import Grid
from .helmholtz import decompose, tangential_component, vorticity_solve
from .operators import PhysicalParams, advect, coefficients, div, grad, rot2d
from .stencils import stencils

DEFAULT_BOUND = 100.0


@dataclass
class EstimateReport:
    name: str
    lhs: float
    rhs: float
    implied_constant: float
    passed: bool
    N: int
    eps: float | None = None
    core: float = math.nan
    details: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = asdict(self)
        out.pop("details")
        return out


def _implied(lhs: float, core: float) -> float:
    if core > 0:
        return lhs / core
    return 0.0 if lhs == 0 else math.inf


def _report(name, lhs, core, bound, ok, N, eps, details) -> EstimateReport:
    rhs = bound * core
    passed = bool(ok and lhs <= rhs * (1 + 1e-12) + 1e-300)
    return EstimateReport(name, lhs, rhs, _implied(lhs, core), passed, N, eps, core, details)


def reports_to_csv(reports: list[EstimateReport]) -> str:
    buf = io.StringIO()
    cols = ["name", "N", "eps", "lhs", "core", "rhs", "implied_constant", "passed"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        row = r.row()
        w.writerow([repr(float(row[c])) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def summary_table(reports: list[EstimateReport]) -> str:
    lines = [f"{'estimate':<24}{'N':>5}{'eps':>10}{'lhs':>12}{'core':>12}{'C':>12}  pass"]
    for r in reports:
        eps = "-" if r.eps is None else f"{r.eps:.1e}"
        lines.append(
            f"{r.name:<24}{r.N:>5}{eps:>10}{r.lhs:>12.4e}{r.core:>12.4e}{r.implied_constant:>12.4e}  "
            + ("yes" if r.passed else "NO")
        )
    return "\n".join(lines)


# -- Korn ------------------------------------------------------------------------

def _fem_1d(N: int) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """Linear-element mass, stiffness and ``C[a, b] = int psi_a' psi_b``."""
    h = 1.0 / N
    n = N + 1
    main = np.full(n, 2 * h / 3)
    main[[0, -1]] = h / 3
    M = sp.diags([np.full(N, h / 6), main, np.full(N, h / 6)], [-1, 0, 1])
    kmain = np.full(n, 2 / h)
    kmain[[0, -1]] = 1 / h
    K = sp.diags([np.full(N, -1 / h), kmain, np.full(N, -1 / h)], [-1, 0, 1])
    cmain = np.zeros(n)
    cmain[0], cmain[-1] = -0.5, 0.5
    C = sp.diags([np.full(N, -0.5), cmain, np.full(N, 0.5)], [-1, 0, 1])
    return M.tocsr(), K.tocsr(), C.tocsr()


def korn_matrices(grid: Grid, params: PhysicalParams, friction: bool = True):
    """Bilinear-element matrices of the Korn form and of the H^1 inner product,
    restricted to fields with zero normal trace; returns ``(A, G, free)``."""
    N = grid.N
    M1, K1, C1 = _fem_1d(N)
    Kxx, Kyy = sp.kron(K1, M1), sp.kron(M1, K1)
    Kxy = sp.kron(C1, C1.T)  # int d1 phi_a d2 phi_b
    M = sp.kron(M1, M1)
    mu, nu = params.mu, params.nu
    A11 = (2 * mu + nu) * Kxx + mu * Kyy
    A22 = mu * Kxx + (2 * mu + nu) * Kyy
    A12 = mu * Kxy.T + nu * Kxy
    A = sp.bmat([[A11, A12], [A12.T, A22]]).tolil()
    if friction:
        n = N + 1
        e = sp.lil_matrix((n, n))
        e[0, 0] = e[N, N] = 1.0
        Mi = sp.kron(e[[0], :].T @ e[[0], :], M1)  # edge x1 = 0 (inflow): u2 tangential
        Mo = sp.kron(e[[N], :].T @ e[[N], :], M1)
        Mb = sp.kron(M1, e[[0], :].T @ e[[0], :])  # walls: u1 tangential
        Mt = sp.kron(M1, e[[N], :].T @ e[[N], :])
        Z = sp.csr_matrix((grid.n_nodes, grid.n_nodes))
        f = params.f
        wall = f * (Mb + Mt)
        vert = (f - 0.5) * Mi + (f + 0.5) * Mo
        A = A + sp.bmat([[wall, Z], [Z, vert]])
    H1 = M + Kxx + Kyy
    G = sp.block_diag([H1, H1])
    free = np.concatenate([~grid.vertical_edge_mask.ravel() & ~grid.corner_mask.ravel(),
                           ~grid.horizontal_edge_mask.ravel() & ~grid.corner_mask.ravel()])
    idx = np.flatnonzero(free)
    A = sp.csr_matrix(A)[idx][:, idx].tocsc()
    G = sp.csr_matrix(G)[idx][:, idx].tocsc()
    return A, G, free


def korn_form(u: VectorField, params: PhysicalParams, friction: bool = True) -> float:
    """Value of ``int 2 mu |D u|^2 + nu (div u)^2`` (plus the boundary friction
    term ``int (f + n1/2) (u.tau)^2``) for the bilinear interpolant of ``u``."""
    A, _, free = korn_matrices(u.grid, params, friction)
    x = np.concatenate([u.values[0].ravel(), u.values[1].ravel()])[free]
    return float(x @ (A @ x))


@dataclass
class KornResult:
    value: float
    iterations: int
    eigsh_value: float | None
    mode: VectorField


def korn_constant(
    grid: Grid,
    params: PhysicalParams,
    friction: bool = True,
    tol: float = 1e-10,
    max_iter: int = 2000,
    seed: int = 0,
    crosscheck: bool = True,
) -> KornResult:
    """Smallest eigenvalue of the pencil (Korn form, H^1 Gram) by inverse iteration."""
    A, G, free = korn_matrices(grid, params, friction)
    solve = spla.factorized(A)
    x = np.random.default_rng(seed).standard_normal(A.shape[0])
    lam_old = math.inf
    for it in range(1, max_iter + 1):
        y = solve(G @ x)
        y /= math.sqrt(y @ (G @ y))
        lam = float(y @ (A @ y))
        x = y
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    else:
        raise NumericError(f"Korn inverse iteration stagnated after {max_iter} steps", value=lam)
    ref = None
    if crosscheck:
        ref = float(spla.eigsh(A, k=1, M=G, sigma=0.0, which="LM", return_eigenvectors=False)[0])
    full = np.zeros(2 * grid.n_nodes)
    full[free] = x
    return KornResult(lam, it, ref, VectorField(grid, full.reshape(2, *grid.shape)))


# -- energy estimate ---------------------------------------------------------------

def smallness_measure(u_bar, w_bar, u0, w0, p: float) -> float:
    """``||u_bar||_{W^2_p} + ||w_bar||_{W^1_p} + ||u0||_{W^2_p} + ||w0||_{W^1_p}``,
    the quantity that must be small for the linear estimates."""
    return (
        sobolev_norm(u_bar, p, 2) + sobolev_norm(w_bar, p, 1)
        + sobolev_norm(u0, p, 2) + sobolev_norm(w0, p, 1)
    )


def _as_field(grid: Grid, B) -> ScalarField:
    return B if isinstance(B, ScalarField) else ScalarField(grid, np.asarray(B))


def step2_integrals(w, u, G, u_bar, w_bar, u0, w0, eps, params) -> dict[str, float]:
    """Telescoped integrals of the density bound: ``S1``, ``S2`` integrated over
    the square and the outflow term ``eps int_out w^2``."""
    g = w.grid
    st = stencils(g.N)
    c = coefficients(w_bar, w0, params)
    x = g.x1[:, 0]
    s1_int = 2 * w.values * (G.values - c.rho * div(u).values)
    lap_w = (st.lap_reflect @ w.values.ravel()).reshape(g.shape)
    s2_int = -2 * w.values * advect(u_bar + u0, w).values + 2 * eps * w.values * lap_w
    S1 = cumulative_trapezoid(s1_int, x, axis=0, initial=0.0)
    S2 = cumulative_trapezoid(s2_int, x, axis=0, initial=0.0)
    out = g.segments["outflow"]
    ii, jj = out.index
    defect = w.values**2 - w.values[0][None, :] ** 2 - S1 - S2
    return {
        "int_S1": float(np.sum(g.weights * S1)),
        "int_S2": float(np.sum(g.weights * S2)),
        "eps_outflow_w2": float(eps * np.sum(g.edge_weights * w.values[ii, jj] ** 2)),
        "telescope_defect_l2": lp_norm(ScalarField(g, defect), 2.0),
    }


def verify_energy_estimate(
    u: VectorField,
    w: ScalarField,
    F: VectorField,
    G: ScalarField,
    B,
    u_bar: VectorField,
    w_bar: ScalarField,
    eps: float,
    params: PhysicalParams,
    u0: VectorField | None = None,
    w0: ScalarField | None = None,
    residual: np.ndarray | None = None,
    residual_tol: float = 1e-6,
    bound: float = DEFAULT_BOUND,
) -> EstimateReport:
    """``||u||_{W^1_2} + ||w||_{L_2} <= C [||F||_{L_2} + ||G||_{L_2} + ||B||_{L_2(Gamma)} + E ||w||_{W^1_p}]``.

    ``E`` is the measured smallness of the coefficients. ``residual`` (the row
    residual of the system the pair is supposed to solve) is the precondition.
    """
    g = u.grid
    p = params.p
    u0 = u0 if u0 is not None else VectorField.zeros(g)
    w0 = w0 if w0 is not None else ScalarField.zeros(g)
    Bf = _as_field(g, B)
    E = smallness_measure(u_bar, w_bar, u0, w0, p)
    lhs = h1_norm(u) + lp_norm(w, 2.0)
    pieces = {
        "F_l2": lp_norm(F, 2.0),
        "G_l2": lp_norm(G, 2.0),
        "B_l2_boundary": boundary_lp_norm(Bf, None, 2.0),
        "E": E,
        "w_w1p": sobolev_norm(w, p, 1),
    }
    core = pieces["F_l2"] + pieces["G_l2"] + pieces["B_l2_boundary"] + E * pieces["w_w1p"]
    res = float(np.abs(residual).max()) if residual is not None else 0.0
    ok = res <= residual_tol
    details = {**pieces, "residual": res, "precondition": ok}
    details.update(step2_integrals(w, u, G, u_bar, w_bar, u0, w0, eps, params))
    return _report("energy", lhs, core, bound, ok, g.N, eps, details)


# -- transport reduction -------------------------------------------------------------

@dataclass
class TransportPieces:
    H_bar: ScalarField
    H_tilde: ScalarField
    H: ScalarField
    residual: ScalarField


def transport_pieces(u, w, u_bar, w_bar, G, u0, w0, eps, params, scheme="upwind2") -> TransportPieces:
    g = u.grid
    st = stencils(g.N)
    c = coefficients(w_bar, w0, params)
    lam = params.lam
    H_bar = -lam * div(u).values + c.a1 * w.values
    H_tilde = H_bar * c.rho / lam + G.values
    H = H_bar / lam + G.values
    wf = w.values.ravel()
    lhs = (
        c.a0 * w.values
        + (st.transport_x(scheme) @ wf).reshape(g.shape)
        + advect(u_bar + u0, w).values
        - eps * (st.lap_reflect @ wf).reshape(g.shape)
    )
    res = np.where(g.inflow_mask, 0.0, lhs - H_tilde)
    return TransportPieces(*(ScalarField(g, a) for a in (H_bar, H_tilde, H, res)))


def verify_transport_reduction(
    u: VectorField,
    w: ScalarField,
    u_bar: VectorField,
    w_bar: ScalarField,
    G: ScalarField,
    eps: float,
    params: PhysicalParams,
    u0: VectorField | None = None,
    w0: ScalarField | None = None,
    scheme: str = "upwind2",
    tol: float = 1e-8,
    bound: float = DEFAULT_BOUND,
) -> EstimateReport:
    """Rebuild the transport equation ``a0 w + d1 w + (u_bar + u0).grad w - eps lap w = H~``
    from ``H_bar = -(nu + 2 mu) div u + a1 w`` and check it nodally; then
    measure ``||w||_{W^1_p} + ||d1 w||_{L_p(inflow)} <= C [||H||_{W^1_p} + ||H||_{L_p(inflow)}]``."""
    g = u.grid
    p = params.p
    u0 = u0 if u0 is not None else VectorField.zeros(g)
    w0 = w0 if w0 is not None else ScalarField.zeros(g)
    tp = transport_pieces(u, w, u_bar, w_bar, G, u0, w0, eps, params, scheme)
    res = float(np.abs(tp.residual.values).max())
    d1w = ScalarField(g, grad(w).values[0])
    lhs = sobolev_norm(w, p, 1) + boundary_lp_norm(d1w, "inflow", p)
    core = sobolev_norm(tp.H, p, 1) + boundary_lp_norm(tp.H, "inflow", p)
    details = {"identity_residual": res, "precondition": res <= tol,
               "H_w1p": sobolev_norm(tp.H, p, 1), "H_bar_w1p": sobolev_norm(tp.H_bar, p, 1)}
    return _report("transport", lhs, core, bound, res <= tol, g.N, eps, details)


# -- interpolation -------------------------------------------------------------------

def random_smooth_field(grid: Grid, rng: np.random.Generator, modes: int = 4) -> ScalarField:
    k = np.arange(modes)
    c = rng.standard_normal((modes, modes)) / (1.0 + np.add.outer(k, k)) ** 2
    cx = np.cos(np.pi * k[:, None, None] * grid.x1[None])
    cy = np.cos(np.pi * k[:, None, None] * grid.x2[None])
    return ScalarField(grid, np.einsum("ab,aij,bij->ij", c, cx, cy))


def verify_interpolation(
    f: ScalarField,
    p: float = 4.0,
    epsilons=(1.0, 0.1, 0.01),
    n_random: int = 100,
    seed: int = 0,
    eta: float = 0.1,
    fractional: bool = True,
    n_fractional: int = 20,
) -> EstimateReport:
    """Smallest ``C(eps)`` in ``||g||_{L_p} <= eps ||grad g||_{L_p} + C ||g||_{L_2}``
    for ``f`` and for a seeded family of smooth fields, and the analogue for
    ``||g||_{W^{1/p+eta}_p} <= eps ||g||_{W^1_p} + C ||g||_{L_p}``; the
    fractional check uses ``f`` and the first ``n_fractional`` family members
    because its pairwise quadrature is quadratic in the node count."""
    g = f.grid
    rng = np.random.default_rng(seed)
    family = [f] + [random_smooth_field(g, rng) for _ in range(n_random)]
    s = 1.0 / p + eta

    def stats(h):
        gr = grad(h)
        return lp_norm(h, p), lp_norm(gr, p), lp_norm(h, 2.0), sobolev_norm(h, p, 1)

    base = [stats(h) for h in family]
    frac = [fractional_norm(h, s, p) for h in family[: n_fractional + 1]] if fractional else None

    def c1(st, e):
        lp, glp, l2, _ = st
        return max(lp - e * glp, 0.0) / l2 if l2 > 0 else 0.0

    def c2(st, fr, e):
        lp, _, _, w1p = st
        return max(fr - e * w1p, 0.0) / lp if lp > 0 else 0.0

    table = []
    for e in epsilons:
        row = {"eps": e, "C_f": c1(base[0], e), "C_family": max(c1(b, e) for b in base)}
        if fractional:
            row["C2_f"] = c2(base[0], frac[0], e)
            row["C2_family"] = max(c2(b, fr, e) for b, fr in zip(base, frac))
        table.append(row)
    e_min = min(epsilons)
    last = [r for r in table if r["eps"] == e_min][0]
    lp, glp, l2, _ = base[0]
    ok = all(math.isfinite(r["C_family"]) for r in table)
    details = {"table": table, "seed": seed, "n_random": n_random, "s": s}
    rhs = e_min * glp + last["C_f"] * l2
    return EstimateReport("interpolation", lp, rhs, last["C_f"], ok, g.N, None, l2, details)


# -- a-priori estimate -----------------------------------------------------------------

def verify_apriori(
    u: VectorField,
    w: ScalarField,
    F: VectorField,
    G: ScalarField,
    B,
    eps: float,
    params: PhysicalParams,
    u_bar: VectorField | None = None,
    w_bar: ScalarField | None = None,
    u0: VectorField | None = None,
    w0: ScalarField | None = None,
    bound: float = DEFAULT_BOUND,
    with_helmholtz: bool = True,
) -> EstimateReport:
    """``||u||_{W^2_p} + ||w||_{W^1_p} <= C [||F||_{L_p} + ||G||_{W^1_p} + ||B||_trace]``,
    together with the pieces of the gradient bound for ``H_bar``."""
    g = u.grid
    p = params.p
    zero_u, zero_w = VectorField.zeros(g), ScalarField.zeros(g)
    u_bar = u_bar if u_bar is not None else zero_u
    w_bar = w_bar if w_bar is not None else zero_w
    u0 = u0 if u0 is not None else zero_u
    w0 = w0 if w0 is not None else zero_w
    Bf = _as_field(g, B)
    lhs = sobolev_norm(u, p, 2) + sobolev_norm(w, p, 1)
    pieces = {
        "F_lp": lp_norm(F, p),
        "G_w1p": sobolev_norm(G, p, 1),
        "B_trace": boundary_trace_norm(Bf, None, p),
    }
    core = sum(pieces.values())
    c = coefficients(w_bar, w0, params)
    H_bar = ScalarField(g, -params.lam * div(u).values + c.a1 * w.values)
    E = smallness_measure(u_bar, w_bar, u0, w0, p)
    grad_H = lp_norm(grad(H_bar), p)
    H_core = pieces["F_lp"] + pieces["B_trace"] + boundary_trace_norm(u, None, p)
    details = {
        **pieces,
        "grad_H_bar_lp": grad_H,
        "grad_H_bar_core": H_core,
        "E_w_w1p": E * sobolev_norm(w, p, 1),
        "grad_H_bar_constant": _implied(grad_H, H_core + E * sobolev_norm(w, p, 1)),
    }
    if with_helmholtz:
        parts = decompose(u, tol=1e-7)
        alpha_fd = rot2d(u)
        src = F - grad(w) * c.a1
        alpha = vorticity_solve(src, tangential_component(u), np.asarray(Bf.values), params)
        details.update(
            helmholtz_reconstruction=parts.reconstruction_error,
            helmholtz_orthogonality=parts.orthogonality,
            phi_A_w1p=sobolev_norm(parts.phi, p, 1) + sobolev_norm(parts.A, p, 1),
            vorticity_gap_l2=lp_norm(alpha - alpha_fd, 2.0),
            vorticity_l2=lp_norm(alpha_fd, 2.0),
        )
    return _report("apriori", lhs, core, bound, True, g.N, eps, details)


# -- convenience wrappers around a regularized solution ----------------------------------

def reports_for_solution(sol, bound: float = DEFAULT_BOUND) -> list[EstimateReport]:
    """Energy, transport and a-priori reports for a converged fixed point of
    ``T_eps`` (a :class:`~slipflow.fixed_point.RegularizedSolution`)."""
    pr = sol.problem
    x = sol.pert
    nl = pr.forcing(x)
    res = pr.residual(x, x)
    ext = pr.ext
    common = dict(u0=ext.u0, w0=ext.w0)
    return [
        verify_energy_estimate(x.u, x.w, nl.F, nl.G, pr.B, x.u, x.w, pr.eps, pr.params,
                               residual=res, bound=bound, **common),
        verify_transport_reduction(x.u, x.w, x.u, x.w, nl.G, pr.eps, pr.params,
                                   scheme=pr.scheme, bound=bound, **common),
        verify_apriori(x.u, x.w, nl.F, nl.G, pr.B, pr.eps, pr.params, x.u, x.w, bound=bound, **common),
    ]


def constant_spread(reports: list[EstimateReport]) -> float:
    """``max / min`` of the implied constants (1 when all are zero)."""
    vals = [r.implied_constant for r in reports if r.implied_constant > 0]
    if not vals:
        return 1.0
    return max(vals) / min(vals)
