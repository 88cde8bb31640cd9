"""Helmholtz decomposition ``u = grad phi + grad_perp A`` and the vorticity
problem.

For ``n.u = 0`` on the boundary of the square, ``u1`` expands in
``sin(k pi x1) cos(l pi x2)`` and ``u2`` in ``cos(k pi x1) sin(l pi x2)``;
the potential ``phi`` (zero normal slope, mean zero) expands in cosines and
the stream function ``A`` (zero on the boundary) in sines. The expansions are
exact on the nodes (DST-I / DCT-I), so each mode splits by a 2x2 solve and
the reconstruction and the orthogonality of the two parts hold to rounding.
Derivatives of ``phi`` and ``A`` are taken in the same spectral basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import fft

from .errors import PreconditionError, SolverDiverged
from .fields import ScalarField, VectorField, lp_norm
from .grid import Grid
from .operators import PhysicalParams, normal_trace, rot2d
from .stencils import stencils

NORMAL_TRACE_TOL = 1e-8


def _take(x, sl, axis):
    idx = [slice(None)] * x.ndim
    idx[axis] = sl
    return x[tuple(idx)]


def _pad(x, axis):
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 1)
    return np.pad(x, pad)


def _cos_weights(N, axis, ndim):
    w = np.full(N + 1, 2.0)
    w[[0, -1]] = 1.0
    shape = [1] * ndim
    shape[axis] = N + 1
    return w.reshape(shape)


def _analyse(x: np.ndarray, kinds: str) -> np.ndarray:
    """Synthesis coefficients ``c[k, l]`` with ``x = sum c phi_k(x1) phi_l(x2)``;
    ``kinds`` gives ``'s'`` (sine) or ``'c'`` (cosine) per axis."""
    N = x.shape[0] - 1
    for axis, kind in enumerate(kinds):
        if kind == "s":
            x = _pad(fft.dst(_take(x, slice(1, -1), axis), type=1, axis=axis) / N, axis)
        else:
            x = fft.dct(x, type=1, axis=axis) * _cos_weights(N, axis, x.ndim) / (2 * N)
    return x


def _synthesise(c: np.ndarray, kinds: str) -> np.ndarray:
    N = c.shape[0] - 1
    for axis, kind in enumerate(kinds):
        if kind == "s":
            c = _pad(fft.idst(_take(c, slice(1, -1), axis) * N, type=1, axis=axis), axis)
        else:
            c = fft.idct(c * 2 * N / _cos_weights(N, axis, c.ndim), type=1, axis=axis)
    return c


@dataclass
class HelmholtzParts:
    phi: ScalarField
    A: ScalarField
    grad_phi: VectorField
    perp_A: VectorField
    reconstruction_error: float
    orthogonality: float

    @property
    def grid(self) -> Grid:
        return self.phi.grid


def _inner(grid: Grid, a: VectorField, b: VectorField) -> float:
    return float(np.sum(grid.weights * (a.values * b.values).sum(axis=0)))


def decompose(u: VectorField, tol: float = NORMAL_TRACE_TOL) -> HelmholtzParts:
    """Split ``u`` (with zero normal trace) into gradient and rotated-gradient parts.

    ``reconstruction_error`` is the L2 norm of ``u - grad phi - grad_perp A``;
    ``orthogonality`` is ``|<grad phi, grad_perp A>|`` divided by the product
    of the two L2 norms (zero when either part vanishes).
    """
    g = u.grid
    N = g.N
    nt = np.abs(normal_trace(u)).max()
    nt = max(nt, np.abs(u.values[:, g.corner_mask]).max())
    if nt > tol:
        raise PreconditionError(f"normal trace {nt:.3e} exceeds {tol:.1e}", normal_trace=float(nt))
    a = _analyse(u.values[0], "sc")
    b = _analyse(u.values[1], "cs")
    k = np.arange(N + 1) * np.pi
    K, L = np.meshgrid(k, k, indexing="ij")
    idx = np.arange(N + 1)
    kin = (idx >= 1) & (idx <= N - 1)
    both = kin[:, None] & kin[None, :]
    edge_l = kin[:, None] & ~kin[None, :]  # only the u1 mode exists
    edge_k = ~kin[:, None] & kin[None, :]  # only the u2 mode exists

    c = np.zeros_like(a)
    e = np.zeros_like(a)
    S = np.where(both, K**2 + L**2, 1.0)
    c[both] = (-(K * a + L * b) / S)[both]
    e[both] = ((-L * a + K * b) / S)[both]
    c[edge_l] = (-a / np.where(K > 0, K, 1.0))[edge_l]
    c[edge_k] = (-b / np.where(L > 0, L, 1.0))[edge_k]

    phi = _synthesise(c, "cc")
    A = _synthesise(e, "ss")
    grad_phi = VectorField(g, np.stack([_synthesise(-K * c, "sc"), _synthesise(-L * c, "cs")]))
    perp_A = VectorField(g, np.stack([_synthesise(-L * e, "sc"), _synthesise(K * e, "cs")]))
    recon = lp_norm(u - grad_phi - perp_A, 2.0)
    n1, n2 = lp_norm(grad_phi, 2.0), lp_norm(perp_A, 2.0)
    ortho = abs(_inner(g, grad_phi, perp_A)) / (n1 * n2) if n1 > 0 and n2 > 0 else 0.0
    return HelmholtzParts(ScalarField(g, phi), ScalarField(g, A), grad_phi, perp_A, recon, ortho)


def spectral_div_rot(u: VectorField) -> tuple[ScalarField, ScalarField]:
    """Divergence and vorticity of a zero-normal-trace field in the same basis.

    ``div grad phi = div u`` and ``rot grad_perp A = rot u`` hold exactly in
    this basis; the nodal ``phi`` alone cannot resolve the top mode in each
    direction, so its own spectral Laplacian is not used.
    """
    N = u.grid.N
    k = np.arange(N + 1) * np.pi
    K, L = np.meshgrid(k, k, indexing="ij")
    a = _analyse(u.values[0], "sc")
    b = _analyse(u.values[1], "cs")
    div = _synthesise(K * a + L * b, "cc")
    rot = _synthesise(-K * b + L * a, "ss")
    return ScalarField(u.grid, div), ScalarField(u.grid, rot)


def _fill_corners(vals: np.ndarray) -> np.ndarray:
    out = vals.copy()
    n = out.shape[0] - 1
    for i, j, di, dj in ((0, 0, 1, 1), (0, n, 1, -1), (n, 0, -1, 1), (n, n, -1, -1)):
        out[i, j] = 0.5 * (out[i + di, j] + out[i, j + dj])
    return out


def vorticity_solve(
    source: VectorField | ScalarField,
    u_tangential: np.ndarray,
    B: np.ndarray,
    params: PhysicalParams,
) -> ScalarField:
    """Solve ``d1 alpha - mu lap alpha = rot F`` with ``alpha = -(f/mu) u.tau + B/mu`` on the boundary.

    ``source`` is either the vector ``F`` (its discrete curl is taken) or the
    scalar right-hand side directly. ``u_tangential`` and ``B`` are nodal
    arrays read on boundary nodes; corner data are the mean of the two
    neighbouring edge nodes.
    """
    g = source.grid
    st = stencils(g.N)
    rhs = rot2d(source).values if isinstance(source, VectorField) else source.values
    bc = _fill_corners(-(params.f / params.mu) * np.asarray(u_tangential) + np.asarray(B) / params.mu)
    bmask = g.boundary_mask.ravel()
    keep = sp.diags((~bmask).astype(float))
    A = (keep @ (st.Dx - params.mu * st.lap) + sp.diags(bmask.astype(float))).tocsc()
    b = np.where(bmask, bc.ravel(), rhs.ravel())
    x = spla.spsolve(A, b)
    res = np.linalg.norm(A @ x - b)
    if not np.isfinite(res) or res > 1e-9 * max(1.0, np.linalg.norm(b)):
        raise SolverDiverged(f"vorticity solve residual {res:.3e}", residual_history=[float(res)])
    return ScalarField(g, x.reshape(g.shape))


def tangential_component(u: VectorField) -> np.ndarray:
    _, _, t1, t2 = u.grid.edge_frames
    return u.values[0] * t1 + u.values[1] * t2
