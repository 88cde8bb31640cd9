"""Sparse finite-difference matrices on the nodal grid.

All stencils are second order: central in the interior and one-sided at the
edges, so first and second derivatives are exact on quadratics.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


def _first_1d(n: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((n + 1, n + 1))
    for k in range(1, n):
        D[k, k - 1], D[k, k + 1] = -0.5 / h, 0.5 / h
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[n, n - 2 :] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _second_1d(n: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((n + 1, n + 1))
    for k in range(1, n):
        D[k, k - 1 : k + 2] = np.array([1.0, -2.0, 1.0]) / h**2
    D[0, :4] = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
    D[n, n - 3 :] = np.array([-1.0, 4.0, -5.0, 2.0]) / h**2
    return D.tocsr()


def _second_1d_reflect(n: int, h: float) -> sp.csr_matrix:
    """Second difference with a mirrored ghost node at both ends (zero slope)."""
    D = sp.lil_matrix((n + 1, n + 1))
    for k in range(1, n):
        D[k, k - 1 : k + 2] = np.array([1.0, -2.0, 1.0]) / h**2
    D[0, :2] = np.array([-2.0, 2.0]) / h**2
    D[n, n - 1 :] = np.array([2.0, -2.0]) / h**2
    return D.tocsr()


def _upwind_1d(n: int, h: float) -> sp.csr_matrix:
    """Second-order backward difference for transport in the +x direction.

    Row 1 has only one upstream neighbour and falls back to the central
    stencil; row 0 keeps the forward one-sided stencil.
    """
    D = sp.lil_matrix((n + 1, n + 1))
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[1, 0], D[1, 2] = -0.5 / h, 0.5 / h
    for k in range(2, n + 1):
        D[k, k - 2 : k + 1] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return D.tocsr()


def _upwind1_1d(n: int, h: float) -> sp.csr_matrix:
    D = sp.lil_matrix((n + 1, n + 1))
    D[0, :2] = np.array([-1.0, 1.0]) / h
    for k in range(1, n + 1):
        D[k, k - 1 : k + 1] = np.array([-1.0, 1.0]) / h
    return D.tocsr()


@dataclass(frozen=True)
class Stencils:
    N: int
    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    Dxx: sp.csr_matrix
    Dyy: sp.csr_matrix
    Dxy: sp.csr_matrix
    lap: sp.csr_matrix
    lap_reflect: sp.csr_matrix
    Dx_upwind2: sp.csr_matrix
    Dx_upwind1: sp.csr_matrix

    def transport_x(self, scheme: str) -> sp.csr_matrix:
        if scheme == "upwind2":
            return self.Dx_upwind2
        if scheme == "upwind1":
            return self.Dx_upwind1
        if scheme == "central":
            return self.Dx
        raise ValueError(f"unknown transport scheme {scheme!r}")


@lru_cache(maxsize=16)
def stencils(N: int) -> Stencils:
    h = 1.0 / N
    eye = sp.identity(N + 1, format="csr")
    d1, d2 = _first_1d(N, h), _second_1d(N, h)
    Dx, Dy = sp.kron(d1, eye, "csr"), sp.kron(eye, d1, "csr")
    Dxx, Dyy = sp.kron(d2, eye, "csr"), sp.kron(eye, d2, "csr")
    r = _second_1d_reflect(N, h)
    return Stencils(
        N=N,
        Dx=Dx,
        Dy=Dy,
        Dxx=Dxx,
        Dyy=Dyy,
        Dxy=(Dx @ Dy).tocsr(),
        lap=(Dxx + Dyy).tocsr(),
        lap_reflect=(sp.kron(r, eye) + sp.kron(eye, r)).tocsr(),
        Dx_upwind2=sp.kron(_upwind_1d(N, h), eye, "csr"),
        Dx_upwind1=sp.kron(_upwind1_1d(N, h), eye, "csr"),
    )
