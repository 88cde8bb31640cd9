"""The discrete unit square and its boundary.

Nodes are indexed ``(i, j)`` with ``x1 = i*h`` and ``x2 = j*h``; nodal arrays
have shape ``(N+1, N+1)`` and are flattened in C order, so the flat index of
node ``(i, j)`` is ``i*(N+1) + j``.

The base flow is ``(1, 0)``, so the edge ``x1 = 0`` is the inflow part of the
boundary, ``x1 = 1`` the outflow part, and ``x2 in {0, 1}`` are walls.
Tangents are counter-clockwise, ``tau = (-n2, n1)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, ContractViolation

MIN_NODES_PER_EDGE = 8


class SegmentKind(enum.Enum):
    INFLOW = "inflow"
    OUTFLOW = "outflow"
    WALL = "wall"


@dataclass(frozen=True)
class BoundarySegment:
    """One edge of the square.

    ``nodes`` lists all ``N+1`` edge nodes (corners included) ordered by the
    edge coordinate; ``open_nodes`` drops the two corners.
    """

    name: str
    kind: SegmentKind
    nodes: tuple[tuple[int, int], ...]
    normal: tuple[float, float]
    tangent: tuple[float, float]

    @property
    def open_nodes(self) -> tuple[tuple[int, int], ...]:
        return self.nodes[1:-1]

    @property
    def index(self) -> tuple[np.ndarray, np.ndarray]:
        """Fancy index ``(i, j)`` selecting this edge from a nodal array."""
        ii, jj = zip(*self.nodes)
        return np.array(ii), np.array(jj)

    def coordinate(self, grid: "Grid") -> np.ndarray:
        """Arc-length coordinate along the edge, in ``[0, 1]``."""
        return np.arange(grid.N + 1) * grid.h


@dataclass(frozen=True)
class CornerPolicy:
    node: tuple[int, int]
    velocity_zero: bool
    density: str  # "dirichlet" or "neumann"
    edges: tuple[str, str]


@dataclass(frozen=True)
class Grid:
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < MIN_NODES_PER_EDGE:
            raise ConfigurationError(
                f"grid needs N >= {MIN_NODES_PER_EDGE} intervals per edge, got {self.N}",
                N=self.N,
            )

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N + 1, self.N + 1)

    @property
    def n_nodes(self) -> int:
        return (self.N + 1) ** 2

    @cached_property
    def x1(self) -> np.ndarray:
        return np.outer(np.arange(self.N + 1) * self.h, np.ones(self.N + 1))

    @cached_property
    def x2(self) -> np.ndarray:
        return np.outer(np.ones(self.N + 1), np.arange(self.N + 1) * self.h)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights; they sum to 1."""
        w1 = np.full(self.N + 1, self.h)
        w1[[0, -1]] *= 0.5
        return np.outer(w1, w1)

    @cached_property
    def edge_weights(self) -> np.ndarray:
        w1 = np.full(self.N + 1, self.h)
        w1[[0, -1]] *= 0.5
        return w1

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[[0, -1], :] = True
        m[:, [0, -1]] = True
        return m

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def corner_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, 0] = m[0, -1] = m[-1, 0] = m[-1, -1] = True
        return m

    @cached_property
    def segments(self) -> dict[str, BoundarySegment]:
        N = self.N
        r = range(N + 1)
        return {
            "inflow": BoundarySegment(
                "inflow", SegmentKind.INFLOW, tuple((0, j) for j in r), (-1.0, 0.0), (0.0, -1.0)
            ),
            "outflow": BoundarySegment(
                "outflow", SegmentKind.OUTFLOW, tuple((N, j) for j in r), (1.0, 0.0), (0.0, 1.0)
            ),
            "bottom": BoundarySegment(
                "bottom", SegmentKind.WALL, tuple((i, 0) for i in r), (0.0, -1.0), (1.0, 0.0)
            ),
            "top": BoundarySegment(
                "top", SegmentKind.WALL, tuple((i, N) for i in r), (0.0, 1.0), (-1.0, 0.0)
            ),
        }

    def segments_of(self, kind: SegmentKind) -> list[BoundarySegment]:
        return [s for s in self.segments.values() if s.kind is kind]

    @cached_property
    def edge_frames(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Nodal ``(n1, n2, t1, t2)`` on open boundary nodes; zero elsewhere."""
        n1, n2, t1, t2 = (np.zeros(self.shape) for _ in range(4))
        for seg in self.segments.values():
            ii, jj = seg.index
            ii, jj = ii[1:-1], jj[1:-1]
            n1[ii, jj], n2[ii, jj] = seg.normal
            t1[ii, jj], t2[ii, jj] = seg.tangent
        return n1, n2, t1, t2

    @cached_property
    def inflow_mask(self) -> np.ndarray:
        """Nodes carrying the density Dirichlet condition (inflow corners included)."""
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = True
        return m

    @cached_property
    def vertical_edge_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[[0, -1], 1:-1] = True
        return m

    @cached_property
    def horizontal_edge_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, [0, -1]] = True
        return m

    def flat(self, i: int, j: int) -> int:
        return i * (self.N + 1) + j

    def boundary_node_count(self) -> int:
        return 4 * self.N


def build_grid(N: int) -> Grid:
    if isinstance(N, bool) or not isinstance(N, (int, np.integer)):
        raise ConfigurationError(f"N must be an integer, got {N!r}", N=N)
    return Grid(int(N))


def classify_corner(grid: Grid, node: tuple[int, int]) -> CornerPolicy:
    """Boundary conditions applied at a corner node.

    Both adjacent ``n.u = 0`` conditions hold, so the velocity perturbation
    vanishes. The density is Dirichlet at the two inflow corners and carries
    the Neumann-side treatment at the outflow corners.
    """
    i, j = node
    N = grid.N
    if i not in (0, N) or j not in (0, N):
        raise ContractViolation(f"node {node} is not a corner of the {N}x{N} grid", node=node)
    vertical = "inflow" if i == 0 else "outflow"
    horizontal = "bottom" if j == 0 else "top"
    return CornerPolicy(
        node=(i, j),
        velocity_zero=True,
        density="dirichlet" if i == 0 else "neumann",
        edges=(vertical, horizontal),
    )
