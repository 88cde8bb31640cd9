"""Nodal field containers, discrete Sobolev norms and field serialization."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError
from .grid import BoundarySegment, Grid
from .stencils import stencils

DEFAULT_P = 4.0


@dataclass(eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"expected shape {self.grid.shape}, got {self.values.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(grid.x1, grid.x2), grid.shape).copy())

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, _vals(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)


@dataclass(eq=False)
class VectorField:
    """Two components stacked along axis 0: ``values[c, i, j]``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2, *self.grid.shape):
            raise ValueError(f"expected shape {(2, *self.grid.shape)}, got {self.values.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((2, *grid.shape)))

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "VectorField":
        a, b = fn(grid.x1, grid.x2)
        return cls(grid, np.stack([np.broadcast_to(a, grid.shape), np.broadcast_to(b, grid.shape)]))

    @classmethod
    def from_components(cls, c1: ScalarField, c2: ScalarField) -> "VectorField":
        return cls(c1.grid, np.stack([c1.values, c2.values]))

    def component(self, c: int) -> ScalarField:
        return ScalarField(self.grid, self.values[c])

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(2, -1)

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.values.copy())

    def __add__(self, other):
        return VectorField(self.grid, self.values + _vals(other))

    __radd__ = __add__

    def __sub__(self, other):
        return VectorField(self.grid, self.values - _vals(other))

    def __rsub__(self, other):
        return VectorField(self.grid, _vals(other) - self.values)

    def __mul__(self, other):
        o = _vals(other)
        if isinstance(other, ScalarField):
            o = o[None]
        return VectorField(self.grid, self.values * o)

    __rmul__ = __mul__

    def __neg__(self):
        return VectorField(self.grid, -self.values)


Field = ScalarField | VectorField


def _vals(x):
    return x.values if isinstance(x, (ScalarField, VectorField)) else x


def _check_finite(f: Field) -> None:
    bad = ~np.isfinite(f.values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        node = tuple(int(k) for k in idx[-2:])
        raise NumericError(f"non-finite value at node {node}", node=node)


def _magnitude(f: Field) -> np.ndarray:
    if isinstance(f, VectorField):
        return np.hypot(f.values[0], f.values[1])
    return np.abs(f.values)


def _integrate_power(grid: Grid, mag: np.ndarray, p: float) -> float:
    return float(np.sum(grid.weights * mag**p))


def lp_norm(f: Field, p: float = DEFAULT_P) -> float:
    """Trapezoidal L_p norm; vector fields use the pointwise Euclidean length."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    _check_finite(f)
    return _integrate_power(f.grid, _magnitude(f), p) ** (1.0 / p)


def derivatives(f: Field, order: int) -> list[Field]:
    """All discrete partial derivatives of exact order ``order`` (multi-indices)."""
    st = stencils(f.grid.N)
    ops = {1: [st.Dx, st.Dy], 2: [st.Dxx, st.Dxy, st.Dyy]}[order]
    if isinstance(f, VectorField):
        return [VectorField(f.grid, np.stack([(D @ c).reshape(f.grid.shape) for c in f.flat])) for D in ops]
    return [ScalarField(f.grid, (D @ f.flat).reshape(f.grid.shape)) for D in ops]


def sobolev_norm(f: Field, p: float = DEFAULT_P, order: int = 1) -> float:
    """Discrete W^k_p norm: the p-sum of the L_p norms of all partials up to ``order``."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    _check_finite(f)
    total = _integrate_power(f.grid, _magnitude(f), p)
    for k in range(1, order + 1):
        for d in derivatives(f, k):
            total += _integrate_power(f.grid, _magnitude(d), p)
    return total ** (1.0 / p)


def h1_norm(f: Field) -> float:
    return sobolev_norm(f, 2.0, 1)


def _edge_values(f: Field, seg: BoundarySegment) -> np.ndarray:
    ii, jj = seg.index
    if isinstance(f, VectorField):
        return np.hypot(f.values[0][ii, jj], f.values[1][ii, jj])
    return np.abs(f.values[ii, jj])


def _edge_signed(f: Field, seg: BoundarySegment) -> np.ndarray:
    ii, jj = seg.index
    if isinstance(f, VectorField):
        return f.values[:, ii, jj]
    return f.values[ii, jj][None]


def _segments(f: Field, segment) -> list[BoundarySegment]:
    if segment is None or segment == "all":
        return list(f.grid.segments.values())
    if isinstance(segment, str):
        return [f.grid.segments[segment]]
    if isinstance(segment, BoundarySegment):
        return [segment]
    return list(segment)


def boundary_lp_norm(f: Field, segment=None, p: float = DEFAULT_P) -> float:
    """L_p norm of the trace on one edge, a list of edges, or the whole boundary."""
    _check_finite(f)
    total = sum(
        float(np.sum(f.grid.edge_weights * _edge_values(f, s) ** p)) for s in _segments(f, segment)
    )
    return total ** (1.0 / p)


def boundary_trace_norm(f: Field, segment=None, p: float = DEFAULT_P) -> float:
    """Stand-in for the W^{1-1/p}_p trace norm.

    L_p norm of the trace plus the L_p norm of the first tangential difference
    quotient taken at mesh scale along each edge.
    """
    _check_finite(f)
    h = f.grid.h
    total = 0.0
    for s in _segments(f, segment):
        total += float(np.sum(f.grid.edge_weights * _edge_values(f, s) ** p))
        diff = np.diff(_edge_signed(f, s), axis=1) / h
        total += float(np.sum(h * np.linalg.norm(diff, axis=0) ** p))
    return total ** (1.0 / p)


def slobodeckij_seminorm(f: ScalarField, s: float, p: float = DEFAULT_P, chunk: int = 512) -> float:
    """Quadrature of the Sobolev-Slobodeckij seminorm of order ``s`` in (0, 1).

    Double trapezoidal sum over distinct node pairs of
    ``|f(x)-f(y)|^p / |x-y|^(2+s p)``; the singular diagonal is dropped.
    """
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    g = f.grid
    x = np.column_stack([g.x1.ravel(), g.x2.ravel()])
    v = f.values.ravel()
    w = g.weights.ravel()
    total = 0.0
    for start in range(0, len(v), chunk):
        sl = slice(start, start + chunk)
        dist = np.linalg.norm(x[sl, None, :] - x[None, :, :], axis=2)
        num = np.abs(v[sl, None] - v[None, :]) ** p
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = np.where(dist > 0, num / dist ** (2 + s * p), 0.0)
        total += float(w[sl] @ kern @ w)
    return total ** (1.0 / p)


def fractional_norm(f: ScalarField, s: float, p: float = DEFAULT_P) -> float:
    return (lp_norm(f, p) ** p + slobodeckij_seminorm(f, s, p) ** p) ** (1.0 / p)


@dataclass
class NormReport:
    lp: float
    w1p: float
    h1: float
    w2p: float | None = None
    boundary_lp: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {"lp": self.lp, "w1p": self.w1p, "h1": self.h1}
        if self.w2p is not None:
            out["w2p"] = self.w2p
        out.update({f"boundary_lp_{k}": v for k, v in self.boundary_lp.items()})
        return out


def norm_report(f: Field, p: float = DEFAULT_P, with_w2p: bool = True) -> NormReport:
    return NormReport(
        lp=lp_norm(f, p),
        w1p=sobolev_norm(f, p, 1),
        h1=h1_norm(f),
        w2p=sobolev_norm(f, p, 2) if with_w2p else None,
        boundary_lp={name: boundary_lp_norm(f, name, p) for name in f.grid.segments},
    )


# -- serialization -------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def fields_to_csv(fields: dict[str, Field], path: str | Path | None = None) -> str:
    """Rows ``node,i,j,x1,x2,<values...>``; vector fields contribute two columns."""
    grid = next(iter(fields.values())).grid
    cols, data = [], []
    for name, f in fields.items():
        if isinstance(f, VectorField):
            cols += [f"{name}_1", f"{name}_2"]
            data += [f.values[0].ravel(), f.values[1].ravel()]
        else:
            cols.append(name)
            data.append(f.values.ravel())
    buf = io.StringIO()
    buf.write(",".join(["node", "i", "j", "x1", "x2", *cols]) + "\n")
    x1, x2 = grid.x1.ravel(), grid.x2.ravel()
    for k in range(grid.n_nodes):
        i, j = divmod(k, grid.N + 1)
        row = [str(k), str(i), str(j), _fmt(x1[k]), _fmt(x2[k])] + [_fmt(d[k]) for d in data]
        buf.write(",".join(row) + "\n")
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def fields_from_csv(text: str, grid: Grid) -> dict[str, np.ndarray]:
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    table = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    return {name: table[:, c].reshape(grid.shape) for c, name in enumerate(header) if c >= 5}


def fields_to_vtk(fields: dict[str, Field], path: str | Path | None = None, title: str = "slipflow") -> str:
    """Legacy ASCII VTK structured-points file (x index varies fastest)."""
    grid = next(iter(fields.values())).grid
    n = grid.N + 1
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {n} {n} 1",
        "ORIGIN 0 0 0",
        f"SPACING {_fmt(grid.h)} {_fmt(grid.h)} 1",
        f"POINT_DATA {grid.n_nodes}",
    ]
    for name, f in fields.items():
        if isinstance(f, VectorField):
            lines.append(f"VECTORS {name} double")
            a, b = f.values[0].T.ravel(), f.values[1].T.ravel()
            lines += [f"{_fmt(p)} {_fmt(q)} 0.0" for p, q in zip(a, b)]
        else:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_fmt(v) for v in f.values.T.ravel()]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
