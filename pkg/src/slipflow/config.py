"""Run configuration: a small ``key = value`` format with sections.

Example::

    mode = solve
    seed = 7

    [grid]
    N = 32

    [physics]
    gamma = 1.4
    f = 10

    [data]
    delta = 1e-3
    rho_in = bump

    [schedule]
    eps_schedule = 1e-1, 1e-2, 1e-3

Lines starting with ``#`` are comments. Unknown sections or keys, values of
the wrong type and values violating an invariant are rejected with the key
and line number.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigParseError, ConfigurationError
from .fixed_point import SolveConfig
from .grid import Grid
from .linear_core import TRANSPORT_SCHEMES
from .operators import BoundaryData, PhysicalParams

MODES = ("solve", "mms", "estimates", "sweep", "uniqueness")

PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zero": lambda s: np.zeros_like(s),
    "one": lambda s: np.ones_like(s),
    "sine": lambda s: np.sin(np.pi * s),
    "bump": lambda s: np.sin(np.pi * s) ** 2,
    "parabola": lambda s: 4 * s * (1 - s),
}


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(options):
    def conv(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return conv


def _positive(x) -> bool:
    return x > 0


# (section, key) -> (attribute, converter, check, message)
SCHEMA: dict[tuple[str, str], tuple[str, Callable[[str], Any], Callable[[Any], bool] | None, str]] = {
    ("", "mode"): ("mode", _choice(MODES), None, ""),
    ("", "seed"): ("seed", int, None, ""),
    ("", "output_dir"): ("output_dir", str, None, ""),
    ("grid", "N"): ("N", int, lambda n: n >= 8, "N must be >= 8"),
    ("grid", "levels"): ("levels", _int_list, lambda v: len(v) >= 2 and min(v) >= 8, "need at least two levels, each >= 8"),
    ("physics", "mu"): ("mu", float, _positive, "mu must be > 0"),
    ("physics", "nu"): ("nu", float, None, ""),
    ("physics", "gamma"): ("gamma", float, lambda g: g > 1, "gamma must be > 1"),
    ("physics", "f"): ("f", float, _positive, "f must be > 0"),
    ("physics", "p"): ("p", float, lambda p: p > 2, "p must be > 2"),
    ("physics", "rho_min"): ("rho_min", float, lambda r: 0 < r < 1, "rho_min must lie in (0, 1)"),
    ("data", "delta"): ("delta", float, lambda d: d >= 0, "delta must be >= 0"),
    ("data", "rho_in"): ("rho_profile", _choice(PROFILES), None, ""),
    ("data", "d_in"): ("d_in_profile", _choice(PROFILES), None, ""),
    ("data", "d_out"): ("d_out_profile", _choice(PROFILES), None, ""),
    ("data", "b"): ("b_profile", _choice(PROFILES), None, ""),
    ("data", "mms_delta"): ("mms_delta", float, _positive, "mms_delta must be > 0"),
    ("data", "sweep_deltas"): ("sweep_deltas", _float_list, lambda v: len(v) > 0 and min(v) > 0, "deltas must be positive"),
    ("solver", "outer_tol"): ("outer_tol", float, _positive, "outer_tol must be > 0"),
    ("solver", "max_outer"): ("max_outer", int, _positive, "max_outer must be > 0"),
    ("solver", "inner_tol"): ("inner_tol", float, _positive, "inner_tol must be > 0"),
    ("solver", "max_inner"): ("max_inner", int, _positive, "max_inner must be > 0"),
    ("solver", "damping"): ("damping", float, lambda t: 0 < t <= 1, "damping must lie in (0, 1]"),
    ("solver", "ball_radius"): ("ball_radius", float, _positive, "ball_radius must be > 0"),
    ("solver", "scheme"): ("scheme", _choice(TRANSPORT_SCHEMES), None, ""),
    ("solver", "max_extra_eps"): ("max_extra_eps", int, lambda k: k >= 0, "max_extra_eps must be >= 0"),
    ("solver", "n_starts"): ("n_starts", int, lambda k: k >= 2, "n_starts must be >= 2"),
    ("solver", "workers"): ("workers", int, _positive, "workers must be > 0"),
    ("solver", "estimate_bound"): ("estimate_bound", float, _positive, "estimate_bound must be > 0"),
    ("schedule", "eps_schedule"): (
        "eps_schedule", _float_list,
        lambda v: len(v) > 0 and min(v) > 0 and all(b < a for a, b in zip(v, v[1:])),
        "eps_schedule must be positive and strictly decreasing",
    ),
    ("schedule", "sweep_eps"): ("sweep_eps", _float_list, lambda v: len(v) > 0 and min(v) > 0, "sweep_eps must be positive"),
}

SECTIONS = {sec for sec, _ in SCHEMA} - {""}


@dataclass
class RunSpec:
    mode: str = "solve"
    seed: int = 0
    output_dir: str = "slipflow-out"
    N: int = 32
    levels: tuple[int, ...] = (16, 32, 64)
    mu: float = 1.0
    nu: float = 0.0
    gamma: float = 1.4
    f: float = 10.0
    p: float = 4.0
    rho_min: float = 0.5
    delta: float = 0.0
    rho_profile: str = "bump"
    d_in_profile: str = "zero"
    d_out_profile: str = "zero"
    b_profile: str = "zero"
    mms_delta: float = 0.01
    sweep_deltas: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    outer_tol: float = 1e-9
    max_outer: int = 100
    inner_tol: float | None = None
    max_inner: int = 200
    damping: float = 1.0
    ball_radius: float = 1.0
    scheme: str = "upwind2"
    max_extra_eps: int = 6
    n_starts: int = 3
    workers: int = 1
    estimate_bound: float = 100.0
    eps_schedule: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    sweep_eps: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    sources: dict[str, int] = field(default_factory=dict, repr=False)

    def physical_params(self) -> PhysicalParams:
        return PhysicalParams(mu=self.mu, nu=self.nu, gamma=self.gamma, f=self.f, p=self.p, rho_min=self.rho_min)

    def solve_config(self, N: int | None = None) -> SolveConfig:
        return SolveConfig(
            N=self.N if N is None else N,
            eps_schedule=self.eps_schedule,
            outer_tol=self.outer_tol,
            max_outer=self.max_outer,
            inner_tol=self.inner_tol,
            max_inner=self.max_inner,
            damping=self.damping,
            ball_radius=self.ball_radius,
            scheme=self.scheme,
            max_extra_eps=self.max_extra_eps,
        )

    def boundary_data(self, grid: Grid, delta: float | None = None) -> BoundaryData:
        """Profiles of the edge coordinate scaled by ``delta``: ``rho_in - 1``
        on the inflow edge, ``d - n1`` on inflow and outflow, ``b - f tau1``
        on every edge."""
        amp = self.delta if delta is None else delta
        along_x2 = lambda prof: (lambda x1, x2: amp * PROFILES[prof](x2))  # noqa: E731
        along_x1 = lambda prof: (lambda x1, x2: amp * PROFILES[prof](x1))  # noqa: E731
        b = {
            "inflow": along_x2(self.b_profile),
            "outflow": along_x2(self.b_profile),
            "bottom": along_x1(self.b_profile),
            "top": along_x1(self.b_profile),
        }
        d = {"inflow": along_x2(self.d_in_profile), "outflow": along_x2(self.d_out_profile)}
        return BoundaryData.from_perturbations(grid, b=b, d=d, rho=along_x2(self.rho_profile))

    def as_dict(self) -> dict:
        out = asdict(self)
        out.pop("sources")
        return out


def parse_config(text: str) -> RunSpec:
    spec = RunSpec()
    section = ""
    seen: dict[tuple[str, str], int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigParseError("malformed section header", line=lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigParseError(f"unknown section [{section}]", key=section, line=lineno)
            continue
        if "=" not in line:
            raise ConfigParseError("expected 'key = value'", line=lineno)
        key, value = (t.strip() for t in line.split("=", 1))
        entry = SCHEMA.get((section, key))
        if entry is None:
            where = f"[{section}]" if section else "top level"
            raise ConfigParseError(f"unknown key in {where}", key=key, line=lineno)
        if (section, key) in seen:
            raise ConfigParseError(f"duplicate key (first set on line {seen[(section, key)]})", key=key, line=lineno)
        seen[(section, key)] = lineno
        attr, conv, check, message = entry
        try:
            val = conv(value)
        except ValueError as exc:
            raise ConfigParseError(f"invalid value {value!r}: {exc}", key=key, line=lineno) from None
        if check is not None and not check(val):
            raise ConfigParseError(f"{message}, got {value}", key=key, line=lineno)
        setattr(spec, attr, val)
        spec.sources[attr] = lineno
    validate(spec)
    return spec


def validate(spec: RunSpec) -> RunSpec:
    """Cross-field checks, reported against the line of the offending key."""
    try:
        spec.physical_params()
    except ConfigurationError as exc:
        key = "nu" if "nu" in str(exc) else None
        raise ConfigParseError(str(exc), key=key, line=spec.sources.get("nu")) from None
    try:
        spec.solve_config()
    except ConfigurationError as exc:
        raise ConfigParseError(str(exc)) from None
    if spec.mode == "uniqueness" and spec.n_starts < 2:
        raise ConfigParseError("uniqueness needs at least two starts", key="n_starts")
    return spec


def load_config(path: str) -> RunSpec:
    with open(path) as fh:
        return parse_config(fh.read())
