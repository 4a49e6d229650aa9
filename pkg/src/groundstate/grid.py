"""Radial/interval meshes, piecewise-linear fields, weighted quadrature.

A ``RadialGrid`` with ``dim == 1`` is a plain interval with measure ``dr``.
For ``dim >= 2`` integrals carry the radial weight ``|S^{d-1}| r^{d-1}`` so
that integrals of radial functions over balls/annuli reduce to 1D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DIRICHLET = "dirichlet"
NATURAL = "natural"
POLE = "pole"
BOUNDARY_KINDS = (DIRICHLET, NATURAL, POLE)

# 3-point Gauss-Legendre on [0, 1]
_GAUSS_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS_W = 0.5 * np.array([5.0, 8.0, 5.0]) / 9.0


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}; 1 for intervals by convention."""
    if d == 1:
        return 1.0
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    nodes: np.ndarray
    dim: int = 1
    left_bc: str = DIRICHLET
    right_bc: str = DIRICHLET

    def __post_init__(self) -> None:
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("grid needs at least 3 nodes (n >= 2 elements)")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if int(self.dim) < 1:
            raise ValueError("dim must be >= 1")
        for bc in (self.left_bc, self.right_bc):
            if bc not in BOUNDARY_KINDS:
                raise ValueError(f"unknown boundary marker {bc!r}")
        if self.dim >= 2 and nodes[0] < 0.0:
            raise ValueError("radial grids need r_0 >= 0")
        if nodes[0] == 0.0 and self.dim >= 2 and self.left_bc != POLE:
            raise ValueError("r_0 = 0 requires left_bc='pole'")
        if self.left_bc == POLE and self.dim < 2:
            raise ValueError("a pole boundary needs dim >= 2")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @cached_property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    def weight(self, r: np.ndarray | float) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.dim == 1:
            return np.ones_like(r)
        return sphere_area(self.dim) * r ** (self.dim - 1)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[0] = self.left_bc == DIRICHLET
        mask[-1] = self.right_bc == DIRICHLET
        mask.setflags(write=False)
        return mask

    @cached_property
    def free(self) -> np.ndarray:
        """Indices of nodes carrying unknowns (not Dirichlet-constrained)."""
        return np.flatnonzero(~self.dirichlet_mask)

    @cached_property
    def quadrature(self) -> "ElementQuadrature":
        return element_quadrature(self)

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.dim == other.dim
            and self.left_bc == other.left_bc
            and self.right_bc == other.right_bc
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
        )

    def descriptor(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "n_elements": self.n_elements,
            "dim": self.dim,
            "left_bc": self.left_bc,
            "right_bc": self.right_bc,
        }

    def with_bcs(self, left_bc: str | None = None, right_bc: str | None = None) -> "RadialGrid":
        return RadialGrid(
            self.nodes,
            self.dim,
            self.left_bc if left_bc is None else left_bc,
            self.right_bc if right_bc is None else right_bc,
        )


@dataclass(frozen=True)
class ElementQuadrature:
    """Gauss points of every element, flattened to shape (n_elements, 3)."""

    x: np.ndarray  # physical points
    w: np.ndarray  # weights incl. element length and radial weight
    phi_left: np.ndarray  # value of the element's left hat at each point
    phi_right: np.ndarray


def element_quadrature(grid: RadialGrid, window: tuple[float, float] | None = None) -> ElementQuadrature:
    """Element-wise 3-point Gauss rule, optionally clipped to ``window``.

    Clipping integrates only the part of each element inside the window, so
    windows need not align with nodes.
    """
    left = grid.nodes[:-1]
    right = grid.nodes[1:]
    lo, hi = left, right
    if window is not None:
        wa, wb = window
        lo = np.clip(left, wa, wb)
        hi = np.clip(right, wa, wb)
    span = hi - lo
    x = lo[:, None] + span[:, None] * _GAUSS_X[None, :]
    w = span[:, None] * _GAUSS_W[None, :] * grid.weight(x)
    h = (right - left)[:, None]
    phi_right = (x - left[:, None]) / h
    phi_left = 1.0 - phi_right
    return ElementQuadrature(x=x, w=w, phi_left=phi_left, phi_right=phi_right)


def make_grid(
    a: float,
    b: float,
    n: int,
    d: int = 1,
    grading: float = 1.0,
    left_bc: str | None = None,
    right_bc: str = DIRICHLET,
) -> RadialGrid:
    """Nodes ``a + (b - a) * (i / n) ** grading``; grading > 1 clusters toward ``a``."""
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if n < 2:
        raise ValueError("need n >= 2 elements")
    if not grading > 0.0:
        raise ValueError("grading must be positive")
    s = np.arange(n + 1) / n
    nodes = a + (b - a) * s**grading
    nodes[-1] = b
    if left_bc is None:
        left_bc = POLE if (d >= 2 and a == 0.0) else DIRICHLET
    return RadialGrid(nodes, d, left_bc, right_bc)


def make_geometric_grid(
    a: float,
    b: float,
    n: int,
    d: int = 1,
    left_bc: str = DIRICHLET,
    right_bc: str = DIRICHLET,
) -> RadialGrid:
    """Log-uniform nodes on ``(a, b)`` with ``a > 0``.

    Natural for scale-invariant problems (Hardy potentials, radial Green
    functions) where the mesh must span many decades.
    """
    if not 0.0 < a < b:
        raise ValueError("geometric grids need 0 < a < b")
    if n < 2:
        raise ValueError("need n >= 2 elements")
    nodes = np.exp(np.linspace(math.log(a), math.log(b), n + 1))
    nodes[0], nodes[-1] = a, b
    return RadialGrid(nodes, d, left_bc, right_bc)


@dataclass(frozen=True, eq=False)
class Field:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"field has {values.size} values for a grid of {self.grid.n_nodes} nodes"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: RadialGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, np.broadcast_to(fn(grid.nodes), grid.nodes.shape))

    @classmethod
    def zeros(cls, grid: RadialGrid) -> "Field":
        return cls(grid, np.zeros(grid.n_nodes))

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def abs(self) -> "Field":
        return Field(self.grid, np.abs(self.values))

    def at(self, r: np.ndarray | float) -> np.ndarray:
        return np.interp(r, self.grid.nodes, self.values)

    def at_quadrature(self, quad: ElementQuadrature | None = None) -> np.ndarray:
        q = self.grid.quadrature if quad is None else quad
        v = self.values
        return v[:-1, None] * q.phi_left + v[1:, None] * q.phi_right

    def is_positive_interior(self) -> bool:
        g = self.grid
        inner = np.ones(g.n_nodes, dtype=bool)
        inner[g.dirichlet_mask] = False
        return bool(np.all(self.values[inner] > 0.0))

    def restrict(self, window: tuple[float, float]) -> "Field":
        """Sub-field on the nodes inside ``window`` (endpoints included)."""
        a, b = window
        idx = np.flatnonzero((self.grid.nodes >= a) & (self.grid.nodes <= b))
        if idx.size < 3:
            raise ValueError("window contains fewer than 3 nodes")
        sub = RadialGrid(self.grid.nodes[idx], self.grid.dim, NATURAL, NATURAL)
        return Field(sub, self.values[idx])


def _check_same_grid(u: Field, v: Field) -> None:
    if not u.grid.same_as(v.grid):
        raise ValueError("fields live on different grids")


def _check_window(grid: RadialGrid, window: tuple[float, float] | None) -> tuple[float, float]:
    if window is None:
        return grid.a, grid.b
    a, b = float(window[0]), float(window[1])
    tol = 1e-12 * max(1.0, abs(grid.a), abs(grid.b))
    if not a < b or a < grid.a - tol or b > grid.b + tol:
        raise ValueError(f"window ({a}, {b}) outside grid extent ({grid.a}, {grid.b})")
    return max(a, grid.a), min(b, grid.b)


def integrate(grid: RadialGrid, values_at_quad: np.ndarray, window: tuple[float, float] | None = None) -> float:
    """Integrate quadrature-point values against the weighted measure."""
    quad = grid.quadrature if window is None else element_quadrature(grid, _check_window(grid, window))
    return float(np.sum(values_at_quad * quad.w))


def lp_norm_p(u: Field, p: float, window: tuple[float, float] | None = None) -> float:
    """``int_window |u|^p dmu`` (the p-th power of the L^p norm)."""
    if not p > 1.0:
        raise ValueError("p must lie in (1, inf)")
    win = _check_window(u.grid, window)
    quad = element_quadrature(u.grid, win)
    uq = u.at_quadrature(quad)
    return float(np.sum(np.abs(uq) ** p * quad.w))


def gradient_on_elements(u: Field) -> np.ndarray:
    return np.diff(u.values) / u.grid.h


@dataclass(frozen=True)
class GridPolicy:
    """How to mesh one exhaustion level ``(a, b)``."""

    n: int = 256
    kind: str = "uniform"  # uniform | graded | geometric | pole-geometric
    grading: float = 1.0
    dim: int = 1
    left_bc: str = DIRICHLET
    right_bc: str = DIRICHLET
    # > 0: element count from the extent instead of ``n`` (per unit length
    # for uniform, per octave for geometric); keeps dyadic levels nested
    density: float = 0.0
    # pole-geometric: one element (0, inner) then log-uniform nodes up to b
    inner: float = 1e-3

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "graded", "geometric", "pole-geometric"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.density < 0.0:
            raise ValueError("density must be >= 0")

    def elements(self, a: float, b: float) -> int:
        if self.density <= 0.0:
            return self.n
        if self.kind == "pole-geometric":
            extent = math.log2(b / self.inner)
        else:
            extent = math.log2(b / a) if self.kind == "geometric" else b - a
        return max(2, int(round(self.density * extent)))

    def build(self, a: float, b: float) -> RadialGrid:
        n = self.elements(a, b)
        if self.kind == "geometric":
            return make_geometric_grid(a, b, n, self.dim, self.left_bc, self.right_bc)
        if self.kind == "pole-geometric":
            if a != 0.0 or not 0.0 < self.inner < b:
                raise ValueError("pole-geometric grids need a = 0 < inner < b")
            tail = make_geometric_grid(self.inner, b, n, self.dim).nodes
            return RadialGrid(np.concatenate([[0.0], tail]), self.dim, self.left_bc, self.right_bc)
        if self.kind == "graded":
            return _two_sided_graded(a, b, n, self.dim, self.grading, self.left_bc, self.right_bc)
        return make_grid(a, b, n, self.dim, 1.0, self.left_bc, self.right_bc)


def _two_sided_graded(a, b, n, d, grading, left_bc, right_bc) -> RadialGrid:
    # symmetric power grading toward both endpoints
    s = np.linspace(-1.0, 1.0, n + 1)
    t = 0.5 * (1.0 + np.sign(s) * (1.0 - (1.0 - np.abs(s)) ** grading))
    nodes = a + (b - a) * t
    nodes[0], nodes[-1] = a, b
    return RadialGrid(nodes, d, left_bc, right_bc)


@dataclass(frozen=True)
class Exhaustion:
    """Nested subdomains ``(a_N, b_N)`` with a meshing policy per level."""

    levels: tuple[tuple[float, float], ...]
    policy: GridPolicy | Sequence[GridPolicy] = field(default_factory=GridPolicy)
    window: tuple[float, float] | None = None
    # growth parameter per level (e.g. N); its log is the trend axis
    scales: tuple[float, ...] | None = None
    # the last level is the whole (bounded) domain, not an inner approximation
    bounded: bool = False
    # scale -> level rule; lets ``extended`` add levels past the last one
    make_level: Callable[[float], tuple[float, float]] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        levels = tuple((float(a), float(b)) for a, b in self.levels)
        if not levels:
            raise ValueError("exhaustion needs at least one level")
        object.__setattr__(self, "levels", levels)
        if not isinstance(self.policy, GridPolicy):
            pols = tuple(self.policy)
            if len(pols) != len(levels):
                raise ValueError("one grid policy per level required")
            object.__setattr__(self, "policy", pols)
        if not is_nested(levels):
            raise ValueError("exhaustion levels are not nested")
        if self.scales is not None:
            sc = tuple(float(x) for x in self.scales)
            if len(sc) != len(levels) or any(x <= 0.0 for x in sc) or any(y <= x for x, y in zip(sc, sc[1:])):
                raise ValueError("scales must be positive, increasing, one per level")
            object.__setattr__(self, "scales", sc)
        if self.window is not None:
            wa, wb = self.window
            for a, b in levels:
                if not (a <= wa and wb <= b):
                    raise ValueError(f"window {self.window} not inside level ({a}, {b})")

    def __len__(self) -> int:
        return len(self.levels)

    def grid(self, level: int) -> RadialGrid:
        a, b = self.levels[level]
        return self.policy_at(level).build(a, b)

    def policy_at(self, level: int) -> GridPolicy:
        return self.policy if isinstance(self.policy, GridPolicy) else self.policy[level]

    def log_size(self, level: int) -> float:
        """Trend axis for level-indexed sequences: ``log(scale)``, else the index."""
        if self.scales is not None:
            return math.log(self.scales[level])
        return float(level + 1)

    def truncate(self, n_levels: int) -> "Exhaustion":
        pol = self.policy if isinstance(self.policy, GridPolicy) else self.policy[:n_levels]
        sc = None if self.scales is None else self.scales[:n_levels]
        return Exhaustion(self.levels[:n_levels], pol, self.window, sc, self.bounded and n_levels == len(self.levels), self.make_level)

    def extended(self, extra: int) -> "Exhaustion":
        """Append ``extra`` levels, continuing the last scale ratio through ``make_level``."""
        if self.make_level is None or self.scales is None or self.bounded:
            raise ValueError("only unbounded exhaustions with a level rule and scales can be extended")
        sc = list(self.scales)
        q = sc[-1] / sc[-2] if len(sc) > 1 else 2.0
        new = [sc[-1] * q ** (j + 1) for j in range(extra)]
        pol = self.policy if isinstance(self.policy, GridPolicy) else tuple(self.policy) + (self.policy[-1],) * extra
        levels = self.levels + tuple(self.make_level(s) for s in new)
        return Exhaustion(levels, pol, self.window, tuple(sc + new), False, self.make_level)

    @classmethod
    def dyadic(
        cls,
        make_level: Callable[[float], tuple[float, float]],
        scales: Sequence[float],
        policy: GridPolicy,
        window: tuple[float, float] | None = None,
        bounded: bool = False,
    ) -> "Exhaustion":
        return cls(tuple(make_level(s) for s in scales), policy, window, tuple(scales), bounded, make_level)


def is_nested(levels: Sequence[tuple[float, float]]) -> bool:
    """Pure predicate: each level contains the previous one."""
    for (a0, b0), (a1, b1) in zip(levels, levels[1:]):
        if not (a1 <= a0 and b1 >= b0):
            return False
    return all(a < b for a, b in levels)


def write_field(path: str | Path, u: Field, p: float | None = None, **meta) -> None:
    """Two-column text ``r value`` with ``#`` header lines."""
    g = u.grid
    lines = [f"# dim = {g.dim}", f"# left_bc = {g.left_bc}", f"# right_bc = {g.right_bc}"]
    if p is not None:
        lines.append(f"# p = {p!r}")
    for k, v in meta.items():
        lines.append(f"# {k} = {v}")
    body = "\n".join(f"{r:.17g} {x:.17g}" for r, x in zip(g.nodes, u.values))
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def read_field(path: str | Path) -> tuple[Field, dict]:
    meta: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            meta[key.strip()] = val.strip()
            continue
        r, v = line.split()
        rows.append((float(r), float(v)))
    arr = np.array(rows)
    grid = RadialGrid(
        arr[:, 0],
        int(meta.get("dim", 1)),
        meta.get("left_bc", DIRICHLET),
        meta.get("right_bc", DIRICHLET),
    )
    return Field(grid, arr[:, 1]), meta
