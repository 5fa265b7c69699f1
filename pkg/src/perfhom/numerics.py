"""Structured grids, masked 7-point Laplacian, conjugate gradients and norms.

Node arrays are indexed ``[i, j, k]`` with ``i`` along x. Every node carries
one of three labels: ``FREE`` (unknown), ``BOUNDARY`` (on the box faces) or
``HOLE`` (inside a perforation). Non-free nodes hold Dirichlet data, which
is 0 unless a solve is given an explicit lifting.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConvergenceError, DomainError, ShapeError

FREE = 0
BOUNDARY = 1
HOLE = 2

__all__ = [
    "FREE",
    "BOUNDARY",
    "HOLE",
    "Grid",
    "NodeMask",
    "ScalarField",
    "StencilOperator",
    "apply_laplacian",
    "cg_solve",
    "solve_dirichlet",
    "norms",
    "extend_restrict",
    "write_field",
    "read_field",
]


@dataclass(frozen=True)
class Grid:
    """``n`` nodes per axis on the closed box ``[lo, hi]``."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    n: int

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 3 or len(hi) != 3:
            raise DomainError("the solver ships d = 3 grids only")
        if not all(b > a for a, b in zip(lo, hi)):
            raise DomainError(f"degenerate grid box {lo} .. {hi}")
        if int(self.n) < 3:
            raise DomainError(f"grid needs at least 3 nodes per axis, got {self.n}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def cube(cls, lo: float, hi: float, n: int) -> "Grid":
        return cls((lo,) * 3, (hi,) * 3, n)

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def h(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / (self.n - 1)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axes(self):
        """Node coordinates along each axis."""
        return [self.lo[a] + np.arange(self.n) * self.h[a] for a in range(3)]

    def coords(self):
        """Broadcastable coordinate arrays ``(X, Y, Z)``."""
        ax = self.axes()
        return ax[0][:, None, None], ax[1][None, :, None], ax[2][None, None, :]

    def points(self) -> np.ndarray:
        """All node positions, shape ``(n, n, n, 3)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def to_json(self):
        return {"box": {"lo": list(self.lo), "hi": list(self.hi)}, "n": self.n}


@dataclass
class NodeMask:
    grid: Grid
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.shape != self.grid.shape:
            raise ShapeError(f"mask shape {self.labels.shape} does not match grid {self.grid.shape}")

    @classmethod
    def box(cls, grid: Grid) -> "NodeMask":
        """Plain Dirichlet box: faces BOUNDARY, everything else FREE."""
        labels = np.full(grid.shape, BOUNDARY, dtype=np.int8)
        labels[1:-1, 1:-1, 1:-1] = FREE
        return cls(grid, labels)

    @property
    def free(self) -> np.ndarray:
        return (self.labels == FREE).astype(np.uint8)

    def count(self, label: int) -> int:
        return int(np.count_nonzero(self.labels == label))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ShapeError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "ScalarField":
        x, y, z = grid.coords()
        return cls(grid, np.broadcast_to(func(x, y, z), grid.shape))

    def __sub__(self, other):
        _same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __add__(self, other):
        _same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)


def _same_grid(a: Grid, b: Grid):
    if a != b:
        raise ShapeError(f"grid mismatch: {a} vs {b}")


class StencilOperator:
    """``-Delta_h + shift`` acting on the FREE nodes of ``mask``.

    ``shift`` is a nonnegative scalar or node array (zeroth-order term).
    """

    def __init__(self, mask: NodeMask, shift=0.0):
        self.grid = mask.grid
        self.free = mask.free
        if self.free[0].any() or self.free[-1].any() or self.free[:, 0].any() or self.free[:, -1].any() \
                or self.free[:, :, 0].any() or self.free[:, :, -1].any():
            raise ShapeError("nodes on the grid faces must not be FREE")
        shift = np.broadcast_to(np.asarray(shift, dtype=np.float64), self.grid.shape)
        if np.any(shift < 0):
            raise DomainError("the zeroth-order coefficient must be nonnegative")
        self.shift = np.ascontiguousarray(shift)
        self.coef = tuple(float(c) for c in 1.0 / self.grid.h**2)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.grid.shape)
        kernels.apply_operator(np.ascontiguousarray(x, dtype=np.float64), self.free, self.shift, *self.coef, out)
        return out

    def diagonal(self) -> np.ndarray:
        return np.where(self.free != 0, 2.0 * sum(self.coef) + self.shift, 0.0)


def apply_laplacian(field: ScalarField, mask: NodeMask) -> ScalarField:
    """``-Delta_h field`` at FREE nodes (non-FREE neighbours read as 0)."""
    _same_grid(field.grid, mask.grid)
    return ScalarField(field.grid, StencilOperator(mask)(field.values))


def _generic_cg(op, b, tol, max_iter):
    x = np.zeros_like(b)
    bnorm = math.sqrt(float(np.add.reduce((b * b).reshape(-1))))
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    p = r.copy()
    rr = float(np.add.reduce((r * r).reshape(-1)))
    it = 0
    while it < max_iter:
        ap = op(p)
        alpha = rr / float(np.add.reduce((p * ap).reshape(-1)))
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(np.add.reduce((r * r).reshape(-1)))
        it += 1
        if math.sqrt(rr_new) <= tol * bnorm:
            r = b - op(x)
            rr_new = float(np.add.reduce((r * r).reshape(-1)))
            if math.sqrt(rr_new) <= tol * bnorm:
                rr = rr_new
                break
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, it, math.sqrt(rr) / bnorm


def cg_solve(operator, rhs, tol=1e-10, max_iter=20000, jacobi=False, full_output=False):
    """Solve ``operator(x) = rhs`` by conjugate gradients from ``x = 0``.

    ``operator`` is either a :class:`StencilOperator` (fast fused kernel,
    optional Jacobi preconditioning) or any callable mapping arrays to
    arrays of the same shape, assumed symmetric positive definite.
    ``rhs`` may be a :class:`ScalarField` or a bare array; the result has
    the same type. With ``full_output`` the iteration count and final
    relative residual are returned as well.

    Raises :class:`ConvergenceError` if ``max_iter`` is exhausted.
    """
    grid = rhs.grid if isinstance(rhs, ScalarField) else None
    b = rhs.values if grid is not None else np.asarray(rhs, dtype=np.float64)
    if isinstance(operator, StencilOperator):
        if grid is not None:
            _same_grid(grid, operator.grid)
        b = np.ascontiguousarray(np.where(operator.free != 0, b, 0.0))
        x = np.zeros(operator.grid.shape)
        it, res = kernels.cg(b, x, operator.free, operator.shift, *operator.coef, float(tol), int(max_iter), bool(jacobi))
    else:
        x, it, res = _generic_cg(operator, b, tol, max_iter)
    if not res <= tol:
        raise ConvergenceError("conjugate gradients did not converge", res, it)
    out = ScalarField(grid, x) if grid is not None else x
    return (out, it, res) if full_output else out


def solve_dirichlet(mask: NodeMask, f=None, dirichlet=None, shift=0.0, tol=1e-10, max_iter=20000, jacobi=False):
    """Solve ``(-Delta_h + shift) u = f`` on FREE nodes, ``u = dirichlet`` elsewhere.

    ``f`` and ``dirichlet`` are node arrays (or None for zero). Returns the
    full node array of ``u``.
    """
    op = StencilOperator(mask, shift)
    b = np.zeros(mask.grid.shape) if f is None else np.array(f, dtype=np.float64)
    if dirichlet is not None:
        g = np.where(op.free != 0, 0.0, np.asarray(dirichlet, dtype=np.float64))
        b = b + _neighbour_sum(g, op.coef)
    u = cg_solve(op, b, tol=tol, max_iter=max_iter, jacobi=jacobi)
    if dirichlet is not None:
        u = np.where(op.free != 0, u, g)
    return u


def _neighbour_sum(g, coef):
    s = np.zeros_like(g)
    cx, cy, cz = coef
    s[1:] += cx * g[:-1]
    s[:-1] += cx * g[1:]
    s[:, 1:] += cy * g[:, :-1]
    s[:, :-1] += cy * g[:, 1:]
    s[:, :, 1:] += cz * g[:, :, :-1]
    s[:, :, :-1] += cz * g[:, :, 1:]
    return s


def edge_energy(values: np.ndarray, grid: Grid) -> float:
    """Discrete Dirichlet energy ``sum_edges (v_i - v_j)^2 * vol / h_a^2``."""
    vol = grid.cell_volume
    total = 0.0
    for axis in range(3):
        d = np.diff(values, axis=axis)
        total += vol / grid.h[axis] ** 2 * float(np.add.reduce((d * d).reshape(-1)))
    return total


def norms(field: ScalarField) -> tuple[float, float]:
    """Discrete ``(L2, H1-seminorm)`` over all nodes and all grid edges."""
    v = field.values
    l2 = math.sqrt(field.grid.cell_volume * float(np.add.reduce((v * v).reshape(-1))))
    return l2, math.sqrt(edge_energy(v, field.grid))


def extend_restrict(field: ScalarField, mask: NodeMask, direction: str) -> ScalarField:
    """Zero extension from, or restriction to, the FREE nodes of ``mask``.

    On node arrays both directions reduce to zeroing the non-FREE nodes; they
    are kept distinct to mirror the operators they model.
    """
    _same_grid(field.grid, mask.grid)
    if direction not in ("extend", "restrict"):
        raise DomainError(f"direction must be 'extend' or 'restrict', got {direction!r}")
    return ScalarField(field.grid, np.where(mask.labels == FREE, field.values, 0.0))


def write_field(field: ScalarField, path) -> tuple[Path, Path]:
    """Write ``<path>.json`` sidecar plus ``<path>.bin`` (f64 little-endian, x fastest)."""
    path = Path(path)
    meta = {"grid": field.grid.to_json(), "order": "x-fastest", "dtype": "f64-le"}
    jpath, bpath = path.with_suffix(".json"), path.with_suffix(".bin")
    jpath.write_text(json.dumps(meta, indent=2) + "\n")
    field.values.astype("<f8").ravel(order="F").tofile(bpath)
    return jpath, bpath


def read_field(path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("order") != "x-fastest" or meta.get("dtype") != "f64-le":
        raise ShapeError(f"unsupported field dump layout {meta!r}")
    g = meta["grid"]
    grid = Grid(tuple(g["box"]["lo"]), tuple(g["box"]["hi"]), g["n"])
    data = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    if data.size != grid.n**3:
        raise ShapeError(f"field dump holds {data.size} values, expected {grid.n ** 3}")
    return ScalarField(grid, data.reshape(grid.shape, order="F"))
