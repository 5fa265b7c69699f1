"""Perforated and homogenized Poisson problems, correctors and heat flows.

Holes sit at ``eps z + s V(eps z) K_z`` with ``s = eps^(d/(d-2))`` for the
points ``z`` of a realization with ``eps z`` in the physical window ``W``.
The computational domain ``D`` is a box inside ``W``; all fields live on
one uniform grid over ``D`` and vanish on its faces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .capacity import ball_potential
from .decomposition import GoodBadDecomposition
from .errors import DomainError, ResolutionError
from .geometry import Ball, Box
from .mpp import MppRealization
from .numerics import BOUNDARY, FREE, HOLE, Grid, NodeMask, ScalarField, edge_energy, norms, solve_dirichlet

__all__ = [
    "PerforationSpec",
    "PerforatedMask",
    "build_perforation",
    "solve_perforated",
    "solve_homogenized",
    "assemble_corrector",
    "corrector_error",
    "heat_compare",
    "lowest_mode",
    "manufactured_source",
]

Modulation = Union[None, float, Callable]


def _eval_modulation(V: Modulation, x: np.ndarray) -> np.ndarray:
    """``V`` at the points ``x`` (last axis = coordinates)."""
    if V is None:
        return np.ones(x.shape[:-1])
    if callable(V):
        vals = np.asarray(V(x), dtype=float)
    else:
        vals = np.full(x.shape[:-1], float(V))
    return np.broadcast_to(vals, x.shape[:-1])


@dataclass
class PerforationSpec:
    """Perforation of ``domain`` at scale ``epsilon`` by the holes of ``realization``.

    ``modulation`` is ``None``, a positive constant, or a callable mapping
    an ``(N, d)`` array of physical positions to ``N`` positive values.
    ``window`` is the physical window ``W`` and defaults to
    ``epsilon * realization.window``.
    """

    epsilon: float
    domain: Box
    realization: MppRealization
    modulation: Modulation = None
    resolve_factor: float = 2.0
    window: Optional[Box] = None

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise DomainError(f"epsilon must lie in ]0, 1], got {self.epsilon!r}")
        if not self.resolve_factor >= 2:
            raise DomainError(f"resolve_factor must be at least 2, got {self.resolve_factor!r}")
        if self.window is None:
            self.window = self.realization.window.scaled(self.epsilon)
        if not self.window.covers(self.domain):
            raise DomainError(f"domain {self.domain} must lie inside the window {self.window}")

    @property
    def dim(self) -> int:
        return self.realization.dim

    @property
    def scale(self) -> float:
        d = self.dim
        return self.epsilon ** (d / (d - 2))

    def centers(self) -> np.ndarray:
        return self.epsilon * self.realization.positions

    def radius_factors(self) -> np.ndarray:
        """``V(eps z)`` for every point of the realization."""
        v = _eval_modulation(self.modulation, self.centers())
        if np.any(~(v > 0)):
            raise DomainError("the modulation must be positive at every hole centre")
        return np.asarray(v, dtype=float)

    def placements(self):
        """``(index, center, scale_factor)`` of every placed hole (``eps z`` in ``W``)."""
        c = self.centers()
        inside = np.flatnonzero(self.window.contains(c)) if len(c) else np.zeros(0, dtype=np.int64)
        factors = self.scale * self.radius_factors()
        return [(int(i), c[i], float(factors[i])) for i in inside]


@dataclass
class PerforatedMask(NodeMask):
    """Node mask of a perforated domain plus bookkeeping of pinned holes."""

    holes: int = 0
    pinned: int = 0
    warnings: list = field(default_factory=list)


def _block(grid: Grid, center, radius):
    """Index slices of the grid nodes within the axis box of half-width ``radius`` about ``center``."""
    sl = []
    for a in range(3):
        lo = math.ceil((center[a] - radius - grid.lo[a]) / grid.h[a] - 1e-9)
        hi = math.floor((center[a] + radius - grid.lo[a]) / grid.h[a] + 1e-9)
        lo, hi = max(lo, 0), min(hi, grid.n - 1)
        if hi < lo:
            return None
        sl.append(slice(lo, hi + 1))
    return tuple(sl)


def _block_points(grid: Grid, sl):
    ax = grid.axes()
    return np.stack(np.meshgrid(ax[0][sl[0]], ax[1][sl[1]], ax[2][sl[2]], indexing="ij"), axis=-1)


def _nearest_node(grid: Grid, x):
    idx = np.rint((np.asarray(x) - np.asarray(grid.lo)) / grid.h).astype(int)
    return tuple(np.clip(idx, 1, grid.n - 2))


def _required_n(grid: Grid, radius: float, factor: float) -> int:
    side = float(np.max(np.asarray(grid.hi) - np.asarray(grid.lo)))
    return int(math.ceil(side * factor / radius)) + 1


def build_perforation(spec: PerforationSpec, grid: Grid, allow_underresolved: bool = False) -> PerforatedMask:
    """Label the grid nodes of the perforated domain.

    HOLE marks every interior node inside a placed hole, BOUNDARY the box
    faces, FREE the rest. Holes meeting the grid box must have a placed
    circumradius of at least ``resolve_factor * h``, and each hole whose
    centre lies in the box must contain a node. With
    ``allow_underresolved`` violations are tolerated: the node nearest to
    the centre of an empty hole is pinned to HOLE and a warning recorded.

    Raises
    ------
    ResolutionError
        On an under-resolved hole, reporting the grid size that would
        resolve it.
    """
    if spec.dim != 3:
        raise DomainError("the PDE pipeline runs in d = 3 only")
    if not (np.allclose(grid.lo, spec.domain.lo) and np.allclose(grid.hi, spec.domain.hi)):
        raise DomainError(f"grid box {grid.lo} .. {grid.hi} does not match the domain {spec.domain}")
    labels = np.full(grid.shape, FREE, dtype=np.int8)
    h = float(np.max(grid.h))
    real = spec.realization
    holes = pinned = coarse = 0
    for i, center, factor in spec.placements():
        shape = real.shape_of(i).scale(factor)
        radius = shape.circumradius()
        sl = _block(grid, center, radius)
        # a hole too small to enclose any node still meets the box if its centre does
        if sl is None and not _in_closed_box(grid, center):
            continue
        holes += 1
        need = _required_n(grid, radius, spec.resolve_factor)
        if radius < spec.resolve_factor * h:
            if not allow_underresolved:
                raise ResolutionError(
                    f"hole {i} has placed radius {radius:.4g} < {spec.resolve_factor:g} h = {spec.resolve_factor * h:.4g}",
                    required_n=need)
            coarse += 1
        inside = shape.contains(_block_points(grid, sl) - center) if sl is not None else np.zeros(0, dtype=bool)
        if inside.any():
            labels[sl][inside] = HOLE
        elif _in_closed_box(grid, center):
            if not allow_underresolved:
                raise ResolutionError(f"hole {i} contains no grid node", required_n=need)
            labels[_nearest_node(grid, center)] = HOLE
            pinned += 1
    warnings = []
    if coarse or pinned:
        warnings.append(f"under-resolved perforation: {coarse} hole(s) below the resolution bound, "
                        f"{pinned} pinned to a single node; errors are biased")
    labels[[0, -1], :, :] = BOUNDARY
    labels[:, [0, -1], :] = BOUNDARY
    labels[:, :, [0, -1]] = BOUNDARY
    return PerforatedMask(grid, labels, holes=holes, pinned=pinned, warnings=warnings)


def _in_closed_box(grid: Grid, x) -> bool:
    return bool(np.all((np.asarray(x) >= np.asarray(grid.lo)) & (np.asarray(x) <= np.asarray(grid.hi))))


def _as_array(f, grid: Grid):
    if isinstance(f, ScalarField):
        if f.grid != grid:
            raise DomainError("source field lives on a different grid")
        return f.values
    return np.broadcast_to(np.asarray(f, dtype=float), grid.shape)


def solve_perforated(mask: NodeMask, f, tol: float = 1e-10, max_iter: int = 20000) -> ScalarField:
    """``-Delta_h u = f`` on FREE nodes, ``u = 0`` on HOLE and BOUNDARY nodes (zero extension)."""
    rhs = np.where(mask.labels == FREE, _as_array(f, mask.grid), 0.0)
    u = solve_dirichlet(mask, rhs, tol=tol, max_iter=max_iter)
    return ScalarField(mask.grid, np.where(mask.labels == FREE, u, 0.0))


def solve_homogenized(f: ScalarField, c0: float, V: Modulation = None, tol: float = 1e-10,
                      max_iter: int = 20000) -> ScalarField:
    """``(-Delta_h + c0 V^(d-2)) u = f`` in the grid box, ``u = 0`` on its faces."""
    if not c0 >= 0:
        raise DomainError(f"c0 must be nonnegative, got {c0!r}")
    grid = f.grid
    v = _eval_modulation(V, grid.points())
    if np.any(v < 0):
        raise DomainError("the modulation must be nonnegative")
    mask = NodeMask.box(grid)
    d = 3
    shift = c0 * v ** (d - 2)
    u = solve_dirichlet(mask, np.where(mask.labels == FREE, f.values, 0.0), shift=shift, tol=tol, max_iter=max_iter)
    return ScalarField(grid, np.where(mask.labels == FREE, u, 0.0))


def assemble_corrector(spec: PerforationSpec, decomp: GoodBadDecomposition, grid: Grid,
                       mask: Optional[NodeMask] = None, tol: float = 1e-10, max_iter: int = 20000,
                       allow_underresolved: bool = False) -> ScalarField:
    """Oscillating test function ``e_hat = e_hat_g + e_hat_b`` on ``grid``.

    * good ball holes: explicit radial potential of ``B_r(eps z)`` in
      ``U_{d_z}(eps z)``, ``r`` the placed radius;
    * good non-ball holes: discrete potential of the placed hole in
      ``U_{d_z}(eps z)``;
    * bad holes: discrete potential of their union in ``D_b``, the union
      of ``U_{2 r}(eps z)`` over bad ``z``.

    The two discrete potentials are computed in one solve, since their
    supports are disjoint. If ``mask`` is given, ``e_hat`` is also set to 1
    on its HOLE nodes (pinned nodes of an under-resolved perforation).
    """
    real = spec.realization
    factors = spec.scale * spec.radius_factors()
    centers = spec.centers()
    e = np.zeros(grid.shape)
    lab = np.full(grid.shape, BOUNDARY, dtype=np.int8)
    need_solve = False

    for k, z in enumerate(decomp.I_g):
        z = int(z)
        R = float(decomp.d[k])
        sl = _block(grid, centers[z], R)
        if sl is None:
            continue
        pts = _block_points(grid, sl) - centers[z]
        dist = np.sqrt(np.einsum("...i,...i->...", pts, pts))
        cell = dist < R
        shape = real.shape_of(z).scale(factors[z])
        in_hole = shape.contains(pts)
        if not in_hole.any() and _in_closed_box(grid, centers[z]) and not allow_underresolved:
            raise ResolutionError(f"good hole {z} contains no grid node",
                                  required_n=_required_n(grid, shape.circumradius(), 2.0))
        if isinstance(shape, Ball):
            prof = ball_potential(dist, shape.radius, R, d=3)
            e[sl] = np.where(cell, prof, e[sl])
        else:
            need_solve = True
            lab[sl] = np.where(cell, np.where(in_hole, HOLE, FREE), lab[sl])

    for z in decomp.I_b:
        z = int(z)
        shape = real.shape_of(z).scale(factors[z])
        r = shape.circumradius()
        sl = _block(grid, centers[z], 2.0 * r)
        if sl is None:
            continue
        pts = _block_points(grid, sl) - centers[z]
        dist = np.sqrt(np.einsum("...i,...i->...", pts, pts))
        in_hole = shape.contains(pts)
        sub = lab[sl]
        sub = np.where((dist < 2.0 * r) & (sub != HOLE), FREE, sub)
        lab[sl] = np.where(in_hole, HOLE, sub)
        need_solve = True

    if need_solve:
        lab[[0, -1], :, :] = BOUNDARY
        lab[:, [0, -1], :] = BOUNDARY
        lab[:, :, [0, -1]] = BOUNDARY
        local = solve_dirichlet(NodeMask(grid, lab), dirichlet=(lab == HOLE).astype(float), tol=tol,
                                max_iter=max_iter)
        region = lab != BOUNDARY
        e = np.where(region, local, e)
    if mask is not None:
        e = np.where(mask.labels == HOLE, 1.0, e)
    return ScalarField(grid, e)


def corrector_error(u_eps: ScalarField, u_hom: ScalarField, corrector: ScalarField):
    """``(|u_eps - u|_H1, |u_eps - (1 - e_hat) u|_H1, ratio)``; ``ratio`` is NaN when the plain error is 0."""
    if not (u_eps.grid == u_hom.grid == corrector.grid):
        raise DomainError("fields live on different grids")
    grid = u_eps.grid
    plain = math.sqrt(edge_energy(u_eps.values - u_hom.values, grid))
    corr = math.sqrt(edge_energy(u_eps.values - (1.0 - corrector.values) * u_hom.values, grid))
    ratio = corr / plain if plain > 0 else math.nan
    return plain, corr, ratio


def _implicit_euler(mask: NodeMask, u0: np.ndarray, t: float, dt: float, tol: float, max_iter: int):
    steps = max(int(round(t / dt)), 1)
    dt = t / steps
    u = np.where(mask.labels == FREE, u0, 0.0)
    for _ in range(steps):
        u = solve_dirichlet(mask, u / dt, shift=1.0 / dt, tol=tol, max_iter=max_iter)
        u = np.where(mask.labels == FREE, u, 0.0)
    return u


def heat_compare(mask: NodeMask, c0: float, u0: ScalarField, t: float, dt: Optional[float] = None,
                 tol: float = 1e-10, max_iter: int = 20000) -> float:
    """``||u_perf(t) - exp(-c0 t) u_D(t)||_L2 / ||u0||_L2``.

    ``u_perf`` evolves the restriction of ``u0`` by the heat flow of the
    perforated domain (zero on holes), ``u_D`` by the heat flow of the
    whole box; both use implicit Euler with ``round(t / dt)`` steps
    (``dt = t / 64`` by default).
    """
    if not t > 0:
        raise DomainError(f"t must be positive, got {t!r}")
    dt = t / 64 if dt is None else dt
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt!r}")
    if not c0 >= 0:
        raise DomainError(f"c0 must be nonnegative, got {c0!r}")
    grid = mask.grid
    ref_mask = NodeMask.box(grid)
    up = _implicit_euler(mask, u0.values, t, dt, tol, max_iter)
    ud = _implicit_euler(ref_mask, u0.values, t, dt, tol, max_iter)
    diff = ScalarField(grid, up - math.exp(-c0 * t) * ud)
    l2_u0 = norms(u0)[0]
    if l2_u0 == 0:
        return 0.0
    return norms(diff)[0] / l2_u0


def lowest_mode(grid: Grid) -> ScalarField:
    """``prod_a sin(pi (x_a - lo_a) / L_a)``, the lowest Dirichlet mode of the grid box."""
    return manufactured_source(grid, 0.0, amplitude_only=True)


def manufactured_source(grid: Grid, c0: float, amplitude_only: bool = False) -> ScalarField:
    """``(sum_a (pi / L_a)^2 + c0) * prod_a sin(pi (x_a - lo_a) / L_a)``.

    Its homogenized solution with coefficient ``c0`` is the product of sines.
    """
    x, y, z = grid.coords()
    L = np.asarray(grid.hi) - np.asarray(grid.lo)
    mode = (np.sin(math.pi * (x - grid.lo[0]) / L[0]) * np.sin(math.pi * (y - grid.lo[1]) / L[1])
            * np.sin(math.pi * (z - grid.lo[2]) / L[2]))
    if amplitude_only:
        return ScalarField(grid, mode)
    return ScalarField(grid, (float(np.sum((math.pi / L) ** 2)) + c0) * mode)
