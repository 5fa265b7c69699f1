"""Capacities of compact sets: analytic for balls, variational on grids.

Normalisation: ``Cap(F, U) = min  integral_U |grad u|^2`` over admissible
``u`` equal to 1 on ``F``, so a unit ball in R^3 has capacity ``4 pi``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, ResolutionError
from .geometry import HoleShape
from .numerics import BOUNDARY, FREE, HOLE, Grid, NodeMask, edge_energy, solve_dirichlet

__all__ = [
    "CapacityEstimate",
    "sphere_area",
    "mazya_factor",
    "cap_ball",
    "ball_potential",
    "cap_relative_grid",
    "capacitary_potential_grid",
    "cap_whole_space",
    "alpha_ratio",
]


@dataclass(frozen=True)
class CapacityEstimate:
    value: float
    method: str  # "analytic" | "grid" | "grid-extrapolated"
    resolution: Optional[int] = None
    upper_bound: Optional[float] = None
    lower_bound: Optional[float] = None
    relative_error_indicator: float = 0.0
    dim: int = 3

    def to_json(self):
        return asdict(self)


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d."""
    if d == 3:
        return 4.0 * math.pi
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def mazya_factor(d: int, lam: float) -> float:
    """Overhead ``f_d(lambda)`` bounding ``Cap(F, U_{lambda r}) / Cap F``.

    For ``F`` inside ``B_r(0)`` and ``R = lambda r``,
    ``Cap(F, U_R(0)) <= (1 + f_d(lambda)) Cap F`` with
    ``f_3 = (1 + 2 ln lambda) / (lambda - 1)`` and
    ``f_d = 2 / ((d - 3)(lambda - 1))`` for ``d >= 4``.
    """
    if d < 3:
        raise DomainError(f"dimension must be at least 3, got {d}")
    if not lam > 1:
        raise DomainError(f"lambda must exceed 1, got {lam}")
    if d == 3:
        return (1.0 + 2.0 * math.log(lam)) / (lam - 1.0)
    return 2.0 / (d - 3) / (lam - 1.0)


def cap_ball(r: float, R: float = math.inf, d: int = 3) -> CapacityEstimate:
    """``Cap(B_r, U_R) = (d - 2) |S^{d-1}| / (r^{2-d} - R^{2-d})``; ``R = inf`` gives ``Cap B_r``."""
    if d < 3:
        raise DomainError(f"dimension must be at least 3, got {d}")
    if not (r > 0 and r < R):
        raise DomainError(f"need 0 < r < R, got r={r}, R={R}")
    outer = 0.0 if math.isinf(R) else R ** (2 - d)
    value = (d - 2) * sphere_area(d) / (r ** (2 - d) - outer)
    return CapacityEstimate(value, "analytic", dim=d)


def ball_potential(s, r: float, R: float, d: int = 3):
    """Capacitary potential of ``B_r(0)`` in ``U_R(0)`` at distance ``s`` from the centre."""
    s = np.asarray(s, dtype=float)
    inv_R = 0.0 if math.isinf(R) else (1.0 / R) ** (d - 2)
    with np.errstate(divide="ignore"):
        inner = ((1.0 / s) ** (d - 2) - inv_R) / ((1.0 / r) ** (d - 2) - inv_R)
    return np.where(s <= r, 1.0, np.where(s >= R, 0.0, inner))


def _ball_domain_grid(R: float, n: int) -> Grid:
    return Grid.cube(-R, R, n)


def capacitary_potential_grid(shape: HoleShape, domain_radius: float, n: int, tol: float = 1e-11,
                              max_iter: int = 50000):
    """Discrete capacitary potential of ``shape`` in ``U_R(0)`` on an ``n^3`` grid over ``[-R, R]^3``.

    Returns ``(grid, mask, e)``. Nodes inside ``shape`` carry 1 (HOLE),
    nodes with ``|x| >= R`` carry 0 (BOUNDARY).
    """
    if shape.dim != 3:
        raise DomainError("grid capacities are computed in d = 3 only")
    if not shape.circumradius() < domain_radius:
        raise DomainError(f"shape (circumradius {shape.circumradius()}) must lie inside U_{domain_radius}")
    grid = _ball_domain_grid(domain_radius, n)
    x, y, z = grid.coords()
    r2 = x * x + y * y + z * z
    inside = shape.contains(grid.points())
    if not inside.any():
        h = float(grid.h[0])
        need = int(math.ceil(2 * domain_radius / (0.5 * shape.circumradius()))) + 1
        raise ResolutionError(f"no grid node inside the shape at spacing {h:.4g}", required_n=need)
    labels = np.full(grid.shape, FREE, dtype=np.int8)
    labels[r2 >= domain_radius * domain_radius] = BOUNDARY
    labels[inside] = HOLE
    labels[[0, -1], :, :] = BOUNDARY
    labels[:, [0, -1], :] = BOUNDARY
    labels[:, :, [0, -1]] = BOUNDARY
    mask = NodeMask(grid, labels)
    e = solve_dirichlet(mask, dirichlet=(labels == HOLE).astype(float), tol=tol, max_iter=max_iter)
    return grid, mask, e


def cap_relative_grid(shape: HoleShape, domain_radius: float, n: int = 129, extrapolate: bool = False,
                      tol: float = 1e-11) -> CapacityEstimate:
    """Discrete ``Cap(shape, U_R(0))`` as the Dirichlet energy of the discrete potential.

    With ``extrapolate`` the energy is also computed at ``2n - 1`` nodes and
    the two values are combined assuming an ``h^2`` error
    (``method = "grid-extrapolated"``); the indicator then reports the
    relative size of the correction. Otherwise the indicator is the
    pixelation scale ``h / circumradius``.
    """
    if n < 33:
        raise DomainError(f"grid capacity needs n >= 33, got {n}")
    grid, _, e = capacitary_potential_grid(shape, domain_radius, n, tol=tol)
    coarse = float(edge_energy(e, grid))
    if not extrapolate:
        return CapacityEstimate(coarse, "grid", n, relative_error_indicator=float(grid.h[0]) / shape.circumradius())
    fine_grid, _, e_fine = capacitary_potential_grid(shape, domain_radius, 2 * n - 1, tol=tol)
    fine = float(edge_energy(e_fine, fine_grid))
    value = fine + (fine - coarse) / 3.0
    return CapacityEstimate(value, "grid-extrapolated", 2 * n - 1, relative_error_indicator=abs(value - fine) / value)


def cap_whole_space(shape: HoleShape, R_schedule: Sequence[float] = (2.0, 4.0, 8.0), n: int = 129,
                    extrapolate: bool = False, tol: float = 1e-11, radius_units: str = "absolute"
                    ) -> CapacityEstimate:
    """Whole-space capacity from relative capacities on growing balls.

    ``R_schedule`` lists domain radii in units of the shape's circumradius
    (``radius_units="circumradius"``) or as absolute lengths
    (``radius_units="absolute"``).

    Each relative capacity ``C(R)`` bounds ``Cap F`` from above, and the
    Maz'ya factor gives ``Cap F >= C(R) / (1 + f_3(R / rho))``; the tightest
    of these bounds are reported. In three dimensions
    ``1 / C(R) = 1 / Cap F - 1 / (4 pi R) + o(1/R)`` (exact for balls), so
    with two or more radii the estimate is the intercept of a least-squares
    line through ``(1/R, 1/C(R))``. With a single radius the value is the
    relative capacity itself. The indicator is the largest relative
    increase of ``C`` along the schedule (zero when ``C`` is monotone
    nonincreasing, as it is in the continuum) plus the pixelation scale.
    """
    rho = shape.circumradius()
    radii = [float(R) * (rho if radius_units == "circumradius" else 1.0) for R in R_schedule]
    if not radii:
        raise DomainError("empty radius schedule")
    if any(R <= rho for R in radii):
        raise DomainError(f"every domain radius must exceed the circumradius {rho}")
    if sorted(radii) != radii:
        raise DomainError("radius schedule must be increasing")
    ests = [cap_relative_grid(shape, R, n, extrapolate=extrapolate, tol=tol) for R in radii]
    caps = np.array([c.value for c in ests])
    upper = float(caps.min())
    lower = float(max(c / (1.0 + mazya_factor(3, R / rho)) for c, R in zip(caps, radii)))
    if len(radii) == 1:
        value = float(caps[0])
    else:
        t = 1.0 / np.asarray(radii)
        slope, intercept = np.polyfit(t, 1.0 / caps, 1)
        value = float(1.0 / intercept) if intercept > 0 else upper
    increase = float(np.max(np.maximum(caps[1:] / caps[:-1] - 1.0, 0.0))) if len(caps) > 1 else 0.0
    indicator = increase + max(c.relative_error_indicator for c in ests)
    return CapacityEstimate(value, ests[-1].method, ests[-1].resolution, upper_bound=upper, lower_bound=lower,
                            relative_error_indicator=indicator)


def alpha_ratio(shape: HoleShape, cap: CapacityEstimate) -> float:
    """``Cap K / (diam K)^(d-2)``, the shape-regularity ratio of a hole."""
    diam = shape.diameter()
    if not diam > 0:
        raise DomainError("degenerate shape with zero diameter")
    return cap.value / diam ** (cap.dim - 2)
