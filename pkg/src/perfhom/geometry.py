"""Hole shapes (the mark space) and their placement in physical space.

Three parametric families are supported, each with an exact closed-set
containment test and an exact origin-centred circumradius:

* ``Ball(radius)``
* ``AxisBox(half_widths)`` -- the box ``[-w_1, w_1] x ... x [-w_d, w_d]``
* ``UnionOfBalls(centers, radii)``

Shapes serialise to ``{"kind": ..., "params": {...}}``; see
``docs/formats.md`` for the exact keys. A compact textual shorthand is
accepted on the command line: ``ball:1``, ``box:1,2,3`` and
``union:1,0,0,0.5;-1,0,0,0.5`` (``x,y,z,r`` per ball).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import DomainError

__all__ = [
    "HoleShape",
    "Ball",
    "AxisBox",
    "UnionOfBalls",
    "Placement",
    "Box",
    "shape_contains",
    "shape_diameter",
    "shape_circumradius",
    "shape_scale",
    "shape_from_json",
    "parse_shape",
]


class HoleShape:
    """Common interface of the mark families. Instances are immutable."""

    kind: str = ""
    dim: int = 3

    def contains(self, x):
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    def circumradius(self) -> float:
        raise NotImplementedError

    def scale(self, t: float) -> "HoleShape":
        raise NotImplementedError

    def params(self) -> dict[str, Any]:
        raise NotImplementedError

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": self.params()}


def _check_scale(t):
    if not (t > 0 and math.isfinite(t)):
        raise DomainError(f"scale factor must be positive and finite, got {t!r}")


@dataclass(frozen=True)
class Ball(HoleShape):
    radius: float
    dim: int = 3

    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "radius", float(self.radius))
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise DomainError(f"ball radius must be positive, got {self.radius!r}")
        if self.dim < 1:
            raise DomainError("dimension must be positive")

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,...i->...", x, x) <= self.radius * self.radius

    def diameter(self):
        return 2.0 * self.radius

    def circumradius(self):
        return float(self.radius)

    def scale(self, t):
        _check_scale(t)
        return Ball(self.radius * t, self.dim)

    def params(self):
        return {"radius": self.radius}


@dataclass(frozen=True)
class AxisBox(HoleShape):
    half_widths: tuple[float, ...]

    kind = "axis_box"

    def __post_init__(self):
        hw = tuple(float(w) for w in self.half_widths)
        if not hw or not all(w > 0 and math.isfinite(w) for w in hw):
            raise DomainError(f"box half widths must be positive, got {self.half_widths!r}")
        object.__setattr__(self, "half_widths", hw)

    @property
    def dim(self):
        return len(self.half_widths)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all(np.abs(x) <= np.asarray(self.half_widths), axis=-1)

    def diameter(self):
        return 2.0 * math.sqrt(sum(w * w for w in self.half_widths))

    def circumradius(self):
        return math.sqrt(sum(w * w for w in self.half_widths))

    def scale(self, t):
        _check_scale(t)
        return AxisBox(tuple(w * t for w in self.half_widths))

    def params(self):
        return {"half_widths": list(self.half_widths)}


@dataclass(frozen=True)
class UnionOfBalls(HoleShape):
    centers: tuple[tuple[float, ...], ...]
    radii: tuple[float, ...]

    kind = "union_of_balls"

    def __post_init__(self):
        centers = tuple(tuple(float(c) for c in ctr) for ctr in self.centers)
        radii = tuple(float(r) for r in self.radii)
        if not centers or len(centers) != len(radii):
            raise DomainError("union of balls needs matching, nonempty centers and radii")
        if len({len(c) for c in centers}) != 1:
            raise DomainError("all ball centers must have the same dimension")
        if not all(r > 0 and math.isfinite(r) for r in radii):
            raise DomainError(f"ball radii must be positive, got {radii!r}")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radii", radii)

    @property
    def dim(self):
        return len(self.centers[0])

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.centers)
        r = np.asarray(self.radii)
        diff = x[..., None, :] - c
        return np.any(np.einsum("...ki,...ki->...k", diff, diff) <= r * r, axis=-1)

    def diameter(self):
        c = np.asarray(self.centers)
        r = np.asarray(self.radii)
        dist = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
        return float(np.max(dist + r[:, None] + r[None, :]))

    def circumradius(self):
        c = np.asarray(self.centers)
        return float(np.max(np.linalg.norm(c, axis=-1) + np.asarray(self.radii)))

    def scale(self, t):
        _check_scale(t)
        return UnionOfBalls(
            tuple(tuple(ci * t for ci in ctr) for ctr in self.centers),
            tuple(r * t for r in self.radii),
        )

    def params(self):
        return {"centers": [list(c) for c in self.centers], "radii": list(self.radii)}


def shape_contains(shape: HoleShape, x) -> bool:
    return bool(shape.contains(x))


def shape_diameter(shape: HoleShape) -> float:
    return shape.diameter()


def shape_circumradius(shape: HoleShape) -> float:
    return shape.circumradius()


def shape_scale(shape: HoleShape, t: float) -> HoleShape:
    return shape.scale(t)


def shape_from_json(obj) -> HoleShape:
    if isinstance(obj, str):
        obj = json.loads(obj)
    try:
        kind = obj["kind"]
        p = obj["params"]
        if kind == "ball":
            return Ball(float(p["radius"]), int(p.get("dim", 3)))
        if kind == "axis_box":
            return AxisBox(tuple(p["half_widths"]))
        if kind == "union_of_balls":
            return UnionOfBalls(tuple(tuple(c) for c in p["centers"]), tuple(p["radii"]))
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed shape object {obj!r}") from exc
    raise DomainError(f"unknown shape kind {kind!r}")


def parse_shape(text: str) -> HoleShape:
    """Parse either a JSON shape object or the ``kind:params`` shorthand."""
    text = text.strip()
    if text.startswith("{"):
        return shape_from_json(text)
    kind, _, rest = text.partition(":")
    try:
        if kind == "ball":
            return Ball(float(rest))
        if kind == "box":
            return AxisBox(tuple(float(v) for v in rest.split(",")))
        if kind == "union":
            centers, radii = [], []
            for item in rest.split(";"):
                vals = [float(v) for v in item.split(",")]
                centers.append(tuple(vals[:-1]))
                radii.append(vals[-1])
            return UnionOfBalls(tuple(centers), tuple(radii))
    except ValueError as exc:
        raise DomainError(f"cannot parse shape {text!r}: {exc}") from exc
    raise DomainError(f"unknown shape shorthand {text!r}")


@dataclass(frozen=True)
class Placement:
    """A hole placed at ``center + scale_factor * shape``."""

    center: tuple[float, ...]
    scale_factor: float
    shape: HoleShape

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.scale_factor > 0:
            raise DomainError("placement scale factor must be positive")

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return self.placed_shape().contains(x - np.asarray(self.center))

    def circumradius(self) -> float:
        return self.scale_factor * self.shape.circumradius()

    def placed_shape(self) -> HoleShape:
        return self.shape.scale(self.scale_factor)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box. Point membership is half-open: ``lo <= x < hi``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise DomainError("box corners must have the same positive dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int = 3) -> "Box":
        return cls((lo,) * d, (hi,) * d)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod([max(b - a, 0.0) for a, b in zip(self.lo, self.hi)]))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo)) & (x < np.asarray(self.hi)), axis=-1)

    def covers(self, other: "Box") -> bool:
        return all(a <= c and d <= b for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def scaled(self, t: float) -> "Box":
        _check_scale(t)
        return Box(tuple(t * v for v in self.lo), tuple(t * v for v in self.hi))

    def expanded(self, margin: float) -> "Box":
        return Box(tuple(v - margin for v in self.lo), tuple(v + margin for v in self.hi))

    def to_json(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json(cls, obj) -> "Box":
        return cls(tuple(obj["lo"]), tuple(obj["hi"]))
