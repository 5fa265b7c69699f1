"""Marked point processes on bounded windows.

A realization is a finite set of ground points ``z`` in an axis box ``W``,
each carrying a hole shape ``K_z``, its circumradius ``rho_z`` and its
capacity ``Cap K_z``. Sampling is deterministic per ``(spec, window,
seed)``: every draw comes from one ``numpy.random.Generator(PCG64(seed))``
consumed in a fixed order.

Seeds of the realizations in a study derive from one base seed through
:func:`mix64`; the construction is documented bit-exactly in
``docs/formats.md``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .capacity import cap_ball, cap_whole_space
from .errors import ConfigError, DomainError
from .geometry import Ball, Box, HoleShape, parse_shape, shape_from_json

__all__ = [
    "MASK64",
    "mix64",
    "MarkLaw",
    "GeneratorSpec",
    "MppRealization",
    "mark_capacity",
    "sample_process",
    "nearest_neighbor_distances",
    "thin",
    "empirical_average",
    "estimate_c0",
]

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

GENERATOR_KINDS = ("poisson", "lattice", "perturbed_lattice", "matern_hardcore", "mixture")

# resolution used for the capacity of non-ball marks
MARK_CAP_RESOLUTION = 97
MARK_CAP_SCHEDULE = (1.5, 2.0, 3.0)  # in units of the circumradius


def _splitmix_finalize(x: int) -> int:
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64(base_seed: int, index: int) -> int:
    """Seed of stream ``index`` derived from ``base_seed`` (splitmix64 counter).

    ``mix64(b, i) = finalize((b + (i + 1) * 0x9E3779B97F4A7C15) mod 2^64)``
    where ``finalize`` is the splitmix64 output function.
    """
    if index < 0:
        raise DomainError(f"stream index must be nonnegative, got {index}")
    return _splitmix_finalize((int(base_seed) + (int(index) + 1) * _GOLDEN) & MASK64)


@dataclass(frozen=True)
class MarkLaw:
    """Finite distribution over hole shapes (a single shape by default)."""

    shapes: tuple[HoleShape, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        shapes = tuple(self.shapes)
        if not shapes:
            raise ConfigError("marks", "the mark law needs at least one shape")
        weights = tuple(float(w) for w in self.weights) or (1.0,) * len(shapes)
        if len(weights) != len(shapes):
            raise ConfigError("marks", "one weight per shape is required")
        if any(not (w >= 0 and math.isfinite(w)) for w in weights) or sum(weights) <= 0:
            raise ConfigError("marks", f"weights must be nonnegative with a positive sum, got {weights}")
        total = sum(weights)
        if abs(total - 1.0) > 1e-12:
            # normalising only off-unit sums keeps parse(render(law)) == law
            weights = tuple(w / total for w in weights)
        object.__setattr__(self, "shapes", shapes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def fixed(cls, shape: HoleShape) -> "MarkLaw":
        return cls((shape,))

    @classmethod
    def parse(cls, text: str) -> "MarkLaw":
        """``"ball:0.1"`` or ``"0.3*ball:0.1 | 0.7*box:0.1,0.1,0.1"``."""
        shapes, weights = [], []
        for item in text.split("|"):
            item = item.strip()
            w, star, rest = item.partition("*")
            if star and not w.strip().startswith("{"):
                try:
                    weights.append(float(w))
                except ValueError as exc:
                    raise ConfigError("marks", f"bad weight in {item!r}") from exc
                item = rest
            else:
                weights.append(1.0)
            try:
                shapes.append(parse_shape(item))
            except DomainError as exc:
                raise ConfigError("marks", str(exc)) from exc
        return cls(tuple(shapes), tuple(weights))

    def render(self) -> str:
        parts = []
        for s, w in zip(self.shapes, self.weights):
            parts.append(f"{w!r}*{_shape_shorthand(s)}")
        return " | ".join(parts)

    def to_json(self):
        return {"shapes": [s.to_json() for s in self.shapes], "weights": list(self.weights)}

    @classmethod
    def from_json(cls, obj) -> "MarkLaw":
        return cls(tuple(shape_from_json(s) for s in obj["shapes"]), tuple(obj["weights"]))


def _shape_shorthand(s: HoleShape) -> str:
    p = s.params()
    if s.kind == "ball":
        return f"ball:{p['radius']!r}"
    if s.kind == "axis_box":
        return "box:" + ",".join(repr(v) for v in p["half_widths"])
    return "union:" + ";".join(",".join(repr(v) for v in (*c, r)) for c, r in zip(p["centers"], p["radii"]))


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters of a stationary point process plus its mark law.

    ``kind`` selects which fields matter:

    * ``poisson``: ``intensity``
    * ``lattice``: ``spacing`` (points at ``spacing * (k + offset)``)
    * ``perturbed_lattice``: ``spacing``, ``jitter`` (uniform in ``[-jitter, jitter]^d``)
    * ``matern_hardcore``: ``intensity``, ``hardcore_radius``
    * ``mixture``: ``components = (spec_a, spec_b)`` and ``p``, the probability of ``spec_a``

    A mixture's own ``marks`` are ignored; each component carries its own.
    """

    kind: str
    marks: MarkLaw
    intensity: Optional[float] = None
    spacing: Optional[float] = None
    offset: float = 0.5
    jitter: float = 0.0
    hardcore_radius: Optional[float] = None
    components: Optional[tuple["GeneratorSpec", "GeneratorSpec"]] = None
    p: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def positive(name):
            v = getattr(self, name)
            if v is None or not (v > 0 and math.isfinite(v)):
                raise ConfigError(name, f"must be positive for a {self.kind} process, got {v!r}")

        if self.kind not in GENERATOR_KINDS:
            raise ConfigError("kind", f"unknown generator {self.kind!r}; expected one of {GENERATOR_KINDS}")
        if self.kind in ("poisson", "matern_hardcore"):
            positive("intensity")
        if self.kind in ("lattice", "perturbed_lattice"):
            positive("spacing")
        if self.kind == "perturbed_lattice" and not (self.jitter >= 0 and math.isfinite(self.jitter)):
            raise ConfigError("jitter", f"must be nonnegative, got {self.jitter!r}")
        if self.kind == "matern_hardcore":
            positive("hardcore_radius")
        if self.kind == "mixture":
            if self.components is None or len(self.components) != 2:
                raise ConfigError("components", "a mixture needs exactly two component specs")
            if not 0.0 <= self.p <= 1.0:
                raise ConfigError("p", f"mixture probability must lie in [0, 1], got {self.p!r}")

    @property
    def dim(self) -> int:
        if self.kind == "mixture":
            return self.components[0].dim
        return self.marks.shapes[0].dim

    def to_json(self):
        out = {"kind": self.kind}
        if self.kind == "mixture":
            out["p"] = self.p
            out["components"] = [c.to_json() for c in self.components]
            return out
        out["marks"] = self.marks.to_json()
        for name in ("intensity", "spacing", "hardcore_radius"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        if self.kind in ("lattice", "perturbed_lattice"):
            out["offset"] = self.offset
        if self.kind == "perturbed_lattice":
            out["jitter"] = self.jitter
        return out

    @classmethod
    def from_json(cls, obj) -> "GeneratorSpec":
        try:
            if obj["kind"] == "mixture":
                comps = tuple(cls.from_json(c) for c in obj["components"])
                return cls("mixture", comps[0].marks, components=comps, p=float(obj["p"]))
            return cls(obj["kind"], MarkLaw.from_json(obj["marks"]), intensity=obj.get("intensity"),
                       spacing=obj.get("spacing"), offset=obj.get("offset", 0.5), jitter=obj.get("jitter", 0.0),
                       hardcore_radius=obj.get("hardcore_radius"))
        except (KeyError, TypeError) as exc:
            raise ConfigError("generator", f"malformed generator object: {exc}") from exc


@functools.lru_cache(maxsize=256)
def mark_capacity(shape: HoleShape, resolution: int = MARK_CAP_RESOLUTION, extrapolate: bool = False) -> float:
    """``Cap K`` of a mark: analytic for balls, grid whole-space estimate otherwise."""
    if isinstance(shape, Ball):
        return cap_ball(shape.radius, d=shape.dim).value
    est = cap_whole_space(shape, MARK_CAP_SCHEDULE, n=resolution, extrapolate=extrapolate,
                          radius_units="circumradius")
    return est.value


@dataclass
class MppRealization:
    """A finite admissible marked point set in ``window``.

    ``positions`` has shape ``(N, d)``; ``shape_ids`` index into ``shapes``;
    ``rho`` and ``cap`` are per point. ``component`` records which branch a
    mixture sampled (``None`` otherwise).
    """

    window: Box
    positions: np.ndarray
    shape_ids: np.ndarray
    shapes: tuple[HoleShape, ...]
    rho: np.ndarray
    cap: np.ndarray
    generator: Optional[GeneratorSpec] = None
    seed: Optional[int] = None
    component: Optional[int] = None
    cap_resolution: int = MARK_CAP_RESOLUTION
    cap_extrapolate: bool = False

    def __post_init__(self):
        d = self.window.dim
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, d)
        n = len(self.positions)
        self.shape_ids = np.asarray(self.shape_ids, dtype=np.int64).reshape(n)
        self.rho = np.asarray(self.rho, dtype=float).reshape(n)
        self.cap = np.asarray(self.cap, dtype=float).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return self.window.dim

    def shape_of(self, i: int) -> HoleShape:
        return self.shapes[int(self.shape_ids[i])]

    def subset(self, index) -> "MppRealization":
        """Realization with the selected points (boolean mask or index array); same window."""
        idx = np.asarray(index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return MppRealization(self.window, self.positions[idx], self.shape_ids[idx], self.shapes, self.rho[idx],
                              self.cap[idx], self.generator, self.seed, self.component, self.cap_resolution,
                              self.cap_extrapolate)

    def restrict(self, window: Box) -> "MppRealization":
        """Points lying in ``window``, with ``window`` as the new window."""
        sub = self.subset(window.contains(self.positions))
        sub.window = window
        return sub

    def translate(self, tau) -> "MppRealization":
        tau = np.asarray(tau, dtype=float)
        out = self.subset(np.arange(len(self)))
        out.positions = self.positions + tau
        out.window = Box(tuple(np.asarray(self.window.lo) + tau), tuple(np.asarray(self.window.hi) + tau))
        return out

    def to_json(self):
        points = [
            {"z": [float(v) for v in self.positions[i]], "shape": self.shape_of(i).to_json(),
             "rho": float(self.rho[i]), "cap": float(self.cap[i])}
            for i in range(len(self))
        ]
        return {
            "window": self.window.to_json(),
            "generator": None if self.generator is None else self.generator.to_json(),
            "seed": self.seed,
            "component": self.component,
            "cap_resolution": self.cap_resolution,
            "cap_extrapolate": self.cap_extrapolate,
            "points": points,
        }

    @classmethod
    def from_json(cls, obj) -> "MppRealization":
        window = Box.from_json(obj["window"])
        shapes: list[HoleShape] = []
        ids, pos, rho, cap = [], [], [], []
        for pt in obj["points"]:
            s = shape_from_json(pt["shape"])
            if s not in shapes:
                shapes.append(s)
            ids.append(shapes.index(s))
            pos.append(pt["z"])
            rho.append(pt["rho"])
            cap.append(pt["cap"])
        gen = obj.get("generator")
        return cls(window, np.asarray(pos, dtype=float).reshape(-1, window.dim), ids, tuple(shapes), rho, cap,
                   None if gen is None else GeneratorSpec.from_json(gen), obj.get("seed"), obj.get("component"),
                   int(obj.get("cap_resolution", MARK_CAP_RESOLUTION)), bool(obj.get("cap_extrapolate", False)))


def _lattice(window: Box, spacing: float, offset: float, margin: float = 0.0) -> np.ndarray:
    axes = []
    for lo, hi in zip(window.lo, window.hi):
        k0 = math.ceil((lo - margin) / spacing - offset)
        k1 = math.ceil((hi + margin) / spacing - offset)
        axes.append(spacing * (np.arange(k0, k1) + offset))
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _poisson(window: Box, intensity: float, rng: np.random.Generator) -> np.ndarray:
    count = rng.poisson(intensity * window.volume)
    lo, hi = np.asarray(window.lo), np.asarray(window.hi)
    return lo + (hi - lo) * rng.random((count, window.dim))


def _ground(spec: GeneratorSpec, window: Box, rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "poisson":
        return _poisson(window, spec.intensity, rng)
    if spec.kind == "lattice":
        pts = _lattice(window, spec.spacing, spec.offset)
        return pts[window.contains(pts)]
    if spec.kind == "perturbed_lattice":
        pts = _lattice(window, spec.spacing, spec.offset, margin=spec.jitter)
        pts = pts + rng.uniform(-spec.jitter, spec.jitter, size=pts.shape)
        return pts[window.contains(pts)]
    if spec.kind == "matern_hardcore":
        pts = _poisson(window, spec.intensity, rng)
        return pts[nearest_neighbor_distances(pts) >= spec.hardcore_radius]
    raise ConfigError("kind", f"cannot sample {spec.kind!r} directly")


def sample_process(spec: GeneratorSpec, window: Box, seed: int, cap_resolution: int = MARK_CAP_RESOLUTION,
                   cap_extrapolate: bool = False) -> MppRealization:
    """Sample one realization of ``spec`` in ``window``.

    Marks are drawn i.i.d. from the mark law after the ground points. A
    mixture flips one coin per realization to choose its component.
    """
    if not isinstance(spec, GeneratorSpec):
        raise ConfigError("generator", f"expected a GeneratorSpec, got {type(spec).__name__}")
    spec.validate()
    if window.volume <= 0:
        raise DomainError(f"degenerate sampling window {window}")
    rng = np.random.Generator(np.random.PCG64(int(seed) & MASK64))
    component = None
    leaf = spec
    if spec.kind == "mixture":
        component = 0 if rng.random() < spec.p else 1
        leaf = spec.components[component]
    if leaf.dim != window.dim:
        raise ConfigError("marks", f"mark dimension {leaf.dim} differs from window dimension {window.dim}")
    pts = _ground(leaf, window, rng)
    law = leaf.marks
    if len(law.shapes) == 1:
        ids = np.zeros(len(pts), dtype=np.int64)
    else:
        ids = rng.choice(len(law.shapes), size=len(pts), p=np.asarray(law.weights))
    rho_by_shape = np.array([s.circumradius() for s in law.shapes])
    cap_by_shape = np.array([mark_capacity(s, cap_resolution, cap_extrapolate) for s in law.shapes])
    return MppRealization(window, pts, ids, law.shapes, rho_by_shape[ids], cap_by_shape[ids], spec, int(seed),
                          component, cap_resolution, cap_extrapolate)


def nearest_neighbor_distances(positions) -> np.ndarray:
    """Distance from each point to its nearest *other* point (``inf`` if none)."""
    pts = np.asarray(positions, dtype=float)
    if len(pts) < 2:
        return np.full(len(pts), np.inf)
    dist, _ = cKDTree(pts).query(pts, k=2)
    return dist[:, 1]


def thin(real: MppRealization, delta: float) -> tuple[MppRealization, MppRealization]:
    """Split into ``(close, far)``: points with a neighbour at distance ``< delta``, and the rest."""
    if not delta > 0:
        raise DomainError(f"thinning radius must be positive, got {delta!r}")
    close = nearest_neighbor_distances(real.positions) < delta
    return real.subset(close), real.subset(~close)


def empirical_average(real: MppRealization, weight: Callable, region: Optional[Box] = None) -> float:
    """``|region|^-1 sum_{z in region} weight(cap_z, rho_z)``.

    ``weight`` is called once with the arrays of capacities and radii of the
    points inside ``region`` and must return per-point values.
    """
    region = real.window if region is None else region
    vol = region.volume
    if not vol > 0:
        raise DomainError("averaging region has zero volume")
    inside = region.contains(real.positions) if len(real) else np.zeros(0, dtype=bool)
    if not inside.any():
        return 0.0
    vals = np.broadcast_to(np.asarray(weight(real.cap[inside], real.rho[inside]), dtype=float), (int(inside.sum()),))
    return float(np.sum(vals)) / vol


def estimate_c0(real: MppRealization, region: Optional[Box] = None) -> float:
    """Empirical strange-term coefficient ``|W|^-1 sum_{z in W} Cap K_z``."""
    return empirical_average(real, lambda cap, rho: cap, region)
