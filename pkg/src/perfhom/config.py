"""Study configuration: a strict TOML schema and its renderer.

Every key lives in one of the sections below; unknown sections or keys
are errors. Defaults are listed in ``docs/formats.md``.

::

    [domain]     lo, hi (3-vectors), grid_n
    [window]     lo, hi (3-vectors; default: domain expanded by 1)
    [generator]  kind, marks, intensity, spacing, offset, jitter,
                 hardcore_radius, p
    [mixture_a]  component A of a mixture (same keys as [generator] but p)
    [mixture_b]  component B of a mixture
    [study]      epsilons, base_seed, seeds, alpha, M, source, modulation
    [solver]     tol, max_iter, resolve_factor, cap_resolution
    [heat]       enabled, t, dt
    [output]     dir, dump_fields, timing
    [flags]      extrapolate, allow_underresolved, fail_fast, workers
"""
from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, replace
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigError, PerfhomError
from .geometry import Box
from .mpp import MARK_CAP_RESOLUTION, GeneratorSpec, MarkLaw

__all__ = ["StudyConfig", "parse_config", "render_config", "load_config", "config_hash"]

SOURCES = ("manufactured", "constant")

_GEN_KEYS = ("kind", "marks", "intensity", "spacing", "offset", "jitter", "hardcore_radius")
_SCHEMA = {
    "domain": ("lo", "hi", "grid_n"),
    "window": ("lo", "hi"),
    "generator": _GEN_KEYS + ("p",),
    "mixture_a": _GEN_KEYS,
    "mixture_b": _GEN_KEYS,
    "study": ("epsilons", "base_seed", "seeds", "alpha", "M", "source", "modulation"),
    "solver": ("tol", "max_iter", "resolve_factor", "cap_resolution"),
    "heat": ("enabled", "t", "dt"),
    "output": ("dir", "dump_fields", "timing"),
    "flags": ("extrapolate", "allow_underresolved", "fail_fast", "workers"),
}


@dataclass(frozen=True)
class StudyConfig:
    """Validated parameters of an epsilon study (see the module docstring for the file layout)."""

    generator: GeneratorSpec
    domain: Box = Box.cube(0.0, 1.0)
    grid_n: int = 129
    window: Optional[Box] = None
    epsilons: tuple[float, ...] = (0.5, 0.25)
    base_seed: int = 0
    seeds: int = 1
    alpha: float = 1.0
    M: float = 10.0
    source: str = "manufactured"
    modulation: Optional[float] = None
    tol: float = 1e-8
    max_iter: int = 20000
    resolve_factor: float = 2.0
    cap_resolution: int = MARK_CAP_RESOLUTION
    heat_enabled: bool = False
    heat_t: float = 0.05
    heat_dt: Optional[float] = None
    output_dir: str = "perfhom-out"
    dump_fields: bool = False
    timing: bool = False
    extrapolate: bool = False
    allow_underresolved: bool = False
    fail_fast: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.window is None:
            object.__setattr__(self, "window", self.domain.expanded(1.0))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        self.validate()

    @property
    def dim(self) -> int:
        return self.domain.dim

    def validate(self) -> None:
        d = self.dim
        if d != 3 or self.window.dim != 3:
            raise ConfigError("domain", "the study runs in d = 3 only")
        if self.generator.dim != d:
            raise ConfigError("generator.marks", f"mark dimension {self.generator.dim} is not {d}")
        if self.domain.volume <= 0:
            raise ConfigError("domain", "degenerate domain box")
        if not self.grid_n >= 33:
            raise ConfigError("domain.grid_n", f"must be at least 33, got {self.grid_n}")
        if not self.epsilons:
            raise ConfigError("study.epsilons", "at least one epsilon is required")
        if any(not (0 < e <= 1) for e in self.epsilons):
            raise ConfigError("study.epsilons", f"every epsilon must lie in ]0, 1], got {list(self.epsilons)}")
        if len(set(self.epsilons)) != len(self.epsilons):
            raise ConfigError("study.epsilons", "epsilons must be distinct")
        margin = max(self.epsilons)
        if not self.window.covers(self.domain.expanded(margin)):
            raise ConfigError("window", f"the window must contain the domain with a margin of at least {margin:g}")
        if not 0 < self.alpha < d / (d - 2):
            raise ConfigError("study.alpha", f"must lie in ]0, {d / (d - 2):g}[, got {self.alpha!r}")
        if not self.M > 1:
            raise ConfigError("study.M", f"must exceed 1, got {self.M!r}")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("study.base_seed", "must be a 64-bit unsigned integer")
        if not self.seeds >= 1:
            raise ConfigError("study.seeds", f"must be at least 1, got {self.seeds}")
        if self.source not in SOURCES:
            raise ConfigError("study.source", f"must be one of {SOURCES}, got {self.source!r}")
        if self.modulation is not None and not (self.modulation > 0 and math.isfinite(self.modulation)):
            raise ConfigError("study.modulation", f"must be positive, got {self.modulation!r}")
        if not self.tol > 0:
            raise ConfigError("solver.tol", f"must be positive, got {self.tol!r}")
        if not self.max_iter >= 1:
            raise ConfigError("solver.max_iter", f"must be positive, got {self.max_iter!r}")
        if not self.resolve_factor >= 2:
            raise ConfigError("solver.resolve_factor", f"must be at least 2, got {self.resolve_factor!r}")
        if not self.cap_resolution >= 33:
            raise ConfigError("solver.cap_resolution", f"must be at least 33, got {self.cap_resolution!r}")
        if not self.heat_t > 0:
            raise ConfigError("heat.t", f"must be positive, got {self.heat_t!r}")
        if self.heat_dt is not None and not 0 < self.heat_dt <= self.heat_t:
            raise ConfigError("heat.dt", f"must lie in ]0, t], got {self.heat_dt!r}")
        if not self.workers >= 1:
            raise ConfigError("flags.workers", f"must be at least 1, got {self.workers}")

    def with_workers(self, workers: int) -> "StudyConfig":
        return replace(self, workers=workers)


def _get(section: dict, sect: str, key: str, kind, default=None):
    if key not in section:
        return default
    v = section[key]
    where = f"{sect}.{key}"
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(where, f"expected a number, got {v!r}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(where, f"expected an integer, got {v!r}")
        return v
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(where, f"expected true or false, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(where, f"expected a string, got {v!r}")
        return v
    if kind == "vec":
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(where, f"expected a list of numbers, got {v!r}")
        return tuple(float(x) for x in v)
    raise AssertionError(kind)


def _generator(section: dict, sect: str) -> GeneratorSpec:
    """A non-mixture generator from one section."""
    kind = _get(section, sect, "kind", str)
    if kind is None:
        raise ConfigError(f"{sect}.kind", "missing generator kind")
    if kind == "mixture":
        raise ConfigError(f"{sect}.kind", "mixture components cannot be mixtures")
    marks_text = _get(section, sect, "marks", str)
    if marks_text is None:
        raise ConfigError(f"{sect}.marks", "missing mark law")
    try:
        return GeneratorSpec(
            kind, MarkLaw.parse(marks_text),
            intensity=_get(section, sect, "intensity", float),
            spacing=_get(section, sect, "spacing", float),
            offset=_get(section, sect, "offset", float, 0.5),
            jitter=_get(section, sect, "jitter", float, 0.0),
            hardcore_radius=_get(section, sect, "hardcore_radius", float),
        )
    except ConfigError as exc:
        raise ConfigError(f"{sect}.{exc.key}", exc.reason) from exc


def parse_config(text: str) -> StudyConfig:
    """Parse and validate a study configuration document (TOML).

    Raises
    ------
    ConfigError
        On malformed TOML, unknown sections or keys, wrong value types, or
        any violated invariant; the error names the offending key.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<document>", f"malformed TOML: {exc}") from exc
    for sect, body in doc.items():
        if sect not in _SCHEMA:
            raise ConfigError(sect, "unknown section")
        if not isinstance(body, dict):
            raise ConfigError(sect, "expected a section, got a bare key")
        for key in body:
            if key not in _SCHEMA[sect]:
                raise ConfigError(f"{sect}.{key}", "unknown key")
    if "generator" not in doc:
        raise ConfigError("generator", "missing section")
    g = doc["generator"]
    if _get(g, "generator", "kind", str) == "mixture":
        extra = [k for k in g if k not in ("kind", "p")]
        if extra:
            raise ConfigError(f"generator.{extra[0]}", "a mixture takes only kind and p; put components in "
                                                       "[mixture_a] and [mixture_b]")
        for name in ("mixture_a", "mixture_b"):
            if name not in doc:
                raise ConfigError(name, "missing section for a mixture generator")
        a = _generator(doc["mixture_a"], "mixture_a")
        b = _generator(doc["mixture_b"], "mixture_b")
        try:
            gen = GeneratorSpec("mixture", a.marks, components=(a, b), p=_get(g, "generator", "p", float, 0.5))
        except ConfigError as exc:
            raise ConfigError(f"generator.{exc.key}", exc.reason) from exc
    else:
        for name in ("mixture_a", "mixture_b"):
            if name in doc:
                raise ConfigError(name, "only a mixture generator takes component sections")
        if "p" in g:
            raise ConfigError("generator.p", "only a mixture generator takes p")
        gen = _generator(g, "generator")

    dom = doc.get("domain", {})
    win = doc.get("window", {})
    st = doc.get("study", {})
    so = doc.get("solver", {})
    he = doc.get("heat", {})
    out = doc.get("output", {})
    fl = doc.get("flags", {})
    kw: dict[str, Any] = {"generator": gen}
    try:
        if "lo" in dom or "hi" in dom:
            kw["domain"] = Box(_get(dom, "domain", "lo", "vec", (0.0,) * 3), _get(dom, "domain", "hi", "vec", (1.0,) * 3))
        if "lo" in win or "hi" in win:
            if not ("lo" in win and "hi" in win):
                raise ConfigError("window", "give both lo and hi")
            kw["window"] = Box(_get(win, "window", "lo", "vec"), _get(win, "window", "hi", "vec"))
    except PerfhomError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("domain", str(exc)) from exc
    scalar = {
        "grid_n": (dom, "domain", int), "base_seed": (st, "study", int), "seeds": (st, "study", int),
        "alpha": (st, "study", float), "M": (st, "study", float), "source": (st, "study", str),
        "modulation": (st, "study", float), "tol": (so, "solver", float), "max_iter": (so, "solver", int),
        "resolve_factor": (so, "solver", float), "cap_resolution": (so, "solver", int),
        "heat_enabled": (he, "heat", bool, "enabled"), "heat_t": (he, "heat", float, "t"),
        "heat_dt": (he, "heat", float, "dt"), "output_dir": (out, "output", str, "dir"),
        "dump_fields": (out, "output", bool), "timing": (out, "output", bool),
        "extrapolate": (fl, "flags", bool), "allow_underresolved": (fl, "flags", bool),
        "fail_fast": (fl, "flags", bool), "workers": (fl, "flags", int),
    }
    for name, spec in scalar.items():
        sect_body, sect, kind = spec[:3]
        key = spec[3] if len(spec) > 3 else name
        if key in sect_body:
            kw[name] = _get(sect_body, sect, key, kind)
    if "epsilons" in st:
        eps = st["epsilons"]
        if not isinstance(eps, list) or not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in eps):
            raise ConfigError("study.epsilons", f"expected a list of numbers, got {eps!r}")
        kw["epsilons"] = tuple(float(e) for e in eps)
    return StudyConfig(**kw)


def load_config(path) -> StudyConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(type(v))


def _render_generator(spec: GeneratorSpec) -> list[str]:
    lines = [f"kind = {_fmt(spec.kind)}", f"marks = {_fmt(spec.marks.render())}"]
    for name in ("intensity", "spacing", "hardcore_radius"):
        if getattr(spec, name) is not None:
            lines.append(f"{name} = {_fmt(float(getattr(spec, name)))}")
    lines.append(f"offset = {_fmt(float(spec.offset))}")
    lines.append(f"jitter = {_fmt(float(spec.jitter))}")
    return lines


def render_config(cfg: StudyConfig) -> str:
    """TOML text that :func:`parse_config` maps back to ``cfg``."""
    out = ["[domain]", f"lo = {_fmt(cfg.domain.lo)}", f"hi = {_fmt(cfg.domain.hi)}", f"grid_n = {cfg.grid_n}", "",
           "[window]", f"lo = {_fmt(cfg.window.lo)}", f"hi = {_fmt(cfg.window.hi)}", "", "[generator]"]
    gen = cfg.generator
    if gen.kind == "mixture":
        out += ['kind = "mixture"', f"p = {_fmt(float(gen.p))}", "", "[mixture_a]"]
        out += _render_generator(gen.components[0]) + ["", "[mixture_b]"]
        out += _render_generator(gen.components[1])
    else:
        out += _render_generator(gen)
    out += ["", "[study]", f"epsilons = {_fmt(cfg.epsilons)}", f"base_seed = {cfg.base_seed}",
            f"seeds = {cfg.seeds}", f"alpha = {_fmt(cfg.alpha)}", f"M = {_fmt(cfg.M)}",
            f"source = {_fmt(cfg.source)}"]
    if cfg.modulation is not None:
        out.append(f"modulation = {_fmt(cfg.modulation)}")
    out += ["", "[solver]", f"tol = {_fmt(cfg.tol)}", f"max_iter = {cfg.max_iter}",
            f"resolve_factor = {_fmt(cfg.resolve_factor)}", f"cap_resolution = {cfg.cap_resolution}",
            "", "[heat]", f"enabled = {_fmt(cfg.heat_enabled)}", f"t = {_fmt(cfg.heat_t)}"]
    if cfg.heat_dt is not None:
        out.append(f"dt = {_fmt(cfg.heat_dt)}")
    out += ["", "[output]", f"dir = {_fmt(cfg.output_dir)}", f"dump_fields = {_fmt(cfg.dump_fields)}",
            f"timing = {_fmt(cfg.timing)}", "", "[flags]", f"extrapolate = {_fmt(cfg.extrapolate)}",
            f"allow_underresolved = {_fmt(cfg.allow_underresolved)}", f"fail_fast = {_fmt(cfg.fail_fast)}",
            f"workers = {cfg.workers}", ""]
    return "\n".join(out)


def config_hash(cfg: StudyConfig) -> str:
    """SHA-256 of the rendered configuration, ignoring the worker count and output location."""
    canon = replace(cfg, workers=1, output_dir="")
    return hashlib.sha256(render_config(canon).encode("utf-8")).hexdigest()

