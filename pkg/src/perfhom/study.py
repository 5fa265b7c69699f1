"""Epsilon studies: one pipeline run per (epsilon, seed) row.

Each seed index ``j`` owns one realization, sampled with seed
``mix64(base_seed, j)`` on ``eps_min^-1 W``; the row for a larger
``eps`` uses its restriction to ``eps^-1 W``. A row is a pure function of
``(config, eps index, seed index)``, so the report does not depend on the
number of workers or on completion order.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from ._accel import backend_name
from .config import StudyConfig, config_hash, render_config
from .decomposition import good_bad_decompose
from .errors import PerfhomError
from .homogenize import (PerforationSpec, assemble_corrector, build_perforation, corrector_error, heat_compare,
                         lowest_mode, manufactured_source, solve_homogenized, solve_perforated)
from .mpp import GeneratorSpec, MppRealization, estimate_c0, mark_capacity, mix64, sample_process
from .numerics import Grid, ScalarField, norms, write_field

__all__ = ["CSV_HEADER", "StudyReport", "nominal_c0", "row_realization", "run_row", "run_study"]

CSV_HEADER = ("epsilon", "seed", "grid_n", "c0_est", "l2_err", "h1_err_plain", "h1_err_corr", "corr_ratio",
              "heat_err", "wall_ms")
_NUMERIC = CSV_HEADER[3:]


def nominal_c0(spec: GeneratorSpec, cap_resolution: int, extrapolate: bool = False) -> float:
    """Expected capacity per unit volume of the generator (intensity times mean mark capacity)."""
    if spec.kind == "mixture":
        a, b = spec.components
        return (spec.p * nominal_c0(a, cap_resolution, extrapolate)
                + (1 - spec.p) * nominal_c0(b, cap_resolution, extrapolate))
    law = spec.marks
    mean_cap = sum(w * mark_capacity(s, cap_resolution, extrapolate) for s, w in zip(law.shapes, law.weights))
    d = spec.dim
    if spec.kind in ("lattice", "perturbed_lattice"):
        intensity = spec.spacing ** (-d)
    elif spec.kind == "poisson":
        intensity = spec.intensity
    else:
        # Matern type I retention probability exp(-lambda |B_delta|)
        ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * spec.hardcore_radius**d
        intensity = spec.intensity * math.exp(-spec.intensity * ball)
    return intensity * mean_cap


def row_realization(cfg: StudyConfig, eps_index: int, seed_index: int) -> MppRealization:
    """The realization seen by row ``(eps_index, seed_index)``."""
    eps = cfg.epsilons[eps_index]
    eps_min = min(cfg.epsilons)
    seed = mix64(cfg.base_seed, seed_index)
    full = sample_process(cfg.generator, cfg.window.scaled(1.0 / eps_min), seed, cfg.cap_resolution,
                          cfg.extrapolate)
    return full.restrict(cfg.window.scaled(1.0 / eps))


def _source(cfg: StudyConfig, grid: Grid) -> ScalarField:
    if cfg.source == "constant":
        return ScalarField(grid, np.ones(grid.shape))
    c0 = nominal_c0(cfg.generator, cfg.cap_resolution, cfg.extrapolate)
    return manufactured_source(grid, c0 * (cfg.modulation or 1.0))


@dataclass
class RowResult:
    values: dict
    status: str = "ok"
    message: str = ""
    warnings: list = field(default_factory=list)
    wall_ms: float = 0.0
    fields: dict = field(default_factory=dict)


def run_row(cfg: StudyConfig, eps_index: int, seed_index: int, keep_fields: bool = False) -> RowResult:
    """Full pipeline for one ``(eps, seed)``: sample, decompose, perforate, solve, correct, compare."""
    start = time.perf_counter()
    eps = cfg.epsilons[eps_index]
    seed = mix64(cfg.base_seed, seed_index)
    values = {"epsilon": eps, "seed": seed, "grid_n": cfg.grid_n}
    try:
        real = row_realization(cfg, eps_index, seed_index)
        pspec = PerforationSpec(eps, cfg.domain, real, modulation=cfg.modulation,
                                resolve_factor=cfg.resolve_factor, window=cfg.window)
        dec = good_bad_decompose(real, eps, cfg.alpha, cfg.M, window=cfg.window,
                                 radius_factor=pspec.radius_factors())
        grid = Grid(cfg.domain.lo, cfg.domain.hi, cfg.grid_n)
        mask = build_perforation(pspec, grid, cfg.allow_underresolved)
        f = _source(cfg, grid)
        u_eps = solve_perforated(mask, f, tol=cfg.tol, max_iter=cfg.max_iter)
        c0 = estimate_c0(real)
        u_hom = solve_homogenized(f, c0, cfg.modulation, tol=cfg.tol, max_iter=cfg.max_iter)
        e_hat = assemble_corrector(pspec, dec, grid, mask, tol=cfg.tol, max_iter=cfg.max_iter,
                                   allow_underresolved=cfg.allow_underresolved)
        plain, corr, ratio = corrector_error(u_eps, u_hom, e_hat)
        heat = math.nan
        if cfg.heat_enabled:
            if cfg.modulation is not None:
                # the heat limit carries exp(-c0 V^(d-2) t); V is constant here
                c0_heat = c0 * cfg.modulation
            else:
                c0_heat = c0
            heat = heat_compare(mask, c0_heat, lowest_mode(grid), cfg.heat_t, cfg.heat_dt, tol=cfg.tol,
                                max_iter=cfg.max_iter)
        values.update(c0_est=c0, l2_err=norms(u_eps - u_hom)[0], h1_err_plain=plain, h1_err_corr=corr,
                      corr_ratio=ratio, heat_err=heat)
        out = RowResult(values, warnings=list(getattr(mask, "warnings", [])))
        if keep_fields:
            out.fields = {"u_eps": u_eps, "u_hom": u_hom, "corrector": e_hat}
    except PerfhomError as exc:
        if cfg.fail_fast:
            raise
        values.update({k: math.nan for k in _NUMERIC if k != "wall_ms"})
        out = RowResult(values, status="error", message=f"{type(exc).__name__}: {exc}")
    out.wall_ms = (time.perf_counter() - start) * 1e3
    return out


def _row_task(args):
    cfg, i, j = args
    return run_row(cfg, i, j, keep_fields=cfg.dump_fields)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class StudyReport:
    """Rows in ``(eps index, seed index)`` order plus run metadata."""

    config: StudyConfig
    rows: list[dict]
    status: list[dict]

    def aggregates(self) -> list[dict]:
        """Per-epsilon mean and sample standard deviation of every numeric column (errors excluded)."""
        out = []
        for eps in self.config.epsilons:
            rows = [r for r, s in zip(self.rows, self.status) if r["epsilon"] == eps and s["status"] == "ok"]
            agg = {"epsilon": eps, "rows": len(rows)}
            for col in _NUMERIC:
                if col == "wall_ms":
                    continue
                vals = np.array([r[col] for r in rows], dtype=float)
                vals = vals[~np.isnan(vals)]
                agg[f"{col}_mean"] = float(vals.mean()) if len(vals) else math.nan
                agg[f"{col}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else math.nan
            out.append(agg)
        return out

    def to_csv(self) -> str:
        """CSV text; ``wall_ms`` is left empty unless timing was requested, so reruns match byte for byte."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r, s in zip(self.rows, self.status):
            wall = r["wall_ms"] if self.config.timing else None
            w.writerow([_fmt(r[c]) if c != "wall_ms" else _fmt(wall) for c in CSV_HEADER])
        return buf.getvalue()

    def manifest(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        return {
            "config_hash": config_hash(self.config),
            "code_version": __version__,
            "backend": backend_name(),
            "csv_header": list(CSV_HEADER),
            "rows": [{"epsilon": r["epsilon"], "seed": r["seed"], **s} for r, s in zip(self.rows, self.status)],
            "aggregates": [{k: clean(v) for k, v in a.items()} for a in self.aggregates()],
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "study.csv"
        csv_path.write_text(self.to_csv())
        man_path = out / "manifest.json"
        man_path.write_text(json.dumps(self.manifest(), indent=2, allow_nan=False) + "\n")
        (out / "config.toml").write_text(render_config(self.config))
        return csv_path, man_path


def run_study(cfg: StudyConfig, out_dir: Optional[str] = None) -> StudyReport:
    """Run every ``(eps, seed)`` row, in parallel over ``cfg.workers`` processes.

    Field dumps (``u_eps``, ``u_hom``, ``corrector``) are written to
    ``<out_dir>/fields`` when ``cfg.dump_fields`` is set.
    """
    tasks = [(cfg, i, j) for i in range(len(cfg.epsilons)) for j in range(cfg.seeds)]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_row_task, tasks))
    else:
        results = [_row_task(t) for t in tasks]
    rows, status = [], []
    for (_, i, j), res in zip(tasks, results):
        row = dict(res.values)
        row["wall_ms"] = res.wall_ms
        rows.append(row)
        status.append({"eps_index": i, "seed_index": j, "status": res.status, "message": res.message,
                       "warnings": res.warnings, "wall_ms": res.wall_ms})
        if res.fields and out_dir is not None:
            fdir = Path(out_dir) / "fields"
            fdir.mkdir(parents=True, exist_ok=True)
            for name, fld in res.fields.items():
                write_field(fld, fdir / f"eps{i}_seed{j}_{name}")
    return StudyReport(cfg, rows, status)
