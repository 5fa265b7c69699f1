"""Command-line front end: ``perfhom <subcommand> ...``.

Exit codes: 0 on success, 1 on a domain or numerical error, 2 on a
configuration or usage error. Results go to standard output as JSON
(or to the files named by ``--out``); diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .capacity import alpha_ratio, cap_ball, cap_relative_grid, cap_whole_space
from .config import StudyConfig, load_config
from .decomposition import decomposition_diagnostics, good_bad_decompose
from .errors import ConfigError, DomainError, PerfhomError
from .geometry import Ball, Box, parse_shape
from .homogenize import (PerforationSpec, assemble_corrector, build_perforation, corrector_error, heat_compare,
                         lowest_mode, solve_homogenized, solve_perforated)
from .mpp import GeneratorSpec, MarkLaw, MppRealization, estimate_c0, mix64, sample_process, thin
from .numerics import Grid, norms, write_field
from .study import _source, row_realization, run_study

log = logging.getLogger("perfhom")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _window(text: str) -> Box:
    """``lo,hi`` (a cube) or ``x0,y0,z0,x1,y1,z1``."""
    vals = _floats(text)
    if len(vals) == 2:
        return Box.cube(vals[0], vals[1])
    if len(vals) % 2 == 0 and vals:
        k = len(vals) // 2
        return Box(vals[:k], vals[k:])
    raise ConfigError("window", f"expected lo,hi or a list of 2d numbers, got {text!r}")


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_realization(path: str) -> MppRealization:
    try:
        return MppRealization.from_json(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError("in", f"cannot read realization {path}: {exc}") from exc


def cmd_cap(args) -> int:
    try:
        shape = parse_shape(args.shape)
    except DomainError as exc:
        # a malformed --shape is bad input, as is a malformed mark law in a config
        raise ConfigError("shape", str(exc)) from exc
    R = math.inf if args.R.lower() in ("inf", "infinity") else float(args.R)
    if math.isinf(R):
        if isinstance(shape, Ball):
            est = cap_ball(shape.radius, d=shape.dim)
        else:
            est = cap_whole_space(shape, _floats(args.schedule), n=args.n, extrapolate=args.extrapolate,
                                  radius_units=args.radius_units)
    elif isinstance(shape, Ball) and args.analytic:
        est = cap_ball(shape.radius, R, d=shape.dim)
    else:
        est = cap_relative_grid(shape, R, n=args.n, extrapolate=args.extrapolate)
    out = {"shape": shape.to_json(), "R": None if math.isinf(R) else R, **est.to_json()}
    if math.isinf(R):
        out["alpha_ratio"] = alpha_ratio(shape, est)
    _emit(out, args.out)
    return 0


def _generator_from_args(args) -> GeneratorSpec:
    if args.config:
        return load_config(args.config).generator
    if not args.kind:
        raise ConfigError("kind", "give --kind or --config")
    return GeneratorSpec(args.kind, MarkLaw.parse(args.marks), intensity=args.intensity, spacing=args.spacing,
                         offset=args.offset, jitter=args.jitter, hardcore_radius=args.hardcore_radius)


def cmd_sample(args) -> int:
    spec = _generator_from_args(args)
    seed = args.seed if args.index is None else mix64(args.seed, args.index)
    real = sample_process(spec, _window(args.window), seed)
    _emit(real.to_json(), args.out)
    return 0


def cmd_thin(args) -> int:
    real = _read_realization(args.input)
    close, far = thin(real, args.delta)
    stem = Path(args.input).with_suffix("")
    close_path = Path(args.out_close or f"{stem}.close.json")
    far_path = Path(args.out_far or f"{stem}.far.json")
    close_path.write_text(json.dumps(close.to_json(), indent=2) + "\n")
    far_path.write_text(json.dumps(far.to_json(), indent=2) + "\n")
    _emit({"delta": args.delta, "close": str(close_path), "far": str(far_path), "n_close": len(close),
           "n_far": len(far)}, None)
    return 0


def cmd_decompose(args) -> int:
    real = _read_realization(args.input)
    window = _window(args.window) if args.window else None
    if args.diagnostics:
        rows = decomposition_diagnostics(real, _floats(args.diagnostics), args.alpha, args.M, window=window)
        _emit({"rows": rows}, args.out)
        return 0
    if args.epsilon is None:
        raise ConfigError("epsilon", "give --epsilon or --diagnostics")
    dec = good_bad_decompose(real, args.epsilon, args.alpha, args.M, window=window)
    _emit(dec.to_json(), args.out)
    return 0


def _pipeline(args):
    cfg = load_config(args.config)
    try:
        i = cfg.epsilons.index(args.epsilon) if args.epsilon is not None else 0
    except ValueError as exc:
        raise ConfigError("epsilon", f"{args.epsilon} is not one of the configured epsilons {cfg.epsilons}") from exc
    eps = cfg.epsilons[i]
    real = row_realization(cfg, i, args.seed_index)
    pspec = PerforationSpec(eps, cfg.domain, real, modulation=cfg.modulation, resolve_factor=cfg.resolve_factor,
                            window=cfg.window)
    grid = Grid(cfg.domain.lo, cfg.domain.hi, cfg.grid_n)
    mask = build_perforation(pspec, grid, cfg.allow_underresolved)
    for w in mask.warnings:
        log.warning(w)
    return cfg, eps, real, pspec, grid, mask


def cmd_solve(args) -> int:
    cfg, eps, real, pspec, grid, mask = _pipeline(args)
    f = _source(cfg, grid)
    u_eps = solve_perforated(mask, f, tol=cfg.tol, max_iter=cfg.max_iter)
    c0 = estimate_c0(real)
    u_hom = solve_homogenized(f, c0, cfg.modulation, tol=cfg.tol, max_iter=cfg.max_iter)
    u_zero = solve_homogenized(f, 0.0, tol=cfg.tol, max_iter=cfg.max_iter)
    out = {"epsilon": eps, "seed": mix64(cfg.base_seed, args.seed_index), "grid_n": cfg.grid_n, "c0_est": c0,
           "holes": mask.holes, "l2_err": norms(u_eps - u_hom)[0], "l2_err_c0_zero": norms(u_eps - u_zero)[0]}
    if args.fields:
        Path(args.fields).mkdir(parents=True, exist_ok=True)
        write_field(u_eps, Path(args.fields) / "u_eps")
        write_field(u_hom, Path(args.fields) / "u_hom")
    _emit(out, args.out)
    return 0


def cmd_corrector(args) -> int:
    cfg, eps, real, pspec, grid, mask = _pipeline(args)
    f = _source(cfg, grid)
    dec = good_bad_decompose(real, eps, cfg.alpha, cfg.M, window=cfg.window, radius_factor=pspec.radius_factors())
    u_eps = solve_perforated(mask, f, tol=cfg.tol, max_iter=cfg.max_iter)
    u_hom = solve_homogenized(f, estimate_c0(real), cfg.modulation, tol=cfg.tol, max_iter=cfg.max_iter)
    e_hat = assemble_corrector(pspec, dec, grid, mask, tol=cfg.tol, max_iter=cfg.max_iter,
                               allow_underresolved=cfg.allow_underresolved)
    plain, corr, ratio = corrector_error(u_eps, u_hom, e_hat)
    if args.fields:
        Path(args.fields).mkdir(parents=True, exist_ok=True)
        write_field(e_hat, Path(args.fields) / "corrector")
    _emit({"epsilon": eps, "h1_err_plain": plain, "h1_err_corr": corr,
           "corr_ratio": None if math.isnan(ratio) else ratio, "decomposition": dec.summary()}, args.out)
    return 0


def cmd_heat(args) -> int:
    cfg, eps, real, pspec, grid, mask = _pipeline(args)
    c0 = estimate_c0(real) * (cfg.modulation or 1.0)
    t = args.t if args.t is not None else cfg.heat_t
    dt = args.dt if args.dt is not None else cfg.heat_dt
    u0 = lowest_mode(grid)
    out = {"epsilon": eps, "t": t, "dt": dt if dt is not None else t / 64, "c0": c0,
           "heat_err": heat_compare(mask, c0, u0, t, dt, tol=cfg.tol, max_iter=cfg.max_iter)}
    if args.compare_zero:
        out["heat_err_c0_zero"] = heat_compare(mask, 0.0, u0, t, dt, tol=cfg.tol, max_iter=cfg.max_iter)
    _emit(out, args.out)
    return 0


def _workers(flag: Optional[int], cfg: StudyConfig) -> int:
    env = os.environ.get("PERFHOM_WORKERS")
    if env is not None:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError("PERFHOM_WORKERS", f"expected an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError("PERFHOM_WORKERS", f"must be at least 1, got {n}")
        return n
    return flag if flag is not None else cfg.workers


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_workers(_workers(args.workers, cfg))
    out_dir = args.out or cfg.output_dir
    report = run_study(cfg, out_dir)
    csv_path, man_path = report.write(out_dir)
    failed = [s for s in report.status if s["status"] != "ok"]
    for s in failed:
        log.error("row (eps %d, seed %d) failed: %s", s["eps_index"], s["seed_index"], s["message"])
    _emit({"csv": str(csv_path), "manifest": str(man_path), "rows": len(report.rows), "failed": len(failed)}, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfhom", description="Homogenization experiments in randomly perforated domains.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cap", help="capacity of a shape")
    c.add_argument("--shape", required=True, help="ball:1, box:1,2,3, union:x,y,z,r;... or a JSON object")
    c.add_argument("--R", default="inf", help="outer radius, or inf for the whole-space capacity")
    c.add_argument("--n", type=int, default=129, help="grid nodes per axis")
    c.add_argument("--schedule", default="2,4,8", help="outer radii for whole-space estimates")
    c.add_argument("--radius-units", choices=("absolute", "circumradius"), default="absolute")
    c.add_argument("--extrapolate", action="store_true", help="Richardson extrapolation in h")
    c.add_argument("--analytic", action="store_true", help="closed form for balls at finite R")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cap)

    s = sub.add_parser("sample", help="sample a marked point process")
    s.add_argument("--config", help="take the generator from a study config")
    s.add_argument("--kind", choices=("poisson", "lattice", "perturbed_lattice", "matern_hardcore"))
    s.add_argument("--marks", default="ball:0.1")
    s.add_argument("--intensity", type=float)
    s.add_argument("--spacing", type=float)
    s.add_argument("--offset", type=float, default=0.5)
    s.add_argument("--jitter", type=float, default=0.0)
    s.add_argument("--hardcore-radius", type=float)
    s.add_argument("--window", default="0,8")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--index", type=int, help="use mix64(seed, index) as the seed")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    t = sub.add_parser("thin", help="split a realization into close and far parts")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--delta", type=float, required=True)
    t.add_argument("--out-close")
    t.add_argument("--out-far")
    t.set_defaults(func=cmd_thin)

    d = sub.add_parser("decompose", help="good/bad decomposition of a realization")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--epsilon", type=float)
    d.add_argument("--alpha", type=float, default=1.0)
    d.add_argument("--M", type=float, default=10.0)
    d.add_argument("--window", help="physical window W (default: epsilon times the sampling window)")
    d.add_argument("--diagnostics", help="comma-separated decreasing epsilons")
    d.add_argument("--out")
    d.set_defaults(func=cmd_decompose)

    for name, func, helptext in (("solve", cmd_solve, "perforated and homogenized solves for one row"),
                                 ("corrector", cmd_corrector, "corrector error for one row"),
                                 ("heat", cmd_heat, "heat semigroup comparison for one row")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("--config", required=True)
        q.add_argument("--epsilon", type=float, help="one of the configured epsilons (default: the first)")
        q.add_argument("--seed-index", type=int, default=0)
        q.add_argument("--out")
        if name != "heat":
            q.add_argument("--fields", help="directory for field dumps")
        else:
            q.add_argument("--t", type=float)
            q.add_argument("--dt", type=float)
            q.add_argument("--compare-zero", action="store_true", help="also report the c0 = 0 comparison")
        q.set_defaults(func=func)

    st = sub.add_parser("study", help="run an epsilon study from a config file")
    st.add_argument("--config", required=True)
    st.add_argument("--workers", type=int, help="worker processes (PERFHOM_WORKERS overrides)")
    st.add_argument("--out", help="output directory (default: [output] dir)")
    st.set_defaults(func=cmd_study)
    return p


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and dispatch; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="perfhom: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except PerfhomError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2 if isinstance(exc, ValueError) else 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
