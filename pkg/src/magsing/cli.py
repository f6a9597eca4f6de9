"""Command-line experiment runner.

Subcommands ``solve``, ``flow``, ``mollify-study``, ``oracle-compare`` and
``critical-value`` each write a run directory with CSV fields, JSON
summaries, a ``manifest.json`` and, with ``--plots``, PNG figures.

Exit codes: 0 pass, 1 verdict fail, 2 usage or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import oracle
from .config import ConfigError, ExperimentConfig, build_system, load_config, preset
from .fieldio import write_field
from .flow import FAIL, FlowError, integrate, verify_invariance
from .geometry import EPS_F, GeometryError, periodic_interp
from .hj_solver import (CriticalValueResult, MagneticSystem, SolverError, WeakKamField,
                        eikonal_field, estimate_critical_value, solve_critical)
from .mollify import MollifiedField, MollifyError, check_resolution, hessian_checks, psi_track, smooth_flow
from .subdiff import GradientData, SubdiffError, default_delta, default_theta, singular_set

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
NUMERIC_ERRORS = (SolverError, GeometryError, SubdiffError, MollifyError, FlowError,
                  FloatingPointError, np.linalg.LinAlgError)

log = logging.getLogger("magsing")


@dataclass
class Prepared:
    sys: MagneticSystem
    c: float
    u: WeakKamField
    critical: Optional[CriticalValueResult]

    @property
    def h(self) -> float:
        return self.sys.grid.h


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def thresholds(cfg: ExperimentConfig) -> dict:
    h = 1.0 / cfg.system.n
    return {
        "delta_sing": cfg.flow.delta_sing if cfg.flow.delta_sing is not None else default_delta(h),
        "theta_c": cfg.flow.theta_c if cfg.flow.theta_c is not None else default_theta(h),
        "eps_f": EPS_F,
    }


def write_manifest(out: Path, cfg: ExperimentConfig, command: str, files) -> Path:
    return write_json(out / "manifest.json", {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "grid": {"dim": cfg.system.dim, "n": cfg.system.n, "h": 1.0 / cfg.system.n},
        "thresholds": thresholds(cfg),
        "files": sorted(str(Path(f).name) for f in files),
    })


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Build the system, fix the critical level and solve for ``u``."""
    sys_ = build_system(cfg.system)
    sc = cfg.solver
    if sc.mode == "eikonal":
        sources = [sys_.grid.nearest_node(np.asarray(s, float)) for s in sc.sources]
        u = eikonal_field(sys_, sources)
        return Prepared(sys_, u.c, u, None)
    crit = None
    if sc.critical_value is None:
        crit = estimate_critical_value(sys_, sc.lambdas)
        c = crit.c
    else:
        c = float(sc.critical_value)
    u = solve_critical(sys_, c, tol=sc.sweep_tol, max_sweeps=sc.max_sweeps)
    return Prepared(sys_, c, u, crit)


def _singular(cfg: ExperimentConfig, prep: Prepared):
    th = thresholds(cfg)
    return singular_set(prep.u, prep.sys, prep.c, cfg.flow.radius * prep.h,
                        th["delta_sing"], th["theta_c"])


def flow_starts(cfg: ExperimentConfig, prep: Prepared, sing=None) -> list:
    """Configured starts followed by ``singular_starts`` evenly spaced detected singular nodes."""
    starts = [np.asarray(x, float) for x in cfg.flow.starts]
    k = cfg.flow.singular_starts
    if k > 0:
        sing = sing if sing is not None else _singular(cfg, prep)
        nodes = np.argwhere(sing.mask)
        if len(nodes) == 0:
            raise SubdiffError("no singular nodes detected for singular_starts")
        pick = np.unique(np.linspace(0, len(nodes) - 1, k).round().astype(int))
        starts += [nodes[i] * prep.h for i in pick]
    return starts


def _step(cfg: ExperimentConfig, prep: Prepared) -> float:
    return cfg.flow.step if cfg.flow.step is not None else 0.5 * prep.h


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_critical_value(cfg: ExperimentConfig, out: Path, plots: bool = False) -> int:
    sys_ = build_system(cfg.system)
    res = estimate_critical_value(sys_, cfg.solver.lambdas)
    loops = [{"axis": lc.axis, "offset": lc.offset, "bound": lc.bound,
              "loop_critical": lc.loop_critical} for lc in res.loops]
    files = [write_json(out / "critical_value.json", {**res.to_dict(), "loops": loops})]
    if plots:
        from .plotting import plot_ladder
        files.append(plot_ladder(res.lambdas, np.abs(res.c_lambda) + 1e-16,
                                 out / "critical_value.png", "lambda", "|c_lambda|"))
    write_manifest(out, cfg, "critical-value", files)
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, out: Path, plots: bool = False) -> int:
    prep = prepare(cfg)
    sing = _singular(cfg, prep)
    files = [write_field(out / "u.csv", prep.sys.grid, prep.u.u, names=["u"])]
    files.append(out / "u.json")
    files.append(sing.write_csv(out / "singular.csv"))
    ok = prep.u.residual_l2 <= cfg.solver.residual_tol
    summary = {
        "c": prep.c,
        "critical": prep.critical.to_dict() if prep.critical else None,
        "residual_max": prep.u.residual_max,
        "residual_l2": prep.u.residual_l2,
        "residual_tol": cfg.solver.residual_tol,
        "iterations": prep.u.iterations,
        "method": prep.u.method,
        "singular_nodes": int(sing.mask.sum()),
        "pass": bool(ok),
    }
    files.append(write_json(out / "summary.json", summary))
    if plots:
        from .plotting import plot_solution
        files.append(plot_solution(prep.u, out / "solution.png", sing.mask,
                                   title=f"{cfg.system.name}, c = {prep.c:.4g}"))
    write_manifest(out, cfg, "solve", files)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_flow(cfg: ExperimentConfig, out: Path, plots: bool = False) -> int:
    prep = prepare(cfg)
    th = thresholds(cfg)
    sing = _singular(cfg, prep) if cfg.flow.singular_starts > 0 or plots else None
    starts = flow_starts(cfg, prep, sing)
    if not starts:
        raise ConfigError("flow needs at least one start (flow.starts or flow.singular_starts)")
    data = GradientData(prep.u)
    step = _step(cfg, prep)
    records, trajs, files = [], [], []
    for k, x0 in enumerate(starts):
        tr = integrate(prep.u, prep.sys, prep.c, x0, cfg.flow.T, step, mode=cfg.flow.mode,
                       radius=cfg.flow.radius * prep.h, theta=th["theta_c"], data=data)
        v = verify_invariance(tr, th["delta_sing"])
        files.append(tr.write_csv(out / f"trajectory_{k:03d}.csv"))
        trajs.append(tr)
        records.append({"start": np.asarray(x0).tolist(), "end": tr.end.tolist(),
                        "status": tr.status, "message": tr.message, **v.to_dict()})
    ok = all(r["verdict"] != FAIL and r["verdict"] != "LeftW" for r in records)
    files.append(write_json(out / "verdicts.json", {
        "c": prep.c, "delta": th["delta_sing"], "T": cfg.flow.T, "step": step,
        "mode": cfg.flow.mode, "starts": records, "pass": bool(ok)}))
    if plots:
        from .plotting import plot_indicator, plot_solution
        files.append(plot_solution(prep.u, out / "flow.png", sing.mask if sing else None, trajs))
        files.append(plot_indicator(trajs, th["delta_sing"], out / "indicator.png"))
    write_manifest(out, cfg, "flow", files)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_mollify_study(cfg: ExperimentConfig, out: Path, plots: bool = False) -> int:
    prep = prepare(cfg)
    mc = cfg.mollify
    starts = flow_starts(cfg, prep)
    if not starts:
        raise ConfigError("mollify-study needs a start (flow.starts or flow.singular_starts)")
    x0 = starts[0]
    step = _step(cfg, prep)
    rungs, skipped, traces, files = [], {}, [], []
    for m in mc.ladder:
        m = int(m)
        try:
            check_resolution(prep.sys.grid, m)
            mf = MollifiedField.build(prep.u, m)
        except MollifyError as exc:
            skipped[str(m)] = str(exc)
            log.warning("m=%d skipped: %s", m, exc)
            continue
        tr = smooth_flow(mf, prep.sys, prep.c, x0, cfg.flow.T, step)
        trace = psi_track(mf, tr, prep.sys, prep.c, mc.psi_mode, mc.slack)
        hess = hessian_checks(mf, prep.sys, prep.c, mc.psi_mode, mc.hessian_samples, seed=cfg.seed)
        traces.append(trace)
        path = out / f"psi_m{m:03d}.csv"
        with open(path, "w") as fh:
            fh.write("t,x,y,psi\n" if prep.sys.grid.dim == 2 else "t,x,psi\n")
            for t, p, s in zip(tr.times, tr.points, trace.psi):
                fh.write(",".join(repr(float(v)) for v in (t, *p, s)) + "\n")
        files.append(path)
        ok = trace.fit_ok
        if mc.psi_max_tol is not None:
            ok = ok and trace.psi_max <= mc.psi_max_tol
        if mc.hessian_tol is not None:
            ok = ok and hess.defect_max <= mc.hessian_tol
        rungs.append({"m": m, "psi": trace.to_dict(), "hessian": hess.to_dict(),
                      "status": tr.status, "pass": bool(ok)})
    passed = bool(rungs) and all(r["pass"] for r in rungs)
    files.append(write_json(out / "study.json", {
        "c": prep.c, "start": np.asarray(x0).tolist(), "T": cfg.flow.T, "step": step,
        "rungs": rungs, "skipped": skipped, "pass": passed}))
    if plots and traces:
        from .plotting import plot_psi
        files.append(plot_psi(traces, out / "psi.png"))
    write_manifest(out, cfg, "mollify-study", files)
    return EXIT_OK if passed else EXIT_FAIL


def _domination(prep: Prepared, osys: oracle.OracleSystem, seed: int, samples: int = 100,
                tol: float = 1e-3) -> dict:
    rng = np.random.default_rng(seed)
    grid = prep.sys.grid
    vals = np.nan_to_num(np.asarray(prep.u.u, float), nan=0.0)
    worst, violations = -np.inf, 0
    for _ in range(samples):
        path = oracle.random_path(rng, grid.dim, 16)
        T = float(rng.uniform(0.1, 1.0))
        ends = periodic_interp(grid, vals, np.mod(path[[0, -1]], 1.0))
        gap = float(ends[1] - ends[0]) - oracle.path_action(osys, path, T) - osys.c * T
        worst = max(worst, gap)
        violations += gap > tol
    return {"samples": samples, "violations": int(violations), "worst_gap": worst, "tol": tol}


def cmd_oracle_compare(cfg: ExperimentConfig, out: Path, plots: bool = False) -> int:
    name = cfg.system.name
    if name not in ("pendulum", "magnetic-1d", "torus-distance"):
        raise ConfigError(f"no oracle for system {name!r}")
    prep = prepare(cfg)
    h = prep.h
    grid = prep.sys.grid
    rep: dict = {"system": name, "c": prep.c, "h": h}
    checks = {}
    if name == "pendulum":
        x = grid.axes()[0]
        exact, _ = oracle.pendulum_solution(x)
        err = np.abs(np.asarray(prep.u.u) - exact)
        u_half = float(periodic_interp(grid, prep.u.u, np.array([[0.5]]))[0])
        rep.update(linf_error=float(err.max()), u_half=u_half, u_half_exact=2.0 / np.pi)
        checks = {"c": abs(prep.c) <= 0.02, "linf": err.max() <= 5 * h,
                  "u_half": abs(u_half - 2.0 / np.pi) <= 2 * h}
        osys = oracle.pendulum_system()
    elif name == "magnetic-1d":
        a = float(cfg.system.omega[0])
        c_exact, bound = oracle.magnetic_critical(a)
        rep.update(c_exact=c_exact, loop_bound=bound)
        checks = {"c": abs(prep.c - c_exact) <= 0.02}
        osys = oracle.magnetic_circle_system(a)
    else:
        x0 = np.asarray(cfg.solver.sources[0], float)
        exact = oracle.torus_distance(grid.coords(), x0)
        err = np.abs(np.asarray(prep.u.u) - exact)
        sing = _singular(cfg, prep)
        hd = oracle.hausdorff_to_cut_locus(sing.points(), oracle.torus_cut_locus(x0))
        rep.update(linf_error=float(err.max()), hausdorff=hd, singular_nodes=int(sing.mask.sum()))
        checks = {"linf": err.max() <= 5 * h, "hausdorff": hd <= 3 * h}
        osys = oracle.torus_distance_system(tuple(x0))
    dom = _domination(prep, osys, cfg.seed)
    checks["domination"] = dom["violations"] == 0
    rep["domination"] = dom
    rep["checks"] = {k: bool(v) for k, v in checks.items()}
    rep["pass"] = all(checks.values())
    files = [write_json(out / "oracle.json", rep)]
    if plots:
        from .plotting import plot_solution
        files.append(plot_solution(prep.u, out / "solution.png", title=f"{name} vs oracle"))
    write_manifest(out, cfg, "oracle-compare", files)
    return EXIT_OK if rep["pass"] else EXIT_FAIL


COMMANDS = {
    "solve": cmd_solve,
    "flow": cmd_flow,
    "mollify-study": cmd_mollify_study,
    "oracle-compare": cmd_oracle_compare,
    "critical-value": cmd_critical_value,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magsing", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="YAML or JSON experiment file")
        src.add_argument("--preset", choices=["pendulum", "magnetic-1d", "magnetic-2d", "torus-distance"])
        p.add_argument("--out", type=Path, help="run directory (default: output.dir)")
        p.add_argument("--plots", action="store_true", help="also write PNG figures")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--grid", type=int, help="override system.n")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def _error(out: Optional[Path], kind: str, exc: BaseException, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", payload)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = load_config(args.config) if args.config else preset(args.preset)
        data = cfg.to_dict()
        if args.grid is not None:
            data["system"]["n"] = args.grid
        if args.seed is not None:
            data["seed"] = args.seed
        if out is not None:
            data["output"]["dir"] = str(out)
        cfg = ExperimentConfig.from_dict(data)
        out = Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        return _error(out, "config", exc, EXIT_USAGE)
    try:
        return COMMANDS[args.command](cfg, out, args.plots)
    except ConfigError as exc:
        return _error(out, "config", exc, EXIT_USAGE)
    except NUMERIC_ERRORS as exc:
        return _error(out, "numerical", exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
