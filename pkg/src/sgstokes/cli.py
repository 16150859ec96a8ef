"""Command-line driver for driven-cavity solves, parameter sweeps and bound checks.

Subcommands: solve, sweep, scaling-study, verify-bounds, export-matrices.
Exit codes: 0 success, 2 convergence or check failure, 3 positivity or
feasibility error, 4 bad configuration.
"""
import argparse
import csv
import io
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


log = logging.getLogger("sgstokes")

EXIT_OK, EXIT_FAILED, EXIT_INFEASIBLE, EXIT_BAD_CONFIG = 0, 2, 3, 4

SOLVERS = ("minres", "bpcg-ana", "bpcg-num")
LAPLACIAN_MODES = ("exact-unweighted", "exact-mean", "multigrid")
SCALING_RATIOS = (0.1, 0.2, 0.4, 0.48, 0.6, 0.8, 1.0, 1.2, 1.4, 2.0, 3.0, 5.0, 10.0)
SWEEP_DEFAULTS = {
    "h": (3, 4, 5),
    "M": (2, 4, 6, 8),
    "k": (1, 2, 3, 4),
    "sigma": (0.05, 0.1, 0.15),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    level: int = 4
    M: int = 6
    k: int = 2
    nu0: float = 1.0
    sigma: float = 0.1
    b1: float = 1.0
    b2: float = 1.0
    solver: str = "bpcg-num"
    laplacian_mode: str = "multigrid"
    tolerance: float = 1e-6
    max_iters: int = 500
    output_dir: str = "results"
    seed: int = 0
    workers: int = 1

    def validate(self):
        from sgstokes.mesh import MAX_LEVEL

        checks = [
            (1 <= self.level <= MAX_LEVEL, f"level must lie in [1, {MAX_LEVEL}]"),
            (self.M >= 1, "M must be >= 1"),
            (self.k >= 0, "k must be >= 0"),
            (self.nu0 > 0, "nu0 must be positive"),
            (self.sigma >= 0, "sigma must be nonnegative"),
            (self.b1 > 0 and self.b2 > 0, "correlation lengths must be positive"),
            (self.laplacian_mode in LAPLACIAN_MODES, f"laplacian mode must be one of {LAPLACIAN_MODES}"),
            (self.tolerance > 0, "tolerance must be positive"),
            (self.max_iters >= 1, "max_iters must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        solver_kind(self.solver)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def solver_kind(name):
    """(solver, scaling strategy) for a CLI solver name."""
    if name == "minres":
        return "minres", None
    if name == "bpcg-ana":
        return "bpcg", "analytical"
    if name == "bpcg-num":
        return "bpcg", "numerical"
    if name.startswith("bpcg-ratio:"):
        from sgstokes.problem import parse_ratio

        strategy = "ratio:" + name.split(":", 1)[1]
        try:
            parse_ratio(strategy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return "bpcg", strategy
    raise ConfigError(f"unknown solver {name!r}; expected minres, bpcg-ana, bpcg-num or bpcg-ratio:<r>")


# --- output helpers -------------------------------------------------------

def _config_comment(cfg):
    return "# config: " + json.dumps(cfg.to_dict(), sort_keys=False) + "\n"


def _csv_text(cfg, header, rows):
    buf = io.StringIO()
    buf.write(_config_comment(cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row.get(h, "")) for h in header])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return int(v)
    return v


def _write(path, text):
    from sgstokes.export import atomic_write_text

    atomic_write_text(path, text)
    log.info("wrote %s", path)
    return path


def _json_text(payload):
    return json.dumps(payload, indent=2) + "\n"


# --- single runs ----------------------------------------------------------

def _build(cfg):
    from sgstokes.problem import build_problem

    return build_problem(cfg.level, cfg.M, cfg.k, nu0=cfg.nu0, sigma=cfg.sigma, b1=cfg.b1,
                         b2=cfg.b2, laplacian_mode=cfg.laplacian_mode)


def run_one(cfg, problem=None, scaling=None):
    """Solve one configuration; returns (solution, report, scaling, problem)."""
    from sgstokes.problem import solve
    from sgstokes.solvers import SolveConfig

    solver, strategy = solver_kind(cfg.solver)
    problem = problem or _build(cfg)
    scfg = SolveConfig(tolerance=cfg.tolerance, max_iters=cfg.max_iters,
                       scaling_strategy=strategy or "numerical")
    z, report, scaling = solve(problem, solver, scfg, scaling=scaling, seed=cfg.seed)
    return z, report, scaling, problem


def _laplacian_diagnostics(problem):
    from sgstokes.precond import laplacian_constants, measure_laplacian_constants

    measured = measure_laplacian_constants(problem.laplacian)
    certified = laplacian_constants(problem.laplacian, problem.kle.nu0)
    return {"delta_measured": measured[0], "Delta_measured": measured[1],
            "delta_certified": certified[0], "Delta_certified": certified[1]}


def cmd_solve(cfg):
    from sgstokes.precond import ScalingUnavailable
    from sgstokes.problem import center_statistics
    from sgstokes.solvers import BreakdownError

    out = Path(cfg.output_dir)
    try:
        z, report, scaling, problem = run_one(cfg)
    except ScalingUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write(out / "solve_error.json", _json_text({"config": cfg.to_dict(), "error": str(exc)}))
        return EXIT_INFEASIBLE
    except BreakdownError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write(out / "solve_error.json", _json_text({"config": cfg.to_dict(), "error": str(exc)}))
        return EXIT_FAILED
    report.diagnostics.update(_laplacian_diagnostics(problem))
    payload = {
        "config": cfg.to_dict(),
        "report": report.to_dict(),
        "statistics": center_statistics(problem, z),
        "kle": problem.kle.to_dict(),
        "size": problem.size,
        "Q": problem.op.Q,
    }
    _write(out / "solve_report.json", _json_text(payload))
    _write(out / "residuals.csv", _config_comment(cfg) + report.residual_csv())
    status = "converged" if report.converged else "NOT converged"
    print(f"{cfg.solver}: {status} in {report.iterations} iterations, "
          f"relative residual {report.final_residual:.3e}")
    return EXIT_OK if report.converged else EXIT_FAILED


def _sweep_point(args):
    """Worker: all three solver variants for one configuration."""
    cfg_dict, axis, value = args
    from sgstokes.chaos import extreme_eigs_G
    from sgstokes.precond import ScalingUnavailable

    cfg = ExperimentConfig.from_dict(cfg_dict)
    problem = _build(cfg)
    lam_g = float(extreme_eigs_G(problem.G[0])[1]) if problem.G and cfg.k > 0 else 0.0
    rows = []
    for solver in SOLVERS:
        row = {"axis": axis, "value": value, "solver": solver, "Q": problem.op.Q,
               "unknowns": problem.size, "lambda_max_G": lam_g}
        try:
            _, report, scaling, _ = run_one(replace(cfg, solver=solver), problem=problem)
        except ScalingUnavailable as exc:
            row.update(status="unavailable", detail=str(exc))
        else:
            row.update(iterations=report.iterations, converged=report.converged,
                       final_residual=report.final_residual,
                       scaling=scaling.a if scaling else "",
                       status="ok" if report.converged else "not-converged")
        rows.append(row)
    return rows


SWEEP_HEADER = ["axis", "value", "solver", "iterations", "converged", "final_residual", "scaling",
                "Q", "unknowns", "lambda_max_G", "status", "detail"]


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_rows(cfg, axis, values):
    attr = {"h": "level", "M": "M", "k": "k", "sigma": "sigma"}[axis]
    cast = float if axis == "sigma" else int
    jobs = []
    for v in values:
        point = replace(cfg, **{attr: cast(v)}).validate()
        jobs.append((point.to_dict(), axis, cast(v)))
    return list(itertools.chain.from_iterable(_map(_sweep_point, jobs, cfg.workers)))


def cmd_sweep(cfg, axis, values):
    values = values or SWEEP_DEFAULTS[axis]
    rows = sweep_rows(cfg, axis, values)
    _write(Path(cfg.output_dir) / f"sweep_{axis}.csv", _csv_text(cfg, SWEEP_HEADER, rows))
    for r in rows:
        print(f"{axis}={r['value']:<6} {r['solver']:<9} {r.get('iterations', '-')!s:>4} {r['status']}")
    failed = any(r["status"] == "not-converged" for r in rows)
    return EXIT_FAILED if failed else EXIT_OK


def _ratio_point(args):
    cfg_dict, ratio, a_star = args
    from sgstokes.precond import ScalingResult

    cfg = ExperimentConfig.from_dict(cfg_dict)
    scaling = ScalingResult(f"ratio:{ratio!r}", ratio * a_star, a_star, ratio, cfg.level)
    _, report, _, _ = run_one(replace(cfg, solver=f"bpcg-ratio:{ratio!r}"), scaling=scaling)
    return report


SCALING_HEADER = ["ratio", "a", "iterations", "converged", "final_residual", "indefinite_steps",
                  "analytical"]


def scaling_rows(cfg, ratios):
    from sgstokes.precond import ScalingUnavailable
    from sgstokes.problem import compute_scaling

    problem = _build(cfg)
    a_star = compute_scaling("ratio:1.0", problem, seed=cfg.seed).a_star
    jobs = [(cfg.to_dict(), float(r), a_star) for r in ratios]
    rows = []
    for r, report in zip(ratios, _map(_ratio_point, jobs, cfg.workers)):
        rows.append({"ratio": float(r), "a": r * a_star, "iterations": report.iterations,
                     "converged": report.converged, "final_residual": report.final_residual,
                     "indefinite_steps": report.indefinite_steps, "analytical": False})
    try:
        _, report, scaling, _ = run_one(replace(cfg, solver="bpcg-ana"), problem=problem)
    except ScalingUnavailable as exc:
        log.warning("%s", exc)
    else:
        rows.append({"ratio": scaling.a / a_star, "a": scaling.a, "iterations": report.iterations,
                     "converged": report.converged, "final_residual": report.final_residual,
                     "indefinite_steps": report.indefinite_steps, "analytical": True})
    return a_star, rows


def cmd_scaling_study(cfg, ratios):
    ratios = tuple(ratios or SCALING_RATIOS)
    a_star, rows = scaling_rows(cfg, ratios)
    _write(Path(cfg.output_dir) / "scaling_study.csv", _csv_text(cfg, SCALING_HEADER, rows))
    print(f"a* = {a_star:.6f}")
    for r in rows:
        mark = " (analytical)" if r["analytical"] else ""
        print(f"a/a* = {r['ratio']:.3f}: {r['iterations']} iterations{mark}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_FAILED


VERIFY_GRID = {"level": (1, 2), "M": (1, 2), "k": (1, 2), "sigma": (0.0, 0.1)}


def _verify_point(args):
    from sgstokes.analysis import InfeasibleInstance, verify_instance

    cfg_dict, point = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        report = verify_instance(point["level"], point["M"], point["k"], nu0=cfg.nu0,
                                 sigma=point["sigma"], b1=cfg.b1, b2=cfg.b2,
                                 laplacian_mode=cfg.laplacian_mode)
    except InfeasibleInstance as exc:
        return {"point": point, "skipped": True, "reason": str(exc)}
    return {"point": point, "skipped": False, "report": report.to_dict(),
            "markdown": report.to_markdown()}


def cmd_verify_bounds(cfg, grid):
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    results = _map(_verify_point, [(cfg.to_dict(), p) for p in points], cfg.workers)
    out = Path(cfg.output_dir)
    summary = []
    md = ["# Bound verification", ""]
    for res in results:
        p = res["point"]
        tag = "_".join(f"{k}{p[k]}" for k in keys)
        if res["skipped"]:
            summary.append({"point": p, "status": "skipped", "reason": res["reason"]})
            md.append(f"## {tag}: skipped ({res['reason']})\n")
            continue
        payload = {"config": cfg.to_dict(), **res["report"]}
        _write(out / f"bounds_{tag}.json", _json_text(payload))
        ok = res["report"]["passed"]
        summary.append({"point": p, "status": "pass" if ok else "fail"})
        md += [f"## {tag}: {'pass' if ok else 'FAIL'}", "", res["markdown"]]
    passed = all(s["status"] != "fail" for s in summary)
    _write(out / "bounds_summary.json", _json_text({"config": cfg.to_dict(), "grid": grid,
                                                    "passed": passed, "points": summary}))
    _write(out / "bounds_summary.md", "\n".join(md) + "\n")
    for s in summary:
        print(f"{s['point']}: {s['status']}")
    return EXIT_OK if passed else EXIT_FAILED


def cmd_export(cfg, dense):
    from sgstokes.export import export_problem

    problem = _build(cfg)
    a = None
    if dense:
        from sgstokes.problem import compute_scaling

        a = compute_scaling("ratio:0.95", problem, seed=cfg.seed).a
    out = Path(cfg.output_dir)
    paths = export_problem(problem, out, dense=dense, a=a)
    _write(out / "export_config.json", _json_text({"config": cfg.to_dict(), "dense_scaling": a,
                                                   "files": [p.name for p in paths]}))
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_CONFIG)


FLAG_FIELDS = {
    "level": ("--level", int), "M": ("--M", int), "k": ("--k", int), "sigma": ("--sigma", float),
    "nu0": ("--nu0", float), "b1": ("--b1", float), "b2": ("--b2", float),
    "solver": ("--solver", str), "laplacian_mode": ("--laplacian", str),
    "tolerance": ("--tol", float), "max_iters": ("--max-iters", int),
    "output_dir": ("--out", str), "seed": ("--seed", int), "workers": ("--workers", int),
}


def _common(p):
    p.add_argument("--config", help="JSON file with experiment settings")
    for name, (flag, typ) in FLAG_FIELDS.items():
        p.add_argument(flag, dest=name, type=typ, default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="sgstokes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("solve", help="solve the driven cavity problem once"))
    sw = sub.add_parser("sweep", help="iteration counts over one parameter")
    _common(sw)
    sw.add_argument("--axis", choices=sorted(SWEEP_DEFAULTS), required=True)
    sw.add_argument("--values", type=float, nargs="+")
    sc = sub.add_parser("scaling-study", help="BPCG iterations against a/a*")
    _common(sc)
    sc.add_argument("--ratios", type=float, nargs="+")
    vb = sub.add_parser("verify-bounds", help="dense eigenvalue containment checks")
    _common(vb)
    for key, vals in VERIFY_GRID.items():
        vb.add_argument(f"--grid-{key.lower()}", dest=f"grid_{key}",
                        type=float if key == "sigma" else int, nargs="+", default=list(vals))
    ex = sub.add_parser("export-matrices", help="write MatrixMarket and JSON files")
    _common(ex)
    ex.add_argument("--dense", action="store_true", help="also write dense oracle matrices")
    return parser


def resolve_config(args):
    base = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    overrides = {name: getattr(args, name) for name in FLAG_FIELDS if getattr(args, name) is not None}
    try:
        cfg = ExperimentConfig.from_dict({**base, **overrides})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            values = args.values
            if values is not None and args.axis != "sigma" and any(v != int(v) for v in values):
                raise ConfigError(f"axis {args.axis} takes integer values")
            return cmd_sweep(cfg, args.axis, values)
        if args.command == "scaling-study":
            if args.ratios and any(not r > 0 for r in args.ratios):
                raise ConfigError("ratios must be positive")
            return cmd_scaling_study(cfg, args.ratios)
        if args.command == "verify-bounds":
            grid = {key: list(getattr(args, f"grid_{key}")) for key in VERIFY_GRID}
            return cmd_verify_bounds(cfg, grid)
        return cmd_export(cfg, args.dense)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
