"""Command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 acceptance-check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cells import fit_decay, solve_cell
from .config import ConfigError, load_scenario
from .fv import SolverError
from .io import report_columns, snapshot_indices, write_checks, write_csv, write_field_dump, write_manifest
from .limit import jump_errors
from .micro import energy_diagnostics
from .study import run_study, solve_variant, write_study

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 2, 3, 4
FLUX_TOL = 1e-4


def build_parser():
    p = argparse.ArgumentParser(prog="perfhom", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"perfhom {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "solve-micro": "microscopic solve on the perforated grid",
        "solve-limit": "homogenized limit with the flux jump on the mid-plane",
        "solve-outer": "zero-order outer problem with jumps on the band planes",
        "solve-corrector": "first outer corrector",
        "cell": "one strip cell problem (block 'cell' of the scenario)",
        "study": "convergence sweep over run.sweep",
        "validate-config": "load, validate and echo a scenario",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True, type=Path, help="scenario YAML file")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--eps", type=float, default=None, help="override geometry.eps")
        s.add_argument("--parallel", type=int, default=1, help="worker processes (study only)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _out_dir(args, default):
    out = args.out or Path("runs") / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(sc, command, out, **extra):
    payload = dict(command=command, config_hash=sc.config_hash(), scenario=sc.to_dict(),
                   tolerances=sc.to_dict()["run"]["tolerances"], seeds="none (deterministic)", version=__version__)
    payload.update(extra)
    write_manifest(out / "manifest.json", payload)


def _dump(sc, out, name, result):
    if not sc.outputs.dumps:
        return None
    idx = snapshot_indices(len(result.times), sc.outputs.snapshot_every)
    vals = np.stack([result.field(k) for k in idx])
    return write_field_dump(out / f"{name}.npz", result.grid, result.times[idx], vals, kind=name, eps=sc.eps)


def cmd_solve(sc, args):
    name = args.command.removeprefix("solve-")
    out = _out_dir(args, name)
    res = solve_variant(sc, name)
    rep = res.report
    write_csv(out / "run_report.csv", report_columns(rep))
    _dump(sc, out, name, res)
    tol = sc.run.tolerances
    checks = {"mass_balance": dict(passed=bool(rep.balance_residual.max() <= tol.mass_balance),
                                   value=float(rep.balance_residual.max()), threshold=tol.mass_balance)}
    if name == "micro":
        en = energy_diagnostics(rep, tol=tol.energy)
        checks["energy"] = dict(passed=en.passed, value=float(rep.energy["residual"].max()), threshold=tol.energy)
    else:
        ev, ef = (max(v) for v in zip(*(jump_errors(res, k) for k in range(1, len(res.times)))))
        checks["jumps"] = dict(passed=ev <= tol.jump and ef <= tol.jump, value=max(ev, ef), threshold=tol.jump)
    write_checks(out / "checks.csv", checks)
    _manifest(sc, args.command, out, grid=dict(cells=int(res.grid.n_active), shape=list(res.grid.shape)),
              steps=len(res.times) - 1, meta={k: v for k, v in res.meta.items() if isinstance(v, (int, float, str))},
              checks=checks)
    return checks


def cmd_cell(sc, args):
    out = _out_dir(args, "cell")
    c, g = sc.cell, sc.geometry
    strip_kw = dict(resolution=c.resolution, hole_cells=c.hole_cells, grading=c.grading, max_spacing=c.max_spacing)
    sol = solve_cell(c.problem, tuple(c.index), mode=c.mode, m=tuple(g.m), eps=sc.eps, beta=g.beta,
                     A=sc.tensor(), Y=c.Y, auto_extend=c.auto_extend, strip_kw=strip_kw)
    fit = sol.meta.get("decay") or fit_decay(sol)
    lower, upper = sol.far_field_flux
    row = dict(problem=[c.problem], index=[" ".join(str(i) for i in c.index)], mode=[c.mode], eps=[sc.eps],
               Y=[sol.Y], boundary_measure=[sol.strip.boundary_measure()], flux_lower=[lower], flux_upper=[upper],
               c_plus=[sol.c_plus], c_minus=[sol.c_minus], gradient_norm=[sol.gradient_norm()],
               compatibility_defect=[sol.compatibility_defect], decay_rate=[fit.tau], decay_flag=[fit.flag],
               even_error=[sol.parity_error(odd=False)], odd_error=[sol.parity_error(odd=True)])
    write_csv(out / "cell_summary.csv", row)
    if sc.outputs.dumps:
        write_field_dump(out / "cell.npz", sol.grid, [0.0], sol.values[None], kind=f"cell-{c.problem}", eps=sc.eps)
    checks = {}
    if c.problem == "w":
        target = expected_w_flux(sol)
        err = max(abs(lower - target[0]), abs(upper - target[1]))
        checks["far_field_flux"] = dict(passed=err <= FLUX_TOL, value=err, threshold=FLUX_TOL)
        write_checks(out / "checks.csv", checks)
    _manifest(sc, "cell", out, grid=dict(cells=int(sol.grid.n_active), shape=list(sol.grid.shape)), checks=checks)
    return checks


def expected_w_flux(sol):
    """Far-field ``e_n . A grad w`` at the lower and upper ends: ``(+q, -q)``.

    ``q = |M|`` on the flat obstacle, half the obstacle boundary measure otherwise.
    """
    q = 0.5 * sol.strip.boundary_measure()
    return q, -q


def cmd_study(sc, args):
    if args.eps is not None:
        raise ConfigError("--eps does not apply to study; edit run.sweep instead")
    out = _out_dir(args, "study")
    result = run_study(sc, parallel=max(1, args.parallel))
    write_study(result, sc, out)
    return result.checks


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.config)
        if args.eps is not None and args.command != "study":
            sc = sc.with_eps(args.eps)
        if args.command == "validate-config":
            sys.stdout.write(sc.dump())
            return EXIT_OK
        handler = {"cell": cmd_cell, "study": cmd_study}.get(args.command, cmd_solve)
        checks = handler(sc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"solver failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    failed = [k for k, c in checks.items() if not c["passed"]]
    if failed:
        print(f"checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
