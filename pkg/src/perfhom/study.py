"""Convergence sweep: reference, limit, outer, corrector, cells, expansions, norms, fits."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cells import CellProblemSet, strip_gradient_sq
from .config import from_dict
from .expansion import ExpansionBundle, GridSampler, RateReport, StripMap, error_norms, rate_abscissa
from .geometry import band_half_width, build_perforated_grid, build_strip, decompose_regions
from .io import write_checks, write_manifest, write_rows
from .limit import limit_grid, solve_first_corrector, solve_limit, solve_two_interface
from .micro import solve_microscopic

logger = logging.getLogger(__name__)

UNIFORM_MARGIN = 1.05
RATE_THRESHOLDS = {"limit_l2h1": 0.4, "outer_linf_l2": 1.2}


def reference_grid(sc, eps):
    """Perforated grid: fine in the strip band, graded outside, all planes on faces."""
    box, arr = sc.box(), sc.array(eps)
    g = sc.geometry
    h = sc.coefficients.h
    b = band_half_width(eps, g.d)
    Y = sc.strip_Y(eps)
    fine = sc.grids.ref_band_spacing * eps
    return build_perforated_grid(
        box, arr, g.resolution, hole_cells=g.hole_cells, grading=sc.grids.ref_growth, h_fine=fine,
        fine_extent=eps * Y, max_spacing=sc.grids.ref_outer_spacing, required=(eps * h, b, eps * Y),
    )


def candidate_grid(sc, eps, regions):
    f = sc.grids.candidate_factor
    return limit_grid(
        sc.box(), eps, spacing=f * max(sc.grids.ref_outer_spacing, sc.grids.ref_band_spacing * eps),
        fine_spacing=f * sc.grids.ref_band_spacing * eps, fine_extent=eps * sc.strip_Y(eps),
        grading=sc.grids.ref_growth, h=sc.coefficients.h, regions=regions,
        lateral_spacing=sc.geometry.L / sc.grids.candidate_lateral_cells,
    )


def study_strip(sc, eps, ref_grid):
    Y = sc.strip_Y(eps)
    yf = ref_grid.faces[-1]
    band = yf[(yf >= -eps * Y - 1e-12) & (yf <= eps * Y + 1e-12)] / eps
    band[0], band[-1] = -Y, Y
    g = sc.geometry
    return build_strip("scaled", tuple(g.m), eps, g.beta, Y, resolution=g.resolution, y_faces=band)


VARIANTS = ("micro", "limit", "outer", "corrector")


def solve_variant(sc, variant):
    """One solve at ``sc.eps``: micro on the reference grid, the jump problems on the candidate grid."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    box, co, src, bc, r = sc.box(), sc.coeffs(), sc.schedule(), sc.boundary(), sc.run
    kw = dict(solver=r.linear_solver, rtol=r.tolerances.linear, pulse_refinement=r.pulse_refinement)
    eps = sc.eps
    if variant == "micro":
        return solve_microscopic(reference_grid(sc, eps), co, bc, src, r.initial, r.dt, **kw)
    grid = candidate_grid(sc, eps, decompose_regions(box, eps, sc.geometry.d))
    regions = decompose_regions(box, eps, sc.geometry.d, grid)
    arr = sc.array()
    if variant == "limit":
        return solve_limit(box, co, src, r.initial, r.dt, array=arr, grid=grid, bc=bc,
                           literal_signs=r.literal_signs, **kw)
    if variant == "outer":
        return solve_two_interface(box, regions, co, src, r.initial, r.dt, array=arr, grid=grid, bc=bc, **kw)
    return solve_first_corrector(box, regions, co, src, r.dt, array=arr, grid=grid, bc=bc, **kw)


def _region_norm(grid, values, mask):
    vol = grid.volumes
    v = np.where(mask, values, 0.0)
    return float(np.sum(vol[mask] * v[mask] ** 2)) + strip_gradient_sq(grid, v, mask)


@dataclass
class PointResult:
    eps: float
    errors: dict
    stats: dict
    runs: dict = field(default_factory=dict, repr=False)


def run_point(sc, eps, *, keep_runs=False):
    """Every solve and norm for one ``eps``."""
    sc = sc.with_eps(eps)
    box, arr, co, src, bc = sc.box(), sc.array(), sc.coeffs(), sc.schedule(), sc.boundary()
    r = sc.run
    kw = dict(solver=r.linear_solver, rtol=r.tolerances.linear, pulse_refinement=r.pulse_refinement)
    pg = reference_grid(sc, eps)
    ref = solve_microscopic(pg, co, bc, src, r.initial, r.dt, **kw)
    regions = decompose_regions(box, eps, sc.geometry.d, pg.grid)
    cand = candidate_grid(sc, eps, regions)
    regions_c = decompose_regions(box, eps, sc.geometry.d, cand)
    if abs(regions_c.b - regions.b) > 1e-12:
        raise ValueError("reference and candidate band planes differ")
    lim = solve_limit(box, co, src, r.initial, r.dt, array=arr, grid=cand, bc=bc, literal_signs=r.literal_signs, **kw)
    outer = solve_two_interface(box, regions, co, src, r.initial, r.dt, array=arr, grid=cand, bc=bc, **kw)
    corr = solve_first_corrector(box, regions, co, src, r.dt, array=arr, grid=cand, bc=bc, **kw)
    strip = study_strip(sc, eps, pg.grid)
    cells = CellProblemSet(strip, co.A)
    bundle = ExpansionBundle(pg.grid, outer, corr, cells, regions, eps, sc.geometry.resolution, co.v)
    g = pg.grid
    broken = bundle.regions_plane_faces()
    lim_sampler = GridSampler(cand, g, (0.0,))

    e_lim = error_norms(ref, lambda k: lim_sampler(lim.transient.full(k)))
    e_out = error_norms(ref, lambda k: bundle._sample(outer, k), broken=broken)
    e_H = error_norms(ref, bundle.assemble_H, broken=broken)
    e_F = error_norms(ref, bundle.assemble_F, broken=broken)
    band = dict(broken=broken, mask=bundle.band)
    b_out = error_norms(ref, lambda k: bundle._sample(outer, k), **band)
    b_H = error_norms(ref, bundle.assemble_H, **band)

    # corrector size on the outer regions, on its own grid
    yc = cand.centers[-1]
    outside = np.broadcast_to(cand._bcast(np.abs(yc) > regions.b, cand.ndim - 1), cand.shape)
    t = corr.times
    c_norm = math.sqrt(sum((t[k] - t[k - 1]) * _region_norm(cand, corr.transient.full(k), outside)
                           for k in range(1, len(t))))
    interp = max(bundle.interpolation_error(k) for k in range(len(t)))
    mismatch = max(bundle.interface_mismatch(k, "H") for k in range(len(t)))
    rep = ref.report
    errors = dict(limit_l2h1=e_lim.l2h1, outer_l2h1=e_out.l2h1, outer_linf_l2=e_out.linf_l2,
                  H_l2h1=e_H.l2h1, H_linf_l2=e_H.linf_l2, F_l2h1=e_F.l2h1, F_linf_l2=e_F.linf_l2,
                  band_outer_l2h1=b_out.l2h1, band_H_l2h1=b_H.l2h1, corrector_outer_l2h1=c_norm)
    stats = dict(
        micro_max=rep.max_abs(), micro_l2h1=rep.l2_h1_norm(),
        micro_balance=float(rep.balance_residual.max()), micro_energy=float(rep.energy["residual"].max()),
        limit_balance=float(lim.report.balance_residual.max()),
        outer_balance=float(outer.report.balance_residual.max()),
        corrector_balance=float(corr.report.balance_residual.max()),
        interp_error=interp, H_interface_mismatch=mismatch, band=regions.b, strip_Y=strip.Y,
        ref_cells=g.n_active, cand_cells=cand.n_active, steps=len(t) - 1,
        hole_area=ref.meta["hole_area"],
    )
    logger.info("eps=%.5g done: %s", eps, errors)
    runs = dict(ref=ref, limit=lim, outer=outer, corrector=corr, bundle=bundle) if keep_runs else {}
    return PointResult(float(eps), errors, stats, runs)


def _point_worker(args):
    sc, eps = args
    res = run_point(sc, eps)
    return res.eps, res.errors, res.stats


@dataclass
class StudyResult:
    points: list
    rates: RateReport
    checks: dict

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks.values())


def run_study(sc, *, parallel=1, points=None):
    """Run the sweep in ``sc.run.sweep`` (largest ``eps`` first)."""
    sweep = sorted({float(e) for e in sc.run.sweep}, reverse=True)
    if len(sweep) < 3:
        raise ValueError("a study needs at least 3 eps values in run.sweep")
    if points is None:
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as ex:
                raw = list(ex.map(_point_worker, [(sc, e) for e in sweep]))
            points = [PointResult(e, er, st) for e, er, st in raw]
        else:
            points = [run_point(sc, e) for e in sweep]
    points = sorted(points, key=lambda p: -p.eps)
    eps = [p.eps for p in points]
    errs = {k: [p.errors[k] for p in points] for k in points[0].errors}
    rates = RateReport(eps, errs, reference_exponent=None).fit_all()
    checks = study_checks(points, rates)
    return StudyResult(points, rates, checks)


def study_checks(points, rates):
    """Uniform bounds, rate thresholds and the error ordering at the smallest ``eps``."""
    maxes = [p.stats["micro_max"] for p in points]
    norms = [p.stats["micro_l2h1"] for p in points]
    checks = {}
    checks["uniform_bounds"] = dict(
        passed=all(v <= UNIFORM_MARGIN * maxes[0] for v in maxes) and all(v <= UNIFORM_MARGIN * norms[0] for v in norms),
        value=max(max(maxes) / maxes[0], max(norms) / norms[0]), threshold=UNIFORM_MARGIN)
    for key, thr in RATE_THRESHOLDS.items():
        fit = rates.fits[key]
        checks[f"rate_{key}"] = dict(passed=bool(fit.ok and fit.exponent >= thr), value=fit.exponent, threshold=thr)
    last = points[-1].errors
    checks["expansion_ordering"] = dict(
        passed=last["F_l2h1"] <= last["H_l2h1"] <= last["outer_l2h1"],
        value=last["F_l2h1"] / last["outer_l2h1"], threshold=1.0)
    interp = max(p.stats["interp_error"] / p.errors["F_linf_l2"] for p in points)
    checks["interpolation_budget"] = dict(passed=interp <= 0.1, value=interp, threshold=0.1)
    checks["H_beats_outer"] = dict(passed=last["band_H_l2h1"] <= last["band_outer_l2h1"],
                                   value=last["band_H_l2h1"] / last["band_outer_l2h1"], threshold=1.0)
    return checks


ERROR_COLUMNS = ("limit_l2h1", "outer_l2h1", "outer_linf_l2", "H_l2h1", "H_linf_l2", "F_l2h1", "F_linf_l2",
                 "band_outer_l2h1", "band_H_l2h1", "corrector_outer_l2h1")
STAT_COLUMNS = ("micro_max", "micro_l2h1", "micro_balance", "micro_energy", "interp_error",
                "H_interface_mismatch", "band", "strip_Y", "ref_cells", "cand_cells", "steps")


def write_study(result, sc, out_dir):
    """``rates.csv``, ``checks.csv`` and ``manifest.json`` in ``out_dir``."""
    out = Path(out_dir)
    header = ["eps", "eps_log"] + list(ERROR_COLUMNS) + list(STAT_COLUMNS)
    rows = []
    for p in result.points:
        row = dict(eps=p.eps, eps_log=float(rate_abscissa(p.eps)))
        row.update(p.errors)
        row.update({k: p.stats[k] for k in STAT_COLUMNS})
        rows.append(row)
    for what in ("exponent", "r2"):
        row = dict(eps=what, eps_log="")
        for k in ERROR_COLUMNS:
            row[k] = getattr(result.rates.fits[k], what)
        rows.append(row)
    write_rows(out / "rates.csv", rows, header)
    write_checks(out / "checks.csv", result.checks)
    manifest = dict(
        command="study", config_hash=sc.config_hash(), scenario=sc.to_dict(),
        tolerances=sc.to_dict()["run"]["tolerances"], seeds="none (deterministic)",
        grids={format(p.eps, ".6g"): dict(ref_cells=p.stats["ref_cells"], cand_cells=p.stats["cand_cells"],
                                           steps=p.stats["steps"]) for p in result.points},
        fits={k: dict(exponent=f.exponent, r2=f.r2, flag=f.flag) for k, f in result.rates.fits.items()},
        checks=result.checks,
    )
    write_manifest(out / "manifest.json", manifest)
    return out


CONCLUSION_DEFAULTS = dict(A_ratio=1e-2, amplitude=10.0, t_m=0.02, steps_per_pulse=10, horizon=5.0)


@dataclass
class ConclusionResult:
    times: np.ndarray
    band_term: np.ndarray
    outer_term: np.ndarray
    pulse_steps: np.ndarray
    check_step: int

    @property
    def dominates_during_pulse(self):
        return bool(np.all(self.band_term[self.pulse_steps] > self.outer_term[self.pulse_steps]))

    @property
    def recedes_after(self):
        k = self.check_step
        return bool(self.band_term[k] < self.outer_term[k])

    @property
    def passed(self):
        return self.dominates_during_pulse and self.recedes_after


def conclusion_scenario(sc, eps=None, **overrides):
    """Weak inner layer and a short strong pulse; returns the modified scenario."""
    o = dict(CONCLUSION_DEFAULTS, **overrides)
    d = sc.to_dict()
    if eps is not None:
        d["geometry"]["eps"] = float(eps)
    n = d["geometry"]["n"]
    A2 = np.eye(n) if d["coefficients"]["A2"] is None else np.asarray(d["coefficients"]["A2"], float)
    d["coefficients"]["A1"] = (o["A_ratio"] * A2).tolist()
    d["coefficients"]["A2"] = A2.tolist()
    d["source"] = dict(pulse=dict(amplitude=o["amplitude"], t_m=o["t_m"]), table=None)
    d["run"]["dt"] = o["t_m"] / o["steps_per_pulse"]
    d["run"]["T"] = (o["horizon"] + 1.0) * o["t_m"]
    return from_dict(d, base_dir=sc.base_dir), o


def run_conclusion(sc, eps=None, **overrides):
    """Compare ``||eps w(x/eps) Phi(t)||`` with ``||phi0(t)||`` in ``L2`` over the band."""
    sc, o = conclusion_scenario(sc, eps, **overrides)
    eps = sc.eps
    box, co, src, bc, r = sc.box(), sc.coeffs(), sc.schedule(), sc.boundary(), sc.run
    kw = dict(solver=r.linear_solver, rtol=r.tolerances.linear, pulse_refinement=r.pulse_refinement)
    pg = reference_grid(sc, eps)
    regions = decompose_regions(box, eps, sc.geometry.d, pg.grid)
    cand = candidate_grid(sc, eps, regions)
    outer = solve_two_interface(box, regions, co, src, r.initial, r.dt, array=sc.array(), grid=cand, bc=bc, **kw)
    strip = study_strip(sc, eps, pg.grid)
    w = CellProblemSet(strip, co.A).w()
    g = pg.grid
    w_ref = np.nan_to_num(StripMap.build(g, strip, eps, sc.geometry.resolution)(w.values))
    band = np.broadcast_to(g._bcast(np.abs(g.centers[-1]) < regions.b, g.ndim - 1), g.shape) & g.active
    vol = g.volumes
    w_norm = math.sqrt(float(np.sum(vol[band] * w_ref[band] ** 2)))
    sampler = GridSampler(cand, g, regions.planes)
    t = outer.times
    band_term = np.array([eps * abs(outer.transient.scales[k]) * w_norm for k in range(len(t))])
    outer_term = np.array([math.sqrt(float(np.sum(vol[band] * sampler(outer.transient.full(k))[band] ** 2)))
                           for k in range(len(t))])
    t_m = o["t_m"]
    pulse = np.flatnonzero((t > 0) & (t <= t_m + 1e-12))
    check = int(np.argmin(np.abs(t - o["horizon"] * t_m)))
    return ConclusionResult(t, band_term, outer_term, pulse, check)
