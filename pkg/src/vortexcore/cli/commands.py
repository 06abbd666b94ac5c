"""Subcommand implementations.  Each returns the objects it wrote so tests can inspect them."""
from __future__ import annotations

import csv
import datetime
import logging
import os

import numpy as np

from .. import geometry as geo
from ..dynamics import conservation_report, evolve, stability_experiment, turnover_time
from ..pointvortex import KR_NORMALIZATION, kr_local_min, pv_integrate
from ..rearrangement import place_radially
from ..steady import ProfileFunction, profile_pointwise_residual, solve_profile_steady, solve_steady
from .config import ConfigError, RunConfig
from .sweep import SWEEP_COLUMNS, run_sweep, steady_rows

log = logging.getLogger(__name__)


class NumericalFailure(RuntimeError):
    """A solver ran but did not produce a trustworthy result (exit code 3)."""


def header_lines(cfg: RunConfig) -> list[str]:
    """CSV comment lines; the timestamp line is last and not part of the hash."""
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return [f"config_hash={cfg.hash}", f"kr_normalization={KR_NORMALIZATION}", f"generated={stamp}"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, cfg: RunConfig, columns, rows) -> str:
    with open(path, "w", newline="") as fh:
        for line in header_lines(cfg):
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in columns])
    return str(path)


def _outdir(cfg: RunConfig) -> str:
    out = cfg["output.dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _flag_partial(path: str, reason: str) -> None:
    with open(path + ".FAILED", "w") as fh:
        fh.write(reason + "\n")


def _domain_tag(dom) -> str:
    return "disk" if dom.kind == "disk" else f"rect{dom.lx:g}x{dom.ly:g}"


def cmd_robin(cfg: RunConfig) -> dict:
    """Robin function on interior cells at least two cells from the boundary, and its argmin."""
    dom = cfg.domain()
    try:
        grid = geo.build_grid(dom, cfg["grid.n"])
    except ValueError as exc:
        raise ConfigError(f"grid.n: {exc}") from None
    cells = grid.interior
    pts = grid.points(cells)
    keep = dom.boundary_distance(pts) >= 2 * grid.h
    cells, pts = cells[keep], pts[keep]
    H = np.asarray(geo.robin(pts, dom), dtype=float)
    field = geo.ScalarField.from_cells(grid, cells, H)
    k = int(np.argmin(H))
    stem = os.path.join(_outdir(cfg), f"robin_{_domain_tag(dom)}_n{grid.nx}")
    geo.write_vxf(stem + ".vxf", field)
    row = {"domain": _domain_tag(dom), "n": grid.nx, "x_min": pts[k, 0], "y_min": pts[k, 1], "H_min": H[k],
           "h": grid.h}
    write_csv(stem + ".csv", cfg, list(row), [row])
    return {"field": field, "argmin": pts[k], "H_min": float(H[k]), "csv": stem + ".csv", "vxf": stem + ".vxf"}


def cmd_kr_min(cfg: RunConfig) -> dict:
    start = cfg.vortices()
    path = os.path.join(_outdir(cfg), f"kr_min_k{start.k}.csv")
    rep = kr_local_min(start, tol=cfg["kr.tol"], max_iter=cfg["kr.max_iter"])
    c = rep.minimizer
    rows = [{"vortex": i + 1, "x": c.positions[i, 0], "y": c.positions[i, 1], "kappa": c.strengths[i],
             "W": rep.value, "grad_norm": float(np.linalg.norm(rep.gradient)),
             "classification": rep.classification, "iterations": rep.iterations} for i in range(c.k)]
    write_csv(path, cfg, list(rows[0]), rows)
    return {"report": rep, "csv": path}


def cmd_pv(cfg: RunConfig) -> dict:
    c0 = cfg.vortices()
    dt, T = cfg["pv.dt"], cfg["pv.T"]
    if not dt > 0 or T < 0:
        raise ConfigError("pv.dt must be positive and pv.T nonnegative")
    path = os.path.join(_outdir(cfg), f"pv_orbit_k{c0.k}_dt{dt:g}_T{T:g}.csv")
    traj = pv_integrate(c0, dt, T)
    traj.to_csv(path, header_lines(cfg))
    if traj.aborted:
        _flag_partial(path, traj.reason)
        raise NumericalFailure(f"trajectory aborted at t={traj.t[-1]:g}: {traj.reason}")
    return {"trajectory": traj, "csv": path}


def _steady_stem(cfg, spec, prefix="steady") -> str:
    return os.path.join(_outdir(cfg), f"{prefix}_k{spec.k}_eps{spec.eps:g}_n{spec.n}")


def cmd_steady(cfg: RunConfig) -> dict:
    spec = cfg.problem_spec()
    sol = solve_steady(spec)
    stem = _steady_stem(cfg, spec)
    geo.write_vxf(stem + "_omega.vxf", sol.omega)
    geo.write_vxf(stem + "_psi.vxf", sol.psi)
    write_csv(stem + ".csv", cfg, SWEEP_COLUMNS, steady_rows(sol))
    if not sol.converged:
        _flag_partial(stem + ".csv", sol.reason)
        raise NumericalFailure(f"steady ascent stopped without a fixed point ({sol.reason})")
    return {"solution": sol, "csv": stem + ".csv"}


def cmd_sweep(cfg: RunConfig, jobs: int = 1) -> dict:
    cfg.require("sweep.eps")
    specs = [cfg.problem_spec(e) for e in cfg["sweep.eps"]]
    res = run_sweep(specs, jobs)
    n = cfg["grid.n"]
    out = _outdir(cfg)
    path = os.path.join(out, f"sweep_k{specs[0].k}_n{n}.csv")
    write_csv(path, cfg, SWEEP_COLUMNS, res.rows)
    fit_rows = [{"quantity": k, "slope": f.slope, "intercept": f.intercept, "rms_residual": f.rms_residual,
                 "points": f.points} for k, f in res.fits.items()]
    fit_path = os.path.join(out, f"sweep_fits_k{specs[0].k}_n{n}.csv")
    write_csv(fit_path, cfg, ["quantity", "slope", "intercept", "rms_residual", "points"], fit_rows)
    bad = res.failures + [f"eps={r['eps']:g} not converged" for r in res.rows if not r["converged"] and r["blob"] == 1]
    if bad:
        _flag_partial(path, "; ".join(bad))
        raise NumericalFailure("sweep had failed points: " + "; ".join(bad))
    return {"result": res, "csv": path, "fits_csv": fit_path}


def _initial_field(cfg: RunConfig, spec):
    if cfg["evolve.init"] == "steady":
        sol = solve_steady(spec)
        if not sol.converged:
            raise NumericalFailure(f"steady ascent stopped without a fixed point ({sol.reason})")
        return sol.omega, sol
    if cfg["evolve.init"] == "blobs":
        w = geo.ScalarField.zeros(spec.grid)
        for c, pl in zip(spec.centers, spec.parcels):
            w = w + place_radially(pl, spec.grid, c)
        return w, None
    raise ConfigError(f"evolve.init must be steady or blobs, got {cfg['evolve.init']!r}")


def cmd_evolve(cfg: RunConfig) -> dict:
    spec = cfg.problem_spec()
    ecfg = cfg.evolution()
    w0, _ = _initial_field(cfg, spec)
    stem = _steady_stem(cfg, spec, "evolve") + f"_dt{ecfg.dt:g}_T{ecfg.T:g}"
    ev = evolve(w0, ecfg)
    for t, w in zip(ev.times, ev.fields):
        geo.write_vxf(f"{stem}_t{t:.6f}.vxf", w)
    rep = conservation_report(ev)
    p = cfg["stability.p"]
    rows = []
    for n, t in enumerate(ev.times):
        rows.append({"t": t, "E": rep.energy[n], "circulation": rep.circulation[n], "positive": rep.positive[n],
                     "negative": rep.negative[n], "L1": rep.norms["L1"][n], "L2": rep.norms["L2"][n],
                     "L4": rep.norms["L4"][n], "dist_distance": rep.dist_distance[n],
                     "d_p": (ev.fields[n] - w0).norm(p)})
    write_csv(stem + ".csv", cfg, list(rows[0]), rows)
    return {"evolution": ev, "report": rep, "csv": stem + ".csv"}


def cmd_stability(cfg: RunConfig) -> dict:
    spec = cfg.problem_spec()
    w0, sol = _initial_field(cfg, spec)
    turns = cfg["stability.turnovers"]
    T = None if turns is None else turns * turnover_time(spec.eps, float(np.abs(spec.kappas).max()))
    ecfg = cfg.evolution(T)
    pert = (cfg["perturb.kind"], cfg["perturb.amp"], cfg["perturb.seed"])
    if pert[0] not in ("shift", "noise"):
        raise ConfigError(f"perturb.kind must be shift or noise, got {pert[0]!r}")
    p = cfg["stability.p"]
    if not 1 < p < np.inf:
        raise ConfigError("stability.p must satisfy 1 < p < inf")
    try:
        target = sol if sol is not None else w0
        rec = stability_experiment(target, ecfg, pert, eps=spec.eps, p=p,
                                   centers=None if sol is not None else spec.centers,
                                   signs=None if sol is not None else spec.signs)
    except ValueError as exc:
        raise ConfigError(f"perturbation rejected: {exc}") from None
    path = _steady_stem(cfg, spec, "stability") + f"_{pert[0]}_amp{pert[1]:g}_seed{pert[2]}.csv"
    rec.to_csv(path, header_lines(cfg))
    return {"record": rec, "csv": path}


def cmd_profile_steady(cfg: RunConfig) -> dict:
    spec = cfg.problem_spec()
    try:
        f = ProfileFunction(q=cfg["profile.q"], lam=cfg["profile.lambda"])
    except ValueError as exc:
        raise ConfigError(f"profile: {exc}") from None
    kw = {} if cfg["solver.max_iter"] is None else {"max_iter": cfg["solver.max_iter"]}
    try:
        sol = solve_profile_steady(spec, f, tol=cfg["solver.tol"], **kw)
    except ValueError as exc:
        raise ConfigError(f"profile problem rejected: {exc}") from None
    stem = _steady_stem(cfg, spec, "profile_steady") + f"_q{f.q:g}_lam{f.lam:g}"
    geo.write_vxf(stem + "_omega.vxf", sol.omega)
    res = profile_pointwise_residual(sol, f)
    rows = [{"blob": i + 1, "kappa": float(spec.kappas[i]), "mass": b.mass, "mu": b.mu, "E": sol.energy,
             "residual": res, "iters": sol.iterations, "converged": int(sol.converged),
             "cap_active": int(sol.cap_active)} for i, b in enumerate(sol.blobs)]
    write_csv(stem + ".csv", cfg, list(rows[0]), rows)
    if not sol.converged:
        _flag_partial(stem + ".csv", f"last difference {sol.last_increment:.3e}")
        raise NumericalFailure(f"profile iteration did not converge (difference {sol.last_increment:.3e})")
    return {"solution": sol, "csv": stem + ".csv"}
