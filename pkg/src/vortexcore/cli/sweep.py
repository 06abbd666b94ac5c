"""Steady-state sweeps over the profile size and their asymptotic fits."""
from __future__ import annotations

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..steady import ProblemSpec, excess_energy, separation_check, solve_steady, steadiness_residual

SWEEP_COLUMNS = ["eps", "blob", "kappa_eps", "E", "mu", "core_diam", "core_cx", "core_cy",
                 "sep_margin", "T_omega", "residual", "iters", "converged"]
MIN_FIT_POINTS = 4


@dataclass
class LineFit:
    slope: float
    intercept: float
    rms_residual: float
    points: int


@dataclass
class SweepResult:
    rows: list
    fits: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def succeeded_eps(self) -> list[float]:
        return sorted({r["eps"] for r in self.rows if r["converged"]}, reverse=True)


def fit_line(x, y) -> LineFit:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    res = y - (slope * x + intercept)
    return LineFit(float(slope), float(intercept), float(np.sqrt(np.mean(res**2))), x.size)


def steady_rows(sol) -> list[dict]:
    """One steady-sweep row per blob of a solved state."""
    spec = sol.spec
    sep = separation_check(sol)
    T, _ = excess_energy(sol)
    res = steadiness_residual(sol)
    rows = []
    for i, b in enumerate(sol.blobs):
        rows.append({
            "eps": spec.eps, "blob": i + 1, "kappa_eps": float(spec.kappas[i]), "E": sol.energy,
            "mu": b.mu, "core_diam": b.core.diameter, "core_cx": float(b.core.centroid[0]),
            "core_cy": float(b.core.centroid[1]), "sep_margin": float(sep.margins[i]), "T_omega": T,
            "residual": res, "iters": sol.iterations, "converged": int(sol.converged),
        })
    return rows


def _solve_one(spec: ProblemSpec):
    try:
        return steady_rows(solve_steady(spec)), None
    except (ValueError, RuntimeError) as exc:
        return [], f"eps={spec.eps:g}: {exc}"


def fit_sweep(rows: list[dict]) -> dict[str, LineFit]:
    """Slopes of ``E`` and ``mu_i`` against ``ln(1/eps)`` and of ``diam_i`` against ``eps``.

    Only converged points count; nothing is fitted below four of them.
    """
    ok = [r for r in rows if r["converged"]]
    fits = {}
    eps_e = {r["eps"]: r["E"] for r in ok}
    if len(eps_e) >= MIN_FIT_POINTS:
        e = np.array(sorted(eps_e))
        fits["E_vs_log_inv_eps"] = fit_line(np.log(1 / e), [eps_e[v] for v in e])
    for blob in sorted({r["blob"] for r in ok}):
        sel = [r for r in ok if r["blob"] == blob]
        if len(sel) < MIN_FIT_POINTS:
            continue
        e = np.array([r["eps"] for r in sel])
        fits[f"mu_{blob}_vs_log_inv_eps"] = fit_line(np.log(1 / e), [r["mu"] for r in sel])
        fits[f"diam_{blob}_vs_eps"] = fit_line(e, [r["core_diam"] for r in sel])
    return fits


def run_sweep(specs: list[ProblemSpec], jobs: int = 1) -> SweepResult:
    """Solve each spec (in worker processes when ``jobs > 1``); rows keep input order."""
    if jobs > 1 and len(specs) > 1:
        # spawn, not fork: the compiled kernels hold an OpenMP runtime that must not be forked
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            results = list(pool.map(_solve_one, specs))
    else:
        results = [_solve_one(s) for s in specs]
    rows, failures = [], []
    for r, err in results:
        rows.extend(r)
        if err:
            failures.append(err)
    return SweepResult(rows, fit_sweep(rows), failures)
