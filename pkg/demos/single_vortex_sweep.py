"""Single concentrated vortex in the unit disk: shrink the core and watch the laws.

Run: python demos/single_vortex_sweep.py
"""
import numpy as np

from vortexcore.cli.sweep import run_sweep
from vortexcore.steady import Blob, ProblemSpec

# one positive blob of unit circulation; the solver starts at the Robin minimum
specs = [ProblemSpec([Blob((0.0, 0.0), 1.0)], eps, n=256) for eps in (0.1, 0.07, 0.05, 0.035, 0.025)]
res = run_sweep(specs)

print(f"{'eps':>6} {'E':>9} {'mu':>9} {'diam/eps':>9} {'margin':>9} {'T_omega':>9} iters")
for r in res.rows:
    print(f"{r['eps']:6.3f} {r['E']:9.5f} {r['mu']:9.5f} {r['core_diam'] / r['eps']:9.3f} "
          f"{r['sep_margin']:9.5f} {r['T_omega']:9.5f} {r['iters']:5d}")

# energy grows like kappa^2/(4 pi) ln(1/eps), the multiplier like kappa/(2 pi) ln(1/eps)
print(f"E  slope {res.fits['E_vs_log_inv_eps'].slope:.4f}   vs 1/(4 pi) = {1 / (4 * np.pi):.4f}")
print(f"mu slope {res.fits['mu_1_vs_log_inv_eps'].slope:.4f}   vs 1/(2 pi) = {1 / (2 * np.pi):.4f}")
