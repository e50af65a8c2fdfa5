"""Error against a resolved FEM solution as the mode cutoff grows.

Default cutoffs are 4, 8, 12 against a 200 x 200 lattice at T = 0.01.
Extra cutoffs can be given on the command line, e.g. ``8 12 16 20``; the
asymptotic order only shows from K = 8 on.
"""
import sys

import numpy as np

from lagflow.experiments import fit_loglog_slope, run_convergence

Ks = [int(a) for a in sys.argv[1:]] or [4, 8, 12]
res = run_convergence(Ks=Ks, fem_L=200, out="error.dat")

print(f"{'K':>4} {'L2 error':>12} {'local order':>12} {'seconds':>8}")
prev = None
for r in res.records:
    order = "" if prev is None else f"{np.log(prev.error / r.error) / np.log(r.K / prev.K):12.2f}"
    print(f"{r.K:4d} {r.error:12.5e} {order:>12} {r.seconds:8.1f}")
    prev = r
print(f"least-squares order over {Ks}: {res.slope:.3f}")
if len(Ks) > 2:
    print(f"order without the coarsest cutoff: {fit_loglog_slope(Ks[1:], res.errors[1:]):.3f}")
