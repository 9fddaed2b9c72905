"""Bounded-horizon safety verification on a single-mode process.

Builds the interval abstraction of a stable 2-d linear system on a sequence
of grids and reports how the certified error (upper minus lower safety
probability, per start cell) shrinks with the resolution.

Run:  python demos/03_abstraction_safety.py
"""

import time

import numpy as np

from switchsynth import HybridSystem, HyperRectangle, ModeDynamics, build_imdp, discretize, validate
from switchsynth.pipeline import dfa_for_formula, synthesize

dyn = ModeDynamics(np.diag([0.85, 0.90]), np.diag([0.15, 0.05]), np.eye(2))
X = HyperRectangle([-1, -1], [1, 1])
H = HybridSystem(modes=[("a1", dyn)], X=X, regions=[("X", X)])

dfa = dfa_for_formula("G<=2 X", ["X"])
print("2-step safety inside [-1,1]^2\n")
print(f"{'cells':>6} {'eps_max':>8} {'eps_med':>8} {'eps_ave':>8} {'seconds':>8}")
for n_side in (13, 19, 25, 38):
    t0 = time.time()
    grids = discretize(H, 2.0 / n_side)
    imdp = build_imdp(H, grids)
    report = validate(imdp)
    assert report.ok, report.violations[:3]
    out = synthesize(imdp, dfa)
    print(f"{len(imdp.states):>6} {out.eps_max:>8.4f} {out.eps_med:>8.4f} "
          f"{out.eps_ave:>8.4f} {time.time() - t0:>8.2f}")

print("\nvalidation slack on the last model: 1-sum(lo) in",
      tuple(round(v, 4) for v in report.lo_slack),
      "| sum(hi)-1 in", tuple(round(v, 4) for v in report.hi_slack))
