"""Exact one-step transition brackets from the whitened Gaussian kernel.

The probability of jumping from a source cell into a target rectangle is a
product of one-dimensional normal masses after whitening; minimising and
maximising that product over the cell gives the interval entries of the
abstraction.

Run:  python demos/02_kernel_bounds.py
"""

import numpy as np

from switchsynth import (
    HyperRectangle,
    ModeDynamics,
    Parallelotope,
    erf_product,
    make_action,
    max_f_over_polytope,
    min_f_over_polytope,
    transition_bounds,
    whitening,
)

dyn = ModeDynamics(
    F=np.array([[0.85, 0.0], [0.0, 0.90]]),
    G=np.array([[0.15, 0.0], [0.0, 0.05]]),
    cov_w=np.eye(2),
)
w = whitening(dyn)
print("one-step covariance:\n", dyn.cov_x)
print("whitening transform T (T Cov T' = I):\n", np.round(w.T, 3))

act = make_action("a1", dyn)

# the kernel mass into a whitened rectangle, evaluated at one point
rect = HyperRectangle([-2.0, -2.0], [2.0, 2.0])
print("\nmass of N(0, I) over [-2,2]^2:", erf_product([0.0, 0.0], rect))

# a source cell in original coordinates; the natural target is the whitened
# image of the safe set, i.e. the probability of staying inside [-1,1]^2
cell = Parallelotope(base=[0.4, 0.4], generators=0.2 * np.eye(2))
X = HyperRectangle([-1.0, -1.0], [1.0, 1.0])
img = X.vertices() @ w.T.T
stay_rect = HyperRectangle(img.min(axis=0), img.max(axis=0))
iv = transition_bounds(cell, act, stay_rect)
print(f"one-step stay-in-X bracket from the cell: [{iv.lo:.6f}, {iv.hi:.6f}]")

# the two optimisation paths agree: candidate enumeration vs. projected
# gradient ascent in the cell's box coordinates
domain = act.domain_of(cell)
tgt = HyperRectangle(domain.center - [1.5, 4.0], domain.center + [0.5, 2.0])
_, v_kkt = max_f_over_polytope(tgt, domain, method="kkt")
_, v_gd = max_f_over_polytope(tgt, domain, method="gd")
print(f"\nmax via candidates: {v_kkt:.12f}")
print(f"max via ascent:     {v_gd:.12f}   (gap {abs(v_kkt - v_gd):.2e})")

_, v_min = min_f_over_polytope(tgt, domain)
print(f"min at a domain vertex: {v_min:.12f}")
