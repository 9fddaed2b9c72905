"""Tour of the geometric primitives the abstraction is built from.

Run:  python demos/01_geometry.py
"""

import numpy as np

from switchsynth import (
    HyperRectangle,
    Parallelotope,
    Polytope,
    contains,
    intersects,
    minkowski_sum,
    post_image,
    uniform_grid,
    volume,
)

# Axis-aligned boxes are the target shapes of every transition bound.
X = HyperRectangle([-1, -1], [1, 1])
print("safe set X:", X.lower, "to", X.upper, "volume", X.volume())

# Linear maps act on vertex sets: the image of a polytope is the hull of
# the mapped vertices.
square = X.to_polytope()
R = np.array([[np.cos(0.5), -np.sin(0.5)], [np.sin(0.5), np.cos(0.5)]])
rotated = post_image(square, R)
print("\nrotated square vertices:\n", np.round(rotated.vertices, 3))

# Parallelotopes are the cells a whitened grid induces in original
# coordinates: an affine image of the unit box.
cell = Parallelotope(base=[0.2, -0.3], generators=0.4 * R)
print("\ncell volume |det G| =", volume(cell))
print("cell inside X?", contains(X, cell))
print("cell intersects the rotated square?", intersects(rotated, cell.to_polytope()))

# Minkowski sums appear in the continuous-time upper bound: exact in 2-d.
octagon = minkowski_sum(square, rotated)
print("\nMinkowski sum has", len(octagon.vertices), "hull vertices")

# Grids tile a box exactly; the last cell per axis absorbs the remainder.
cells = uniform_grid(X, [2 / 19, 2 / 19])
print("\n19-per-side grid of X:", len(cells), "cells, total volume",
      round(sum(c.volume() for c in cells), 12))
