"""Convex geometry primitives: hyper-rectangles, polytopes, parallelotopes.

Everything here is exact for the shapes the abstraction pipeline produces
(axis-aligned rectangles and affine images of boxes).  General polytopes get
exact halfspace representations only up to dimension 3; higher dimensions are
restricted to the rectangle/parallelotope fast paths.

All values are plain numpy arrays and all operations are pure, so instances
can be shared freely across threads.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

# Absolute tolerance after row-normalising halfspaces.  Double precision
# leaves ample headroom at this scale across the whitening magnitudes the
# pipeline produces.
GEOM_TOL = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HyperRectangle:
    """Axis-aligned box given by per-dimension lower/upper bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        up = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if lo.shape != up.shape or lo.ndim != 1 or lo.size < 1:
            raise GeometryError("lower/upper must be 1-d vectors of equal length")
        if np.any(lo > up + GEOM_TOL):
            raise GeometryError(f"lower {lo} exceeds upper {up}")

    @property
    def dim(self):
        return self.lower.size

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def extent(self):
        return self.upper - self.lower

    def volume(self):
        return float(np.prod(self.extent))

    def vertices(self):
        """All 2^m corners, in lexicographic bit order."""
        m = self.dim
        bits = np.array(np.meshgrid(*[[0, 1]] * m, indexing="ij")).reshape(m, -1).T
        return self.lower + bits * self.extent

    def contains_point(self, x, tol=GEOM_TOL):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def to_polytope(self):
        return Polytope(self.vertices(), halfspaces=self.halfspaces())

    def halfspaces(self):
        """(H, b) with H x <= b; 2m rows (upper faces then lower faces)."""
        m = self.dim
        eye = np.eye(m)
        H = np.vstack([eye, -eye])
        b = np.concatenate([self.upper, -self.lower])
        return H, b


@dataclass
class Polytope:
    """Bounded convex polytope held as a vertex list, with an optional
    cached halfspace description H x <= b.

    The vertex list may contain redundant points; operations that need the
    hull (2-d only) compute it on demand.
    """

    vertices: np.ndarray
    halfspaces: tuple | None = field(default=None)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.size == 0:
            raise GeometryError("polytope needs at least one vertex")
        self.vertices = v
        if self.halfspaces is not None:
            H, b = self.halfspaces
            H = np.atleast_2d(np.asarray(H, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            self.halfspaces = (H, b)
            norms = np.linalg.norm(H, axis=1)
            norms[norms == 0] = 1.0
            viol = (H @ v.T - b[:, None]) / norms[:, None]
            if np.any(viol > GEOM_TOL * 10):
                raise GeometryError("a vertex violates the given halfspaces")

    @property
    def dim(self):
        return self.vertices.shape[1]

    def bounding_box(self):
        return HyperRectangle(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def ensure_halfspaces(self):
        """Return (H, b), deriving it for m <= 3 when absent."""
        if self.halfspaces is not None:
            return self.halfspaces
        m = self.dim
        if m == 1:
            lo, hi = self.vertices.min(), self.vertices.max()
            self.halfspaces = (np.array([[1.0], [-1.0]]), np.array([hi, -lo]))
        elif m == 2:
            hull = convex_hull_2d(self.vertices)
            H, b = _edges_to_halfspaces(hull)
            self.halfspaces = (H, b)
        elif m == 3:
            from scipy.spatial import ConvexHull

            try:
                hull = ConvexHull(self.vertices)
            except Exception as exc:  # degenerate (flat) input
                raise GeometryError(f"3-d hull failed: {exc}") from exc
            eqs = hull.equations  # rows [n, d] with n.x + d <= 0
            self.halfspaces = (eqs[:, :3].copy(), -eqs[:, 3].copy())
        else:
            raise GeometryError(
                f"halfspace conversion unsupported for general polytopes in dim {m}"
            )
        return self.halfspaces


@dataclass(frozen=True)
class Parallelotope:
    """Affine image base + generators @ [0,1]^m of the unit box.

    Generator columns span the cell; they may be singular, in which case the
    cell is degenerate (volume 0) but still usable as a vertex set.
    """

    base: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.base, dtype=float))
        G = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if G.shape != (b.size, b.size):
            raise GeometryError("generators must be m x m for an m-vector base")
        object.__setattr__(self, "base", b)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self):
        return self.base.size

    @property
    def center(self):
        return self.base + 0.5 * self.generators.sum(axis=1)

    def vertices(self):
        m = self.dim
        bits = np.array(np.meshgrid(*[[0, 1]] * m, indexing="ij")).reshape(m, -1).T
        return self.base + bits @ self.generators.T

    def to_polytope(self):
        try:
            hs = self.halfspaces()
        except GeometryError:
            hs = None
        return Polytope(self.vertices(), halfspaces=hs)

    def halfspaces(self):
        """2m exact halfspaces from the inverse generator map."""
        try:
            Ginv = np.linalg.inv(self.generators)
        except np.linalg.LinAlgError as exc:
            raise GeometryError("degenerate parallelotope has no halfspaces") from exc
        # unit-box coords u = Ginv (x - base) in [0,1]^m
        H = np.vstack([Ginv, -Ginv])
        b = np.concatenate([Ginv @ self.base + 1.0, -(Ginv @ self.base)])
        return H, b

    def box_coordinates(self, x):
        """Unit-box coordinates of x (exact for nonsingular generators)."""
        return np.linalg.solve(self.generators, np.asarray(x, dtype=float) - self.base)


def convex_hull_2d(points):
    """Monotone-chain hull, counter-clockwise, no repeated endpoint."""
    pts = np.unique(np.round(np.asarray(points, dtype=float), 12), axis=0)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _edges_to_halfspaces(hull_ccw):
    """Outward edge normals of a ccw 2-d hull; degenerate hulls get a box."""
    n = len(hull_ccw)
    if n == 1:
        H = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        x, y = hull_ccw[0]
        return H, np.array([x, -x, y, -y])
    if n == 2:
        # segment: two edge constraints plus the connecting line both ways
        d = hull_ccw[1] - hull_ccw[0]
        nrm = np.array([-d[1], d[0]])
        nrm = nrm / np.linalg.norm(nrm)
        t = d / np.linalg.norm(d)
        H = np.array([nrm, -nrm, t, -t])
        b = np.array(
            [
                nrm @ hull_ccw[0],
                -(nrm @ hull_ccw[0]),
                t @ hull_ccw[1],
                -(t @ hull_ccw[0]),
            ]
        )
        return H, b
    rows, offs = [], []
    for i in range(n):
        a, c = hull_ccw[i], hull_ccw[(i + 1) % n]
        d = c - a
        nrm = np.array([d[1], -d[0]])  # outward for ccw order
        L = np.linalg.norm(nrm)
        if L < 1e-14:
            continue
        rows.append(nrm / L)
        offs.append((nrm / L) @ a)
    return np.array(rows), np.array(offs)


def post_image(poly, M):
    """Image of a polytope under the linear map x -> M x.

    The image is the convex hull of the mapped vertices, so the vertex list
    is mapped directly and any cached halfspaces are dropped.
    """
    M = np.asarray(M, dtype=float)
    if isinstance(poly, HyperRectangle):
        poly = poly.to_polytope()
    if M.shape[1] != poly.dim:
        raise GeometryError(f"map is {M.shape}, polytope dim {poly.dim}")
    return Polytope(poly.vertices @ M.T)


def post_parallelotope(cell, M):
    """post_image specialised to parallelotopes (stays a parallelotope)."""
    M = np.asarray(M, dtype=float)
    return Parallelotope(M @ cell.base, M @ cell.generators)


def minkowski_sum(p1, p2):
    """Minkowski sum of two polytopes.

    Exact (pairwise vertex sums + planar hull) up to dimension 2.  Above
    that an axis-aligned bounding box of the sum is returned, which encloses
    the true sum; that direction is what the upper-bound computations need.
    """
    if isinstance(p1, HyperRectangle):
        p1 = p1.to_polytope()
    if isinstance(p2, HyperRectangle):
        p2 = p2.to_polytope()
    if p1.dim != p2.dim:
        raise GeometryError("dimension mismatch in minkowski_sum")
    sums = (p1.vertices[:, None, :] + p2.vertices[None, :, :]).reshape(-1, p1.dim)
    if p1.dim == 1:
        return Polytope(np.array([[sums.min()], [sums.max()]]))
    if p1.dim == 2:
        hull = convex_hull_2d(sums)
        return Polytope(hull)
    lo, hi = sums.min(axis=0), sums.max(axis=0)
    return HyperRectangle(lo, hi).to_polytope()


def contains(outer, inner, tol=GEOM_TOL):
    """True iff every vertex of `inner` satisfies the halfspaces of `outer`.

    Exact for convex `outer`.  `outer` must carry (or admit) an H-rep.
    """
    if isinstance(outer, HyperRectangle):
        H, b = outer.halfspaces()
    elif isinstance(outer, Parallelotope):
        H, b = outer.halfspaces()
    else:
        H, b = outer.ensure_halfspaces()
    if isinstance(inner, (HyperRectangle, Parallelotope)):
        verts = inner.vertices()
    else:
        verts = inner.vertices
    norms = np.linalg.norm(H, axis=1)
    norms[norms == 0] = 1.0
    slack = (H @ verts.T - b[:, None]) / norms[:, None]
    return bool(np.all(slack <= tol))


def intersects(p1, p2, tol=GEOM_TOL):
    """Exact intersection test for closed convex sets.

    Feasibility of the joint halfspace system, decided by a small LP.  A
    bounding-box disjointness pretest short-circuits the common negative
    case.  Touching boundaries count as intersection.
    """
    box1 = p1.bounding_box() if isinstance(p1, Polytope) else _as_box(p1)
    box2 = p2.bounding_box() if isinstance(p2, Polytope) else _as_box(p2)
    if np.any(box1.lower > box2.upper + tol) or np.any(box2.lower > box1.upper + tol):
        return False

    H1, b1 = _halfspaces_of(p1)
    H2, b2 = _halfspaces_of(p2)
    if H1 is None or H2 is None:
        raise GeometryError("intersects needs halfspace representations")
    H = np.vstack([H1, H2])
    b = np.concatenate([b1, b2])
    norms = np.linalg.norm(H, axis=1)
    norms[norms == 0] = 1.0
    H = H / norms[:, None]
    b = b / norms
    m = H.shape[1]
    res = linprog(
        c=np.zeros(m),
        A_ub=H,
        b_ub=b + tol,
        bounds=[(None, None)] * m,
        method="highs",
    )
    return bool(res.status == 0)


def intersects_interior(p1, p2, tol=GEOM_TOL):
    """True iff the interiors meet, i.e. the overlap has positive volume.

    Maximises the Chebyshev slack of the joint halfspace system; a strictly
    positive optimum means a full-dimensional overlap.  Face contact between
    closed sets therefore does not count.
    """
    box1 = p1.bounding_box() if isinstance(p1, Polytope) else _as_box(p1)
    box2 = p2.bounding_box() if isinstance(p2, Polytope) else _as_box(p2)
    if np.any(box1.lower > box2.upper + tol) or np.any(box2.lower > box1.upper + tol):
        return False
    H1, b1 = _halfspaces_of(p1)
    H2, b2 = _halfspaces_of(p2)
    H = np.vstack([H1, H2])
    b = np.concatenate([b1, b2])
    norms = np.linalg.norm(H, axis=1)
    norms[norms == 0] = 1.0
    H = H / norms[:, None]
    b = b / norms
    m = H.shape[1]
    # maximise t subject to H x + t <= b
    res = linprog(
        c=np.concatenate([np.zeros(m), [-1.0]]),
        A_ub=np.hstack([H, np.ones((H.shape[0], 1))]),
        b_ub=b,
        bounds=[(None, None)] * m + [(None, None)],
        method="highs",
    )
    if res.status != 0:
        return False
    return bool(-res.fun > tol)


def _as_box(shape):
    if isinstance(shape, HyperRectangle):
        return shape
    return HyperRectangle(shape.vertices().min(axis=0), shape.vertices().max(axis=0))


def _halfspaces_of(shape):
    if isinstance(shape, HyperRectangle):
        return shape.halfspaces()
    if isinstance(shape, Parallelotope):
        return shape.halfspaces()
    return shape.ensure_halfspaces()


def volume(cell):
    """|det(generators)| for parallelotopes; degenerate cells give 0."""
    if isinstance(cell, HyperRectangle):
        return cell.volume()
    return float(abs(np.linalg.det(cell.generators)))


def uniform_grid(domain, steps):
    """Tile `domain` with axis-aligned cells of size `steps`.

    The last cell along each axis is shortened to end exactly at the domain
    boundary, so the cells tile the domain exactly and overlap only on their
    shared faces.  Cell order is lexicographic in the per-axis indices.
    """
    steps = np.atleast_1d(np.asarray(steps, dtype=float))
    if steps.size == 1:
        steps = np.full(domain.dim, steps[0])
    if np.any(steps <= 0):
        raise GeometryError("grid steps must be positive")
    if np.any(domain.extent <= 0):
        raise GeometryError("empty grid domain")
    edges = []
    for lo, hi, s in zip(domain.lower, domain.upper, steps):
        n = int(np.ceil((hi - lo) / s - 1e-12))
        n = max(n, 1)
        e = lo + s * np.arange(n + 1)
        e[-1] = hi
        edges.append(e)
    counts = [len(e) - 1 for e in edges]
    cells = []
    for idx in np.ndindex(*counts):
        lo = np.array([edges[k][i] for k, i in enumerate(idx)])
        hi = np.array([edges[k][i + 1] for k, i in enumerate(idx)])
        cells.append(HyperRectangle(lo, hi))
    return cells
