"""One-step Gaussian transition kernel and its extremisation over cells.

The kernel of x' = F x + G w with w ~ N(0, Cov_w) has one-step covariance
Cov_x = G Cov_w G^T.  After whitening with T = Lambda^{-1/2} V^T the integral
of the kernel over an axis-aligned rectangle factorises into a product of
one-dimensional normal masses, which is what `erf_product` evaluates.  The
probability of jumping from anywhere in a source cell into a target rectangle
is then bracketed by minimising/maximising that product over the whitened
image of the source cell.

`erf_product` evaluates the normal CDF through scipy.special.ndtr (platform
erf/erfc, accurate to ~1e-16); differences are rearranged by symmetry so the
result keeps full relative precision in both tails.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .geometry import (
    GEOM_TOL,
    HyperRectangle,
    Parallelotope,
    Polytope,
    post_parallelotope,
)

UNDERFLOW_FLOOR = 1e-300
PROB_FLOOR = 1e-15  # probabilities below this are erf tail noise, rounded to 0
GD_TOL = 1e-9
GD_MAX_ITER = 1000


class SingularCovariance(ValueError):
    """One-step covariance is not positive definite; whitening impossible."""


class UnderflowedFactor(ArithmeticError):
    """A one-dimensional kernel factor underflowed below 1e-300."""


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ProbInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (-1e-12 <= self.lo <= self.hi + 1e-12 and self.hi <= 1.0 + 1e-12):
            raise ValueError(f"invalid probability interval [{self.lo}, {self.hi}]")
        object.__setattr__(self, "lo", float(min(max(self.lo, 0.0), 1.0)))
        object.__setattr__(self, "hi", float(min(max(self.hi, self.lo), 1.0)))


@dataclass(frozen=True)
class ModeDynamics:
    """x' = F x + G w, w ~ N(0, cov_w)."""

    F: np.ndarray
    G: np.ndarray
    cov_w: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        W = np.atleast_2d(np.asarray(self.cov_w, dtype=float))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "cov_w", W)
        m = F.shape[0]
        if F.shape != (m, m) or G.shape[0] != m or W.shape != (G.shape[1],) * 2:
            raise ValueError("inconsistent dynamics dimensions")
        if not np.allclose(W, W.T, atol=1e-10):
            raise ValueError("noise covariance must be symmetric")

    @property
    def dim(self):
        return self.F.shape[0]

    @property
    def cov_x(self):
        """One-step covariance of the noise term G w."""
        return self.G @ self.cov_w @ self.G.T


@dataclass(frozen=True)
class Whitening:
    """T Cov_x T^T = I with T = Lambda^{-1/2} V^T, eigenvalues descending."""

    T: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def inverse(self):
        return self.eigenvectors @ np.diag(np.sqrt(self.eigenvalues))


def whitening(dyn_or_cov):
    """Whitening transform of a mode's one-step covariance.

    Eigenvalues are sorted descending and each eigenvector's first
    nonzero component is made positive so the result is deterministic.
    Raises SingularCovariance when the covariance is numerically rank
    deficient (smallest eigenvalue below 1e-12 of the largest).
    """
    cov = dyn_or_cov.cov_x if isinstance(dyn_or_cov, ModeDynamics) else np.asarray(dyn_or_cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    lam, vec = np.linalg.eigh(cov)
    lam = lam[::-1].copy()
    vec = vec[:, ::-1].copy()
    if lam[0] <= 0 or lam[-1] <= 1e-12 * lam[0]:
        raise SingularCovariance(
            f"one-step covariance is singular (eigenvalues {lam}); regularise G"
        )
    for j in range(vec.shape[1]):
        col = vec[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        if nz.size and col[nz[0]] < 0:
            vec[:, j] = -col
    T = np.diag(lam ** -0.5) @ vec.T
    return Whitening(T=T, eigenvalues=lam, eigenvectors=vec)


@dataclass(frozen=True)
class ActionKernel:
    """Per-mode bundle: dynamics, whitening and the combined map y = T F x."""

    name: str
    dynamics: ModeDynamics
    whitening: Whitening

    @property
    def M(self):
        return self.whitening.T @ self.dynamics.F

    def domain_of(self, source):
        """Whitened image of a source cell under y = T F x."""
        if isinstance(source, Parallelotope):
            return post_parallelotope(source, self.M)
        if isinstance(source, HyperRectangle):
            return post_parallelotope(
                Parallelotope(source.lower, np.diag(source.extent)), self.M
            )
        return Polytope(source.vertices @ self.M.T)


def make_action(name, dyn):
    return ActionKernel(name=name, dynamics=dyn, whitening=whitening(dyn))


def gauss_mass(a, b):
    """P(a <= Z <= b) for standard normal Z, stable in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    direct = ndtr(b) - ndtr(a)
    mirrored = ndtr(-a) - ndtr(-b)
    return np.where(a + b > 0, mirrored, direct)


def erf_product(y, rect):
    """Mass of N(y, I) over an axis-aligned rectangle; lies in [0, 1]."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    vals = gauss_mass(y - rect.upper, y - rect.lower)
    return float(np.prod(vals))


def _factors(y, rect):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return gauss_mass(y - rect.upper, y - rect.lower)


def log_erf_product(y, rect):
    vals = _factors(y, rect)
    if np.any(vals <= 0):
        return -np.inf
    return float(np.sum(np.log(vals)))


def grad_log_f(y, rect):
    """Gradient of log erf_product in y; needs all factors above 1e-300."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    vals = _factors(y, rect)
    if np.any(vals < UNDERFLOW_FLOOR):
        raise UnderflowedFactor(
            "kernel factor underflowed; the cell pair is numerically zero-probability"
        )
    phi_l = np.exp(-0.5 * (y - rect.lower) ** 2) / np.sqrt(2 * np.pi)
    phi_u = np.exp(-0.5 * (y - rect.upper) ** 2) / np.sqrt(2 * np.pi)
    return (phi_l - phi_u) / vals


def _axiswise_clamped_max(rect, box):
    """Exact max of the erf product over an axis-aligned box domain.

    Each one-dimensional factor is unimodal with its peak at the target
    interval's midpoint, so the max over a product domain factorises into
    per-axis evaluations at the midpoint clamped into the domain interval.
    """
    c = np.clip(rect.center, box.lower, box.upper)
    return c, erf_product(c, rect)


def _axis_aligned_box(domain):
    """Return the domain as a HyperRectangle when it is one, else None."""
    if isinstance(domain, HyperRectangle):
        return domain
    if isinstance(domain, Parallelotope):
        G = domain.generators
        off = G - np.diag(np.diag(G))
        if np.abs(off).max() <= 1e-12 * max(np.abs(G).max(), 1e-30):
            lo = np.minimum(domain.base, domain.base + np.diag(G))
            hi = np.maximum(domain.base, domain.base + np.diag(G))
            return HyperRectangle(lo, hi)
    return None


def _center_in_domain(center, domain):
    if isinstance(domain, HyperRectangle):
        return domain.contains_point(center)
    if isinstance(domain, Parallelotope):
        try:
            u = domain.box_coordinates(center)
        except np.linalg.LinAlgError:
            return False
        return bool(np.all(u >= -1e-10) and np.all(u <= 1 + 1e-10))
    H, b = domain.ensure_halfspaces()
    norms = np.linalg.norm(H, axis=1)
    norms[norms == 0] = 1.0
    return bool(np.all((H @ center - b) / norms <= GEOM_TOL))


def _domain_vertices(domain):
    if isinstance(domain, (HyperRectangle, Parallelotope)):
        return domain.vertices()
    return domain.vertices


def _golden_max(fun, lo=0.0, hi=1.0, iters=70):
    """Golden-section maximisation of a unimodal function on [lo, hi]."""
    invphi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    t = 0.5 * (a + b)
    return t, fun(t)


def _kkt_max(rect, domain):
    """Vertex candidates plus per-face stationary candidates (dims <= 3).

    The log of the objective is concave, so its restriction to any edge is
    unimodal (golden section applies) and the partial max over one facet
    coordinate is again concave in the other.
    """
    best_y, best_v = None, -1.0
    for v in _domain_vertices(domain):
        val = erf_product(v, rect)
        if val > best_v:
            best_y, best_v = np.array(v, dtype=float), val

    def consider(y):
        nonlocal best_y, best_v
        val = erf_product(y, rect)
        if val > best_v:
            best_y, best_v = np.array(y, dtype=float), val

    m = rect.dim
    if m == 1:
        return best_y, best_v

    edges = _domain_edges(domain)
    for a, b in edges:
        d = b - a

        def on_edge(t, a=a, d=d):
            return log_erf_product(a + t * d, rect)

        t, _ = _golden_max(on_edge)
        consider(a + t * d)

    if m == 3 and isinstance(domain, Parallelotope):
        # 2-d facets: nested golden section on the concave partial max
        for axis in range(3):
            others = [k for k in range(3) if k != axis]
            for fix in (0.0, 1.0):
                def facet(t1, axis=axis, others=others, fix=fix):
                    def inner(t2):
                        u = np.empty(3)
                        u[axis] = fix
                        u[others[0]] = t1
                        u[others[1]] = t2
                        y = domain.base + domain.generators @ u
                        return log_erf_product(y, rect)

                    return _golden_max(inner, iters=50)[1]

                t1, _ = _golden_max(facet, iters=50)

                def inner2(t2, axis=axis, others=others, fix=fix, t1=t1):
                    u = np.empty(3)
                    u[axis] = fix
                    u[others[0]] = t1
                    u[others[1]] = t2
                    return log_erf_product(domain.base + domain.generators @ u, rect)

                t2, _ = _golden_max(inner2, iters=50)
                u = np.empty(3)
                u[axis] = fix
                u[others[0]] = t1
                u[others[1]] = t2
                consider(domain.base + domain.generators @ u)
    return best_y, best_v


def _domain_edges(domain):
    """Edges as (start, end) vertex pairs."""
    if isinstance(domain, HyperRectangle):
        domain = Parallelotope(domain.lower, np.diag(domain.extent))
    if isinstance(domain, Parallelotope):
        m = domain.dim
        edges = []
        for axis in range(m):
            rest = [k for k in range(m) if k != axis]
            for bits in np.ndindex(*((2,) * (m - 1))):
                u0 = np.zeros(m)
                for k, bit in zip(rest, bits):
                    u0[k] = bit
                a = domain.base + domain.generators @ u0
                u1 = u0.copy()
                u1[axis] = 1.0
                b = domain.base + domain.generators @ u1
                edges.append((a, b))
        return edges
    # 2-d polytope: consecutive hull vertices
    if domain.dim == 2:
        from .geometry import convex_hull_2d

        hull = convex_hull_2d(domain.vertices)
        n = len(hull)
        if n == 1:
            return []
        return [(hull[i], hull[(i + 1) % n]) for i in range(n)]
    raise ValueError("edge enumeration only for boxes, parallelotopes and 2-d polytopes")


def _gd_max(rect, domain):
    """Projected gradient ascent on log f in unit-box coordinates."""
    if isinstance(domain, HyperRectangle):
        domain = Parallelotope(domain.lower, np.diag(domain.extent))
    if not isinstance(domain, Parallelotope):
        raise ValueError("gradient path requires a parallelotope domain")
    G = domain.generators

    def value(u):
        return log_erf_product(domain.base + G @ u, rect)

    # start at the box coordinates of the rectangle centre (clamped)
    try:
        u = np.clip(domain.box_coordinates(rect.center), 0.0, 1.0)
    except np.linalg.LinAlgError:
        u = np.full(domain.dim, 0.5)
    g = value(u)
    if not np.isfinite(g):
        # entire neighbourhood underflowed: fall back to best vertex
        verts = domain.vertices()
        vals = [erf_product(v, rect) for v in verts]
        k = int(np.argmax(vals))
        return verts[k], float(vals[k]), True

    converged = False
    alpha = 1.0
    for _ in range(GD_MAX_ITER):
        y = domain.base + G @ u
        try:
            grad = G.T @ grad_log_f(y, rect)
        except UnderflowedFactor:
            break
        pg = np.clip(u + grad, 0.0, 1.0) - u
        if np.linalg.norm(pg) < GD_TOL:
            converged = True
            break
        improved = False
        for _ in range(60):
            u_new = np.clip(u + alpha * grad, 0.0, 1.0)
            g_new = value(u_new)
            if g_new >= g + 1e-4 * grad @ (u_new - u) and g_new > -np.inf:
                u, g = u_new, g_new
                improved = True
                alpha = min(alpha * 1.6, 1e6)  # warm-start the next line search
                break
            alpha *= 0.5
        if not improved:
            converged = np.linalg.norm(pg) < 1e-6
            break
    y = domain.base + G @ u
    return y, erf_product(y, rect), converged


def max_f_over_polytope(rect, domain, method="auto", widen_slack=0.0):
    """(argmax, value) of the erf product over a convex domain.

    The target rectangle's centre is the unconstrained optimum; when it lies
    in the domain it is returned immediately.  Otherwise dims <= 3 enumerate
    vertices and per-face stationary candidates, and higher dims (or
    method='gd') run projected gradient ascent in the parallelotope's box
    coordinates.  Non-convergence of the ascent is reported as a warning and
    the best iterate is returned (a valid lower estimate of the max, padded
    by `widen_slack`).
    """
    center = rect.center
    if _center_in_domain(center, domain):
        return center, erf_product(center, rect)

    box = _axis_aligned_box(domain)
    if box is not None and method == "auto":
        return _axiswise_clamped_max(rect, box)

    m = rect.dim
    if method == "kkt" or (method == "auto" and m <= 3):
        return _kkt_max(rect, domain)
    y, val, converged = _gd_max(rect, domain)
    if not converged:
        warnings.warn(
            "projected gradient ascent hit the iteration cap; returning best iterate",
            NonConvergenceWarning,
        )
        val = min(1.0, val + widen_slack)
    return y, val


def min_f_over_polytope(rect, domain):
    """(argmin, value) of the erf product over a convex domain.

    The erf product is log-concave hence quasi-concave, so its minimum over
    a compact convex set sits at an extreme point; evaluating the vertex set
    is exact.
    """
    verts = _domain_vertices(domain)
    vals = _factors_batch(verts, rect)
    k = int(np.argmin(vals))
    return np.array(verts[k], dtype=float), float(vals[k])


def _factors_batch(points, rect):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = gauss_mass(pts - rect.upper, pts - rect.lower)
    return np.prod(vals, axis=1)


def transition_bounds(source, act, target_rect):
    """Bracket the one-step mass from a source cell into a whitened target.

    `target_rect` must live in the whitened frame of `act`; the source cell
    is in original coordinates and is pushed through y = T F x.
    """
    domain = act.domain_of(source)
    _, lo = min_f_over_polytope(target_rect, domain)
    _, hi = max_f_over_polytope(target_rect, domain)
    if lo < PROB_FLOOR:
        lo = 0.0
    if hi < PROB_FLOOR:
        hi = 0.0
    lo, hi = min(lo, 1.0), min(hi, 1.0)
    if lo > hi:
        lo = hi
    return ProbInterval(lo, hi)


def sink_bounds(source, act, safe_cells, safe_hull=None, cells_tile_hull=None):
    """Probability interval of leaving the safe set in one step.

    `safe_cells` are whitened-frame rectangles tiling (or, for the
    conservative fallback, under-approximating) the whitened image of the
    safe set.  When they tile `safe_hull` exactly the bounds are exact
    complements of the single erf product over the hull; otherwise the stay
    probability is over-estimated by the hull box and under-estimated by the
    sum of per-cell minima, which errs in the sound direction on both sides.
    """
    domain = act.domain_of(source)
    if safe_hull is None:
        los = np.array([c.lower for c in safe_cells])
        his = np.array([c.upper for c in safe_cells])
        safe_hull = HyperRectangle(los.min(axis=0), his.max(axis=0))
        if cells_tile_hull is None:
            cells_tile_hull = False
    if cells_tile_hull is None:
        vol = sum(c.volume() for c in safe_cells)
        cells_tile_hull = abs(vol - safe_hull.volume()) <= 1e-9 * max(safe_hull.volume(), 1.0)

    if cells_tile_hull:
        _, umax = max_f_over_polytope(safe_hull, domain)
        _, umin = min_f_over_polytope(safe_hull, domain)
    else:
        _, umax = max_f_over_polytope(safe_hull, domain)
        verts = _domain_vertices(domain)
        umin = 0.0
        for cell in safe_cells:
            umin += float(np.min(_factors_batch(verts, cell)))
        umin = min(umin, umax)
    lo = min(max(1.0 - umax, 0.0), 1.0)
    hi = min(max(1.0 - umin, lo), 1.0)
    if lo < PROB_FLOOR:
        lo = 0.0
    return ProbInterval(lo, hi)
