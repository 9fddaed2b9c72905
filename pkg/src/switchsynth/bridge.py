"""Continuous-time extension: sampled dynamics and inter-sample safety.

A continuous mode dx = F_c x dt + G_c dW is sampled at step dt into the
discrete form used by the abstraction.  Between samples the trajectory
conditioned on both endpoints is a Gaussian bridge; its moments give sound
bounds on the probability that the continuous path stays inside the safe
set during one sampling interval:

* the upper bound inspects the bridge at mid-interval, maximised over the
  Minkowski sum of linear images of the two endpoint cells;
* the lower bound combines the cells' 1-norm margin to the safe-set
  boundary with a Dudley entropy integral that caps the bridge's expected
  excursion, through a Borell-type tail estimate.

Sup-type constants (K, xi) are estimated on a 200-interval time grid and
inflated by a 1.05 safety factor.  The per-transition interval of the
sampled abstraction is multiplied by these bracket factors; the exact
semantics is "jump into the target cell AND stay safe throughout the step",
a product combination that errs conservatively on both sides.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm as _scipy_expm

from .abstraction import HybridSystem, build_imdp, discretize
from .geometry import HyperRectangle, Parallelotope, minkowski_sum, post_image
from .kernel import (
    ModeDynamics,
    SingularCovariance,
    max_f_over_polytope,
    whitening,
)

TIME_GRID = 200
SUP_SAFETY = 1.05


def matrix_exp(M):
    """Matrix exponential (scaling-and-squaring Pade, scipy's expm)."""
    return _scipy_expm(np.asarray(M, dtype=float))


@dataclass(frozen=True)
class CtModeDynamics:
    """dx = F_c x dt + G_c dW sampled every dt time units."""

    F_c: np.ndarray
    G_c: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "F_c", np.atleast_2d(np.asarray(self.F_c, dtype=float)))
        object.__setattr__(self, "G_c", np.atleast_2d(np.asarray(self.G_c, dtype=float)))
        if self.dt <= 0:
            raise ValueError("sampling time must be positive")

    @property
    def dim(self):
        return self.F_c.shape[0]


def _adaptive_simpson(f, a, b, tol, depth=24):
    """Adaptive Simpson quadrature for matrix-valued integrands."""

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, d):
        mid = 0.5 * (lo + hi)
        lmid = 0.5 * (lo + mid)
        rmid = 0.5 * (mid + hi)
        fl, fr = f(lmid), f(rmid)
        left = simpson(lo, mid, flo, fl, fmid)
        right = simpson(mid, hi, fmid, fr, fhi)
        err = np.abs(left + right - whole).max()
        if err < 15 * eps or d <= 0:
            return left + right + (left + right - whole) / 15.0
        return recurse(lo, mid, flo, fl, fmid, left, eps / 2, d - 1) + recurse(
            mid, hi, fmid, fr, fhi, right, eps / 2, d - 1
        )

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, depth)


def _noise_increment(F, M, h, tol=1e-10):
    """integral over [0, h] of e^{F s} M e^{F^T s} ds."""
    def integrand(s):
        E = matrix_exp(F * s)
        return E @ M @ E.T

    return _adaptive_simpson(integrand, 0.0, h, tol)


def sample_dynamics(ct, cov_w=None):
    """Exact discretisation of the continuous mode over one sampling step.

    Returns the (F, G, cov_w) encoding with G the symmetric square root of
    the accumulated noise covariance and unit driving noise.
    """
    m = ct.dim
    if cov_w is None:
        cov_w = np.eye(ct.G_c.shape[1])
    cov_w = np.atleast_2d(np.asarray(cov_w, dtype=float))
    F_d = matrix_exp(ct.F_c * ct.dt)
    M = ct.G_c @ cov_w @ ct.G_c.T
    cov_d = _noise_increment(ct.F_c, M, ct.dt)
    cov_d = 0.5 * (cov_d + cov_d.T)
    lam, vec = np.linalg.eigh(cov_d)
    if lam.min() <= 1e-12 * max(lam.max(), 1e-30):
        raise SingularCovariance(f"sampled covariance is singular: eigenvalues {lam}")
    G = vec @ np.diag(np.sqrt(lam)) @ vec.T
    return ModeDynamics(F=F_d, G=G, cov_w=np.eye(m))


# ---------------------------------------------------------------------------
# Gaussian bridge


class _BridgeKinematics:
    """Covariance bookkeeping of one mode's bridge on a uniform time grid."""

    def __init__(self, ct, cov_w=None):
        if cov_w is None:
            cov_w = np.eye(ct.G_c.shape[1])
        self.ct = ct
        m = ct.dim
        self.M = ct.G_c @ np.atleast_2d(cov_w) @ ct.G_c.T
        self.h = ct.dt / TIME_GRID
        self.P = matrix_exp(ct.F_c * self.h)
        A = _noise_increment(ct.F_c, self.M, self.h)
        # E[k] = e^{F t_k}, S[k] = Cov_x(t_k) with Cov_x(0) = 0
        self.E = [np.eye(m)]
        self.S = [np.zeros((m, m))]
        for k in range(TIME_GRID):
            Ek = self.E[-1]
            self.S.append(self.S[-1] + Ek @ A @ Ek.T)
            self.E.append(self.P @ Ek)
        self.S = np.array(self.S)
        self.E = np.array(self.E)
        self.S_dt = self.S[-1]
        if np.linalg.eigvalsh(self.S_dt).min() <= 1e-14 * max(
            np.abs(self.S_dt).max(), 1e-30
        ):
            raise SingularCovariance("bridge requires a nonsingular step covariance")
        # C[k] = Cov(x(t_k), x(dt)) and its S_dt^{-1}-weighted transpose
        N = TIME_GRID
        self.C = np.array([self.S[k] @ self.E[N - k].T for k in range(N + 1)])
        self.B = np.array([np.linalg.solve(self.S_dt, self.C[k].T) for k in range(N + 1)])

    def cov_x(self, t):
        return _noise_increment(self.ct.F_c, self.M, t) if t > 0 else np.zeros_like(self.M)

    def mean(self, x1, x2, t):
        Et = matrix_exp(self.ct.F_c * t)
        Ct = self.cov_x(t) @ matrix_exp(self.ct.F_c * (self.ct.dt - t)).T
        resid = np.asarray(x2, dtype=float) - self.E[-1] @ np.asarray(x1, dtype=float)
        return Et @ np.asarray(x1, dtype=float) + Ct @ np.linalg.solve(self.S_dt, resid)

    def cov(self, t):
        St = self.cov_x(t)
        Ct = St @ matrix_exp(self.ct.F_c * (self.ct.dt - t)).T
        return St - Ct @ np.linalg.solve(self.S_dt, Ct.T)

    def bridge_var_grid(self):
        """diag Cov_b(t_k) for every grid point: (N+1, m)."""
        out = np.zeros((TIME_GRID + 1, self.ct.dim))
        for k in range(TIME_GRID + 1):
            out[k] = np.diag(self.S[k] - self.C[k] @ self.B[k])
        return out

    def increment_metric(self):
        """sup over grid pairs of sqrt(E[(b_i(t1)-b_i(t2))^2]), per axis."""
        N = TIME_GRID
        var = self.bridge_var_grid()
        best = np.zeros(self.ct.dim)
        for d in range(1, N + 1):
            # cross-covariance diag of (b(t_k), b(t_{k+d})) for all k
            Pd = self.E[d]  # e^{F d h}: Cov(x(t_k), x(t_{k+d})) = S_k Pd^T
            cross_x = np.einsum("kab,cb->kac", self.S[: N + 1 - d], Pd)
            cross_b = cross_x - np.einsum(
                "kab,kbc->kac", self.C[: N + 1 - d], self.B[d:]
            )
            diag_cross = np.einsum("kaa->ka", cross_b)
            d2 = var[: N + 1 - d] + var[d:] - 2 * diag_cross
            best = np.maximum(best, np.sqrt(np.maximum(d2, 0.0)).max(axis=0))
        return best


def bridge_moments(x1, x2, ct, t, cov_w=None):
    """Mean and covariance of the endpoint-conditioned path at time t."""
    if not (0 <= t <= ct.dt):
        raise ValueError("bridge time must lie in [0, dt]")
    kin = _BridgeKinematics(ct, cov_w)
    return kin.mean(x1, x2, t), kin.cov(t)


@dataclass
class BridgeMoments:
    """Callable moment functions of one endpoint-conditioned trajectory."""

    mean: object
    cov: object


def make_bridge(x1, x2, ct, cov_w=None):
    kin = _BridgeKinematics(ct, cov_w)
    return BridgeMoments(
        mean=lambda t: kin.mean(x1, x2, t),
        cov=lambda t: kin.cov(t),
    )


def dudley_integral(K, dt):
    """integral_0^{K dt / 2} sqrt(ln(2 K dt / z + 1)) dz.

    Substituting z = (K dt / 2) s^2 removes the logarithmic endpoint
    singularity before handing the integrand to adaptive quadrature.
    """
    if K <= 0:
        return 0.0
    c = 0.5 * K * dt

    def g(s):
        if s <= 0:
            return 0.0
        return 2.0 * c * s * math.sqrt(math.log(4.0 / (s * s) + 1.0))

    val, _ = quad(g, 0.0, 1.0, limit=200)
    return float(val)


def _vertex_array(cell):
    if isinstance(cell, (Parallelotope, HyperRectangle)):
        return cell.vertices()
    if hasattr(cell, "vertices"):
        return np.atleast_2d(cell.vertices)
    return np.atleast_2d(np.asarray(cell, dtype=float))


def margin_1norm(vertices, X):
    """1-norm distance from a cell (via its vertices) to the boundary of X."""
    v = np.atleast_2d(vertices)
    slack = np.minimum(v - X.lower[None, :], X.upper[None, :] - v)
    return float(max(np.min(slack), 0.0))


@dataclass
class BridgeConstants:
    """Per-mode quantities reused across every cell pair."""

    kin: _BridgeKinematics
    xi: np.ndarray  # sup of the centred bridge variance per axis (inflated)
    K: np.ndarray  # increment-metric constants per axis (inflated)
    dudley: np.ndarray  # 12 * entropy integral per axis
    zero_travel: bool  # diagonal stable F, diagonal G, centred X
    A1: np.ndarray
    A2: np.ndarray
    whiten_half: object  # whitening of Cov_b(dt/2)


def bridge_constants(ct, X, cov_w=None):
    kin = _BridgeKinematics(ct, cov_w)
    var = kin.bridge_var_grid()
    xi = SUP_SAFETY * var.max(axis=0)
    K = SUP_SAFETY * kin.increment_metric() / ct.dt
    dud = np.array([12.0 * dudley_integral(k, ct.dt) for k in K])
    F, G = ct.F_c, ct.G_c
    diag_F = np.allclose(F, np.diag(np.diag(F)), atol=1e-12)
    diag_G = np.allclose(G, np.diag(np.diag(G)), atol=1e-12)
    stable = np.all(np.diag(F) < 0)
    centred = np.allclose(X.center, 0.0, atol=1e-9)
    zero_travel = bool(diag_F and diag_G and stable and centred)

    N = TIME_GRID
    half = N // 2
    E_half = kin.E[half]
    C_half = kin.C[half]
    A2 = C_half @ np.linalg.solve(kin.S_dt, np.eye(ct.dim))
    A1 = E_half - A2 @ kin.E[-1]
    cov_half = kin.S[half] - C_half @ kin.B[half]
    W = whitening(0.5 * (cov_half + cov_half.T))
    return BridgeConstants(
        kin=kin, xi=xi, K=K, dudley=dud, zero_travel=zero_travel,
        A1=A1, A2=A2, whiten_half=W,
    )


def tc_lower(cell_i, cell_j, consts, X):
    """Lower bound on staying inside X throughout one sampling interval.

    Zero whenever any per-axis margin term eta is non-positive, which is the
    sound default for cells near the boundary or far apart.
    """
    vi = _vertex_array(cell_i)
    vj = _vertex_array(cell_j)
    eps_star = max(margin_1norm(vi, X), margin_1norm(vj, X))
    m = X.dim
    if consts.zero_travel:
        L = np.zeros(m)
    else:
        lo_i, hi_i = vi.min(axis=0), vi.max(axis=0)
        lo_j, hi_j = vj.min(axis=0), vj.max(axis=0)
        L = np.maximum(hi_i - lo_j, hi_j - lo_i)
        L = np.maximum(L, 0.0)
    eta = eps_star / m - (L + consts.dudley)
    if np.any(eta <= 0):
        return 0.0
    tail = 2.0 * np.sum(np.exp(-(eta**2) / (2.0 * consts.xi)))
    return float(max(0.0, 1.0 - tail))


def tc_upper(cell_i, cell_j, consts, X):
    """Upper bound via the mid-interval bridge law over the Minkowski sum."""
    pi = cell_i.to_polytope() if isinstance(cell_i, (Parallelotope, HyperRectangle)) else cell_i
    pj = cell_j.to_polytope() if isinstance(cell_j, (Parallelotope, HyperRectangle)) else cell_j
    qbar = minkowski_sum(post_image(pi, consts.A1), post_image(pj, consts.A2))
    W = consts.whiten_half.T
    domain = post_image(qbar, W)
    img = X.vertices() @ W.T
    rect = HyperRectangle(img.min(axis=0), img.max(axis=0))
    if domain.dim > 2:
        bb = domain.bounding_box()
        domain = Parallelotope(bb.lower, np.diag(bb.extent))
    _, val = max_f_over_polytope(rect, domain)
    return float(min(max(val, 0.0), 1.0))


# ---------------------------------------------------------------------------
# continuous-safety abstraction


@dataclass
class CtHybridSystem:
    modes: list  # (name, CtModeDynamics)
    X: HyperRectangle
    regions: list
    cov_w: np.ndarray | None = None

    @property
    def mode_names(self):
        return [n for n, _ in self.modes]

    @property
    def dim(self):
        return self.modes[0][1].dim


def sampled_system(H_ct):
    """Discrete-time hybrid system obtained by exact sampling of each mode."""
    modes = [(name, sample_dynamics(ct, H_ct.cov_w)) for name, ct in H_ct.modes]
    return HybridSystem(modes=modes, X=H_ct.X, regions=H_ct.regions)


def _diag_fast_path(consts, ct):
    W = consts.whiten_half.T
    return (
        np.allclose(consts.A1, np.diag(np.diag(consts.A1)), atol=1e-12)
        and np.allclose(consts.A2, np.diag(np.diag(consts.A2)), atol=1e-12)
        and np.allclose(W, np.diag(np.diag(W)), atol=1e-12)
    )


def ct_safety_imdp(H_ct, dx, adaptive=None, prune=1e-12, threads=None):
    """Abstraction of a continuous-time model with inter-sample safety.

    Builds the sampled abstraction, then scales every transition bracket by
    the bridge-safety factors: lower bounds shrink by tc_lower, upper bounds
    by tc_upper, and the sink's upper bound widens to keep rows feasible.
    """
    H = sampled_system(H_ct)
    grids = discretize(H, dx, adaptive=adaptive)
    imdp = build_imdp(H, grids, prune_threshold=prune, threads=threads)
    consts = {name: bridge_constants(ct, H_ct.X, H_ct.cov_w) for name, ct in H_ct.modes}

    # per-state vertex boxes and margins in original coordinates
    n = len(imdp.states)
    verts = [s.cell.vertices() for s in imdp.states]
    box_lo = np.array([v.min(axis=0) for v in verts])
    box_hi = np.array([v.max(axis=0) for v in verts])
    margins = np.array([margin_1norm(v, H_ct.X) for v in verts])
    m = H_ct.dim

    for si in range(n):
        for mode in imdp.mode_names:
            cst = consts[mode]
            ct = dict(H_ct.modes)[mode]
            row = imdp.rows[si][mode]
            sink_pos = np.nonzero(row.targets == imdp.sink)[0]
            cell_mask = row.targets != imdp.sink
            tgt = row.targets[cell_mask]
            lo = row.lo[cell_mask]
            hi = row.hi[cell_mask]

            eps_star = np.maximum(margins[si], margins[tgt])
            if cst.zero_travel:
                L = np.zeros((len(tgt), m))
            else:
                L = np.maximum(
                    box_hi[si][None, :] - box_lo[tgt], box_hi[tgt] - box_lo[si][None, :]
                )
                L = np.maximum(L, 0.0)
            eta = eps_star[:, None] / m - (L + cst.dudley[None, :])
            ok = np.all(eta > 0, axis=1)
            tail = 2.0 * np.sum(
                np.exp(-np.square(np.maximum(eta, 0.0)) / (2.0 * cst.xi[None, :])), axis=1
            )
            tlo = np.where(ok, np.maximum(0.0, 1.0 - tail), 0.0)

            if _diag_fast_path(cst, ct):
                tup = _tc_upper_diag(si, tgt, box_lo, box_hi, cst, H_ct.X)
            else:
                tup = np.array(
                    [tc_upper(imdp.states[si].cell, imdp.states[t].cell, cst, H_ct.X) for t in tgt]
                )

            new_lo = lo * tlo
            new_hi = np.minimum(hi * tup, 1.0)
            new_lo = np.minimum(new_lo, new_hi)

            sink_lo = row.lo[sink_pos][0] if len(sink_pos) else 0.0
            sink_hi = max(
                row.hi[sink_pos][0] if len(sink_pos) else 0.0,
                min(1.0, 1.0 - float(new_lo.sum())),
            )
            targets = np.concatenate([tgt, [imdp.sink]])
            imdp.rows[si][mode] = type(row)(
                targets,
                np.concatenate([new_lo, [min(sink_lo, sink_hi)]]),
                np.concatenate([new_hi, [sink_hi]]),
            )
    imdp.meta["continuous"] = True
    imdp.meta["dt"] = H_ct.modes[0][1].dt
    return imdp


def _tc_upper_diag(si, tgt, box_lo, box_hi, cst, X):
    """Vectorised tc_upper when A1, A2 and the whitening are all diagonal."""
    a1 = np.diag(cst.A1)
    a2 = np.diag(cst.A2)
    w = np.diag(cst.whiten_half.T)
    lo_i, hi_i = box_lo[si], box_hi[si]
    lo1 = np.minimum(a1 * lo_i, a1 * hi_i)
    hi1 = np.maximum(a1 * lo_i, a1 * hi_i)
    lo2 = np.minimum(a2 * box_lo[tgt], a2 * box_hi[tgt])
    hi2 = np.maximum(a2 * box_lo[tgt], a2 * box_hi[tgt])
    dlo = (lo1[None, :] + lo2) * w[None, :]
    dhi = (hi1[None, :] + hi2) * w[None, :]
    dlo, dhi = np.minimum(dlo, dhi), np.maximum(dlo, dhi)
    rect_lo = np.minimum(w * X.lower, w * X.upper)
    rect_hi = np.maximum(w * X.lower, w * X.upper)
    c = 0.5 * (rect_lo + rect_hi)
    y = np.clip(c[None, :], dlo, dhi)
    from .kernel import gauss_mass

    vals = gauss_mass(y - rect_hi[None, :], y - rect_lo[None, :])
    return np.clip(np.prod(vals, axis=1), 0.0, 1.0)
