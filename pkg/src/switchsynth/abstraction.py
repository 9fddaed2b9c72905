"""Finite interval-MDP abstraction of a hybrid system.

Each mode gets its own grid, laid in the coordinates where that mode's
one-step noise is white, so every grid cell's whitened image is an
axis-aligned rectangle and the transition kernel into it factorises into the
erf product.  Rows of the abstraction then carry exact lower/upper
probability brackets per target cell plus an absorbing sink state collecting
all mass that leaves the safe set.

Grid steps are chosen per whitened axis as dx / sqrt(eigenvalue), so cells
measure about `dx` per side back in original coordinates.

Soundness policy for grids that do not tile the safe set exactly (rotating
whitenings): cells partially outside the safe set are kept but their lower
transition bound is zeroed, so the adversary may always re-route their
outside portion to the sink; the sink's own bracket is computed from a
covering box (upper side) and from fully-interior cells only (lower side).
Both fallbacks err in the conservative direction and are counted in the
build metadata.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    HyperRectangle,
    Parallelotope,
    Polytope,
    contains,
    intersects,
    intersects_interior,
    uniform_grid,
    volume,
)
from .kernel import (
    PROB_FLOOR,
    ActionKernel,
    ModeDynamics,
    _domain_edges,
    gauss_mass,
    make_action,
    max_f_over_polytope,
)
from .logic import complement_atom

DEFAULT_PRUNE = 1e-12


class BuildError(RuntimeError):
    pass


class EmptyGrid(ValueError):
    pass


@dataclass
class HybridSystem:
    """Finite mode set with linear-Gaussian per-mode dynamics.

    `regions` are labelled subsets of the safe rectangle X used as atomic
    propositions; labels must be unique and the regions must lie inside X.
    """

    modes: list  # (name, ModeDynamics) pairs
    X: HyperRectangle
    regions: list = field(default_factory=list)  # (label, HyperRectangle|Polytope)

    def __post_init__(self):
        if not self.modes:
            raise ValueError("need at least one mode")
        names = [n for n, _ in self.modes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate mode names")
        labels = [lab for lab, _ in self.regions]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate region labels")
        for lab, reg in self.regions:
            if not contains(self.X, _as_geometry(reg), tol=1e-7):
                raise ValueError(f"region {lab!r} is not inside the safe set")

    @property
    def mode_names(self):
        return [n for n, _ in self.modes]

    @property
    def dim(self):
        return self.modes[0][1].dim

    def dynamics(self, name):
        for n, d in self.modes:
            if n == name:
                return d
        raise KeyError(name)


def _as_geometry(reg):
    return reg


@dataclass
class ModeGrid:
    """Whitened-frame grid of one mode."""

    action: ActionKernel
    rects: list  # whitened-frame HyperRectangle per cell
    cells: list  # original-space Parallelotope per cell
    inside: np.ndarray  # cell fully contained in X
    hull: HyperRectangle  # bounding box of the whitened image of X
    tiles_exactly: bool
    steps: np.ndarray
    uniform_edges: list | None = None  # per-axis edges when the grid is uniform
    flat_map: np.ndarray | None = None  # full-grid flat index -> kept cell (-1)

    @property
    def n_cells(self):
        return len(self.rects)

    def rect_arrays(self):
        lo = np.array([r.lower for r in self.rects])
        hi = np.array([r.upper for r in self.rects])
        return lo, hi

    def locate(self, x):
        """Index of the cell containing x, ties resolved to the lowest
        index; -1 when x is outside every cell."""
        y = self.action.whitening.T @ np.asarray(x, dtype=float)
        if self.uniform_edges is not None:
            idx = []
            dims = []
            for e in self.uniform_edges:
                if y[len(idx)] < e[0] - 1e-12 or y[len(idx)] > e[-1] + 1e-12:
                    return -1
                j = int(np.searchsorted(e, y[len(idx)], side="left")) - 1
                j = min(max(j, 0), len(e) - 2)
                idx.append(j)
                dims.append(len(e) - 1)
            flat = 0
            for j, n in zip(idx, dims):
                flat = flat * n + j
            if self.flat_map is not None:
                return int(self.flat_map[flat])
            return flat
        for k, r in enumerate(self.rects):
            if np.all(y >= r.lower - 1e-12) and np.all(y <= r.upper + 1e-12):
                return k
        return -1


def _axis_aligned_map(M, tol=1e-12):
    """True when M sends coordinate axes to coordinate axes."""
    scale = max(np.abs(M).max(), 1e-30)
    nonzero = np.abs(M) > tol * scale
    return bool(np.all(nonzero.sum(axis=0) <= 1) and np.all(nonzero.sum(axis=1) <= 1))


def _whitened_bbox(X, T):
    img = X.vertices() @ T.T
    return HyperRectangle(img.min(axis=0), img.max(axis=0))


def _cell_from_rect(rect, Tinv):
    return Parallelotope(Tinv @ rect.lower, Tinv @ np.diag(rect.extent))


def discretize(H, dx, adaptive=None):
    """Per-mode whitened grids over the safe set.

    `adaptive`, when given, is (dx_max, dx_min, refine_regions): the grid
    starts at dx_max and cells that are only partially safe (or that
    straddle a labelled region, when the flag is set) are split dyadically
    until their original-space side drops to dx_min.
    """
    if adaptive is not None:
        dx_max, dx_min, refine_regions = adaptive
        if dx_min > dx_max:
            raise ValueError("adaptive needs dx_min <= dx_max")
    else:
        dx_max = dx
    if dx_max <= 0:
        raise ValueError("dx must be positive")

    grids = {}
    for name, dyn in H.modes:
        act = make_action(name, dyn)
        T = act.whitening.T
        Tinv = act.whitening.inverse
        hull = _whitened_bbox(H.X, T)
        exact = _axis_aligned_map(T)
        steps = dx_max / np.sqrt(act.whitening.eigenvalues)
        rects = uniform_grid(hull, steps)
        if not rects:
            raise EmptyGrid(f"mode {name}: empty grid")
        edges = None
        flat_map = None
        if exact and adaptive is None:
            cells = [_cell_from_rect(r, Tinv) for r in rects]
            inside = np.ones(len(rects), dtype=bool)
            edges = _edge_arrays(hull, steps)
        else:
            kept = _filter_cells(H, rects, Tinv, exact)
            rects, cells, inside, kept_flat = kept
            if adaptive is not None:
                rects, cells, inside = _refine_cells(
                    H, act, rects, cells, inside, dx_min, refine_regions
                )
            else:
                # uniform filtered grid: O(1) lookup via a flat-index map
                edges = _edge_arrays(hull, steps)
                total = int(np.prod([len(e) - 1 for e in edges]))
                flat_map = np.full(total, -1, dtype=np.int64)
                flat_map[kept_flat] = np.arange(len(rects))
            if len(rects) == 0:
                raise EmptyGrid(f"mode {name}: no cell intersects the safe set")
        grids[name] = ModeGrid(
            action=act,
            rects=rects,
            cells=cells,
            inside=inside,
            hull=hull,
            tiles_exactly=exact,
            steps=steps,
            uniform_edges=edges,
            flat_map=flat_map,
        )
    return grids


def _edge_arrays(hull, steps):
    edges = []
    for lo, hi_, s in zip(hull.lower, hull.upper, steps):
        n = max(int(np.ceil((hi_ - lo) / s - 1e-12)), 1)
        e = lo + s * np.arange(n + 1)
        e[-1] = hi_
        edges.append(e)
    return edges


def _filter_cells(H, rects, Tinv, exact):
    kept_r, kept_c, inside, kept_flat = [], [], [], []
    for flat, r in enumerate(rects):
        cell = _cell_from_rect(r, Tinv)
        if exact:
            kept_r.append(r)
            kept_c.append(cell)
            inside.append(True)
            kept_flat.append(flat)
            continue
        box = HyperRectangle(cell.vertices().min(axis=0), cell.vertices().max(axis=0))
        if np.any(box.lower > H.X.upper + 1e-12) or np.any(box.upper < H.X.lower - 1e-12):
            continue
        if contains(H.X, cell):
            kept_r.append(r)
            kept_c.append(cell)
            inside.append(True)
            kept_flat.append(flat)
        elif intersects(H.X, cell.to_polytope()):
            kept_r.append(r)
            kept_c.append(cell)
            inside.append(False)
            kept_flat.append(flat)
    return kept_r, kept_c, np.array(inside, dtype=bool), np.array(kept_flat, dtype=np.int64)


def _refine_cells(H, act, rects, cells, inside, dx_min, refine_regions):
    Tinv = act.whitening.inverse
    sqrt_lam = np.sqrt(act.whitening.eigenvalues)

    def needs_split(rect, cell, is_inside):
        side = float(np.max(rect.extent * sqrt_lam))
        if side <= dx_min * (1 + 1e-9):
            return False
        if not is_inside:
            return True
        if refine_regions:
            poly = cell.to_polytope()
            for _, reg in H.regions:
                if intersects_interior(_region_hrep(reg), poly) and not contains(reg, cell):
                    return True
        return False

    queue = list(zip(rects, cells, inside))
    done = []
    while queue:
        rect, cell, ins = queue.pop(0)
        if not needs_split(rect, cell, ins):
            done.append((rect, cell, ins))
            continue
        for child in uniform_grid(rect, (rect.upper - rect.lower) / 2.0):
            ccell = _cell_from_rect(child, Tinv)
            if contains(H.X, ccell):
                queue.append((child, ccell, True))
            elif intersects(H.X, ccell.to_polytope()):
                queue.append((child, ccell, False))
    if not done:
        return [], [], np.zeros(0, dtype=bool)
    rects, cells, inside = zip(*done)
    return list(rects), list(cells), np.array(inside, dtype=bool)


def _region_hrep(reg):
    if isinstance(reg, HyperRectangle):
        return reg
    reg.ensure_halfspaces()
    return reg


# ---------------------------------------------------------------------------
# IMDP container


@dataclass
class ImdpState:
    mode: str
    cell: Parallelotope
    whitened: HyperRectangle
    inside: bool


@dataclass
class SparseRow:
    targets: np.ndarray  # ascending state indices; sink last when present
    lo: np.ndarray
    hi: np.ndarray

    def sums(self):
        return float(self.lo.sum()), float(self.hi.sum())


@dataclass
class Imdp:
    states: list
    mode_names: list
    mode_offsets: dict  # mode -> first state index of its cells
    rows: list  # rows[state][action_name] -> SparseRow, sink included
    labels_under: list
    labels_over: list
    grids: dict
    meta: dict = field(default_factory=dict)

    @property
    def sink(self):
        return len(self.states)

    @property
    def n_states(self):
        return len(self.states) + 1

    def state_index(self, mode, cell_idx):
        return self.mode_offsets[mode] + cell_idx

    def volumes(self):
        return np.array([volume(s.cell) for s in self.states])


def label_states(H, grids):
    """Under- and over-approximating label sets per state (sink last, empty).

    A region atom is under-assigned when the cell sits inside the region and
    its complement atom when the overlap with the region has zero volume;
    the over-approximation assigns the atom on any positive-volume contact
    and the complement unless the cell is swallowed by the region.  Shared
    faces are measure zero for the kernel, so they count as "no contact".
    """
    under, over = [], []
    for mode in H.mode_names:
        grid = grids[mode]
        for cell, ins in zip(grid.cells, grid.inside):
            u, o = set(), set()
            poly = None
            for lab, reg in H.regions:
                creg = _region_hrep(reg)
                inside_reg = contains(creg, cell)
                if poly is None:
                    poly = cell.to_polytope()
                touches = inside_reg or intersects_interior(creg, poly)
                if inside_reg:
                    u.add(lab)
                if touches:
                    o.add(lab)
                if not touches:
                    u.add(complement_atom(lab))
                if not inside_reg:
                    o.add(complement_atom(lab))
            under.append(frozenset(u))
            over.append(frozenset(o))
    under.append(frozenset())
    over.append(frozenset())
    return under, over


def _batch_products(points, VL, VU):
    """erf products of N(point, I) over many rectangles: (P, N) array."""
    pts = np.atleast_2d(points)
    vals = gauss_mass(pts[:, None, :] - VU[None, :, :], pts[:, None, :] - VL[None, :, :])
    return np.prod(vals, axis=2)


def _golden_max_edges(A, B, VL, VU, iters=48):
    """Max of the erf product along segment A->B, per target rectangle."""
    invphi = 0.6180339887498949
    K = VL.shape[0]
    d = B - A

    def vals(t):
        y = A[None, :] + t[:, None] * d[None, :]
        v = gauss_mass(y - VU, y - VL)
        return np.prod(v, axis=1)

    a = np.zeros(K)
    b = np.ones(K)
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc = vals(c)
    fe = vals(e)
    for _ in range(iters):
        take = fc >= fe
        b = np.where(take, e, b)
        a = np.where(take, a, c)
        c = b - invphi * (b - a)
        e = a + invphi * (b - a)
        fc = vals(c)
        fe = vals(e)
    return vals(0.5 * (a + b))


def _row_bounds(src_cell, act, tgt_grid, prune, meta):
    """Interval row from one source cell under one action (vectorised)."""
    M = act.M
    domain = Parallelotope(M @ src_cell.base, M @ src_cell.generators)
    dverts = domain.vertices()
    VL, VU = tgt_grid._VL, tgt_grid._VU
    N, m = VL.shape

    per_vertex = _batch_products(dverts, VL, VU)  # (2^m, N)
    lo = per_vertex.min(axis=0)
    vertex_max = per_vertex.max(axis=0)

    centers = 0.5 * (VL + VU)
    G = domain.generators
    off = G - np.diag(np.diag(G))
    axis_aligned = np.abs(off).max() <= 1e-12 * max(np.abs(G).max(), 1e-30)

    if axis_aligned:
        dlo = np.minimum(domain.base, domain.base + np.diag(G))
        dhi = np.maximum(domain.base, domain.base + np.diag(G))
        y = np.clip(centers, dlo[None, :], dhi[None, :])
        hi = np.prod(gauss_mass(y - VU, y - VL), axis=1)
        dbox = HyperRectangle(dlo, dhi)
    else:
        bb_lo = dverts.min(axis=0)
        bb_hi = dverts.max(axis=0)
        yb = np.clip(centers, bb_lo[None, :], bb_hi[None, :])
        ub = np.prod(gauss_mass(yb - VU, yb - VL), axis=1)  # sound over-estimate
        hi = np.minimum(vertex_max, ub)
        try:
            U = np.linalg.solve(G, (centers - domain.base).T).T
            center_in = np.all((U >= -1e-10) & (U <= 1 + 1e-10), axis=1)
        except np.linalg.LinAlgError:
            center_in = np.zeros(N, dtype=bool)
        hi[center_in] = np.prod(
            gauss_mass(centers[center_in] - VU[center_in], centers[center_in] - VL[center_in]),
            axis=1,
        )
        work = ~center_in & (ub >= prune)
        if np.any(work):
            if m <= 2:
                idx = np.nonzero(work)[0]
                best = vertex_max[idx].copy()
                for A, B in _domain_edges(domain):
                    best = np.maximum(best, _golden_max_edges(A, B, VL[idx], VU[idx]))
                hi[idx] = best
            else:
                idx = np.nonzero(work)[0]
                for j in idx:
                    rect = HyperRectangle(VL[j], VU[j])
                    _, hij = max_f_over_polytope(rect, domain)
                    hi[j] = hij
        hi[~center_in & (ub < prune)] = 0.0
        dbox = None

    # sink bracket: complement of the stay probability
    if tgt_grid.tiles_exactly:
        hull = tgt_grid.hull
        if axis_aligned:
            yh = np.clip(hull.center, dbox.lower, dbox.upper)
            umax = float(np.prod(gauss_mass(yh - hull.upper, yh - hull.lower)))
        else:
            _, umax = max_f_over_polytope(hull, domain)
        umin = float(np.min(np.prod(gauss_mass(dverts - hull.upper[None, :], dverts - hull.lower[None, :]), axis=1)))
    else:
        hull = tgt_grid.hull
        _, umax = max_f_over_polytope(hull, domain)
        umin = float(lo[tgt_grid.inside].sum())
        umin = min(umin, umax)
        meta["sink_fallbacks"] = meta.get("sink_fallbacks", 0) + 1

    sink_lo = min(max(1.0 - umax, 0.0), 1.0)
    sink_hi = min(max(1.0 - umin, sink_lo), 1.0)

    # cells straddling the safe-set boundary may not hold their mass
    lo = np.where(tgt_grid.inside, lo, 0.0)
    if not np.all(tgt_grid.inside):
        meta["boundary_lo_zeroed"] = meta.get("boundary_lo_zeroed", 0) + int(np.sum(~tgt_grid.inside))

    lo = np.where(lo < PROB_FLOOR, 0.0, lo)
    hi = np.where(hi < PROB_FLOOR, 0.0, hi)
    lo = np.minimum(lo, hi)

    keep = hi >= prune
    dropped = float(hi[~keep].sum())
    if dropped > 0:
        sink_hi = min(1.0, sink_hi + dropped)
        meta["pruned_entries"] = meta.get("pruned_entries", 0) + int(np.sum(~keep))
    if sink_lo < PROB_FLOOR:
        sink_lo = 0.0
    return np.nonzero(keep)[0], lo[keep], hi[keep], sink_lo, sink_hi


def build_imdp(H, grids, prune_threshold=DEFAULT_PRUNE, threads=None):
    """Assemble the full interval abstraction from per-mode grids.

    Every (state, action) row brackets the kernel mass into each cell of the
    action's grid plus the sink; rows violating the interval-MDP feasibility
    condition (sum of lower bounds <= 1 <= sum of upper bounds) raise
    BuildError with the offending row.
    """
    t0 = time.time()
    states = []
    mode_offsets = {}
    for mode in H.mode_names:
        grid = grids[mode]
        mode_offsets[mode] = len(states)
        for rect, cell, ins in zip(grid.rects, grid.cells, grid.inside):
            states.append(ImdpState(mode=mode, cell=cell, whitened=rect, inside=bool(ins)))
    sink = len(states)
    n = sink + 1

    for mode in H.mode_names:
        grid = grids[mode]
        VL, VU = grid.rect_arrays()
        grid._VL, grid._VU = VL, VU

    meta = {"prune_threshold": prune_threshold}

    def build_state(si):
        state = states[si]
        out = {}
        local_meta = {}
        for mode in H.mode_names:
            grid = grids[mode]
            tgt_idx, lo, hi, sink_lo, sink_hi = _row_bounds(
                state.cell, grid.action, grid, prune_threshold, local_meta
            )
            targets = np.concatenate([tgt_idx + mode_offsets[mode], [sink]])
            lo_full = np.concatenate([lo, [sink_lo]])
            hi_full = np.concatenate([hi, [sink_hi]])
            slo, shi = lo_full.sum(), hi_full.sum()
            if slo > 1 + 1e-9 or shi < 1 - 1e-9:
                raise BuildError(
                    f"infeasible row: state {si} ({state.mode}), action {mode}: "
                    f"sum lo={slo:.12f}, sum hi={shi:.12f}"
                )
            out[mode] = SparseRow(targets, lo_full, hi_full)
        return out, local_meta

    nthreads = threads or int(os.environ.get("SWITCHSYNTH_THREADS", "1"))
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            results = list(pool.map(build_state, range(len(states))))
    else:
        results = [build_state(si) for si in range(len(states))]

    rows = []
    for out, local_meta in results:
        rows.append(out)
        for k, v in local_meta.items():
            meta[k] = meta.get(k, 0) + v

    sink_row = {
        mode: SparseRow(np.array([sink]), np.array([1.0]), np.array([1.0]))
        for mode in H.mode_names
    }
    rows.append(sink_row)

    labels_under, labels_over = label_states(H, grids)
    meta["build_seconds"] = time.time() - t0
    return Imdp(
        states=states,
        mode_names=H.mode_names,
        mode_offsets=mode_offsets,
        rows=rows,
        labels_under=labels_under,
        labels_over=labels_over,
        grids=grids,
        meta=meta,
    )


@dataclass
class ValidationReport:
    violations: list
    lo_slack: tuple  # stats of 1 - sum(lo): (min, mean, max)
    hi_slack: tuple  # stats of sum(hi) - 1
    fallback_counts: dict

    @property
    def ok(self):
        return not self.violations


def validate(imdp):
    """Check the interval-MDP invariants; violations are reported, not raised."""
    violations = []
    lo_slacks, hi_slacks = [], []
    sink = imdp.sink
    for si in range(imdp.n_states):
        for mode, row in imdp.rows[si].items():
            if np.any(row.lo > row.hi + 1e-12):
                violations.append(f"state {si} action {mode}: lo > hi")
            if np.any(row.lo < -1e-12) or np.any(row.hi > 1 + 1e-12):
                violations.append(f"state {si} action {mode}: interval outside [0,1]")
            slo, shi = row.sums()
            lo_slacks.append(1 - slo)
            hi_slacks.append(shi - 1)
            if slo > 1 + 1e-9:
                violations.append(f"state {si} action {mode}: sum lo = {slo} > 1")
            if shi < 1 - 1e-9:
                violations.append(f"state {si} action {mode}: sum hi = {shi} < 1")
            if np.any(np.diff(row.targets) <= 0):
                violations.append(f"state {si} action {mode}: targets not sorted")
        if si == sink:
            for mode, row in imdp.rows[si].items():
                absorbing = (
                    len(row.targets) == 1
                    and row.targets[0] == sink
                    and row.lo[0] == 1.0
                    and row.hi[0] == 1.0
                )
                if not absorbing:
                    violations.append(f"sink row under action {mode} is not absorbing")
    for si in range(imdp.n_states):
        if not imdp.labels_under[si] <= imdp.labels_over[si]:
            violations.append(f"state {si}: under-labels not within over-labels")
    if imdp.labels_under[sink] or imdp.labels_over[sink]:
        violations.append("sink carries labels")
    stats = lambda xs: (float(np.min(xs)), float(np.mean(xs)), float(np.max(xs))) if xs else (0.0, 0.0, 0.0)
    fallbacks = {
        k: imdp.meta.get(k, 0)
        for k in ("sink_fallbacks", "boundary_lo_zeroed", "pruned_entries")
    }
    return ValidationReport(violations, stats(lo_slacks), stats(hi_slacks), fallbacks)
