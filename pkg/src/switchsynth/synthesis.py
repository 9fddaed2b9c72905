"""Robust strategy synthesis over the interval abstraction.

The abstraction is composed synchronously with a specification automaton;
value iteration then treats interval uncertainty as a second, adversarial
player whose inner optimisation is solved exactly by an ordering of the
target states (assign every target its lower bound, then pour the residual
mass greedily along the value ordering).  Lower bounds use the minimising
adversary, upper bounds the maximising one under the synthesised strategy.

Product states whose automaton component is absorbing are pinned (1 when
accepting, 0 otherwise) and carry no rows.  Bounded formulas run exactly
`horizon` synchronous sweeps from the accepting indicator; unbounded ones
iterate to a 1e-6 sup-norm fixpoint.
"""

from dataclasses import dataclass

import numpy as np

from .kernel import ProbInterval


class InfeasibleRow(ValueError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, residual, sweeps):
        super().__init__(f"value iteration residual {residual:.3e} after {sweeps} sweeps")
        self.residual = residual
        self.sweeps = sweeps


VI_TOL = 1e-6
VI_MAX_SWEEPS = 10**5


# ---------------------------------------------------------------------------
# product construction


@dataclass
class ProductImdp:
    imdp: object
    dfa: object
    labeling: str  # 'under' | 'over'
    pstates: list  # (imdp state index, dfa state) pairs
    index: dict  # (q, z) -> product index
    accepting: np.ndarray  # bool per product state
    pinned: np.ndarray  # bool per product state (absorbing dfa component)
    rows: list  # per live product state: dict action -> (tgt idx, lo, hi)
    horizon: int | None

    @property
    def n(self):
        return len(self.pstates)

    def seed_of(self, q):
        """Product state entered when a path starts in IMDP state q."""
        labels = self._labels()[q]
        z = self.dfa.step(self.dfa.initial, labels)
        return self.index[(q, z)]

    def _labels(self):
        return self.imdp.labels_under if self.labeling == "under" else self.imdp.labels_over


def product(imdp, dfa, labeling_choice="under"):
    """Synchronous product; automaton steps on the label of the target state.

    States are built by forward reachability from the seeds (q, step(z0,
    L(q))) for every abstraction state q, so projecting results back to the
    abstraction is always possible.
    """
    labels = imdp.labels_under if labeling_choice == "under" else imdp.labels_over
    absorbing_z = dfa.absorbing_states()

    step_cache = {}

    def dfa_step(z, q):
        key = (z, q)
        if key not in step_cache:
            step_cache[key] = dfa.step(z, labels[q])
        return step_cache[key]

    index = {}
    pstates = []
    stack = []

    def intern(q, z):
        key = (q, z)
        if key not in index:
            index[key] = len(pstates)
            pstates.append(key)
            stack.append(key)
        return index[key]

    for q in range(imdp.n_states):
        intern(q, dfa_step(dfa.initial, q))

    rows = {}
    while stack:
        q, z = stack.pop()
        pi = index[(q, z)]
        if z in absorbing_z:
            continue
        out = {}
        for action, row in imdp.rows[q].items():
            tgt = np.empty(len(row.targets), dtype=np.int64)
            for k, qn in enumerate(row.targets):
                zn = dfa_step(z, int(qn))
                tgt[k] = intern(int(qn), zn)
            out[action] = (tgt, row.lo, row.hi)
        rows[pi] = out

    accepting = np.array([dfa.is_accepting(z) for _, z in pstates], dtype=bool)
    pinned = np.array([z in absorbing_z for _, z in pstates], dtype=bool)
    row_list = [rows.get(pi) for pi in range(len(pstates))]
    return ProductImdp(
        imdp=imdp,
        dfa=dfa,
        labeling=labeling_choice,
        pstates=pstates,
        index=index,
        accepting=accepting,
        pinned=pinned,
        rows=row_list,
        horizon=dfa.horizon,
    )


# ---------------------------------------------------------------------------
# ordering-based inner optimisation


def o_extreme(values, lo, hi, sense):
    """Extreme expectation over the interval polytope of one row.

    Targets first receive their lower bounds; the remaining mass is poured
    in value order (ascending for 'min', descending for 'max') up to each
    upper bound.  The returned distribution attains the optimum of
    sum p(q') V(q') over all feasible distributions.
    """
    values = np.asarray(values, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    slo, shi = lo.sum(), hi.sum()
    if slo > 1 + 1e-12 or shi < 1 - 1e-12:
        raise InfeasibleRow(f"sum lo = {slo}, sum hi = {shi}")
    if sense == "min":
        order = np.argsort(values, kind="stable")
    elif sense == "max":
        order = np.argsort(-values, kind="stable")
    else:
        raise ValueError(f"sense must be min or max, got {sense!r}")
    cap = (hi - lo)[order]
    cum = np.cumsum(cap)
    residual = 1.0 - slo
    add = np.clip(residual - (cum - cap), 0.0, cap)
    dist = lo.copy()
    dist[order] += add
    return dist, float(dist @ values)


def _o_value(values_at_targets, lo, hi, sense):
    """Value-only fast path of o_extreme (row assumed feasible)."""
    if sense == "min":
        order = np.argsort(values_at_targets, kind="stable")
    else:
        order = np.argsort(-values_at_targets, kind="stable")
    cap = (hi - lo)[order]
    cum = np.cumsum(cap)
    add = np.clip((1.0 - lo.sum()) - (cum - cap), 0.0, cap)
    return float(lo @ values_at_targets + add @ values_at_targets[order])


# ---------------------------------------------------------------------------
# robust value iteration


@dataclass
class Strategy:
    """Memoryless product strategy: action name per live product state."""

    product: ProductImdp
    actions: list  # action name or None per product state

    def action_at(self, q, z, default=None):
        pi = self.product.index.get((q, z))
        if pi is None or self.actions[pi] is None:
            return default
        return self.actions[pi]


@dataclass
class ValueBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if np.any(self.lower > self.upper + 1e-9):
            raise ValueError("lower bound exceeds upper bound")


def _sweep(prod, V, action_sense, adversary_sense, fixed_actions=None):
    """One synchronous (Jacobi) backup; returns (V_new, greedy actions)."""
    V_new = V.copy()
    greedy = [None] * prod.n
    action_names = prod.imdp.mode_names
    for pi in range(prod.n):
        if prod.pinned[pi]:
            continue
        rows = prod.rows[pi]
        if rows is None:
            continue
        if fixed_actions is not None:
            name = fixed_actions[pi]
            if name is None:
                continue
            tgt, lo, hi = rows[name]
            V_new[pi] = _o_value(V[tgt], lo, hi, adversary_sense)
            greedy[pi] = name
            continue
        best_val = None
        best_name = None
        for name in action_names:
            tgt, lo, hi = rows[name]
            val = _o_value(V[tgt], lo, hi, adversary_sense)
            if best_val is None:
                best_val, best_name = val, name
            elif action_sense == "max" and val > best_val + 0.0:
                best_val, best_name = val, name
            elif action_sense == "min" and val < best_val - 0.0:
                best_val, best_name = val, name
        V_new[pi] = best_val
        greedy[pi] = best_name
    return V_new, greedy


def robust_values(prod, action_sense, adversary_sense, fixed_actions=None,
                  horizon=None, tol=VI_TOL, max_sweeps=VI_MAX_SWEEPS):
    """Robust dynamic programming over the product.

    Bounded case (horizon given): exactly `horizon` sweeps from the
    accepting indicator.  Unbounded case: iterate until the sup-norm change
    drops below `tol`, with accepting states pinned at 1 — acceptance is a
    good prefix and locks, whether or not the supplied automaton made its
    accepting states absorbing.
    """
    if horizon is None:
        horizon = prod.horizon
    V = prod.accepting.astype(float)
    greedy = [None] * prod.n
    if horizon is not None:
        for _ in range(int(horizon)):
            V, greedy = _sweep(prod, V, action_sense, adversary_sense, fixed_actions)
        return V, greedy
    pinned_acc = prod.accepting & ~prod.pinned
    for sweep in range(max_sweeps):
        V_new, greedy = _sweep(prod, V, action_sense, adversary_sense, fixed_actions)
        V_new[pinned_acc] = 1.0
        residual = float(np.max(np.abs(V_new - V))) if prod.n else 0.0
        V = V_new
        if residual < tol:
            return V, greedy
    raise NonConvergence(residual, max_sweeps)


def synthesize_lower(prod):
    """Optimal robust lower bounds and the maximising memoryless strategy."""
    V, greedy = robust_values(prod, action_sense="max", adversary_sense="min")
    return Strategy(prod, greedy), V


def upper_under_strategy(prod, strategy):
    """Upper bounds with the strategy fixed and the adversary maximising."""
    fixed = [None] * prod.n
    for pi, (q, z) in enumerate(prod.pstates):
        if prod.pinned[pi] or prod.rows[pi] is None:
            continue
        name = strategy.action_at(q, z, default=prod.imdp.mode_names[0])
        fixed[pi] = name
    V, _ = robust_values(prod, action_sense="max", adversary_sense="max", fixed_actions=fixed)
    return V


def project_bounds(lower_vals, upper_vals, prod_lower, prod_upper, strategy=None):
    """Per-abstraction-state probability intervals read at the seeds.

    `prod_upper` may equal `prod_lower`; with differing labelings each
    projection uses its own product's seed states.
    """
    imdp = prod_lower.imdp
    out = []
    actions = []
    for q in range(imdp.n_states):
        lo = float(lower_vals[prod_lower.seed_of(q)])
        hi = float(upper_vals[prod_upper.seed_of(q)])
        hi = max(hi, lo)
        out.append(ProbInterval(min(lo, 1.0), min(hi, 1.0)))
        if strategy is not None:
            qz = prod_lower.pstates[prod_lower.seed_of(q)]
            actions.append(strategy.action_at(qz[0], qz[1], default=imdp.mode_names[0]))
    if strategy is not None:
        return out, actions
    return out


def verify(prod_under, prod_over, mode="pessimistic"):
    """Verification bounds without a controllable mode choice.

    The lower bound minimises over both the action and the adversary on the
    under-labelled product.  The upper bound maximises over the adversary on
    the over-labelled product, with the action either minimised
    ('pessimistic') or maximised ('optimistic'); both pairings are exposed
    since either may be wanted depending on whether switching is adversarial
    or favourable.  Returns (per-state intervals, lower values, upper values).
    """
    lower, _ = robust_values(prod_under, action_sense="min", adversary_sense="min")
    action_sense = "min" if mode == "pessimistic" else "max"
    upper, _ = robust_values(prod_over, action_sense=action_sense, adversary_sense="max")
    intervals = project_bounds(lower, upper, prod_under, prod_over)
    return intervals, lower, upper


def error_metrics(intervals, volumes):
    """(eps_max, eps_med, eps_ave): max, median and volume-weighted mean of
    the per-state interval widths over the non-sink states."""
    eps = np.array([iv.hi - iv.lo for iv in intervals])
    vols = np.asarray(volumes, dtype=float)
    if eps.size == 0:
        return 0.0, 0.0, 0.0
    eps_max = float(eps.max())
    eps_med = float(np.median(eps))
    eps_ave = float((eps * vols).sum() / vols.sum()) if vols.sum() > 0 else 0.0
    return eps_max, eps_med, eps_ave


# ---------------------------------------------------------------------------
# strategy refinement and simulation


@dataclass
class RefinedStrategy:
    """Switching policy on continuous states induced by the product strategy.

    Mode-grid cell lookup resolves shared boundaries to the lowest cell
    index; states outside the safe set fall back to the first mode.
    """

    imdp: object
    dfa: object
    strategy: Strategy

    def locate(self, mode, x):
        grid = self.imdp.grids[mode]
        ci = grid.locate(x)
        if ci < 0:
            return -1
        return self.imdp.state_index(mode, ci)

    def step_automaton(self, z, q):
        labels = self.imdp.labels_under[q] if q >= 0 else frozenset()
        return self.dfa.step(z, labels)

    def act(self, x, mode, z):
        """(action, advanced automaton state) for continuous state x."""
        q = self.locate(mode, x)
        if q < 0:
            return self.imdp.mode_names[0], self.step_automaton(z, -1)
        z_now = self.step_automaton(z, q)
        return self.strategy.action_at(q, z_now, default=self.imdp.mode_names[0]), z_now


@dataclass
class SimulationResult:
    path: np.ndarray
    modes: list
    trace: list
    satisfied: bool
    exited: bool
    steps: int


def simulate(H, refined, x0, mode0, horizon, seed, max_steps=500):
    """Roll one closed-loop trajectory and judge the specification on it.

    The automaton consumes the under-approximating labels of the visited
    cells, with the empty letter once the state leaves the safe set; for
    bounded specifications exactly `horizon` steps are taken, otherwise the
    run stops when the automaton absorbs (or at `max_steps`, counted as a
    failure).
    """
    rng = np.random.Generator(np.random.Philox(seed))
    dfa = refined.dfa
    absorbing = dfa.absorbing_states()
    x = np.asarray(x0, dtype=float).copy()
    mode = mode0
    z = dfa.initial
    path = [x.copy()]
    modes = [mode]
    trace = []

    q = refined.locate(mode, x)
    labels = refined.imdp.labels_under[q] if q >= 0 else frozenset()
    trace.append(set(labels))
    z = dfa.step(z, labels)
    exited = q < 0

    total = horizon if horizon is not None else max_steps
    steps = 0
    for _ in range(total):
        if horizon is None and (z in absorbing or dfa.is_accepting(z)):
            break  # resolved: absorbed, or a good prefix seen (locks)
        if exited:
            # absorbed outside the safe set: the automaton sees empty letters
            z = dfa.step(z, frozenset())
            trace.append(set())
            steps += 1
            continue
        action = refined.strategy.action_at(q, z, default=refined.imdp.mode_names[0])
        dyn = H.dynamics(action)
        w = rng.standard_normal(dyn.G.shape[1])
        Lw = np.linalg.cholesky(dyn.cov_w + 1e-18 * np.eye(dyn.cov_w.shape[0]))
        x = dyn.F @ x + dyn.G @ (Lw @ w)
        mode = action
        path.append(x.copy())
        modes.append(mode)
        q = refined.locate(mode, x)
        labels = refined.imdp.labels_under[q] if q >= 0 else frozenset()
        if q < 0:
            exited = True
            labels = frozenset()
        trace.append(set(labels))
        z = dfa.step(z, labels)
        steps += 1

    satisfied = dfa.is_accepting(z)
    return SimulationResult(
        path=np.array(path), modes=modes, trace=trace,
        satisfied=bool(satisfied), exited=exited, steps=steps,
    )


def wilson_halfwidth(p_hat, n, z=2.5758293035489004):
    """Half-width of the 99% Wilson score interval."""
    if n == 0:
        return 1.0
    denom = 1 + z * z / n
    return float(z * np.sqrt(p_hat * (1 - p_hat) / n + z * z / (4 * n * n)) / denom)


def estimate_satisfaction(H, refined, x0, mode0, n_runs, seed, horizon, max_steps=500):
    """Monte-Carlo satisfaction frequency of the refined strategy.

    All runs advance in lockstep with vectorised dynamics, cell lookup and
    automaton stepping; a single counter-based generator seeded once makes
    the whole estimate a deterministic function of `seed`.
    """
    if n_runs == 0:
        return 0.0, 1.0
    imdp, dfa, strategy = refined.imdp, refined.dfa, refined.strategy
    mode_names = imdp.mode_names
    n_modes = len(mode_names)
    n_states = imdp.n_states
    sink = imdp.sink
    n_z = dfa.n_states

    # automaton step table over (z, state) and strategy table over (state, z)
    z_next = np.empty((n_z, n_states), dtype=np.int64)
    for z in range(n_z):
        for q in range(n_states):
            labels = imdp.labels_under[q] if q != sink else frozenset()
            z_next[z, q] = dfa.step(z, labels)
    act_table = np.zeros((n_states, n_z), dtype=np.int64)
    if hasattr(strategy, "product"):
        pairs = (
            ((q, z), strategy.actions[pi]) for (q, z), pi in strategy.product.index.items()
        )
    else:  # stored strategy file: explicit (state, automaton state) choices
        pairs = strategy.choices.items()
    for (q, z), name in pairs:
        if name is not None and q < n_states:
            act_table[q, z] = mode_names.index(name)

    grids = [imdp.grids[m] for m in mode_names]
    dyn = [H.dynamics(m) for m in mode_names]
    chol = [np.linalg.cholesky(d.cov_w + 1e-18 * np.eye(d.cov_w.shape[0])) for d in dyn]
    absorbing = dfa.absorbing_states()
    # unbounded runs stop once resolved: automaton absorbed or accepting
    # (a good prefix locks satisfaction)
    stop_mask = np.array(
        [z in absorbing or dfa.is_accepting(z) for z in range(n_z)]
    )

    def locate_batch(ai, xs):
        grid = grids[ai]
        ys = xs @ grid.action.whitening.T.T
        n = len(xs)
        if grid.uniform_edges is not None:
            out = np.zeros(n, dtype=np.int64)
            good = np.ones(n, dtype=bool)
            for k, e in enumerate(grid.uniform_edges):
                y = ys[:, k]
                good &= (y >= e[0] - 1e-12) & (y <= e[-1] + 1e-12)
                j = np.searchsorted(e, y, side="left") - 1
                j = np.clip(j, 0, len(e) - 2)
                out = out * (len(e) - 1) + j
            if grid.flat_map is not None:
                out = np.where(good, grid.flat_map[np.clip(out, 0, len(grid.flat_map) - 1)], -1)
                return out
            out[~good] = -1
            return out
        VL, VU = grid.rect_arrays()
        hits = np.all((ys[:, None, :] >= VL[None] - 1e-12) & (ys[:, None, :] <= VU[None] + 1e-12), axis=2)
        any_hit = hits.any(axis=1)
        out = np.where(any_hit, hits.argmax(axis=1), -1)
        return out

    rng = np.random.Generator(np.random.Philox(seed))
    m = H.dim
    x = np.tile(np.asarray(x0, dtype=float), (n_runs, 1))
    mode_idx = np.full(n_runs, mode_names.index(mode0), dtype=np.int64)
    z = np.full(n_runs, dfa.initial, dtype=np.int64)

    q = locate_batch(mode_idx[0], x)
    q = np.where(q < 0, sink, q + imdp.mode_offsets[mode0])
    z = z_next[z, q]

    total = horizon if horizon is not None else max_steps
    for _ in range(int(total)):
        if horizon is None and stop_mask[z].all():
            break
        alive = q != sink
        if horizon is None:
            alive &= ~stop_mask[z]
        if not alive.any():
            if horizon is None:
                break
            z = z_next[z, q]  # sink letters keep driving the automaton
            continue
        a = act_table[q, z]
        a[~alive] = 0
        new_x = x.copy()
        new_q = q.copy()
        for ai in range(n_modes):
            sel = alive & (a == ai)
            if not sel.any():
                continue
            d = dyn[ai]
            w = rng.standard_normal((int(sel.sum()), d.G.shape[1]))
            new_x[sel] = x[sel] @ d.F.T + w @ chol[ai].T @ d.G.T
            loc = locate_batch(ai, new_x[sel])
            offs = imdp.mode_offsets[mode_names[ai]]
            new_q[sel] = np.where(loc < 0, sink, loc + offs)
        x = new_x
        q = np.where(alive, new_q, q)
        if horizon is None:
            z = np.where(alive, z_next[z, q], z)  # resolved runs stay put
        else:
            z = z_next[z, q]

    satisfied = np.array([dfa.is_accepting(int(zz)) for zz in z])
    p_hat = float(satisfied.mean())
    return p_hat, wilson_halfwidth(p_hat, n_runs)
