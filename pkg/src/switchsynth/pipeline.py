"""End-to-end orchestration shared by the command line, demos and tests."""

import time
from dataclasses import dataclass

import numpy as np

from .abstraction import Imdp, ImdpState, build_imdp, discretize, label_states
from .bridge import ct_safety_imdp, sampled_system
from .geometry import volume
from .kernel import ProbInterval
from .logic import (
    Dfa,
    UnsupportedFormula,
    bar_translate,
    check_fragment,
    complement_atom,
    parse_formula,
    read_dfa,
    template_dfa,
)
from .synthesis import (
    RefinedStrategy,
    Strategy,
    error_metrics,
    product,
    project_bounds,
    synthesize_lower,
    upper_under_strategy,
    verify,
)


def build_abstraction(spec, threads=None, prune=1e-12):
    """Model file contents -> interval abstraction (discrete or sampled)."""
    if spec.continuous:
        return ct_safety_imdp(
            spec.system, spec.dx, adaptive=spec.adaptive, prune=prune, threads=threads
        )
    grids = discretize(spec.system, spec.dx, adaptive=spec.adaptive)
    return build_imdp(spec.system, grids, prune_threshold=prune, threads=threads)


def light_abstraction(spec):
    """Grids and labels only (no transition rows); enough to refine and
    simulate a stored strategy."""
    system = sampled_system(spec.system) if spec.continuous else spec.system
    grids = discretize(system, spec.dx, adaptive=spec.adaptive)
    states = []
    mode_offsets = {}
    for mode in system.mode_names:
        grid = grids[mode]
        mode_offsets[mode] = len(states)
        for rect, cell, ins in zip(grid.rects, grid.cells, grid.inside):
            states.append(ImdpState(mode=mode, cell=cell, whitened=rect, inside=bool(ins)))
    labels_under, labels_over = label_states(system, grids)
    rows = [{} for _ in range(len(states) + 1)]
    return system, Imdp(
        states=states,
        mode_names=system.mode_names,
        mode_offsets=mode_offsets,
        rows=rows,
        labels_under=labels_under,
        labels_over=labels_over,
        grids=grids,
        meta={"light": True},
    )


def dfa_for_formula(formula_text, region_labels, dfa_text=None):
    """Compile a formula (or load an explicit automaton) over the barred
    atom set of the model's regions."""
    if dfa_text is not None:
        return read_dfa(dfa_text)
    f = parse_formula(formula_text)
    check_fragment(f)
    barred = bar_translate(f, region_labels)
    atoms = []
    for lab in region_labels:
        atoms.append(lab)
    for lab in region_labels:
        atoms.append(complement_atom(lab))
    return template_dfa(barred, atoms=atoms)


@dataclass
class SynthesisOutcome:
    intervals: list  # per-state ProbInterval incl. sink
    actions: list  # per-state action at the seed product state
    strategy: object
    dfa: object
    prod_under: object
    prod_over: object
    lower_values: np.ndarray
    upper_values: np.ndarray
    eps_max: float
    eps_med: float
    eps_ave: float
    wall_seconds: float


def _labelings_match(imdp):
    return all(u == o for u, o in zip(imdp.labels_under, imdp.labels_over))


def synthesize(imdp, dfa, horizon=None):
    """Strategy maximising the robust lower bound, plus certified brackets.

    The lower bound comes from the under-labelled product; the upper bound
    re-evaluates the synthesised strategy under the maximising adversary on
    the over-labelled product (which collapses to the same product whenever
    the grid respects every region).
    """
    t0 = time.time()
    if horizon is not None:
        dfa = Dfa(dfa.atoms, dfa.n_states, dfa.initial, dfa.accepting, dfa.edges, horizon=horizon)
    prod_u = product(imdp, dfa, "under")
    strategy, lower = synthesize_lower(prod_u)
    if _labelings_match(imdp):
        prod_o = prod_u
    else:
        prod_o = product(imdp, dfa, "over")
    upper = upper_under_strategy(prod_o, strategy)
    intervals, actions = project_bounds(lower, upper, prod_u, prod_o, strategy)
    vols = imdp.volumes()
    eps_max, eps_med, eps_ave = error_metrics(intervals[: len(imdp.states)], vols)
    return SynthesisOutcome(
        intervals=intervals,
        actions=actions,
        strategy=strategy,
        dfa=dfa,
        prod_under=prod_u,
        prod_over=prod_o,
        lower_values=lower,
        upper_values=upper,
        eps_max=eps_max,
        eps_med=eps_med,
        eps_ave=eps_ave,
        wall_seconds=time.time() - t0,
    )


def verification(imdp, dfa, mode="pessimistic", horizon=None):
    """Verification variant: no controllable optimism in the lower bound."""
    t0 = time.time()
    if horizon is not None:
        dfa = Dfa(dfa.atoms, dfa.n_states, dfa.initial, dfa.accepting, dfa.edges, horizon=horizon)
    prod_u = product(imdp, dfa, "under")
    prod_o = prod_u if _labelings_match(imdp) else product(imdp, dfa, "over")
    intervals, lower, upper = verify(prod_u, prod_o, mode=mode)
    vols = imdp.volumes()
    eps_max, eps_med, eps_ave = error_metrics(intervals[: len(imdp.states)], vols)
    return SynthesisOutcome(
        intervals=intervals,
        actions=[imdp.mode_names[0]] * imdp.n_states,
        strategy=None,
        dfa=dfa,
        prod_under=prod_u,
        prod_over=prod_o,
        lower_values=lower,
        upper_values=upper,
        eps_max=eps_max,
        eps_med=eps_med,
        eps_ave=eps_ave,
        wall_seconds=time.time() - t0,
    )


def refined_strategy(imdp, dfa, strategy):
    return RefinedStrategy(imdp=imdp, dfa=dfa, strategy=strategy)


def results_records(imdp, intervals, actions):
    records = []
    for i, s in enumerate(imdp.states):
        records.append(
            dict(
                state=i,
                mode=s.mode,
                cell_id=i - imdp.mode_offsets[s.mode],
                action=actions[i],
                p_lo=intervals[i].lo,
                p_hi=intervals[i].hi,
                vertices=s.cell.vertices().ravel(),
            )
        )
    return records
