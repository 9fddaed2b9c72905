"""Command-line front end.

Exit codes: 0 success, 2 model error, 3 formula/automaton error,
4 unsupported operation, 5 numerical failure.
"""

import argparse
import os
import sys
import time

import numpy as np

from .abstraction import BuildError, EmptyGrid
from .formats import (
    ModelError,
    Results,
    read_imdp,
    read_model,
    read_results,
    read_strategy,
    write_imdp,
    write_results,
    write_strategy,
)
from .geometry import GeometryError
from .kernel import SingularCovariance
from .logic import FormatError, FormulaError, ParseError, read_dfa, write_dfa
from .pipeline import (
    build_abstraction,
    dfa_for_formula,
    light_abstraction,
    refined_strategy,
    results_records,
    synthesize,
    verification,
)
from .synthesis import InfeasibleRow, NonConvergence, estimate_satisfaction

EXIT_OK = 0
EXIT_MODEL = 2
EXIT_FORMULA = 3
EXIT_UNSUPPORTED = 4
EXIT_NUMERIC = 5

MODEL_ERRORS = (ModelError, BuildError, EmptyGrid, GeometryError, ValueError)
FORMULA_ERRORS = (ParseError, FormulaError, FormatError)
NUMERIC_ERRORS = (SingularCovariance, NonConvergence, InfeasibleRow, FloatingPointError)


class CliError(SystemExit):
    pass


def _read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_imdp(path, threads):
    text = _read(path)
    head = text.splitlines()[0].split() if text.splitlines() else []
    if head == ["switchsynth-v1", "imdp"]:
        return read_imdp(text), None
    spec = read_model(text)
    return build_abstraction(spec, threads=threads), spec


def _dfa_from_args(args, imdp_or_spec_labels):
    if args.dfa:
        return read_dfa(_read(args.dfa))
    if not args.formula:
        raise FormulaError("need --formula or --dfa")
    return dfa_for_formula(args.formula, imdp_or_spec_labels)


def _region_labels(spec, imdp):
    if spec is not None:
        return [lab for lab, _ in spec.system.regions]
    labels = set()
    for s in list(imdp.labels_over) + list(imdp.labels_under):
        for a in s:
            labels.add(a[len("not_"):] if a.startswith("not_") else a)
    return sorted(labels)


def cmd_abstract(args):
    spec = read_model(_read(args.model))
    imdp = build_abstraction(spec, threads=args.threads)
    _write(args.out, write_imdp(imdp))
    n = len(imdp.states)
    print(f"abstraction written to {args.out}: {n} states + sink, "
          f"{len(imdp.mode_names)} mode(s), built in {imdp.meta.get('build_seconds', 0):.2f}s")
    return EXIT_OK


def _summarise(out, imdp, seed=None, extra=None):
    summary = {
        "states": float(imdp.n_states),
        "eps_max": out.eps_max,
        "eps_med": out.eps_med,
        "eps_ave": out.eps_ave,
        "wall_time": out.wall_seconds,
    }
    for key in ("sink_fallbacks", "boundary_lo_zeroed", "pruned_entries"):
        if key in imdp.meta:
            summary[key] = float(imdp.meta[key])
    if seed is not None:
        summary["seed"] = float(seed)
    if extra:
        summary.update(extra)
    return summary


def cmd_synthesize(args):
    t0 = time.time()
    imdp, spec = _load_imdp(args.model, args.threads)
    dfa = _dfa_from_args(args, _region_labels(spec, imdp))
    out = synthesize(imdp, dfa, horizon=args.horizon)
    records = results_records(imdp, out.intervals, out.actions)
    res = Results(mode_names=imdp.mode_names, records=records,
                  summary=_summarise(out, imdp, extra={"wall_total": time.time() - t0}))
    _write(args.out, write_results(res))
    if args.strategy:
        choices = []
        for pi, (q, z) in enumerate(out.prod_under.pstates):
            a = out.strategy.actions[pi]
            if a is not None:
                choices.append((q, z, a))
        _write(args.strategy, write_strategy(write_dfa(out.dfa), "under", choices))
    print(f"synthesis done: eps_max={out.eps_max:.6f} eps_med={out.eps_med:.6f} "
          f"eps_ave={out.eps_ave:.6f} ({out.wall_seconds:.2f}s)")
    return EXIT_OK


def cmd_verify(args):
    imdp, spec = _load_imdp(args.model, args.threads)
    dfa = _dfa_from_args(args, _region_labels(spec, imdp))
    out = verification(imdp, dfa, mode=args.mode, horizon=args.horizon)
    records = results_records(imdp, out.intervals, out.actions)
    res = Results(mode_names=imdp.mode_names, records=records,
                  summary=_summarise(out, imdp, extra={"mode": args.mode}))
    _write(args.out, write_results(res))
    print(f"verification ({args.mode}): eps_max={out.eps_max:.6f} "
          f"eps_med={out.eps_med:.6f} eps_ave={out.eps_ave:.6f}")
    return EXIT_OK


def cmd_simulate(args):
    spec = read_model(_read(args.model))
    system, imdp = light_abstraction(spec)
    strat = read_strategy(_read(args.strategy))
    dfa = read_dfa(strat.dfa_text)
    refined = refined_strategy(imdp, dfa, strat)
    if args.n == 0:
        report = "switchsynth-v1 simreport\nruns 0\n"
        if args.out:
            _write(args.out, report)
        print("no runs requested")
        return EXIT_OK
    if args.start:
        x0 = np.array([float(t) for t in args.start.split(",")])
    else:
        x0 = system.X.center
    mode0 = args.start_mode or system.mode_names[0]
    horizon = dfa.horizon
    p_hat, half = estimate_satisfaction(
        system, refined, x0, mode0, args.n, args.seed, horizon, max_steps=args.max_steps
    )
    report = (
        "switchsynth-v1 simreport\n"
        f"runs {args.n}\nseed {args.seed}\nstart {','.join(str(v) for v in x0)}\n"
        f"mode {mode0}\nfrequency {p_hat:.17g}\nwilson99_halfwidth {half:.17g}\n"
    )
    if args.out:
        _write(args.out, report)
    print(f"satisfaction frequency {p_hat:.5f} +/- {half:.5f} (99% Wilson), seed={args.seed}")
    return EXIT_OK


def cmd_export_heatmap(args):
    res = read_results(_read(args.results))
    rows = [r for r in res.records if r["mode"] == args.mode]
    if not rows:
        raise ModelError(f"no states for mode {args.mode!r} in results")
    nv = rows[0]["vertices"].size
    dim = None
    for m in (1, 2, 3, 4, 5, 6, 7, 8):
        if (2**m) * m == nv:
            dim = m
            break
    if dim != 2:
        print("heatmap export supports 2-d models only", file=sys.stderr)
        return EXIT_UNSUPPORTED
    lines = []
    for r in rows:
        verts = r["vertices"].reshape(-1, 2)
        center = verts.mean(axis=0)
        lines.append(f"{center[0]:.17g} {center[1]:.17g} {r['p_lo']:.17g}")
    table = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, table)
    else:
        sys.stdout.write(table)
    print(f"# {len(rows)} rows for mode {args.mode}", file=sys.stderr)
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(
        prog="switchsynth",
        description="Interval abstraction and switching-strategy synthesis "
                    "for linear switched stochastic systems",
    )
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("SWITCHSYNTH_THREADS", "1")),
                   help="worker threads for row construction")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("abstract", help="build and store the interval abstraction")
    a.add_argument("model")
    a.add_argument("-o", "--out", required=True)
    a.set_defaults(fn=cmd_abstract)

    s = sub.add_parser("synthesize", help="product + robust value iteration")
    s.add_argument("model", help="model file or stored abstraction")
    s.add_argument("--formula")
    s.add_argument("--dfa")
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--strategy")
    s.set_defaults(fn=cmd_synthesize)

    v = sub.add_parser("verify", help="verification bounds (no mode optimism)")
    v.add_argument("model")
    v.add_argument("--formula")
    v.add_argument("--dfa")
    v.add_argument("--horizon", type=int, default=None)
    v.add_argument("--mode", choices=["pessimistic", "optimistic"], default="pessimistic")
    v.add_argument("-o", "--out", required=True)
    v.set_defaults(fn=cmd_verify)

    m = sub.add_parser("simulate", help="Monte-Carlo satisfaction estimate")
    m.add_argument("model")
    m.add_argument("--strategy", required=True)
    m.add_argument("-n", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--start", help="comma-separated start state")
    m.add_argument("--start-mode")
    m.add_argument("--max-steps", type=int, default=500)
    m.add_argument("-o", "--out")
    m.set_defaults(fn=cmd_simulate)

    h = sub.add_parser("export-heatmap", help="plot-ready (x, y, p_lo) table")
    h.add_argument("results")
    h.add_argument("--mode", required=True)
    h.add_argument("-o", "--out")
    h.set_defaults(fn=cmd_export_heatmap)
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FORMULA_ERRORS as exc:
        print(f"formula/automaton error: {exc}", file=sys.stderr)
        return EXIT_FORMULA
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MODEL_ERRORS as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
