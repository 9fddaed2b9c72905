"""Human-readable text formats: model, abstraction, results, strategy.

Every file opens with the versioned header line `switchsynth-v1 <kind>`.
Floats are serialised with 17 significant digits so a write/read round trip
is bit-exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .abstraction import HybridSystem, Imdp, ImdpState, SparseRow
from .bridge import CtHybridSystem, CtModeDynamics
from .geometry import HyperRectangle, Parallelotope, Polytope
from .kernel import ModeDynamics


class ModelError(ValueError):
    pass


def fmt(x):
    return f"{float(x):.17g}"


def _fmt_vec(v):
    return " ".join(fmt(x) for x in np.asarray(v).ravel())


# ---------------------------------------------------------------------------
# model files


@dataclass
class ModelSpec:
    """Parsed model file: the system plus its discretisation directives."""

    system: object  # HybridSystem or CtHybridSystem
    dx: float
    adaptive: tuple | None = None  # (dx_max, dx_min, refine_regions)
    continuous: bool = False
    dt: float | None = None


def write_model(spec):
    sys_ = spec.system
    m = sys_.dim
    lines = ["switchsynth-v1 model", f"dim {m}"]
    if spec.continuous:
        cov_w = sys_.cov_w if sys_.cov_w is not None else np.eye(sys_.modes[0][1].G_c.shape[1])
        r = cov_w.shape[0]
        lines.append(f"noise {r} {_fmt_vec(cov_w)}")
        lines.append("continuous true")
        lines.append(f"dt {fmt(spec.dt)}")
        for name, ct in sys_.modes:
            lines.append(f"mode {name} F {_fmt_vec(ct.F_c)} G {_fmt_vec(ct.G_c)}")
    else:
        cov_w = sys_.modes[0][1].cov_w
        r = cov_w.shape[0]
        lines.append(f"noise {r} {_fmt_vec(cov_w)}")
        for name, dyn in sys_.modes:
            lines.append(f"mode {name} F {_fmt_vec(dyn.F)} G {_fmt_vec(dyn.G)}")
    lines.append(f"safe {_fmt_vec(sys_.X.lower)} {_fmt_vec(sys_.X.upper)}")
    for lab, reg in sys_.regions:
        if isinstance(reg, HyperRectangle):
            lines.append(f"region {lab} box {_fmt_vec(reg.lower)} {_fmt_vec(reg.upper)}")
        else:
            H, b = reg.ensure_halfspaces()
            lines.append(
                f"region {lab} poly {H.shape[0]} {_fmt_vec(H)} {_fmt_vec(b)}"
            )
    lines.append(f"dx {fmt(spec.dx)}")
    if spec.adaptive is not None:
        dx_max, dx_min, rr = spec.adaptive
        lines.append(f"adaptive {fmt(dx_max)} {fmt(dx_min)} {1 if rr else 0}")
    return "\n".join(lines) + "\n"


def read_model(text):
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0].split() != ["switchsynth-v1", "model"]:
        raise ModelError("missing 'switchsynth-v1 model' header")
    m = None
    cov_w = None
    modes = []
    safe = None
    regions = []
    dx = None
    adaptive = None
    continuous = False
    dt = None
    try:
        for ln in lines[1:]:
            toks = ln.split()
            key = toks[0]
            if key == "dim":
                m = int(toks[1])
            elif key == "noise":
                r = int(toks[1])
                vals = [float(t) for t in toks[2:]]
                if len(vals) != r * r:
                    raise ModelError(f"noise needs {r * r} entries")
                cov_w = np.array(vals).reshape(r, r)
            elif key == "continuous":
                continuous = toks[1].lower() in ("true", "1", "yes")
            elif key == "dt":
                dt = float(toks[1])
            elif key == "mode":
                name = toks[1]
                if toks[2] != "F":
                    raise ModelError("mode line must read: mode <name> F ... G ...")
                gi = toks.index("G")
                fvals = [float(t) for t in toks[3:gi]]
                gvals = [float(t) for t in toks[gi + 1:]]
                modes.append((name, fvals, gvals))
            elif key == "safe":
                vals = [float(t) for t in toks[1:]]
                if m is None or len(vals) != 2 * m:
                    raise ModelError("safe needs 2*dim entries after dim")
                safe = HyperRectangle(vals[:m], vals[m:])
            elif key == "region":
                lab = toks[1]
                kind = toks[2]
                vals = [float(t) for t in toks[4:]] if kind == "poly" else [float(t) for t in toks[3:]]
                if kind == "box":
                    if len(vals) != 2 * m:
                        raise ModelError(f"region {lab}: box needs 2*dim entries")
                    regions.append((lab, HyperRectangle(vals[:m], vals[m:])))
                elif kind == "poly":
                    k = int(toks[3])
                    if len(vals) != k * m + k:
                        raise ModelError(f"region {lab}: poly needs k*m + k entries")
                    H = np.array(vals[: k * m]).reshape(k, m)
                    b = np.array(vals[k * m:])
                    verts = _hrep_vertices_2d(H, b) if m == 2 else None
                    if verts is None:
                        raise ModelError("poly regions supported in 2-d only")
                    regions.append((lab, Polytope(verts, halfspaces=(H, b))))
                else:
                    raise ModelError(f"unknown region kind {kind!r}")
            elif key == "dx":
                dx = float(toks[1])
            elif key == "adaptive":
                adaptive = (float(toks[1]), float(toks[2]), bool(int(toks[3])))
            else:
                raise ModelError(f"unknown directive {key!r}")
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(f"malformed line: {exc}") from exc
    if m is None or cov_w is None or not modes or safe is None or dx is None:
        raise ModelError("model file must define dim, noise, modes, safe and dx")
    r = cov_w.shape[0]
    if continuous:
        if dt is None:
            raise ModelError("continuous models need dt")
        ct_modes = []
        for name, fvals, gvals in modes:
            if len(fvals) != m * m or len(gvals) != m * r:
                raise ModelError(f"mode {name}: F needs {m * m} and G {m * r} entries")
            ct_modes.append(
                (name, CtModeDynamics(np.array(fvals).reshape(m, m), np.array(gvals).reshape(m, r), dt))
            )
        system = CtHybridSystem(modes=ct_modes, X=safe, regions=regions, cov_w=cov_w)
    else:
        d_modes = []
        for name, fvals, gvals in modes:
            if len(fvals) != m * m or len(gvals) != m * r:
                raise ModelError(f"mode {name}: F needs {m * m} and G {m * r} entries")
            d_modes.append(
                (name, ModeDynamics(np.array(fvals).reshape(m, m), np.array(gvals).reshape(m, r), cov_w))
            )
        try:
            system = HybridSystem(modes=d_modes, X=safe, regions=regions)
        except ValueError as exc:
            raise ModelError(str(exc)) from exc
    return ModelSpec(system=system, dx=dx, adaptive=adaptive, continuous=continuous, dt=dt)


def _hrep_vertices_2d(H, b):
    """Vertices of a bounded 2-d H-polytope by pairwise facet intersection."""
    pts = []
    k = H.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            A = np.array([H[i], H[j]])
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            p = np.linalg.solve(A, np.array([b[i], b[j]]))
            if np.all(H @ p <= b + 1e-9):
                pts.append(p)
    if not pts:
        return None
    return np.array(pts)


# ---------------------------------------------------------------------------
# abstraction files


def write_imdp(imdp):
    lines = ["switchsynth-v1 imdp"]
    m = imdp.states[0].cell.dim if imdp.states else 0
    lines.append(f"dim {m}")
    lines.append("modes " + " ".join(imdp.mode_names))
    lines.append(f"states {len(imdp.states)}")
    for i, s in enumerate(imdp.states):
        lines.append(
            f"state {i} {s.mode} inside {1 if s.inside else 0} "
            f"base {_fmt_vec(s.cell.base)} gen {_fmt_vec(s.cell.generators)} "
            f"wrect {_fmt_vec(s.whitened.lower)} {_fmt_vec(s.whitened.upper)}"
        )
    for i in range(imdp.n_states):
        lab_u = " ".join(sorted(imdp.labels_under[i]))
        lab_o = " ".join(sorted(imdp.labels_over[i]))
        lines.append(f"labels_under {i} {lab_u}".rstrip())
        lines.append(f"labels_over {i} {lab_o}".rstrip())
    for i in range(imdp.n_states):
        for action, row in imdp.rows[i].items():
            entries = " ".join(
                f"{int(t)} {fmt(lo)} {fmt(hi)}"
                for t, lo, hi in zip(row.targets, row.lo, row.hi)
            )
            lines.append(f"row {i} {action} {len(row.targets)} {entries}")
    return "\n".join(lines) + "\n"


def read_imdp(text):
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0].split() != ["switchsynth-v1", "imdp"]:
        raise ModelError("missing 'switchsynth-v1 imdp' header")
    m = None
    mode_names = []
    n_states = None
    states = {}
    labels_u, labels_o = {}, {}
    rows = {}
    for ln in lines[1:]:
        toks = ln.split()
        key = toks[0]
        if key == "dim":
            m = int(toks[1])
        elif key == "modes":
            mode_names = toks[1:]
        elif key == "states":
            n_states = int(toks[1])
        elif key == "state":
            i = int(toks[1])
            mode = toks[2]
            inside = bool(int(toks[4]))
            base = np.array([float(t) for t in toks[6:6 + m]])
            gen = np.array([float(t) for t in toks[7 + m:7 + m + m * m]]).reshape(m, m)
            rest = toks[8 + m + m * m:]
            wlo = np.array([float(t) for t in rest[:m]])
            whi = np.array([float(t) for t in rest[m:2 * m]])
            states[i] = ImdpState(
                mode=mode,
                cell=Parallelotope(base, gen),
                whitened=HyperRectangle(wlo, whi),
                inside=inside,
            )
        elif key == "labels_under":
            labels_u[int(toks[1])] = frozenset(toks[2:])
        elif key == "labels_over":
            labels_o[int(toks[1])] = frozenset(toks[2:])
        elif key == "row":
            i, action, k = int(toks[1]), toks[2], int(toks[3])
            vals = toks[4:]
            if len(vals) != 3 * k:
                raise ModelError(f"row {i}/{action}: expected {3 * k} fields")
            tgts = np.array([int(vals[3 * j]) for j in range(k)], dtype=np.int64)
            lo = np.array([float(vals[3 * j + 1]) for j in range(k)])
            hi = np.array([float(vals[3 * j + 2]) for j in range(k)])
            rows.setdefault(i, {})[action] = SparseRow(tgts, lo, hi)
        else:
            raise ModelError(f"unknown imdp directive {key!r}")
    if n_states is None or m is None:
        raise ModelError("imdp file missing dim/states")
    state_list = [states[i] for i in range(n_states)]
    mode_offsets = {}
    for i, s in enumerate(state_list):
        mode_offsets.setdefault(s.mode, i)
    row_list = [rows.get(i, {}) for i in range(n_states + 1)]
    lu = [labels_u.get(i, frozenset()) for i in range(n_states + 1)]
    lo_ = [labels_o.get(i, frozenset()) for i in range(n_states + 1)]
    return Imdp(
        states=state_list,
        mode_names=mode_names,
        mode_offsets=mode_offsets,
        rows=row_list,
        labels_under=lu,
        labels_over=lo_,
        grids={},
        meta={"loaded": True},
    )


# ---------------------------------------------------------------------------
# results and strategy files


@dataclass
class Results:
    mode_names: list
    records: list  # dicts: state, mode, cell_id, action, p_lo, p_hi, vertices
    summary: dict


def write_results(res):
    lines = ["switchsynth-v1 results"]
    summary = " ".join(f"{k} {fmt(v) if isinstance(v, float) else v}" for k, v in res.summary.items())
    lines.append(f"summary {summary}")
    for r in res.records:
        lines.append(
            f"state {r['state']} {r['mode']} {r['cell_id']} action {r['action']} "
            f"p_lo {fmt(r['p_lo'])} p_hi {fmt(r['p_hi'])} cell {_fmt_vec(r['vertices'])}"
        )
    return "\n".join(lines) + "\n"


def read_results(text):
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0].split() != ["switchsynth-v1", "results"]:
        raise ModelError("missing 'switchsynth-v1 results' header")
    summary = {}
    records = []
    modes = []
    for ln in lines[1:]:
        toks = ln.split()
        if toks[0] == "summary":
            it = iter(toks[1:])
            for k in it:
                v = next(it)
                try:
                    summary[k] = float(v)
                except ValueError:
                    summary[k] = v
        elif toks[0] == "state":
            state = int(toks[1])
            mode = toks[2]
            cell_id = int(toks[3])
            action = toks[5]
            p_lo = float(toks[7])
            p_hi = float(toks[9])
            verts = np.array([float(t) for t in toks[11:]])
            if mode not in modes:
                modes.append(mode)
            records.append(
                dict(state=state, mode=mode, cell_id=cell_id, action=action,
                     p_lo=p_lo, p_hi=p_hi, vertices=verts)
            )
        else:
            raise ModelError(f"unknown results directive {toks[0]!r}")
    return Results(mode_names=modes, records=records, summary=summary)


def write_strategy(dfa_text, labeling, choices):
    """choices: iterable of (state index, dfa state, action name)."""
    lines = ["switchsynth-v1 strategy", "dfa_begin"]
    lines.extend(dfa_text.rstrip("\n").splitlines())
    lines.append("dfa_end")
    lines.append(f"labeling {labeling}")
    for q, z, a in choices:
        lines.append(f"choose {q} {z} {a}")
    return "\n".join(lines) + "\n"


@dataclass
class StrategyFile:
    dfa_text: str
    labeling: str
    choices: dict  # (q, z) -> action name

    def action_at(self, q, z, default=None):
        return self.choices.get((q, z), default)


def read_strategy(text):
    lines = text.splitlines()
    if not lines or lines[0].split() != ["switchsynth-v1", "strategy"]:
        raise ModelError("missing 'switchsynth-v1 strategy' header")
    dfa_lines = []
    labeling = "under"
    choices = {}
    in_dfa = False
    for ln in lines[1:]:
        s = ln.strip()
        if s == "dfa_begin":
            in_dfa = True
            continue
        if s == "dfa_end":
            in_dfa = False
            continue
        if in_dfa:
            dfa_lines.append(ln)
            continue
        if not s or s.startswith("#"):
            continue
        toks = s.split()
        if toks[0] == "labeling":
            labeling = toks[1]
        elif toks[0] == "choose":
            choices[(int(toks[1]), int(toks[2]))] = toks[3]
        else:
            raise ModelError(f"unknown strategy directive {toks[0]!r}")
    return StrategyFile(dfa_text="\n".join(dfa_lines) + "\n", labeling=labeling, choices=choices)
