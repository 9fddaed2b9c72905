"""Temporal-logic fragment, specification automata, and their text format.

Formulas are ASTs over named atomic propositions with Boolean connectives,
next, until, eventually and the bounded variants.  Two fragments are
enforced separately: the co-safe fragment restricts negation to atoms and
has no bounded operators; the bounded fragment allows full negation but
requires every until/eventually/always to carry a bound.

Automata are deterministic, with edges written as Boolean guard expressions
over the atoms instead of one edge per alphabet letter; a letter is a set of
atom names.  Bounded operators are realised as a small automaton plus a
horizon tag that the finite-horizon value iteration consumes, rather than
unrolling time into automaton states.
"""

import re
from dataclasses import dataclass, field

COMPLEMENT_PREFIX = "not_"


class ParseError(ValueError):
    pass


class FormulaError(ValueError):
    pass


class UnknownAtom(FormulaError):
    pass


class UnsupportedFormula(FormulaError):
    """No template automaton for this formula; supply an explicit DFA file."""


class FormatError(ValueError):
    pass


class NondeterministicTransition(FormatError):
    pass


class PartialTransition(FormatError):
    pass


# ---------------------------------------------------------------------------
# formula AST


@dataclass(frozen=True)
class Atom:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Not:
    sub: object

    def __str__(self):
        return f"!{_paren(self.sub)}"


@dataclass(frozen=True)
class And:
    left: object
    right: object

    def __str__(self):
        return f"{_paren(self.left)} & {_paren(self.right)}"


@dataclass(frozen=True)
class Or:
    left: object
    right: object

    def __str__(self):
        return f"{_paren(self.left)} | {_paren(self.right)}"


@dataclass(frozen=True)
class Next:
    sub: object

    def __str__(self):
        return f"X {_paren(self.sub)}"


@dataclass(frozen=True)
class Until:
    left: object
    right: object
    bound: int | None = None

    def __str__(self):
        op = "U" if self.bound is None else f"U<={self.bound}"
        return f"{_paren(self.left)} {op} {_paren(self.right)}"


@dataclass(frozen=True)
class Eventually:
    sub: object
    bound: int | None = None

    def __str__(self):
        op = "F" if self.bound is None else f"F<={self.bound}"
        return f"{op} {_paren(self.sub)}"


@dataclass(frozen=True)
class Always:
    sub: object
    bound: int

    def __str__(self):
        return f"G<={self.bound} {_paren(self.sub)}"


def _paren(f):
    if isinstance(f, Atom):
        return str(f)
    return f"({f})"


_TOKEN_RE = re.compile(r"\s*(?:(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<le><=)"
                       r"|(?P<int>\d+)|(?P<sym>[!&|()]))")


def _tokenize(text):
    pos, out = 0, []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"bad character at position {pos}: {text[pos:pos + 8]!r}")
        if m.lastgroup == "ident":
            out.append(("ident", m.group("ident"), pos))
        elif m.lastgroup == "le":
            out.append(("le", "<=", pos))
        elif m.lastgroup == "int":
            out.append(("int", int(m.group("int")), pos))
        else:
            out.append(("sym", m.group("sym"), pos))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens, text):
        self.toks = tokens
        self.text = text
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("eof", None, len(self.text))

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def expect_sym(self, s):
        kind, val, pos = self.next()
        if kind != "sym" or val != s:
            raise ParseError(f"expected {s!r} at position {pos}")

    def bound(self):
        """Optional <=k suffix after a temporal operator."""
        if self.peek()[0] == "le":
            self.next()
            kind, val, pos = self.next()
            if kind != "int":
                raise ParseError(f"expected integer bound at position {pos}")
            return val
        return None

    def parse_or(self):
        left = self.parse_and()
        while self.peek()[:2] == ("sym", "|"):
            self.next()
            left = Or(left, self.parse_and())
        return left

    def parse_and(self):
        left = self.parse_until()
        while self.peek()[:2] == ("sym", "&"):
            self.next()
            left = And(left, self.parse_until())
        return left

    def parse_until(self):
        left = self.parse_unary()
        if self.peek()[:2] == ("ident", "U"):
            self.next()
            k = self.bound()
            right = self.parse_until()
            return Until(left, right, k)
        return left

    def _operand_follows(self, offset=1):
        """Can the token after the current one begin a formula?  Used to
        tell the operators X and F apart from atoms of the same name."""
        if self.i + offset >= len(self.toks):
            return False
        kind, val, _ = self.toks[self.i + offset]
        return kind == "ident" or (kind == "sym" and val in ("!", "("))

    def parse_unary(self):
        kind, val, pos = self.peek()
        if kind == "sym" and val == "!":
            self.next()
            return Not(self.parse_unary())
        if kind == "ident" and val == "X" and self._operand_follows():
            self.next()
            return Next(self.parse_unary())
        if kind == "ident" and val == "F" and (
            self._operand_follows() or (self.i + 1 < len(self.toks) and self.toks[self.i + 1][0] == "le")
        ):
            self.next()
            k = self.bound()
            return Eventually(self.parse_unary(), k)
        if kind == "ident" and val == "G" and (
            self.i + 1 < len(self.toks) and self.toks[self.i + 1][0] == "le"
        ):
            self.next()
            k = self.bound()
            return Always(self.parse_unary(), k)
        if kind == "sym" and val == "(":
            self.next()
            inner = self.parse_or()
            self.expect_sym(")")
            return inner
        if kind == "ident":
            if val == "U":
                raise ParseError(f"unexpected keyword {val!r} at position {pos}")
            self.next()
            return Atom(val)
        raise ParseError(f"unexpected token at position {pos}")


def parse_formula(text):
    """Parse `! | & X U F G` with bounds written `U<=k`, `F<=k`, `G<=k`.

    Precedence: negation binds tightest, then the temporal operators, then
    conjunction, then disjunction.
    """
    p = _Parser(_tokenize(text), text)
    f = p.parse_or()
    kind, _, pos = p.peek()
    if kind != "eof":
        raise ParseError(f"trailing input at position {pos}")
    return f


def is_cosafe(f):
    """Negation only on atoms; no bounded operators, no always."""
    if isinstance(f, Atom):
        return True
    if isinstance(f, Not):
        return isinstance(f.sub, Atom)
    if isinstance(f, (And, Or)):
        return is_cosafe(f.left) and is_cosafe(f.right)
    if isinstance(f, Next):
        return is_cosafe(f.sub)
    if isinstance(f, Until):
        return f.bound is None and is_cosafe(f.left) and is_cosafe(f.right)
    if isinstance(f, Eventually):
        return f.bound is None and is_cosafe(f.sub)
    return False


def is_bounded(f):
    """Full negation; every until/eventually carries a bound."""
    if isinstance(f, Atom):
        return True
    if isinstance(f, Not):
        return is_bounded(f.sub)
    if isinstance(f, (And, Or)):
        return is_bounded(f.left) and is_bounded(f.right)
    if isinstance(f, Next):
        return is_bounded(f.sub)
    if isinstance(f, Until):
        return f.bound is not None and is_bounded(f.left) and is_bounded(f.right)
    if isinstance(f, Eventually):
        return f.bound is not None and is_bounded(f.sub)
    if isinstance(f, Always):
        return is_bounded(f.sub)
    return False


def check_fragment(f):
    if is_cosafe(f):
        return "cosafe"
    if is_bounded(f):
        return "bounded"
    raise FormulaError(f"formula {f} fits neither the co-safe nor the bounded fragment")


def complement_atom(name):
    return COMPLEMENT_PREFIX + name


def bar_translate(formula, region_labels):
    """Replace each negated region atom with its complement proposition.

    `region_labels` are the declared region atoms in order; negations of
    anything else raise UnknownAtom.  Nothing but `!atom` nodes changes.
    """
    labels = list(region_labels)

    def walk(f):
        if isinstance(f, Atom):
            return f
        if isinstance(f, Not):
            if isinstance(f.sub, Atom):
                if f.sub.name not in labels:
                    raise UnknownAtom(f"negated atom {f.sub.name!r} is not a region label")
                return Atom(complement_atom(f.sub.name))
            return Not(walk(f.sub))
        if isinstance(f, And):
            return And(walk(f.left), walk(f.right))
        if isinstance(f, Or):
            return Or(walk(f.left), walk(f.right))
        if isinstance(f, Next):
            return Next(walk(f.sub))
        if isinstance(f, Until):
            return Until(walk(f.left), walk(f.right), f.bound)
        if isinstance(f, Eventually):
            return Eventually(walk(f.sub), f.bound)
        if isinstance(f, Always):
            return Always(walk(f.sub), f.bound)
        raise FormulaError(f"unknown node {f!r}")

    return walk(formula)


# ---------------------------------------------------------------------------
# guards: positive/negative Boolean expressions over atoms, evaluated on
# letters (sets of atom names)


def guard_eval(guard, letter):
    if guard == "true":
        return True
    if isinstance(guard, Atom):
        return guard.name in letter
    if isinstance(guard, Not):
        return not guard_eval(guard.sub, letter)
    if isinstance(guard, And):
        return guard_eval(guard.left, letter) and guard_eval(guard.right, letter)
    if isinstance(guard, Or):
        return guard_eval(guard.left, letter) or guard_eval(guard.right, letter)
    raise FormulaError(f"invalid guard node {guard!r}")


def parse_guard(text):
    text = text.strip()
    if text in ("true", "else"):
        return text
    f = parse_formula(text)

    def boolean_only(g):
        if isinstance(g, Atom):
            return True
        if isinstance(g, Not):
            return boolean_only(g.sub)
        if isinstance(g, (And, Or)):
            return boolean_only(g.left) and boolean_only(g.right)
        return False

    if not boolean_only(f):
        raise FormatError(f"guard {text!r} contains temporal operators")
    return f


def guard_text(guard):
    if guard in ("true", "else"):
        return guard
    return str(guard)


# ---------------------------------------------------------------------------
# deterministic finite automata


@dataclass
class Dfa:
    """Deterministic automaton over letters from 2^atoms.

    Each state's outgoing edges are (guard, target) pairs whose guards must
    partition the alphabet, except that one edge per state may carry the
    guard 'else' to absorb every letter no other guard matches.
    """

    atoms: tuple
    n_states: int
    initial: int
    accepting: frozenset
    edges: dict  # state -> list of (guard, target); guard 'else' matches rest
    horizon: int | None = None
    _validated: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.atoms = tuple(self.atoms)
        self.accepting = frozenset(self.accepting)
        if not (0 <= self.initial < self.n_states):
            raise FormatError("initial state out of range")
        for z, outs in self.edges.items():
            for guard, tgt in outs:
                if not (0 <= tgt < self.n_states):
                    raise FormatError(f"edge target {tgt} out of range")
        if len(self.atoms) <= 12:
            self.validate_total()

    def validate_total(self):
        """Exhaustively check determinism and totality over 2^atoms."""
        from itertools import combinations

        letters = []
        for r in range(len(self.atoms) + 1):
            for combo in combinations(self.atoms, r):
                letters.append(frozenset(combo))
        for z in range(self.n_states):
            outs = self.edges.get(z, [])
            has_else = any(g == "else" for g, _ in outs)
            for letter in letters:
                hits = [t for g, t in outs if g != "else" and guard_eval(g, letter)]
                if len(hits) > 1:
                    raise NondeterministicTransition(
                        f"state {z}, letter {set(letter) or '{}'} matches several edges"
                    )
                if not hits and not has_else:
                    raise PartialTransition(
                        f"state {z} has no edge for letter {set(letter) or '{}'}"
                    )
        self._validated = True

    def step(self, z, letter):
        outs = self.edges.get(z, [])
        else_tgt = None
        hit = None
        for guard, tgt in outs:
            if guard == "else":
                else_tgt = tgt
                continue
            if guard_eval(guard, letter):
                if hit is not None:
                    raise NondeterministicTransition(
                        f"state {z}, letter {set(letter)} matches several edges"
                    )
                hit = tgt
        if hit is not None:
            return hit
        if else_tgt is not None:
            return else_tgt
        raise PartialTransition(f"state {z} has no edge for letter {set(letter)}")

    def is_accepting(self, z):
        return z in self.accepting

    def absorbing_states(self):
        """States all of whose edges self-loop."""
        out = set()
        for z in range(self.n_states):
            if all(t == z for _, t in self.edges.get(z, [])):
                out.add(z)
        return out


def dfa_run(dfa, trace):
    """Fold the transition function over a trace of letters."""
    z = dfa.initial
    for letter in trace:
        z = dfa.step(z, frozenset(letter))
    return z, dfa.is_accepting(z)


def _positive_boolean(f):
    if isinstance(f, Atom):
        return True
    if isinstance(f, (And, Or)):
        return _positive_boolean(f.left) and _positive_boolean(f.right)
    return False


def _atoms_of(f):
    if isinstance(f, Atom):
        return {f.name}
    if isinstance(f, (And, Or)):
        return _atoms_of(f.left) | _atoms_of(f.right)
    if isinstance(f, (Not, Next)):
        return _atoms_of(f.sub)
    if isinstance(f, Until):
        return _atoms_of(f.left) | _atoms_of(f.right)
    if isinstance(f, (Eventually, Always)):
        return _atoms_of(f.sub)
    return set()


def template_dfa(formula, atoms=None):
    """Automaton for the supported templates, plus a horizon tag.

    Supported shapes (A, B positive Boolean combinations of atoms):
    G<=k A, F<=k A, F A, A U B, A U<=k B.  Bounded shapes return the same
    small automaton as their unbounded core with `horizon` set; the value
    iteration enforces the bound by sweep count instead of automaton size.
    """
    atoms = tuple(atoms) if atoms is not None else tuple(sorted(_atoms_of(formula)))

    if isinstance(formula, Always) and _positive_boolean(formula.sub):
        A = formula.sub
        edges = {
            0: [(A, 0), ("else", 1)],
            1: [("true", 1)],
        }
        return Dfa(atoms, 2, 0, {0}, edges, horizon=formula.bound)

    if isinstance(formula, Eventually) and _positive_boolean(formula.sub):
        A = formula.sub
        edges = {
            0: [(A, 1), ("else", 0)],
            1: [("true", 1)],
        }
        return Dfa(atoms, 2, 0, {1}, edges, horizon=formula.bound)

    if isinstance(formula, Until) and _positive_boolean(formula.left) and _positive_boolean(formula.right):
        A, B = formula.left, formula.right
        edges = {
            0: [(B, 1), (And(A, Not(B)), 0), ("else", 2)],
            1: [("true", 1)],
            2: [("true", 2)],
        }
        return Dfa(atoms, 3, 0, {1}, edges, horizon=formula.bound)

    raise UnsupportedFormula(
        f"no template automaton for {formula}; provide an explicit DFA file"
    )


# ---------------------------------------------------------------------------
# DFA text format


def write_dfa(dfa):
    lines = ["switchsynth-v1 dfa"]
    lines.append("atoms " + " ".join(dfa.atoms))
    lines.append(f"states {dfa.n_states}")
    lines.append(f"initial {dfa.initial}")
    lines.append("accepting " + " ".join(str(z) for z in sorted(dfa.accepting)))
    if dfa.horizon is not None:
        lines.append(f"horizon {dfa.horizon}")
    for z in range(dfa.n_states):
        for guard, tgt in dfa.edges.get(z, []):
            lines.append(f"edge {z} {tgt} {guard_text(guard)}")
    return "\n".join(lines) + "\n"


def read_dfa(text):
    """Parse the DFA text format; validates totality and determinism."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0].split() != ["switchsynth-v1", "dfa"]:
        raise FormatError("missing 'switchsynth-v1 dfa' header")
    atoms, n_states, initial, accepting, horizon = None, None, None, None, None
    edges = {}
    for ln in lines[1:]:
        parts = ln.split(None, 1)
        key = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if key == "atoms":
            atoms = tuple(rest.split())
        elif key == "states":
            n_states = int(rest)
        elif key == "initial":
            initial = int(rest)
        elif key == "accepting":
            accepting = frozenset(int(tok) for tok in rest.split())
        elif key == "horizon":
            horizon = int(rest)
        elif key == "edge":
            toks = rest.split(None, 2)
            if len(toks) != 3:
                raise FormatError(f"bad edge line: {ln!r}")
            src, tgt = int(toks[0]), int(toks[1])
            guard = parse_guard(toks[2])
            edges.setdefault(src, []).append((guard, tgt))
        else:
            raise FormatError(f"unknown directive {key!r}")
    if None in (atoms, n_states, initial) or accepting is None:
        raise FormatError("dfa file missing atoms/states/initial/accepting")
    dfa = Dfa(atoms, n_states, initial, accepting, edges, horizon=horizon)
    if not dfa._validated:
        dfa.validate_total()
    return dfa
