from itertools import combinations, product as iproduct

import pytest

from switchsynth.logic import (
    Always,
    And,
    Atom,
    Dfa,
    Eventually,
    FormulaError,
    Next,
    NondeterministicTransition,
    Not,
    Or,
    ParseError,
    PartialTransition,
    Until,
    UnknownAtom,
    UnsupportedFormula,
    bar_translate,
    check_fragment,
    dfa_run,
    parse_formula,
    read_dfa,
    template_dfa,
    write_dfa,
)


def letters(atoms):
    return [frozenset(c) for r in range(len(atoms) + 1) for c in combinations(atoms, r)]


def holds(f, letter):
    """Boolean formula satisfaction on one letter."""
    if isinstance(f, Atom):
        return f.name in letter
    if isinstance(f, Not):
        return not holds(f.sub, letter)
    if isinstance(f, And):
        return holds(f.left, letter) and holds(f.right, letter)
    if isinstance(f, Or):
        return holds(f.left, letter) or holds(f.right, letter)
    raise AssertionError(f"not boolean: {f}")


def semantics(f, trace, i=0):
    """Direct recursive evaluation on a finite trace (positions past the
    end are treated as absent, matching good-prefix evaluation)."""
    n = len(trace)
    if isinstance(f, Atom):
        return i < n and f.name in trace[i]
    if isinstance(f, Not):
        return not semantics(f.sub, trace, i)
    if isinstance(f, And):
        return semantics(f.left, trace, i) and semantics(f.right, trace, i)
    if isinstance(f, Or):
        return semantics(f.left, trace, i) or semantics(f.right, trace, i)
    if isinstance(f, Next):
        return semantics(f.sub, trace, i + 1)
    if isinstance(f, Until):
        top = n - i - 1 if f.bound is None else min(f.bound, n - i - 1)
        for k in range(top + 1):
            if semantics(f.right, trace, i + k) and all(
                semantics(f.left, trace, i + j) for j in range(k)
            ):
                return True
        return False
    if isinstance(f, Eventually):
        top = n - i - 1 if f.bound is None else min(f.bound, n - i - 1)
        return any(semantics(f.sub, trace, i + k) for k in range(top + 1))
    if isinstance(f, Always):
        if i + f.bound > n - 1:
            return False  # trace too short to witness the bounded invariant
        return all(semantics(f.sub, trace, i + k) for k in range(f.bound + 1))
    raise AssertionError(f"unknown node {f}")


class TestParser:
    def test_bounded_always(self):
        f = parse_formula("G<=10 safe")
        assert f == Always(Atom("safe"), 10)

    def test_until_with_negation(self):
        f = parse_formula("!red U green")
        assert f == Until(Not(Atom("red")), Atom("green"), None)

    def test_bounded_eventually_conjunction(self):
        f = parse_formula("F<=5 (a & b)")
        assert f == Eventually(And(Atom("a"), Atom("b")), 5)

    def test_atom_named_like_operators(self):
        assert parse_formula("G<=2 X") == Always(Atom("X"), 2)
        assert parse_formula("F X") == Eventually(Atom("X"), None)

    def test_precedence(self):
        f = parse_formula("a U b & c | d")
        assert f == Or(And(Until(Atom("a"), Atom("b"), None), Atom("c")), Atom("d"))

    def test_parse_error_position(self):
        with pytest.raises(ParseError):
            parse_formula("a U")
        with pytest.raises(ParseError):
            parse_formula("(a | b")
        with pytest.raises(ParseError):
            parse_formula("a # b")

    def test_fragments(self):
        assert check_fragment(parse_formula("!a U b")) == "cosafe"
        assert check_fragment(parse_formula("G<=3 !(a & b)")) == "bounded"
        with pytest.raises(FormulaError):
            check_fragment(parse_formula("!(a U b)"))  # deep negation, unbounded


class TestBarTranslate:
    def test_negated_atom_replaced(self):
        f = parse_formula("!p1 U p2")
        out = bar_translate(f, ["p1", "p2"])
        assert out == Until(Atom("not_p1"), Atom("p2"), None)

    def test_no_negation_unchanged(self):
        f = parse_formula("p1 U p2")
        assert bar_translate(f, ["p1", "p2"]) == f

    def test_nested(self):
        f = parse_formula("F<=3 (!p1 & p2)")
        out = bar_translate(f, ["p1", "p2"])
        assert out == Eventually(And(Atom("not_p1"), Atom("p2")), 3)

    def test_unknown_atom(self):
        with pytest.raises(UnknownAtom):
            bar_translate(parse_formula("!q U p1"), ["p1"])

    def test_semantics_preserved_on_consistent_traces(self):
        # on traces where exactly one of p, not_p holds per position,
        # acceptance of the translated formula equals the original's
        f = parse_formula("!p U q")
        barred = bar_translate(f, ["p", "q"])
        base_letters = [frozenset(), frozenset({"p"}), frozenset({"q"}), frozenset({"p", "q"})]
        for L in range(1, 5):
            for combo in iproduct(base_letters, repeat=L):
                trace = list(combo)
                consistent = [
                    (s | {"not_p"}) if "p" not in s else s for s in trace
                ]
                assert semantics(f, trace) == semantics(barred, consistent)


class TestTemplates:
    def test_until_dfa_matches_semantics(self):
        f = Until(Atom("not_red"), Atom("green"), None)
        dfa = template_dfa(f, atoms=("green", "red", "not_red"))
        assert dfa.n_states == 3
        for L in range(1, 5):
            for combo in iproduct(letters(dfa.atoms), repeat=L):
                trace = list(combo)
                _, acc = dfa_run(dfa, trace)
                assert acc == semantics(f, trace), trace

    def test_bounded_always_dfa(self):
        f = Always(Atom("safe"), 3)
        dfa = template_dfa(f)
        assert dfa.horizon == 3
        # pending state accepts while the invariant holds
        z, acc = dfa_run(dfa, [{"safe"}] * 4)
        assert acc
        z, acc = dfa_run(dfa, [{"safe"}, set(), {"safe"}, {"safe"}])
        assert not acc
        # trace-length-(k+1) acceptance equals the bounded semantics
        for combo in iproduct(letters(("safe",)), repeat=4):
            trace = list(combo)
            _, acc = dfa_run(dfa, trace)
            assert acc == semantics(f, trace)

    def test_eventually_dfa(self):
        f = Eventually(Atom("p"), None)
        dfa = template_dfa(f)
        assert dfa.n_states == 2
        assert dfa_run(dfa, [set(), {"p"}])[1]
        assert not dfa_run(dfa, [set(), set()])[1]

    def test_bounded_eventually_horizon(self):
        f = Eventually(Atom("p"), 5)
        dfa = template_dfa(f)
        assert dfa.horizon == 5
        for combo in iproduct(letters(("p",)), repeat=4):
            trace = list(combo)
            _, acc = dfa_run(dfa, trace)
            # within a 4-letter trace the bound 5 never binds
            assert acc == semantics(Eventually(Atom("p"), None), trace)

    def test_bounded_until(self):
        f = Until(Atom("a"), Atom("b"), 2)
        dfa = template_dfa(f)
        assert dfa.horizon == 2
        for combo in iproduct(letters(("a", "b")), repeat=3):
            trace = list(combo)
            _, acc = dfa_run(dfa, trace)
            assert acc == semantics(f, trace)

    def test_unsupported_formula(self):
        with pytest.raises(UnsupportedFormula):
            template_dfa(parse_formula("X a"))
        with pytest.raises(UnsupportedFormula):
            template_dfa(parse_formula("(a U b) U c"))


class TestDfaRun:
    def make_until(self):
        return template_dfa(Until(Atom("not_red"), Atom("green"), None),
                            atoms=("green", "red", "not_red"))

    def test_empty_trace(self):
        dfa = self.make_until()
        z, acc = dfa_run(dfa, [])
        assert z == dfa.initial
        assert acc == dfa.is_accepting(dfa.initial)

    def test_accepting_trace(self):
        dfa = self.make_until()
        _, acc = dfa_run(dfa, [{"not_red"}, {"green"}])
        assert acc

    def test_rejecting_absorbing(self):
        dfa = self.make_until()
        z, acc = dfa_run(dfa, [{"red"}])
        assert not acc
        z2, _ = dfa_run(dfa, [{"red"}, {"green"}])
        assert z2 == z  # stuck in the rejecting sink


class TestDfaFile:
    def test_round_trip(self):
        for f in (
            Until(Atom("not_red"), Atom("green"), None),
            Always(Atom("safe"), 7),
            Eventually(Atom("p"), 4),
        ):
            dfa = template_dfa(f)
            text = write_dfa(dfa)
            back = read_dfa(text)
            assert back.n_states == dfa.n_states
            assert back.initial == dfa.initial
            assert back.accepting == dfa.accepting
            assert back.horizon == dfa.horizon
            for letter in letters(dfa.atoms):
                for z in range(dfa.n_states):
                    assert back.step(z, letter) == dfa.step(z, letter)

    def test_missing_letter_is_partial(self):
        text = """switchsynth-v1 dfa
atoms p
states 2
initial 0
accepting 1
edge 0 1 p
edge 1 1 true
"""
        with pytest.raises(PartialTransition):
            read_dfa(text)

    def test_duplicate_edge_is_nondeterministic(self):
        text = """switchsynth-v1 dfa
atoms p
states 2
initial 0
accepting 1
edge 0 1 p
edge 0 0 p
edge 0 0 else
edge 1 1 true
"""
        with pytest.raises(NondeterministicTransition):
            read_dfa(text)

    def test_bad_header(self):
        with pytest.raises(Exception):
            read_dfa("dfa v2\n")

    def test_totality_validated(self):
        dfa = template_dfa(Always(Atom("safe"), 2))
        for letter in letters(dfa.atoms):
            for z in range(dfa.n_states):
                dfa.step(z, letter)  # never raises
