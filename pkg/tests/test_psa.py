"""Symbolic engine tests on small hand-built automata."""

from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from paramsched.geometry import (
    ConvexPolyhedron,
    Region,
    VariableSpace,
    region_equal,
)
from paramsched.psa import (
    Automaton,
    BudgetExceeded,
    Edge,
    InexactResult,
    Location,
    PsaError,
    SymbolicState,
    compose,
    dump_zone_graph,
    ef_synth,
    initial_state,
    reachability_verify,
    schedulable_region,
    successors,
)

SP = VariableSpace(("x",), ("p",))
UNIV = ConvexPolyhedron.universe(SP)


def poly(space, *constraints):
    return ConvexPolyhedron(space, list(constraints))


def le(name, k, space=SP):
    return poly(space, ({name: F(1)}, "<=", F(k)))


def ge(name, k, space=SP):
    return poly(space, ({name: F(-1)}, "<=", F(-k)))


def box(space, **bounds):
    cs = []
    for name, (lo, hi) in bounds.items():
        cs.append(({name: F(-1)}, "<=", F(-lo)))
        cs.append(({name: F(1)}, "<=", F(hi)))
    return ConvexPolyhedron(space, cs)


def pin(space, **values):
    return ConvexPolyhedron(
        space, [({n: F(1)}, "=", F(v)) for n, v in values.items()])


def toy_net():
    """One clock, one parameter: init --[x >= p]--> bad, invariant x <= 3."""
    guard = poly(SP, ({"x": F(-1), "p": F(1)}, "<=", F(0)))
    aut = Automaton(
        "A", (),
        [Location("init", le("x", 3)), Location("bad", UNIV, is_bad=True)],
        "init",
        [Edge("init", guard, None, frozenset(), "bad")])
    return compose([aut], ("x",), ("p",))


TOY_DOM = box(SP.param_space(), p=(0, 10))


# ---------------------------------------------------------------------------
# structural validation


class TestStructure:
    def test_duplicate_location_rejected(self):
        with pytest.raises(PsaError, match="duplicate location"):
            Automaton("A", (), [Location("l", UNIV), Location("l", UNIV)],
                      "l", [])

    def test_unknown_initial_rejected(self):
        with pytest.raises(PsaError, match="initial"):
            Automaton("A", (), [Location("l", UNIV)], "nope", [])

    def test_edge_to_unknown_location_rejected(self):
        with pytest.raises(PsaError, match="unknown location"):
            Automaton("A", (), [Location("l", UNIV)], "l",
                      [Edge("l", UNIV, None, frozenset(), "gone")])

    def test_action_outside_alphabet_rejected(self):
        with pytest.raises(PsaError, match="alphabet"):
            Automaton("A", (), [Location("l", UNIV)], "l",
                      [Edge("l", UNIV, "a", frozenset(), "l")])

    def test_duplicate_automaton_name_rejected(self):
        a = Automaton("A", (), [Location("l", UNIV)], "l", [])
        with pytest.raises(PsaError, match="duplicate automaton"):
            compose([a, a], ("x",), ("p",))

    def test_reset_of_non_clock_rejected(self):
        a = Automaton("A", (), [Location("l", UNIV)], "l",
                      [Edge("l", UNIV, None, frozenset({"p"}), "l")])
        with pytest.raises(PsaError, match="non-clock"):
            compose([a], ("x",), ("p",))

    def test_stopped_non_clock_rejected(self):
        a = Automaton("A", (),
                      [Location("l", UNIV, stopped=frozenset({"p"}))], "l", [])
        with pytest.raises(PsaError, match="non-clock"):
            compose([a], ("x",), ("p",))

    def test_guard_over_foreign_space_rejected(self):
        other = VariableSpace(("y",), ())
        g = ConvexPolyhedron.universe(other)
        a = Automaton("A", (), [Location("l", UNIV)], "l",
                      [Edge("l", g, None, frozenset(), "l")])
        with pytest.raises(PsaError, match="variable space"):
            compose([a], ("x",), ("p",))


# ---------------------------------------------------------------------------
# initial state


class TestInitialState:
    def test_clocks_zero_then_elapse(self):
        s = initial_state(toy_net(), TOY_DOM)
        # x starts at 0 and may elapse up to the invariant bound
        assert s.zone.var_interval("x") == (F(0), False, F(3), False)
        assert s.zone.var_interval("p") == (F(0), False, F(10), False)
        assert s.zone.membership({"x": F(2), "p": F(7)})
        assert not s.zone.membership({"x": F(4), "p": F(7)})

    def test_elapse_closed_under_stop_set(self):
        net = toy_net()
        s = initial_state(net, TOY_DOM)
        again = s.zone.time_elapse(frozenset())
        inv = net.automata[0].location("init").invariant
        again = again.intersect(inv)
        assert again.contains(s.zone) and s.zone.contains(again)

    def test_stopped_clock_does_not_elapse(self):
        aut = Automaton(
            "A", (), [Location("l", UNIV, stopped=frozenset({"x"}))], "l", [])
        net = compose([aut], ("x",), ("p",))
        s = initial_state(net, pin(SP.param_space(), p=0))
        assert s.zone.var_interval("x") == (F(0), False, F(0), False)

    def test_infeasible_initial_rejected(self):
        aut = Automaton("A", (), [Location("l", ge("x", 1))], "l", [])
        net = compose([aut], ("x",), ("p",))
        with pytest.raises(PsaError, match="infeasible"):
            initial_state(net, TOY_DOM)


# ---------------------------------------------------------------------------
# the frozen toy analysis


class TestToy:
    def test_bad_region(self):
        bad, exact = ef_synth(toy_net(), TOY_DOM)
        assert exact
        assert region_equal(bad, Region.of(box(SP.param_space(), p=(0, 3))))

    def test_schedulable_region(self):
        got = schedulable_region(toy_net(), TOY_DOM)
        want = Region.of(poly(
            SP.param_space(),
            ({"p": F(-1)}, "<", F(-3)),
            ({"p": F(1)}, "<=", F(10))))
        assert region_equal(got, want)

    @pytest.mark.parametrize("pv", [0, 1, 2, 3, 4, 5, 10])
    def test_pinned_verdicts_match_closed_form(self, pv):
        # bad is reachable exactly when some elapse t <= 3 satisfies t >= p
        v = reachability_verify(toy_net(), pin(SP.param_space(), p=pv))
        assert v.schedulable == (pv > 3)

    def test_verdict_trace_ends_in_bad(self):
        net = toy_net()
        v = reachability_verify(net, pin(SP.param_space(), p=2))
        assert not v.schedulable
        assert v.trace and v.trace[-1].locs == ("bad",)
        # replay the recorded edges through the public successor function
        s = initial_state(net, pin(SP.param_space(), p=2))
        for step in v.trace:
            fired = dict(step.edges)
            for combo, t in successors(net, s):
                if {(net.automata[ai].name, ei) for ai, ei, _ in combo} == \
                        set(fired.items()):
                    s = t
                    break
            else:
                pytest.fail("trace step not replayable")
        assert s.locs == step.locs

    def test_unpinned_verification_rejected(self):
        with pytest.raises(PsaError, match="pinned"):
            reachability_verify(toy_net(), TOY_DOM)

    def test_empty_domain_rejected(self):
        empty = ConvexPolyhedron.empty(SP.param_space())
        with pytest.raises(PsaError, match="empty"):
            reachability_verify(toy_net(), empty)


# ---------------------------------------------------------------------------
# synchronisation


def sync_net(include_partner=True):
    gA = ge("x", 1)               # A fires a only once x >= 1
    gB = poly(SP, ({"x": F(1), "p": F(-1)}, "<=", F(0)))   # B needs x <= p
    a = Automaton("A", ("a",),
                  [Location("a0", UNIV), Location("a1", UNIV, is_bad=True)],
                  "a0", [Edge("a0", gA, "a", frozenset(), "a1")])
    b = Automaton("B", ("a",),
                  [Location("b0", UNIV), Location("b1", UNIV)],
                  "b0", [Edge("b0", gB, "a", frozenset(), "b1")])
    auts = [a, b] if include_partner else [a]
    return compose(auts, ("x",), ("p",))


class TestSync:
    def test_shared_action_needs_all_participants(self):
        bad, exact = ef_synth(sync_net(), TOY_DOM)
        assert exact
        assert region_equal(bad, Region.of(box(SP.param_space(), p=(1, 10))))

    def test_unshared_action_fires_alone(self):
        bad, exact = ef_synth(sync_net(include_partner=False), TOY_DOM)
        assert exact
        assert region_equal(bad, Region.of(box(SP.param_space(), p=(0, 10))))

    def test_blocked_partner_disables_action(self):
        # partner with no a-edge at its current location: a never fires
        a = Automaton("A", ("a",),
                      [Location("a0", UNIV),
                       Location("a1", UNIV, is_bad=True)],
                      "a0", [Edge("a0", UNIV, "a", frozenset(), "a1")])
        b = Automaton("B", ("a",), [Location("b0", UNIV)], "b0", [])
        net = compose([a, b], ("x",), ("p",))
        v = reachability_verify(net, pin(SP.param_space(), p=0))
        assert v.schedulable and v.states_explored == 1

    def test_independent_moves_interleave(self):
        a = Automaton("A", (), [Location("a0", UNIV), Location("a1", UNIV)],
                      "a0", [Edge("a0", UNIV, None, frozenset(), "a1")])
        b = Automaton("B", (), [Location("b0", UNIV), Location("b1", UNIV)],
                      "b0", [Edge("b0", UNIV, None, frozenset(), "b1")])
        net = compose([a, b], ("x",), ("p",))
        dom = pin(SP.param_space(), p=0)
        lines = list(dump_zone_graph(net, dom))
        reached = {ln.split(" | ")[0] for ln in lines}
        assert reached == {"a0,b0", "a1,b0", "a0,b1", "a1,b1"}

    def test_exploration_is_deterministic(self):
        net = sync_net()
        dom = pin(SP.param_space(), p=5)
        assert list(dump_zone_graph(net, dom)) == \
            list(dump_zone_graph(net, dom))


# ---------------------------------------------------------------------------
# zone well-formedness along exploration


def interleaving_net():
    a = Automaton("A", (), [Location("a0", UNIV), Location("a1", le("x", 2))],
                  "a0", [Edge("a0", UNIV, None, frozenset(), "a1")])
    b = Automaton("B", (), [Location("b0", UNIV), Location("b1", UNIV)],
                  "b0", [Edge("b0", ge("x", 1), None, frozenset({"x"}), "b1")])
    return compose([a, b], ("x",), ("p",))


class TestWellFormedness:
    @pytest.mark.parametrize("build,least", [(sync_net, 2),
                                             (interleaving_net, 4)])
    def test_reached_zones_sound(self, build, least):
        net = build()
        frontier = [initial_state(net, TOY_DOM)]
        checked = 0
        seen = set()
        while frontier and checked < 50:
            s = frontier.pop()
            if s in seen:
                continue
            seen.add(s)
            checked += 1
            assert not s.zone.is_empty()
            invs = [net.automata[i].location(n).invariant
                    for i, n in enumerate(s.locs)]
            for inv in invs:
                assert inv.contains(s.zone)
            stops = frozenset().union(
                *(net.automata[i].location(n).stopped
                  for i, n in enumerate(s.locs)))
            closed = s.zone.time_elapse(stops)
            for inv in invs:
                closed = closed.intersect(inv)
            assert closed.contains(s.zone) and s.zone.contains(closed)
            for _combo, t in successors(net, s):
                frontier.append(t)
        assert checked >= least


# ---------------------------------------------------------------------------
# budget handling


def widening_net():
    """x reset on a loop while y runs free: no two zones ever subsume."""
    sp = VariableSpace(("x", "y"), ("p",))
    inv = ConvexPolyhedron(sp, [({"x": F(1)}, "<=", F(1))])
    g = ConvexPolyhedron(sp, [({"x": F(1)}, "=", F(1))])
    a = Automaton("L", (), [Location("l", inv)], "l",
                  [Edge("l", g, None, frozenset({"x"}), "l")])
    return compose([a], ("x", "y"), ("p",)), sp


class TestBudget:
    def test_verify_raises_when_exhausted(self):
        net, sp = widening_net()
        with pytest.raises(BudgetExceeded):
            reachability_verify(net, pin(sp.param_space(), p=0), budget=40)

    def test_synth_reports_inexact(self):
        net, sp = widening_net()
        bad, exact = ef_synth(net, pin(sp.param_space(), p=0), budget=40)
        assert not exact
        assert bad.is_empty()

    def test_schedulable_region_refuses_inexact(self):
        net, sp = widening_net()
        with pytest.raises(InexactResult):
            schedulable_region(net, pin(sp.param_space(), p=0), budget=40)

    def test_toy_well_under_default_budget(self):
        v = reachability_verify(toy_net(), pin(SP.param_space(), p=5))
        assert v.states_explored <= 5


# ---------------------------------------------------------------------------
# a passive monitor must not change the analysis


class TestMonitorNonInterference:
    def test_self_loop_monitor_preserves_regions(self):
        base = sync_net()
        mon = Automaton("Mon", ("a",),
                        [Location("m", UNIV)],
                        "m", [Edge("m", UNIV, "a", frozenset(), "m")])
        watched = compose(list(base.automata) + [mon], ("x",), ("p",))
        bad0, e0 = ef_synth(base, TOY_DOM)
        bad1, e1 = ef_synth(watched, TOY_DOM)
        assert e0 and e1
        assert region_equal(bad0, bad1)


# ---------------------------------------------------------------------------
# randomized acyclic networks: internal consistency of the two analyses

REL_CHOICES = ("<=", "=", ">=")


def _guard_poly(space, var, rel, k, against_param):
    if against_param:
        terms = {var: F(1), "p": F(-1)}
        bound = F(0)
    else:
        terms = {var: F(1)}
        bound = F(k)
    if rel == "<=":
        return ConvexPolyhedron(space, [(terms, "<=", bound)])
    if rel == "=":
        return ConvexPolyhedron(space, [(terms, "=", bound)])
    neg = {n: -c for n, c in terms.items()}
    return ConvexPolyhedron(space, [(neg, "<=", -bound)])


edge_st = st.fixed_dictionaries({
    "var": st.sampled_from(("x", "y")),
    "rel": st.sampled_from(REL_CHOICES),
    "k": st.integers(min_value=0, max_value=3),
    "against_param": st.booleans(),
    "reset_x": st.booleans(),
})


@st.composite
def acyclic_net(draw):
    sp = VariableSpace(("x", "y"), ("p",))
    univ = ConvexPolyhedron.universe(sp)
    inv_k = draw(st.one_of(st.none(), st.integers(min_value=1, max_value=3)))
    inv = univ if inv_k is None else ConvexPolyhedron(
        sp, [({"x": F(1)}, "<=", F(inv_k))])
    pairs = [(0, 1), (0, 2), (1, 2)]
    picked = draw(st.lists(st.sampled_from(range(3)), min_size=1, max_size=3,
                           unique=True))
    edges = []
    for idx in sorted(picked):
        src, dst = pairs[idx]
        spec = draw(edge_st)
        g = _guard_poly(sp, spec["var"], spec["rel"], spec["k"],
                        spec["against_param"])
        resets = frozenset({"x"}) if spec["reset_x"] else frozenset()
        edges.append(Edge(f"l{src}", g, None, resets, f"l{dst}"))
    locs = [Location("l0", inv), Location("l1", inv),
            Location("l2", univ, is_bad=True)]
    aut = Automaton("R", (), locs, "l0", edges)
    return compose([aut], ("x", "y"), ("p",)), sp


@settings(max_examples=40, deadline=None)
@given(acyclic_net(), st.integers(min_value=0, max_value=3))
def test_subsumption_does_not_change_verdicts(netsp, pv):
    net, sp = netsp
    dom = pin(sp.param_space(), p=pv)
    a = reachability_verify(net, dom, subsumption=True)
    b = reachability_verify(net, dom, subsumption=False)
    assert a.schedulable == b.schedulable


@settings(max_examples=40, deadline=None)
@given(acyclic_net())
def test_synth_membership_matches_pinned_verdicts(netsp):
    net, sp = netsp
    dom = box(sp.param_space(), p=(0, 3))
    bad, exact = ef_synth(net, dom)
    assert exact
    for pv in range(0, 4):
        v = reachability_verify(net, pin(sp.param_space(), p=pv))
        assert bad.membership({"p": F(pv)}) == (not v.schedulable)


@settings(max_examples=30, deadline=None)
@given(acyclic_net())
def test_synth_monotone_in_the_domain(netsp):
    net, sp = netsp
    inner_dom = box(sp.param_space(), p=(1, 2))
    outer_dom = box(sp.param_space(), p=(0, 3))
    inner, ei = ef_synth(net, inner_dom)
    outer, eo = ef_synth(net, outer_dom)
    assert ei and eo
    # every valuation bad within the small box is bad within the large one
    widened = inner.intersect(Region.of(box(sp.param_space(), p=(1, 2))))
    assert outer.contains(widened)
