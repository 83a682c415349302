"""Structural checks on the spec-to-automata translation."""

from fractions import Fraction

import pytest

from paramsched.model import (
    Param,
    ParamDecl,
    Processing,
    SystemSpec,
    ThreadSpec,
    nominal_fcs,
    nominal_fcs_switch,
    parameterize,
)
from paramsched.psa import initial_state, successors
from paramsched.translate import (
    SWITCH_CLOCK,
    SWITCH_PARAM,
    TranslateError,
    assemble,
    automaton_to_text,
    build_activator,
    build_observer,
    build_thread,
    network_space,
    observer_clock,
    parameter_domain,
)


def net_map(net):
    return {a.name: a for a in net.automata}


class TestAssembleShape:
    def test_nominal_without_observers(self):
        net, bad = assemble(nominal_fcs())
        assert len(net.automata) == 8
        assert len(bad) == 3
        assert bad == {("threadT1", "deadlineMissed"),
                       ("threadT2", "deadlineMissed"),
                       ("threadT3", "deadlineMissed")}

    def test_nominal_with_one_observer(self):
        net, bad = assemble(nominal_fcs(), ["NM"])
        assert len(net.automata) == 9
        assert len(bad) == 4
        assert ("observerNM", "bad") in bad

    def test_nominal_with_all_observers(self):
        spec = nominal_fcs()
        names = [r.name for r in spec.reactivities]
        net, bad = assemble(spec, names)
        assert len(net.automata) == 11
        assert len(bad) == 6

    def test_automata_order_is_activators_threads_scheduler_observers(self):
        net, _ = assemble(nominal_fcs(), ["NM", "NGC"])
        names = [a.name for a in net.automata]
        assert names == [
            "activatorNavigation", "activatorControl", "activatorMonitoring",
            "activatorGuidance", "threadT1", "threadT2", "threadT3",
            "scheduler", "observerNGC", "observerNM"]

    def test_observer_order_ignores_argument_order(self):
        a, _ = assemble(nominal_fcs(), ["NM", "NGC"])
        b, _ = assemble(nominal_fcs(), ["NGC", "NM"])
        assert [x.name for x in a.automata] == [x.name for x in b.automata]

    def test_switch_fixture_has_switching_locations(self):
        net, _ = assemble(nominal_fcs_switch())
        sched = net_map(net)["scheduler"]
        sw = [n for n in sched.locations if n.startswith("sw")]
        assert sw, "expected switching locations with a positive switch time"
        assert SWITCH_CLOCK in net.clocks
        assert SWITCH_PARAM in net.params

    def test_nominal_has_no_switching_locations(self):
        net, _ = assemble(nominal_fcs())
        sched = net_map(net)["scheduler"]
        assert not [n for n in sched.locations if n.startswith("sw")]
        assert SWITCH_CLOCK not in net.clocks
        assert SWITCH_PARAM not in net.params

    def test_bad_locations_are_flagged(self):
        net, bad = assemble(nominal_fcs(), ["NM"])
        autos = net_map(net)
        for aname, lname in bad:
            assert autos[aname].location(lname).is_bad

    def test_unknown_reactivity_rejected(self):
        with pytest.raises(TranslateError, match="unknown"):
            assemble(nominal_fcs(), ["NOPE"])

    def test_invalid_spec_rejected(self):
        spec = nominal_fcs()
        broken = SystemSpec(
            processings=spec.processings,
            threads=tuple(
                t if t.name != "T1" else ThreadSpec(
                    name="T1", priority=t.priority, period=t.period,
                    offset=Fraction(99), deadline=t.deadline, maf=t.maf,
                    cycles=t.cycles)
                for t in spec.threads),
            reactivities=spec.reactivities)
        with pytest.raises(TranslateError, match="invalid"):
            assemble(broken)

    def test_parametric_wcet_rejected(self):
        spec = nominal_fcs()
        broken = SystemSpec(
            processings=tuple(
                p if p.name != "Navigation" else Processing(
                    "Navigation", Param("w"), p.period)
                for p in spec.processings),
            threads=spec.threads,
            parameters=(ParamDecl("w", lo=Fraction(0), hi=Fraction(1)),))
        with pytest.raises(TranslateError, match="wcet"):
            assemble(broken)


class TestActivator:
    def test_two_locations_and_tick_loop(self):
        spec = nominal_fcs()
        space = network_space(spec)
        act = build_activator(spec.processing("Navigation"), space)
        assert set(act.locations) == {"init", "periodic"}
        assert act.alphabet == {"actNavigation"}
        assert all(e.action == "actNavigation" for e in act.edges)
        assert all(e.resets == frozenset({"xNavigation"}) for e in act.edges)


class TestThread:
    def test_t1_location_inventory(self):
        net, _ = assemble(nominal_fcs())
        t1 = net_map(net)["threadT1"]
        assert set(t1.locations) == {
            "init", "pre_0_Navigation", "exec_0_Navigation", "ending_0",
            "idle_0", "pre_1_Navigation", "exec_1_Navigation",
            "pre_1_Control", "exec_1_Control", "ending_1", "idle_1",
            "deadlineMissed"}

    def test_single_cycle_thread_inventory(self):
        net, _ = assemble(nominal_fcs())
        t2 = net_map(net)["threadT2"]
        assert set(t2.locations) == {
            "init", "pre_0_Monitoring", "exec_0_Monitoring", "ending_0",
            "idle_0", "deadlineMissed"}

    def test_exec_stops_all_other_own_exec_clocks(self):
        net, _ = assemble(nominal_fcs())
        t1 = net_map(net)["threadT1"]
        loc = t1.location("exec_1_Control")
        assert loc.stopped == frozenset({"xExecNavigation"})
        loc = t1.location("exec_1_Navigation")
        assert loc.stopped == frozenset({"xExecControl"})

    def test_idle_and_init_stop_every_own_exec_clock(self):
        net, _ = assemble(nominal_fcs())
        t1 = net_map(net)["threadT1"]
        own = frozenset({"xExecNavigation", "xExecControl"})
        assert t1.location("init").stopped == own
        assert t1.location("idle_0").stopped == own

    def test_ticks_accepted_everywhere_outside_bad(self):
        net, _ = assemble(nominal_fcs())
        t1 = net_map(net)["threadT1"]
        for ln in t1.locations:
            if ln == "deadlineMissed":
                continue
            for tick in ("actNavigation", "actControl"):
                assert t1.out_edges_for(ln, tick), (ln, tick)
        assert not t1.out_edges("deadlineMissed")

    def test_miss_edges_target_bad(self):
        net, _ = assemble(nominal_fcs())
        t2 = net_map(net)["threadT2"]
        miss = [e for e in t2.edges if e.action == "missT2"]
        assert miss
        assert all(e.target == "deadlineMissed" for e in miss)
        assert {e.source for e in miss} == {"pre_0_Monitoring",
                                            "exec_0_Monitoring"}

    def test_late_edge_exists_per_cycle(self):
        net, _ = assemble(nominal_fcs())
        t1 = net_map(net)["threadT1"]
        late = [e for e in t1.edges if e.action == "lateT1"]
        assert {e.source for e in late} == {"ending_0", "ending_1"}
        assert all(e.target == "deadlineMissed" for e in late)

    def test_empty_cycle_rejected(self):
        spec = nominal_fcs()
        t = ThreadSpec(name="T9", priority=9, period=Fraction(5),
                       offset=Fraction(0), deadline=Fraction(5),
                       maf=Fraction(10), cycles=(("Navigation",), ()))
        with pytest.raises(TranslateError, match="empty"):
            build_thread(t, spec, network_space(spec))


class TestScheduler:
    def test_normal_location_count(self):
        net, _ = assemble(nominal_fcs())
        sched = net_map(net)["scheduler"]
        # idle + priority-consistent (running, waiting) combinations
        assert len(sched.locations) == 8

    def test_stop_sets_cover_everyone_but_the_runner(self):
        net, _ = assemble(nominal_fcs())
        sched = net_map(net)["scheduler"]
        all_exec = {"xExecNavigation", "xExecControl", "xExecMonitoring",
                    "xExecGuidance"}
        assert sched.location("idle").stopped == all_exec
        assert sched.location("runT1").stopped == {
            "xExecMonitoring", "xExecGuidance"}
        assert sched.location("runT2_wT3").stopped == {
            "xExecNavigation", "xExecControl", "xExecGuidance"}

    def test_switch_locations_stop_everything(self):
        net, _ = assemble(nominal_fcs_switch())
        sched = net_map(net)["scheduler"]
        all_exec = {"xExecNavigation", "xExecControl", "xExecMonitoring",
                    "xExecGuidance"}
        for ln, loc in sched.locations.items():
            if ln.startswith("sw"):
                assert loc.stopped == all_exec, ln

    def test_preemption_pays_a_switch_only_when_configured(self):
        plain, _ = assemble(nominal_fcs())
        sched = net_map(plain)["scheduler"]
        targets = {e.target for e in sched.edges
                   if e.source == "runT2" and e.action == "actT1"}
        assert targets == {"runT1_wT2"}
        switched, _ = assemble(nominal_fcs_switch())
        sched = net_map(switched)["scheduler"]
        targets = {e.target for e in sched.edges
                   if e.source == "runT2" and e.action == "actT1"}
        assert targets == {"swT1_wT2"}

    def test_handover_to_idle_is_free_even_with_switch(self):
        net, _ = assemble(nominal_fcs_switch())
        sched = net_map(net)["scheduler"]
        targets = {e.target for e in sched.edges
                   if e.source == "runT3" and e.action == "endT3"}
        assert targets == {"idle"}


class TestObserver:
    def test_nm_nine_location_shape(self):
        spec = nominal_fcs()
        net, _ = assemble(spec, ["NM"])
        obs = net_map(net)["observerNM"]
        assert len(obs.locations) == 9
        assert set(obs.locations) == {
            "init", "waitStartNavigation", "waitFinishNavigation",
            "waitEndT1_0", "waitActT2_0", "waitStartMonitoring",
            "waitFinishMonitoring", "waitEndT2_final", "bad"}

    def test_same_thread_chain_has_no_interthread_wait(self):
        spec = nominal_fcs()
        net, _ = assemble(spec, ["NC"])
        obs = net_map(net)["observerNC"]
        assert set(obs.locations) == {
            "init", "waitStartNavigation", "waitFinishNavigation",
            "waitStartControl", "waitFinishControl", "waitEndT1_final",
            "bad"}

    def test_alphabet_is_a_subset_of_system_events(self):
        spec = nominal_fcs()
        net, _ = assemble(spec, ["NM", "NGC", "NC"])
        autos = net_map(net)
        system_events = set()
        for a in net.automata:
            if not a.name.startswith("observer"):
                system_events |= a.alphabet
        for name in ("observerNM", "observerNGC", "observerNC"):
            assert autos[name].alphabet <= system_events

    def test_init_never_blocks_and_always_resets_its_clock(self):
        # the watchdog clock must never run free in init, or zones
        # could not recur and reachability would not terminate
        spec = nominal_fcs()
        net, _ = assemble(spec, ["NM"])
        obs = net_map(net)["observerNM"]
        for action in obs.alphabet:
            loops = obs.out_edges_for("init", action)
            assert loops
            for _i, e in loops:
                assert observer_clock("NM") in e.resets

    def test_wrong_guess_blocks_on_producer_end(self):
        # while awaiting the consumer activation, the producer completing
        # again proves the guess tracked a stale instance; that branch
        # must die rather than keep counting
        spec = nominal_fcs()
        net, _ = assemble(spec, ["NM"])
        obs = net_map(net)["observerNM"]
        assert not obs.out_edges_for("waitActT2_0", "endT1")

    def test_completion_disarms_only_within_bound(self):
        spec = nominal_fcs()
        net, _ = assemble(spec, ["NM"])
        obs = net_map(net)["observerNM"]
        disarm = [e for e in obs.edges if e.source == "waitEndT2_final"
                  and e.target == "init"]
        assert len(disarm) == 1
        e = disarm[0]
        assert e.action == "endT2"
        assert observer_clock("NM") in e.resets
        # the guard admits exactly the within-bound completions
        xr = observer_clock("NM")
        space = e.guard.space
        assert e.guard.membership({v: Fraction(55) if v == xr else Fraction(0)
                                   for v in space.variables})
        assert not e.guard.membership(
            {v: Fraction(56) if v == xr else Fraction(0)
             for v in space.variables})

    def test_unknown_chain_processing_rejected(self):
        from paramsched.model import ReactivityChain
        spec = nominal_fcs()
        chain = ReactivityChain("XX", ("Navigation", "Mystery"), Fraction(9))
        with pytest.raises(TranslateError):
            build_observer(chain, spec, network_space(spec))


class TestDeterminism:
    def test_assemble_twice_gives_identical_structure(self):
        a, _ = assemble(nominal_fcs(), ["NM"])
        b, _ = assemble(nominal_fcs(), ["NM"])
        assert [x.name for x in a.automata] == [x.name for x in b.automata]
        for x, y in zip(a.automata, b.automata):
            assert list(x.locations) == list(y.locations)
            assert x.edges == y.edges


class TestStopDiscipline:
    def test_at_most_one_exec_clock_elapsing(self):
        # in every reachable location vector, the thread and scheduler
        # stop sets jointly freeze all execution clocks but the one
        # processing actually occupying the CPU
        net, _ = assemble(nominal_fcs())
        dom = parameter_domain(nominal_fcs(), net.space)
        execs = {c for c in net.clocks if c.startswith("xExec")}
        autos = net.automata
        init = initial_state(net, dom)
        seen = {init.locs}
        frontier = [init]
        checked = 0
        while frontier and checked < 300:
            s = frontier.pop()
            checked += 1
            stopped = set()
            for a, ln in zip(autos, s.locs):
                stopped |= a.location(ln).stopped
            assert len(execs - stopped) <= 1, s.locs
            for _combo, t in successors(net, s):
                if t.locs not in seen:
                    seen.add(t.locs)
                    frontier.append(t)
        assert checked >= 40


class TestParameterDomain:
    def test_switch_parameter_is_pinned(self):
        spec = nominal_fcs_switch()
        net, _ = assemble(spec)
        dom = parameter_domain(spec, net.space)
        lo, los, hi, his = dom.var_interval(SWITCH_PARAM)
        assert lo == hi == Fraction(1, 2)

    def test_declared_bounds_carried_over(self):
        spec = parameterize(nominal_fcs(), ["deadlineT2"])
        net, _ = assemble(spec)
        dom = parameter_domain(spec, net.space)
        lo, los, hi, his = dom.var_interval("deadlineT2")
        assert (lo, hi) == (Fraction(0), Fraction(20))
        assert los and not his


class TestExport:
    def test_text_dump_mentions_structure(self):
        net, _ = assemble(nominal_fcs())
        text = automaton_to_text(net_map(net)["threadT2"])
        assert "loc deadlineMissed [bad]" in text
        assert "sync actT2" in text
        assert "stop {" in text
