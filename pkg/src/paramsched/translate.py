"""Compile a system spec into a network of stopwatch automata.

One automaton per concern:

* an activator per processing beats that processing's activation grid
  (a tick every period, anchored at time zero);
* a thread automaton walks its MAF cycle pattern, starting and
  finishing processings, emitting its activation and completion events,
  and owning the bad location ``deadlineMissed``;
* one scheduler automaton encodes preemptive fixed-priority scheduling
  through location stop sets (the execution clock of a processing only
  advances while its thread both executes that processing and holds the
  CPU), with optional context-switch locations;
* an observer automaton per selected reactivity chain reduces the
  end-to-end latency bound to reachability of its ``bad`` location.

Event and clock names are derived deterministically from spec names:
``actT1``, ``endT1``, ``startNavigation``, ``finishNavigation``,
``actNavigation`` (the activator tick), clocks ``xT1``,
``xExecNavigation``, ``xNavigation``, ``xNM``, ``xSwitch``, and the
parameter ``pSwitch`` pinned to the declared switch time.

Deadline detection is split across three mechanisms, all funnelled into
``deadlineMissed``:

* miss edges: at the deadline instant some processing of the current
  cycle still has execution budget left;
* late edges: the cycle's work is complete but the completion event has
  not been retired by the deadline (a completion racing a simultaneous
  preemption resolves in both orders; the deferred order counts as the
  worst case);
* tick-miss edges: an activator tick arrives while an instance of that
  processing from a cycle begun strictly earlier is still unfinished.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .geometry import ConvexPolyhedron, VariableSpace
from .model import (
    Param,
    Processing,
    ReactivityChain,
    SystemSpec,
    ThreadSpec,
    TimingValue,
    validate,
)
from .psa import Automaton, Edge, Location, Network, compose


class TranslateError(ValueError):
    """Spec not translatable (invalid or name derivation clashes)."""


# ---------------------------------------------------------------------------
# derived names


def act_thread(name: str) -> str:
    return "act" + name


def end_thread(name: str) -> str:
    return "end" + name


def late_thread(name: str) -> str:
    return "late" + name


def miss_thread(name: str) -> str:
    return "miss" + name


def start_proc(name: str) -> str:
    return "start" + name


def finish_proc(name: str) -> str:
    return "finish" + name


def tick_proc(name: str) -> str:
    return "act" + name


def thread_clock(name: str) -> str:
    return "x" + name


def exec_clock(name: str) -> str:
    return "xExec" + name


def activator_clock(name: str) -> str:
    return "x" + name


def observer_clock(name: str) -> str:
    return "x" + name


SWITCH_CLOCK = "xSwitch"
SWITCH_PARAM = "pSwitch"
GRANT = "grant"
BAD_THREAD_LOC = "deadlineMissed"
BAD_OBSERVER_LOC = "bad"


# ---------------------------------------------------------------------------
# constraint helpers (TimingValue-aware: a bound may be a parameter)


def _one(space, var: str, rel: str, tv: TimingValue):
    if isinstance(tv, Param):
        return ({var: Fraction(1), tv.name: Fraction(-1)}, rel, Fraction(0))
    return ({var: Fraction(1)}, rel, Fraction(tv))


def _poly(space, *constraints) -> ConvexPolyhedron:
    return ConvexPolyhedron(space, list(constraints))


# ---------------------------------------------------------------------------
# activators


def build_activator(p: Processing, space: VariableSpace) -> Automaton:
    """Periodic tick source for one processing (first tick at one period)."""
    x = activator_clock(p.name)
    tick = tick_proc(p.name)
    inv = _poly(space, _one(space, x, "<=", p.period))
    guard = _poly(space, _one(space, x, "=", p.period))
    reset = frozenset({x})
    return Automaton(
        name="activator" + p.name,
        alphabet=(tick,),
        locations=[Location("init", inv), Location("periodic", inv)],
        initial="init",
        edges=[Edge("init", guard, tick, reset, "periodic"),
               Edge("periodic", guard, tick, reset, "periodic")])


# ---------------------------------------------------------------------------
# threads


def _own_processings(t: ThreadSpec) -> list:
    seen = []
    for cycle in t.cycles:
        for pname in cycle:
            if pname not in seen:
                seen.append(pname)
    return seen


def build_thread(t: ThreadSpec, spec: SystemSpec,
                 space: VariableSpace) -> Automaton:
    """The MAF walker for one thread.

    Per cycle: a pre location per processing (urgent handoff into the
    matching exec location), an exec location bounded by the processing's
    WCET, an ending location that emits the completion event the moment
    the thread still holds the CPU, and an idle tail until the next
    period.  The thread's own execution clocks are stopped everywhere
    except in the single location that runs them; the scheduler stops
    them too whenever the thread is preempted, so a clock advances only
    while its processing really occupies the CPU.
    """
    if any(len(c) == 0 for c in t.cycles):
        raise TranslateError(f"thread {t.name!r}: empty cycles are not "
                             f"translatable")
    xT = thread_clock(t.name)
    own = _own_processings(t)
    own_exec = {exec_clock(p) for p in own}
    wcet = {p: spec.processing(p).wcet for p in own}
    univ = ConvexPolyhedron.universe(space)

    def stops(running: Optional[str]) -> frozenset:
        if running is None:
            return frozenset(own_exec)
        return frozenset(own_exec - {exec_clock(running)})

    locs = []
    edges = []
    n = t.n_cycles

    def pre_name(c, p):
        return f"pre_{c}_{p}"

    def exec_name(c, p):
        return f"exec_{c}_{p}"

    locs.append(Location(
        "init", _poly(space, _one(space, xT, "<=", t.offset)),
        stopped=stops(None)))
    edges.append(Edge("init",
                      _poly(space, _one(space, xT, "=", t.offset)),
                      act_thread(t.name), frozenset({xT}),
                      pre_name(0, t.cycles[0][0])))

    for c, cycle in enumerate(t.cycles):
        last = cycle[-1]
        for i, p in enumerate(cycle):
            xp = exec_clock(p)
            if i == 0:
                # start of the cycle: the first processing begins at the
                # activation instant (the thread clock never stops, so
                # this is urgent even while preempted or mid-switch)
                pre_inv = _poly(space, _one(space, xT, "<=", Fraction(0)))
                pre_stop = stops(None)
            else:
                # the previous processing's clock, just reset, advances
                # only while the thread holds the CPU: the next start is
                # urgent exactly when the thread is running
                prev = exec_clock(cycle[i - 1])
                pre_inv = _poly(space,
                                ({prev: Fraction(1)}, "<=", Fraction(0)),
                                _one(space, xT, "<=", t.deadline))
                pre_stop = stops(cycle[i - 1])
            locs.append(Location(pre_name(c, p), pre_inv, stopped=pre_stop))
            exec_inv = _poly(space,
                             _one(space, xT, "<=", t.deadline),
                             ({xp: Fraction(1)}, "<=", wcet[p]))
            locs.append(Location(exec_name(c, p), exec_inv, stopped=stops(p)))
            edges.append(Edge(pre_name(c, p), univ, start_proc(p),
                              frozenset(), exec_name(c, p)))
            nxt = (f"ending_{c}" if i == len(cycle) - 1
                   else pre_name(c, cycle[i + 1]))
            edges.append(Edge(f"exec_{c}_{p}",
                              _poly(space,
                                    ({xp: Fraction(1)}, "=", wcet[p])),
                              finish_proc(p), frozenset({xp}), nxt))
        # completed: emit the end event while running (urgent through the
        # last processing's reset clock) or retire late
        ending_inv = _poly(space,
                           ({exec_clock(last): Fraction(1)}, "<=",
                            Fraction(0)),
                           _one(space, xT, "<=", t.period))
        locs.append(Location(f"ending_{c}", ending_inv, stopped=stops(last)))
        edges.append(Edge(f"ending_{c}", univ, end_thread(t.name),
                          frozenset(), f"idle_{c}"))
        edges.append(Edge(f"ending_{c}",
                          _poly(space, _one(space, xT, ">", t.deadline)),
                          late_thread(t.name), frozenset(), BAD_THREAD_LOC))
        locs.append(Location(f"idle_{c}",
                             _poly(space, _one(space, xT, "<=", t.period)),
                             stopped=stops(None)))
        edges.append(Edge(f"idle_{c}",
                          _poly(space, _one(space, xT, "=", t.period)),
                          act_thread(t.name), frozenset({xT}),
                          pre_name((c + 1) % n, t.cycles[(c + 1) % n][0])))

    locs.append(Location(BAD_THREAD_LOC, univ, stopped=stops(None),
                         is_bad=True))

    # deadline-miss edges: at the deadline instant, some processing at or
    # after the current position still has budget left
    for c, cycle in enumerate(t.cycles):
        for i, p in enumerate(cycle):
            for src in (pre_name(c, p), f"exec_{c}_{p}"):
                for q in cycle[i:]:
                    xq = exec_clock(q)
                    g = _poly(space,
                              _one(space, xT, "=", t.deadline),
                              ({xq: Fraction(1)}, "<", wcet[q]))
                    edges.append(Edge(src, g, miss_thread(t.name),
                                      frozenset(), BAD_THREAD_LOC))

    # activator handshake: accept every owned tick everywhere (so the
    # activators never block), plus tick-miss edges where a tick closes
    # the window of a still-unfinished instance
    nonbad = [loc.name for loc in locs if not loc.is_bad]
    tick_edges = []
    for p in own:
        tick = tick_proc(p)
        for ln in nonbad:
            tick_edges.append(Edge(ln, univ, tick, frozenset(), ln))
    miss_tick = []
    for p in own:
        tick = tick_proc(p)
        xp = exec_clock(p)
        for c, cycle in enumerate(t.cycles):
            if p not in cycle:
                continue
            pos = cycle.index(p)
            for j, q in enumerate(cycle):
                if j > pos:
                    break
                g = _poly(space,
                          ({xp: Fraction(1)}, "<", wcet[p]),
                          _one(space, xT, ">", Fraction(0)))
                miss_tick.append(Edge(pre_name(c, q), g, tick, frozenset(),
                                      BAD_THREAD_LOC))
                miss_tick.append(Edge(f"exec_{c}_{q}", g, tick, frozenset(),
                                      BAD_THREAD_LOC))
    edges.extend(miss_tick)
    edges.extend(tick_edges)

    alphabet = ([act_thread(t.name), end_thread(t.name),
                 late_thread(t.name), miss_thread(t.name)]
                + [start_proc(p) for p in own]
                + [finish_proc(p) for p in own]
                + [tick_proc(p) for p in own])
    return Automaton("thread" + t.name, alphabet, locs, "init", edges)


# ---------------------------------------------------------------------------
# scheduler


def _sched_loc_name(running: Optional[str], waiting: tuple) -> str:
    if running is None:
        return "idle"
    name = "run" + running
    if waiting:
        name += "_w" + "".join(waiting)
    return name


def _switch_loc_name(target: str, waiting: tuple) -> str:
    name = "sw" + target
    if waiting:
        name += "_w" + "".join(waiting)
    return name


def build_scheduler(threads: Sequence[ThreadSpec], switch_time: Fraction,
                    spec: SystemSpec, space: VariableSpace) -> Automaton:
    """Preemptive fixed-priority scheduler over location stop sets.

    Normal locations are (running thread, waiting set) with the running
    thread outranking every waiter; they stop the execution clocks of
    every thread except the running one.  With a positive switch time,
    an activation that displaces the running thread routes through a
    switching location (all execution clocks stopped) holding the CPU
    for exactly the switch time; a higher-priority arrival during a
    switch retargets it and is granted directly on exit, paying nothing
    extra.  Dispatch from idle, release to idle, and resuming a waiter
    after the running thread ends are all free: only activation-driven
    displacement pays.
    """
    order = sorted(threads, key=lambda t: -t.priority)
    names = [t.name for t in order]
    prio = {t.name: t.priority for t in order}
    by_name = {t.name: t for t in order}
    all_exec = set()
    exec_of = {}
    for t in order:
        own = {exec_clock(p) for p in _own_processings(t)}
        exec_of[t.name] = own
        all_exec |= own
    with_switch = switch_time > 0

    def waiting_key(ws) -> tuple:
        return tuple(sorted(ws, key=lambda n: -prio[n]))

    def subsets(pool):
        out = [()]
        for n in pool:
            out += [s + (n,) for s in out]
        return [waiting_key(s) for s in out]

    univ = ConvexPolyhedron.universe(space)
    locs = [Location("idle", univ, stopped=frozenset(all_exec))]
    normal = {}
    for r in names:
        lower = [n for n in names if prio[n] < prio[r]]
        for W in subsets(lower):
            ln = _sched_loc_name(r, W)
            normal[(r, W)] = ln
            locs.append(Location(
                ln, univ, stopped=frozenset(all_exec - exec_of[r])))
    switching = {}
    if with_switch:
        sw_inv = _poly(space, ({SWITCH_CLOCK: Fraction(1), SWITCH_PARAM:
                                Fraction(-1)}, "<=", Fraction(0)))
        for target in names:
            rest = [n for n in names if n != target]
            for W in subsets(rest):
                ln = _switch_loc_name(target, W)
                switching[(target, W)] = ln
                locs.append(Location(ln, sw_inv,
                                     stopped=frozenset(all_exec)))

    sw_reset = frozenset({SWITCH_CLOCK})
    rollover = {t.name: _poly(space, _one(space, thread_clock(t.name), "=",
                                          t.period))
                for t in order}
    edges = []

    def to_running(target, W, paid):
        """Edge target for a handover; pays a switch when configured."""
        if with_switch and paid:
            return switching[(target, W)], sw_reset
        return normal[(target, W)], frozenset()

    for t in names:
        edges.append(Edge("idle", univ, act_thread(t), frozenset(),
                          normal[(t, ())]))
    for (r, W), ln in sorted(normal.items(), key=lambda kv: kv[1]):
        active = {r, *W}
        for t in names:
            if t in active:
                continue
            if prio[t] > prio[r]:
                tgt, rs = to_running(t, waiting_key(W + (r,)), paid=True)
                edges.append(Edge(ln, univ, act_thread(t), rs, tgt))
            else:
                edges.append(Edge(ln, univ, act_thread(t), frozenset(),
                                  normal[(r, waiting_key(W + (t,)))]))
        if W:
            # voluntary release: the highest waiter resumes at no cost
            h = W[0]
            tgt, rs = to_running(h, W[1:], paid=False)
            edges.append(Edge(ln, univ, end_thread(r), rs, tgt))
        else:
            edges.append(Edge(ln, univ, end_thread(r), frozenset(), "idle"))
        for t in W:
            # a waiter reaching its next period retires without a grant
            rest = waiting_key(tuple(x for x in W if x != t))
            edges.append(Edge(ln, rollover[t], end_thread(t), frozenset(),
                              normal[(r, rest)]))

    if with_switch:
        grant_guard = _poly(space, ({SWITCH_CLOCK: Fraction(1),
                                     SWITCH_PARAM: Fraction(-1)},
                                    "=", Fraction(0)))
        for (target, W), ln in sorted(switching.items(),
                                      key=lambda kv: kv[1]):
            pool = {target, *W}
            for t in names:
                if t in pool:
                    continue
                edges.append(Edge(
                    ln, univ, act_thread(t), frozenset(),
                    switching[(target, waiting_key(W + (t,)))]))
            # a higher-priority arrival during the switch retargets it at
            # no extra cost: on exit the CPU goes straight to the best
            # claimant, never through a second switching window
            h = max(pool, key=lambda n: prio[n])
            rest = waiting_key(tuple(pool - {h}))
            edges.append(Edge(ln, grant_guard, GRANT, frozenset(),
                              normal[(h, rest)]))
            for t in W:
                rest = waiting_key(tuple(x for x in W if x != t))
                edges.append(Edge(ln, rollover[t], end_thread(t),
                                  frozenset(), switching[(target, rest)]))
            # the switch target itself reaching its period boundary:
            # retire it and let the in-flight switch continue toward the
            # best remaining waiter (or stand down entirely)
            if W:
                h2 = W[0]
                edges.append(Edge(ln, rollover[target], end_thread(target),
                                  frozenset(), switching[(h2, W[1:])]))
            else:
                edges.append(Edge(ln, rollover[target], end_thread(target),
                                  frozenset(), "idle"))

    alphabet = ([act_thread(n) for n in names]
                + [end_thread(n) for n in names])
    if with_switch:
        alphabet.append(GRANT)
    return Automaton("scheduler", alphabet, locs, "idle", edges)


# ---------------------------------------------------------------------------
# reactivity observers


def build_observer(r: ReactivityChain, spec: SystemSpec,
                   space: VariableSpace) -> Automaton:
    """Latency watchdog for one chain, reduced to reachability of bad.

    The observer guesses (nondeterministically, in init) which
    activation of the first thread to track, then follows the chain
    through start/finish of each processing and, across thread
    boundaries, the producer's completion and the consumer's next
    activation.  The deliberate absence of the producer's completion
    event while waiting for that activation kills wrong guesses.  Any
    event observed after the bound while still tracking leads to bad;
    a tracked chain completing within the bound disarms back to init.
    """
    try:
        hops = [(p, spec.thread_of(p).name) for p in r.chain]
    except Exception as exc:
        raise TranslateError(f"reactivity {r.name!r}: {exc}")
    xr = observer_clock(r.name)
    univ = ConvexPolyhedron.universe(space)
    in_bound = _poly(space, ({xr: Fraction(1)}, "<=", r.bound))
    over = _poly(space, ({xr: Fraction(1)}, ">", r.bound))

    sigma = []

    def ev(name):
        if name not in sigma:
            sigma.append(name)

    ev(act_thread(hops[0][1]))
    for i, (p, tn) in enumerate(hops):
        ev(start_proc(p))
        ev(finish_proc(p))
        if i + 1 < len(hops):
            nxt_thread = hops[i + 1][1]
            if nxt_thread != tn:
                ev(end_thread(tn))
                ev(act_thread(nxt_thread))
    ev(end_thread(hops[-1][1]))

    # location list and the single awaited action per tracking location,
    # with optional extra exclusions for the wrong-guess blocker
    track = []        # (name, awaited action, excluded loops)

    def loc(name, awaited, excluded=()):
        track.append((name, awaited, set(excluded)))

    for i, (p, tn) in enumerate(hops):
        loc(f"waitStart{p}", start_proc(p))
        loc(f"waitFinish{p}", finish_proc(p))
        if i + 1 < len(hops):
            np_, ntn = hops[i + 1]
            if ntn != tn:
                loc(f"waitEnd{tn}_{i}", end_thread(tn))
                loc(f"waitAct{ntn}_{i}", act_thread(ntn),
                    excluded={end_thread(tn)})
    final = f"waitEnd{hops[-1][1]}_final"
    loc(final, end_thread(hops[-1][1]))

    locs = [Location("init", univ)]
    # xr is reset on every idle move: a clock that never resets keeps
    # zones from recurring, so the product would never close
    edges = [Edge("init", univ, a, frozenset({xr}), "init") for a in sigma]
    edges.append(Edge("init", univ, act_thread(hops[0][1]),
                      frozenset({xr}), track[0][0]))
    for idx, (name, awaited, excluded) in enumerate(track):
        locs.append(Location(name, univ))
        if name == final:
            # in-bound completion disarms; later instances are tracked
            # by the guessing branch that stayed in init all along
            edges.append(Edge(name, in_bound, awaited, frozenset({xr}),
                              "init"))
        else:
            edges.append(Edge(name, univ, awaited, frozenset(),
                              track[idx + 1][0]))
        for a in sigma:
            if a == awaited or a in excluded:
                continue
            edges.append(Edge(name, univ, a, frozenset(), name))
        # anything observed past the bound while still tracking is a miss
        for a in sigma:
            if a in excluded:
                continue
            edges.append(Edge(name, over, a, frozenset(), BAD_OBSERVER_LOC))
    locs.append(Location(BAD_OBSERVER_LOC, univ, is_bad=True))
    return Automaton("observer" + r.name, sigma, locs, "init", edges)


# ---------------------------------------------------------------------------
# assembly


def network_space(spec: SystemSpec, observers: Iterable[str] = ()
                  ) -> VariableSpace:
    clocks = []
    for t in spec.threads:
        clocks.append(thread_clock(t.name))
    for p in spec.processings:
        clocks.append(exec_clock(p.name))
    for p in spec.processings:
        clocks.append(activator_clock(p.name))
    chosen = set(observers)
    for r in spec.reactivities:
        if r.name in chosen:
            clocks.append(observer_clock(r.name))
    if spec.switch_time > 0:
        clocks.append(SWITCH_CLOCK)
    params = {d.name for d in spec.parameters}
    if spec.switch_time > 0:
        params.add(SWITCH_PARAM)
    if len(set(clocks)) != len(clocks):
        raise TranslateError("derived clock names collide; rename spec "
                             "entities")
    return VariableSpace(tuple(clocks), tuple(sorted(params)))


def parameter_domain(spec: SystemSpec, space: VariableSpace
                     ) -> ConvexPolyhedron:
    """Declared parameter box, with pSwitch pinned to the switch time."""
    pspace = space.param_space()
    dom = spec.param_domain(pspace)
    if SWITCH_PARAM in pspace.params:
        dom = dom.with_constraints(
            [({SWITCH_PARAM: Fraction(1)}, "=", spec.switch_time)])
    return dom


def assemble(spec: SystemSpec, observers: Iterable[str] = ()):
    """Build the whole network plus its bad-location specification."""
    diags = validate(spec)
    if diags:
        raise TranslateError(
            "spec is invalid: " + "; ".join(str(d) for d in diags))
    for p in spec.processings:
        if isinstance(p.wcet, Param) or isinstance(p.period, Param):
            raise TranslateError(
                f"processing {p.name!r}: parametric wcet/period is not "
                f"supported (parameters range over offsets and deadlines)")
    known = {r.name for r in spec.reactivities}
    missing = sorted(set(observers) - known)
    if missing:
        raise TranslateError(f"unknown reactivities: {missing}")
    wanted = set(observers)
    chosen = [r.name for r in spec.reactivities if r.name in wanted]
    space = network_space(spec, chosen)
    automata = []
    for p in spec.processings:
        automata.append(build_activator(p, space))
    for t in spec.threads:
        automata.append(build_thread(t, spec, space))
    automata.append(build_scheduler(spec.threads, spec.switch_time, spec,
                                    space))
    bad = set()
    for t in spec.threads:
        bad.add(("thread" + t.name, BAD_THREAD_LOC))
    for r in spec.reactivities:
        if r.name in chosen:
            automata.append(build_observer(r, spec, space))
            bad.add(("observer" + r.name, BAD_OBSERVER_LOC))
    net = compose(automata, space.clocks, space.params)
    for aname, lname in bad:
        aut = net.automata[net.automaton_index(aname)]
        assert aut.location(lname).is_bad
    return net, frozenset(bad)


# ---------------------------------------------------------------------------
# documentation export


def automaton_to_text(aut: Automaton) -> str:
    """Human-readable dump: locations with annotations, then edges."""
    out = [f"automaton {aut.name}"]
    out.append("  alphabet " + " ".join(sorted(aut.alphabet)))
    for name, loc in aut.locations.items():
        flags = []
        if name == aut.initial:
            flags.append("initial")
        if loc.is_bad:
            flags.append("bad")
        inv = " & ".join(c.pretty() for c in loc.invariant.constraints)
        line = f"  loc {name}"
        if flags:
            line += " [" + ",".join(flags) + "]"
        if inv:
            line += f" inv {inv}"
        if loc.stopped:
            line += " stop {" + ",".join(sorted(loc.stopped)) + "}"
        out.append(line)
    for e in aut.edges:
        g = " & ".join(c.pretty() for c in e.guard.constraints) or "true"
        line = f"  edge {e.source} -> {e.target} when {g}"
        if e.action:
            line += f" sync {e.action}"
        if e.resets:
            line += " reset {" + ",".join(sorted(e.resets)) + "}"
        out.append(line)
    return "\n".join(out) + "\n"
