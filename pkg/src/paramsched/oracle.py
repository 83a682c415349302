"""Exact-rational discrete-event simulator and cross-route validation.

This module is the independent second opinion on the symbolic analyses:
a concrete fixed-priority preemptive scheduler simulation over exact
rationals, plus helpers that compare its verdicts (and the symbolic
engine's) against a claimed schedulable region on a grid of parameter
valuations.

The simulator resolves the completion-versus-preemption race at a shared
instant according to a tie-break policy.  Under ``PREEMPT_FIRST`` a
thread whose work reaches zero exactly when a higher-priority thread
activates is preempted first: its completion is only retired once the
CPU returns to it (or at its own next period boundary, whichever comes
first).  Under ``FINISH_FIRST`` the completion retires before the
simultaneous arrival is considered.  The symbolic route explores both
orders, so its bad region brackets the two simulations: a miss under
``PREEMPT_FIRST`` must land in the symbolic bad region, and a valuation
the symbolic route declares schedulable must simulate cleanly under
both policies.

Deadline misses are retirement-based: an instance misses when it is not
retired by activation + deadline.  Processing ticks are checked on the
zero-anchored grid (k times the processing period, k >= 1): a tick
arriving while an instance from a cycle begun strictly earlier still
owes execution of that processing is a miss.  After a miss the run
continues; unfinished work is abandoned at the thread's next activation.

Reactivity latencies follow the data: a producing cycle's output becomes
visible at its activation plus its thread's deadline, a reader samples
the newest value visible strictly before its own activation, and hops
inside one thread and cycle hand the value over directly.  The primary
latency endpoint is the final consumer's visibility instant; the
completion (retirement) endpoint is reported alongside.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Optional, Sequence

from .geometry import format_rational
from .model import SystemSpec, validate


class OracleError(ValueError):
    """Simulation impossible (free parameters, invalid spec, bad args)."""


class TieBreak(enum.Enum):
    PREEMPT_FIRST = "preempt-first"
    FINISH_FIRST = "finish-first"


def _lcm_frac(a: Fraction, b: Fraction) -> Fraction:
    num = (a.numerator * b.denominator * a.denominator * b.numerator
           // gcd(a.numerator * b.denominator, b.numerator * a.denominator))
    return Fraction(num, a.denominator * b.denominator)


def default_horizon(spec: SystemSpec) -> Fraction:
    """Largest offset plus two hyperperiods of the MAF lengths."""
    horizon = Fraction(1)
    for t in spec.threads:
        horizon = _lcm_frac(horizon, t.maf)
    off = max((t.offset for t in spec.threads), default=Fraction(0))
    return off + 2 * horizon


# ---------------------------------------------------------------------------
# run records


@dataclass
class Event:
    time: Fraction
    kind: str                 # activate dispatch preempt start finish end
    thread: Optional[str]     # switch miss tick-miss
    processing: Optional[str] = None


@dataclass
class Instance:
    """One activation-to-retirement window of a thread."""
    thread: str
    activation: Fraction
    deadline: Fraction          # absolute
    cycle_index: int
    work: tuple                 # ((processing, wcet), ...)
    pos: int = 0
    executed: dict = field(default_factory=dict)
    started: dict = field(default_factory=dict)
    finished: dict = field(default_factory=dict)
    done_at: Optional[Fraction] = None      # work exhausted (raw completion)
    retired_at: Optional[Fraction] = None   # end event (recognized)
    abandoned: bool = False

    def remaining(self) -> Fraction:
        if self.pos >= len(self.work):
            return Fraction(0)
        name, wcet = self.work[self.pos]
        return wcet - self.executed.get(name, Fraction(0))

    def current(self) -> Optional[str]:
        if self.pos >= len(self.work):
            return None
        return self.work[self.pos][0]


@dataclass
class Miss:
    time: Fraction
    thread: str
    processing: Optional[str]
    reason: str               # "deadline" or "tick"


@dataclass
class Stats:
    context_switches: int = 0
    preemptions: int = 0


@dataclass
class SimResult:
    horizon: Fraction
    tie: TieBreak
    events: list
    instances: dict           # thread -> [Instance, ...] in activation order
    misses: list
    segments: list            # (from, to, thread, processing) CPU occupancy
    stats: Stats

    @property
    def ok(self) -> bool:
        return not self.misses

    def busy_time(self, lo: Fraction, hi: Fraction) -> Fraction:
        total = Fraction(0)
        for a, b, _t, _p in self.segments:
            total += max(Fraction(0), min(b, hi) - max(a, lo))
        return total

    def context_switches_in(self, lo: Fraction, hi: Fraction) -> int:
        """Changes of the running processing with start time in [lo, hi).

        Consecutive execution segments of the *same* processing (a
        preempted-and-resumed run) do not count; everything else,
        including switching between processings of one thread, does.
        """
        count = 0
        prev = None
        for a, _b, t, p in self.segments:
            if prev is not None and (t, p) != prev and lo <= a < hi:
                count += 1
            prev = (t, p)
        return count

    def preemptions_in(self, lo: Fraction, hi: Fraction) -> int:
        """Preemption events (displaced thread still had work) in [lo, hi)."""
        return sum(1 for e in self.events
                   if e.kind == "preempt" and lo <= e.time < hi)


# ---------------------------------------------------------------------------
# the simulator


class _Sim:
    def __init__(self, spec: SystemSpec, horizon: Fraction, tie: TieBreak):
        self.spec = spec
        self.horizon = horizon
        self.tie = tie
        self.threads = sorted(spec.threads, key=lambda t: -t.priority)
        self.prio = {t.name: t.priority for t in self.threads}
        self.by_name = {t.name: t for t in self.threads}
        self.next_act = {t.name: t.offset for t in self.threads}
        self.next_cycle = {t.name: 0 for t in self.threads}
        self.inst: dict = {t.name: None for t in self.threads}
        self.history: dict = {t.name: [] for t in self.threads}
        self.ticks = []           # sorted (time, processing) ascending
        for p in spec.processings:
            k = 1
            while k * p.period <= horizon:
                self.ticks.append((k * p.period, p.name))
                k += 1
        self.ticks.sort()
        self.tick_i = 0
        self.now = Fraction(0)
        self.occupant: Optional[str] = None
        self.switch_until: Optional[Fraction] = None
        self.switch_target: Optional[str] = None
        self.seg_start: Optional[Fraction] = None
        self.events: list = []
        self.misses: list = []
        self.segments: list = []
        self.stats = Stats()

    # -- bookkeeping -------------------------------------------------------

    def emit(self, kind, thread=None, processing=None, at=None):
        self.events.append(Event(self.now if at is None else at, kind,
                                 thread, processing))

    def active(self, name) -> Optional[Instance]:
        i = self.inst[name]
        if i is not None and i.retired_at is None:
            return i
        return None

    def wants_cpu(self, name) -> bool:
        i = self.active(name)
        return i is not None

    def best_claimant(self) -> Optional[str]:
        for t in self.threads:          # priority order
            if self.wants_cpu(t.name):
                return t.name
        return None

    # -- execution segments ------------------------------------------------

    def progress(self, upto: Fraction):
        if self.occupant is not None and self.switch_until is None:
            i = self.inst[self.occupant]
            dt = upto - self.now
            if dt > 0 and i is not None and i.pos < len(i.work):
                name, _w = i.work[i.pos]
                i.executed[name] = i.executed.get(name, Fraction(0)) + dt
                self.segments.append((self.now, upto, self.occupant, name))
        self.now = upto

    # -- recognition: finishes and (maybe) retirement ----------------------

    def recognize_finishes(self):
        """Advance through zero-remaining processings of the occupant."""
        if self.occupant is None or self.switch_until is not None:
            return
        i = self.inst[self.occupant]
        if i is None or i.retired_at is not None:
            return
        while i.pos < len(i.work) and i.remaining() == 0:
            name, _w = i.work[i.pos]
            i.finished[name] = self.now
            self.emit("finish", self.occupant, name)
            i.pos += 1
        if i.pos >= len(i.work) and i.done_at is None:
            i.done_at = self.now

    def retire(self, name, free=False):
        """End the instance; unfinished work (if any) is abandoned."""
        i = self.inst[name]
        i.retired_at = self.now
        if i.pos < len(i.work):
            i.abandoned = True
            # an abandoned instance whose deadline instant was not yet
            # processed (deadline == period roll-over) still missed
            if i.deadline >= self.now:
                self.emit("miss", name, i.current())
                self.misses.append(Miss(self.now, name, i.current(),
                                        "deadline"))
        self.emit("end", name)
        self.history[name].append(i)
        if self.occupant == name and not free:
            # voluntary release: the next claimant resumes at no cost,
            # only activation-driven displacement pays the switch
            self.occupant = None

    def retire_if_done(self):
        """A done occupant retires on the spot (it holds the CPU)."""
        if self.occupant is None or self.switch_until is not None:
            return
        i = self.inst[self.occupant]
        if i is not None and i.retired_at is None and i.done_at is not None:
            self.retire(self.occupant)

    # -- events ------------------------------------------------------------

    def activate(self, name):
        t = self.by_name[name]
        old = self.inst[name]
        if old is not None and old.retired_at is None:
            # period roll-over: the previous instance leaves its slot now,
            # retiring a deferred completion or abandoning leftovers
            was_target = self.switch_target == name
            self.retire(name, free=True)
            if self.occupant == name:
                self.occupant = None
            if was_target:
                self.switch_target = self.best_claimant()
                if self.switch_target is None:
                    # nobody left to switch to: the switch aborts early
                    self.switch_until = None
                    self.emit("switch-end", name)
        cycle = t.cycles[self.next_cycle[name]]
        work = tuple((p, self.spec.processing(p).wcet) for p in cycle)
        inst = Instance(
            thread=name,
            activation=self.now,
            deadline=self.now + t.deadline,
            cycle_index=self.next_cycle[name],
            work=work)
        self.inst[name] = inst
        self.emit("activation", name)
        if (self.switch_until is not None and self.switch_target is not None
                and self.prio[name] > self.prio[self.switch_target]):
            # retarget an in-flight switch without restarting it
            self.switch_target = name
        self.next_cycle[name] = (self.next_cycle[name] + 1) % t.n_cycles
        self.next_act[name] = self.now + t.period

    def tick_check(self, pname):
        thread = self.spec.thread_of(pname)
        i = self.active(thread.name)
        if i is None or i.activation >= self.now:
            return
        names = [w[0] for w in i.work]
        if pname not in names:
            return
        pos_p = names.index(pname)
        if i.pos > pos_p:
            return
        wcet = self.spec.processing(pname).wcet
        if i.executed.get(pname, Fraction(0)) < wcet:
            self.emit("tick-miss", thread.name, pname)
            self.misses.append(Miss(self.now, thread.name, pname, "tick"))

    def deadline_check(self, name):
        i = self.inst[name]
        if (i is not None and i.retired_at is None
                and i.deadline == self.now):
            self.emit("miss", name, i.current())
            self.misses.append(Miss(self.now, name, i.current(), "deadline"))

    # -- dispatching -------------------------------------------------------

    def grant(self, name):
        prev = self.occupant
        self.occupant = name
        self.switch_until = None
        self.switch_target = None
        if prev != name:
            self.stats.context_switches += 1
        self.emit("dispatch", name)
        i = self.inst[name]
        if i.done_at is not None and i.retired_at is None:
            # a deferred completion retires the moment it is scheduled;
            # the freed CPU passes straight to the next claimant
            self.retire(name)
            nxt = self.best_claimant()
            if nxt is not None:
                self.grant(nxt)
            return
        cur = i.current()
        if cur is not None and cur not in i.started:
            i.started[cur] = self.now
            self.emit("start", name, cur)

    def begin_switch(self, target):
        st = self.spec.switch_time
        self.switch_until = self.now + st
        self.switch_target = target
        self.emit("switch-begin", target)

    def reschedule(self):
        if self.switch_until is not None:
            return                      # in-flight switch; arrivals queue
        want = self.best_claimant()
        if want is None:
            self.occupant = None
            return
        if self.occupant == want:
            i = self.inst[want]
            cur = i.current()
            if cur is not None and cur not in i.started:
                i.started[cur] = self.now
                self.emit("start", want, cur)
            return
        if self.occupant is None:
            # dispatch from idle is free
            self.grant(want)
            return
        # thread-to-thread handover
        displaced = self.inst[self.occupant]
        if displaced is not None and displaced.retired_at is None \
                and displaced.remaining() > 0:
            self.stats.preemptions += 1
            self.emit("preempt", self.occupant)
        self.occupant = None
        if self.spec.switch_time > 0:
            self.begin_switch(want)
        else:
            self.grant(want)

    # -- main loop ---------------------------------------------------------

    def next_time(self):
        cand = []
        for t in self.threads:
            if self.next_act[t.name] <= self.horizon:
                cand.append(self.next_act[t.name])
            i = self.active(t.name)
            if i is not None and i.deadline <= self.horizon \
                    and i.deadline > self.now:
                cand.append(i.deadline)
        if self.tick_i < len(self.ticks):
            cand.append(self.ticks[self.tick_i][0])
        if self.switch_until is not None:
            cand.append(self.switch_until)
        if self.occupant is not None and self.switch_until is None:
            i = self.inst[self.occupant]
            if i is not None and i.retired_at is None:
                rem = i.remaining()
                if rem > 0:
                    cand.append(self.now + rem)
        cand = [c for c in cand if c > self.now]
        if not cand:
            return None
        nxt = min(cand)
        if nxt > self.horizon:
            return None
        return nxt

    def step(self):
        nxt = self.next_time()
        if nxt is None:
            return False
        self.progress(nxt)

        if self.switch_until == self.now:
            # switch done: the CPU goes straight to the best claimant (an
            # arrival mid-switch retargets the switch at no extra cost)
            target = self.switch_target
            self.switch_until = None
            self.switch_target = None
            self.emit("switch-end", target)
            best = self.best_claimant()
            if best is None:
                self.occupant = None
            else:
                self.grant(best)

        if self.tie is TieBreak.FINISH_FIRST:
            self.recognize_finishes()
            self.retire_if_done()
            self.collect_arrivals()
        else:
            # finishes are recognized before roll-overs: work that reached
            # its wcet at this instant is complete, not abandoned
            self.recognize_finishes()
            arrivals = self.collect_arrivals()
            defer = (self.occupant is not None and any(
                self.prio[a] > self.prio[self.occupant] for a in arrivals))
            if not defer:
                self.retire_if_done()

        # dispatch before the deadline checks: a deferred completion
        # granted exactly at its deadline retires on time
        self.reschedule()
        while self.tick_i < len(self.ticks) \
                and self.ticks[self.tick_i][0] == self.now:
            self.tick_check(self.ticks[self.tick_i][1])
            self.tick_i += 1
        for t in self.threads:
            self.deadline_check(t.name)
        return True

    def collect_arrivals(self):
        arrivals = []
        for t in self.threads:
            if self.next_act[t.name] == self.now:
                self.activate(t.name)
                arrivals.append(t.name)
        return arrivals

    def run(self):
        # time zero fires activations (offset 0) before anything else
        self.collect_arrivals()
        self.reschedule()
        while self.step():
            pass
        for name, i in self.inst.items():
            if i is not None and i.retired_at is None:
                self.history[name].append(i)
        return SimResult(
            horizon=self.horizon, tie=self.tie, events=self.events,
            instances=self.history, misses=self.misses,
            segments=self.segments, stats=self.stats)


def simulate(spec: SystemSpec, horizon=None,
             tie: TieBreak = TieBreak.PREEMPT_FIRST) -> SimResult:
    """Run one concrete trajectory of the system up to the horizon."""
    free = spec.free_parameters()
    if free:
        raise OracleError(
            f"cannot simulate with free parameters: {sorted(free)}")
    diags = validate(spec)
    if diags:
        raise OracleError(
            "spec is invalid: " + "; ".join(str(d) for d in diags))
    if horizon is None:
        horizon = default_horizon(spec)
    else:
        horizon = Fraction(horizon)
        if horizon <= 0:
            raise OracleError("horizon must be positive")
    return _Sim(spec, horizon, tie).run()


# ---------------------------------------------------------------------------
# reactivity measurement


@dataclass
class ChainMeasure:
    source_activation: Fraction
    final_activation: Fraction
    latency_visibility: Fraction
    latency_completion: Optional[Fraction]


@dataclass
class ChainReport:
    name: str
    bound: Fraction
    worst_visibility: Optional[Fraction]
    worst_completion: Optional[Fraction]
    measures: list

    @property
    def ok(self) -> bool:
        if self.worst_visibility is None:
            return True
        return self.worst_visibility <= self.bound


def _producer_for(spec, sim, consumer: Instance, pname: str,
                  consumer_pos: int):
    """The instance whose pname output the consumer's hop reads.

    Returns (instance, direct) or None.  Direct means same thread and
    cycle, earlier position; otherwise the newest instance of pname's
    thread that finished pname and became visible (activation plus
    deadline offset) strictly before the consumer's activation.
    """
    pthread = spec.thread_of(pname).name
    names = [w[0] for w in consumer.work]
    if pthread == consumer.thread and pname in names \
            and names.index(pname) < consumer_pos \
            and pname in consumer.finished:
        return consumer, True
    dt = spec.thread(pthread).deadline
    best = None
    for i in sim.instances[pthread]:
        if pname not in i.finished:
            continue
        vis = i.activation + dt
        if vis < consumer.activation:
            if best is None or i.activation > best.activation:
                best = i
    if best is None:
        return None
    return best, False


def check_reactivities(spec: SystemSpec, sim: SimResult,
                       names: Sequence = None) -> dict:
    """Measure every requested chain against its bound on one run."""
    if names is None:
        names = [r.name for r in spec.reactivities]
    out = {}
    for rname in names:
        chain = spec.reactivity(rname)
        procs = list(chain.chain)
        final_proc = procs[-1]
        final_thread = spec.thread_of(final_proc)
        dt_k = final_thread.deadline
        measures = []
        for inst in sim.instances[final_thread.name]:
            if final_proc not in inst.finished:
                continue
            cur, cur_proc = inst, final_proc
            ok = True
            for hop in range(len(procs) - 1, 0, -1):
                names_in = [w[0] for w in cur.work]
                pos = names_in.index(cur_proc)
                got = _producer_for(spec, sim, cur, procs[hop - 1], pos)
                if got is None:
                    ok = False
                    break
                cur, _direct = got
                cur_proc = procs[hop - 1]
            if not ok:
                continue
            vis = inst.activation + dt_k
            if vis > sim.horizon:
                continue
            lat_v = vis - cur.activation
            lat_c = (None if inst.retired_at is None
                     else inst.retired_at - cur.activation)
            measures.append(ChainMeasure(cur.activation, inst.activation,
                                         lat_v, lat_c))
        worst_v = max((m.latency_visibility for m in measures), default=None)
        comp = [m.latency_completion for m in measures
                if m.latency_completion is not None]
        worst_c = max(comp, default=None)
        out[rname] = ChainReport(rname, chain.bound, worst_v, worst_c,
                                 measures)
    return out


# ---------------------------------------------------------------------------
# exports


def result_to_csv(sim: SimResult) -> str:
    lines = ["time,kind,thread,processing"]
    for e in sim.events:
        lines.append("%s,%s,%s,%s" % (
            format_rational(e.time), e.kind, e.thread or "",
            e.processing or ""))
    return "\n".join(lines) + "\n"


def result_to_json_obj(sim: SimResult, reports: dict = None) -> dict:
    def num(q):
        return format_rational(q)

    obj = {
        "horizon": num(sim.horizon),
        "tie": sim.tie.value,
        "ok": sim.ok,
        "stats": {
            "events": len(sim.events),
            "context_switches": sim.stats.context_switches,
            "preemptions": sim.stats.preemptions,
        },
        "misses": [
            {"time": num(m.time), "thread": m.thread,
             "processing": m.processing, "reason": m.reason}
            for m in sim.misses],
        "completions": {
            name: [
                {"activation": num(i.activation),
                 "completed": num(i.retired_at) if i.retired_at is not None
                 else None,
                 "abandoned": i.abandoned}
                for i in insts]
            for name, insts in sim.instances.items()},
    }
    if reports is not None:
        obj["reactivities"] = {
            name: {
                "bound": num(r.bound),
                "ok": r.ok,
                "worst_latency": num(r.worst_visibility)
                if r.worst_visibility is not None else None,
                "worst_completion_latency": num(r.worst_completion)
                if r.worst_completion is not None else None,
                "samples": len(r.measures),
            }
            for name, r in reports.items()}
    return obj


# ---------------------------------------------------------------------------
# grid cross-validation


@dataclass
class Disagreement:
    valuation: dict
    kind: str          # "symbolic-vs-region" or "oracle-vs-region"
    detail: str


def _grid_points(spec: SystemSpec, step: Fraction):
    names = sorted(spec.free_parameters())
    axes = []
    for n in names:
        decl = next(d for d in spec.parameters if d.name == n)
        if decl.lo is None or decl.hi is None:
            raise OracleError(f"parameter {n} has an unbounded domain")
        vals = []
        v = decl.lo
        while v <= decl.hi:
            vals.append(v)
            v += step
        axes.append(vals)
    points = [{}]
    for n, vals in zip(names, axes):
        points = [dict(p, **{n: v}) for p in points for v in vals]
    return names, points


def grid_validate(spec: SystemSpec, region, step,
                  reactivities: Sequence = (),
                  budget: int = 2_000_000,
                  horizon=None) -> list:
    """Three-way agreement check over a parameter grid.

    For every grid valuation inside the declared domain: the symbolic
    verdict must equal region membership exactly, and a simulation miss
    (preempt-first) inside the claimed region is also a disagreement.
    The converse simulation direction is deliberately one-sided: a clean
    single-trajectory run cannot certify schedulability.
    """
    from .psa import reachability_verify
    from .translate import assemble, parameter_domain

    step = Fraction(step)
    if step <= 0:
        raise OracleError("grid step must be positive")
    names, points = _grid_points(spec, step)
    for n in region.space.params:
        if n not in names:
            raise OracleError(
                f"region constrains {n!r} which is not a free parameter")
    out = []
    dom_space = spec.param_space()
    dom = spec.param_domain(dom_space)
    for point in points:
        if not dom.membership(point):
            continue
        member = region.membership({n: point[n]
                                    for n in region.space.params})
        pinned = spec.instantiate(point)
        net, _bad = assemble(pinned, reactivities)
        pdom = parameter_domain(pinned, net.space)
        verdict = reachability_verify(net, pdom, budget=budget)
        sim = simulate(pinned, horizon=horizon)
        sim_bad = bool(sim.misses)
        if not sim_bad and reactivities:
            reports = check_reactivities(pinned, sim, reactivities)
            sim_bad = any(not r.ok for r in reports.values())
        # every report line carries all three verdicts
        three = (f"symbolic={'ok' if verdict.schedulable else 'miss'} "
                 f"simulator={'miss' if sim_bad else 'ok'} "
                 f"region={'in' if member else 'out'}")
        if verdict.schedulable != member:
            out.append(Disagreement(dict(point), "symbolic-vs-region", three))
        if sim_bad and member:
            out.append(Disagreement(dict(point), "oracle-vs-region", three))
    return out
