"""Parametric stopwatch automata and symbolic reachability.

An automaton is a finite set of locations connected by guarded edges.
Locations carry an invariant (a convex polyhedron over clocks and
parameters), a set of stopped clocks, and a bad flag.  Edges carry a
guard, an optional action label, and a set of clocks to reset.  Automata
composed into a network synchronise on shared action labels: an action
that appears in several alphabets fires only when every owning automaton
takes an edge with that label, simultaneously.  Clocks and parameters
are global, shared by name.

Exploration is a breadth-first walk over symbolic states (location
vector plus zone).  A successor intersects the guards, applies resets,
intersects the invariants of the new location vector, lets time elapse
for every clock not stopped anywhere, and re-intersects the invariants.
States whose zone is contained in an already-visited zone with the same
location vector are subsumed.  On top of the walk sit two analyses:

* ``reachability_verify`` -- all parameters pinned; returns a verdict
  with a replayable edge trace when a bad location is reachable.
* ``ef_synth`` -- accumulates the parameter projections of reachable bad
  states into a bad region, pruning states that can no longer contribute.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Iterable, Iterator, Optional, Sequence

from .geometry import (
    EQ,
    ConvexPolyhedron,
    GeometryError,
    Region,
    VariableSpace,
    _eliminate_rows,
    _merge_rows,
    _reduce_structure,
    embed,
)

DEFAULT_BUDGET = 2_000_000


class PsaError(ValueError):
    """Ill-formed automaton or network."""


class BudgetExceeded(RuntimeError):
    """The state budget was exhausted before the analysis finished."""


class InexactResult(RuntimeError):
    """A caller demanded an exact region but synthesis was cut short."""


# ---------------------------------------------------------------------------
# structure


@dataclass(frozen=True)
class Location:
    name: str
    invariant: ConvexPolyhedron
    stopped: frozenset = frozenset()
    is_bad: bool = False


@dataclass(frozen=True)
class Edge:
    source: str
    guard: ConvexPolyhedron
    action: Optional[str]
    resets: frozenset
    target: str


class Automaton:
    """One component of a network.

    ``alphabet`` lists the action labels this automaton participates in;
    any label shared with another automaton's alphabet becomes a
    synchronisation point.  ``action = None`` marks an internal edge.
    Edge order is declaration order and is preserved (it fixes the
    deterministic exploration order).
    """

    __slots__ = ("name", "alphabet", "locations", "initial", "edges",
                 "_out", "_out_by_action")

    def __init__(self, name: str, alphabet: Iterable[str],
                 locations: Iterable[Location], initial: str,
                 edges: Iterable[Edge]):
        self.name = name
        self.alphabet = frozenset(alphabet)
        locs = tuple(locations)
        by_name = {}
        for loc in locs:
            if loc.name in by_name:
                raise PsaError(f"{name}: duplicate location {loc.name!r}")
            by_name[loc.name] = loc
        self.locations = by_name
        if initial not in by_name:
            raise PsaError(f"{name}: unknown initial location {initial!r}")
        self.initial = initial
        self.edges = tuple(edges)
        out: dict = {n: [] for n in by_name}
        out_act: dict = {}
        for i, e in enumerate(self.edges):
            if e.source not in by_name or e.target not in by_name:
                raise PsaError(f"{name}: edge {i} touches an unknown location")
            if e.action is not None and e.action not in self.alphabet:
                raise PsaError(
                    f"{name}: edge {i} action {e.action!r} not in alphabet")
            out[e.source].append((i, e))
            if e.action is not None:
                out_act.setdefault((e.source, e.action), []).append((i, e))
        self._out = out
        self._out_by_action = out_act

    def location(self, name: str) -> Location:
        return self.locations[name]

    def out_edges(self, source: str):
        return self._out[source]

    def out_edges_for(self, source: str, action: str):
        return self._out_by_action.get((source, action), ())

    def __repr__(self):
        return (f"Automaton({self.name!r}, |locs|={len(self.locations)}, "
                f"|edges|={len(self.edges)})")


class Network:
    __slots__ = ("automata", "space", "clocks", "params", "_table", "_index",
                 "_loc_cache", "_moves_cache", "_elapse_cache", "_reset_cache")

    def __init__(self, automata: Sequence[Automaton], space: VariableSpace):
        self.automata = tuple(automata)
        self.space = space
        self.clocks = space.clocks
        self.params = space.params
        names = set()
        for a in self.automata:
            if a.name in names:
                raise PsaError(f"duplicate automaton name {a.name!r}")
            names.add(a.name)
        # action -> sorted indices of all automata whose alphabet holds it
        table: dict = {}
        for i, a in enumerate(self.automata):
            for act in a.alphabet:
                table.setdefault(act, []).append(i)
        self._table = {act: tuple(sorted(ix)) for act, ix in table.items()}
        self._index = {a.name: i for i, a in enumerate(self.automata)}
        # exploration caches, all keyed by structural data that cannot
        # change after construction (locations, stop sets, reset sets)
        self._loc_cache: dict = {}
        self._moves_cache: dict = {}
        self._elapse_cache: dict = {}
        self._reset_cache: dict = {}
        self._validate()

    def _validate(self):
        clocks = set(self.clocks)
        for a in self.automata:
            for loc in a.locations.values():
                if loc.invariant.space != self.space:
                    raise PsaError(
                        f"{a.name}.{loc.name}: invariant over a different "
                        f"variable space")
                bad = set(loc.stopped) - clocks
                if bad:
                    raise PsaError(
                        f"{a.name}.{loc.name}: stopped set names non-clocks "
                        f"{sorted(bad)}")
            for i, e in enumerate(a.edges):
                if e.guard.space != self.space:
                    raise PsaError(
                        f"{a.name}: edge {i} guard over a different "
                        f"variable space")
                bad = set(e.resets) - clocks
                if bad:
                    raise PsaError(
                        f"{a.name}: edge {i} resets non-clocks {sorted(bad)}")

    def participants(self, action: str):
        return self._table[action]

    def automaton_index(self, name: str) -> int:
        return self._index[name]

    def __repr__(self):
        return f"Network({[a.name for a in self.automata]})"


def compose(automata: Sequence[Automaton], clocks: Sequence[str],
            params: Sequence[str]) -> Network:
    space = VariableSpace(tuple(clocks), tuple(params))
    return Network(automata, space)


# ---------------------------------------------------------------------------
# symbolic states


@dataclass(frozen=True)
class SymbolicState:
    locs: tuple
    zone: ConvexPolyhedron

    def pretty(self) -> str:
        zone = self.zone.canonicalize()
        rows = "; ".join(c.pretty() for c in zone.constraints)
        return f"{','.join(self.locs)} | {rows or 'TRUE'}"


def _domain_poly(net: Network, dom: ConvexPolyhedron) -> ConvexPolyhedron:
    """Accept a domain over the parameters alone or the full space."""
    if dom.space == net.space:
        return dom
    try:
        return embed(dom, net.space)
    except GeometryError as exc:
        raise PsaError(f"domain does not fit the network's variables: {exc}")


def _invariants(net: Network, locs) -> Iterator[ConvexPolyhedron]:
    for a, ln in zip(net.automata, locs):
        yield a.location(ln).invariant


def _stop_union(net: Network, locs) -> frozenset:
    out: set = set()
    for a, ln in zip(net.automata, locs):
        out |= a.location(ln).stopped
    return frozenset(out)


def _has_bad(net: Network, locs) -> bool:
    return any(a.location(ln).is_bad for a, ln in zip(net.automata, locs))


def initial_state(net: Network, dom: ConvexPolyhedron) -> SymbolicState:
    locs = tuple(a.initial for a in net.automata)
    zone = _domain_poly(net, dom)
    zero = {c: Fraction(0) for c in net.clocks}
    zone = zone.with_constraints(
        [({c: Fraction(1)}, "=", Fraction(0)) for c in zero])
    for inv in _invariants(net, locs):
        zone = zone.intersect(inv)
    if zone.is_empty():
        raise PsaError("initial state is infeasible "
                       "(domain contradicts the initial invariants)")
    zone = zone.time_elapse(_stop_union(net, locs))
    for inv in _invariants(net, locs):
        zone = zone.intersect(inv)
    return SymbolicState(locs, zone)


# ---------------------------------------------------------------------------
# successors

# A move is a tuple of (automaton_index, edge_index, Edge) triples; internal
# moves have one triple, synchronised moves one per participating automaton.


def _moves(net: Network, s: SymbolicState):
    cached = net._moves_cache.get(s.locs)
    if cached is not None:
        return cached
    moves = []
    for ai, aut in enumerate(net.automata):
        seen = set()
        for ei, e in aut.out_edges(s.locs[ai]):
            if e.action is None:
                moves.append(((ai, ei, e),))
                continue
            parts = net.participants(e.action)
            # expand a synchronisation once, at its least participant
            if parts[0] != ai or e.action in seen:
                continue
            seen.add(e.action)
            choices = []
            for aj in parts:
                cand = net.automata[aj].out_edges_for(s.locs[aj], e.action)
                if not cand:
                    choices = None
                    break
                choices.append([(aj, ej, e2) for ej, e2 in cand])
            if choices is None:
                continue
            moves.extend(product(*choices))
    net._moves_cache[s.locs] = moves
    return moves


def _loc_info(net: Network, locs):
    """(raw invariant rows, elapsing clock indices) for a location vector."""
    cached = net._loc_cache.get(locs)
    if cached is not None:
        return cached
    inv_rows = []
    stopped: set = set()
    for a, ln in zip(net.automata, locs):
        loc = a.location(ln)
        inv_rows.extend(loc.invariant.rows)
        stopped |= loc.stopped
    key = frozenset(stopped)
    elapse = net._elapse_cache.get(key)
    if elapse is None:
        elapse = tuple(i for i, n in enumerate(net.clocks) if n not in key)
        net._elapse_cache[key] = elapse
    info = (tuple(inv_rows), elapse)
    net._loc_cache[locs] = info
    return info


def _reset_info(net: Network, resets: frozenset):
    cached = net._reset_cache.get(resets)
    if cached is not None:
        return cached
    n = net.space.n
    idx = frozenset(net.space.index(c) for c in resets)
    zeros = tuple(
        (EQ, tuple(1 if j == i else 0 for j in range(n)), 0) for i in idx)
    info = (idx, zeros)
    net._reset_cache[resets] = info
    return info


def _elapse_rows(rows, elapse_idx, n):
    """Future closure of merged rows for the given elapsing clock indices."""
    rows2 = []
    for rel, coeffs, bound in rows:
        s = 0
        for i in elapse_idx:
            s += coeffs[i]
        rows2.append((rel, coeffs + (-s,), bound))
    rows2.append((1, (0,) * n + (-1,), 0))  # LE: delay >= 0
    elim = _eliminate_rows(rows2, {n})
    if elim is None:
        return None
    return [(rel, c[:-1], b) for rel, c, b in elim]


def _fire(net: Network, s: SymbolicState, combo) -> Optional[SymbolicState]:
    space = net.space
    n = space.n
    rows = list(s.zone.rows)
    resets: set = set()
    locs = list(s.locs)
    for ai, _ei, e in combo:
        if e.guard.rows:
            rows.extend(e.guard.rows)
        if e.resets:
            resets |= e.resets
        locs[ai] = e.target
    locs = tuple(locs)
    inv_rows, elapse_idx = _loc_info(net, locs)
    merged = _merge_rows(rows)
    if merged is None:
        return None
    if resets:
        idx, zeros = _reset_info(net, frozenset(resets))
        elim = _eliminate_rows(merged, idx)
        if elim is None:
            return None
        merged = _merge_rows(list(elim) + list(zeros) + list(inv_rows))
    else:
        merged = _merge_rows(list(merged) + list(inv_rows))
    if merged is None:
        return None
    # the one exact feasibility gate: reduce, then eliminate the support
    red = _reduce_structure(merged, n)
    if red is None:
        return None
    eqs, ineqs = red
    support = set()
    for r in ineqs:
        for i, c in enumerate(r[1]):
            if c:
                support.add(i)
    base = list(eqs) + list(ineqs)
    if support and _eliminate_rows(base, support) is None:
        return None
    # elapse preserves nonemptiness (zero delay), as does re-intersecting
    # the invariants the zone already satisfied, so no further gate
    if elapse_idx:
        elapsed = _elapse_rows(tuple(base), elapse_idx, n)
        merged = _merge_rows(elapsed + list(inv_rows))
        red = _reduce_structure(merged, n)
        eqs, ineqs = red
    zone = ConvexPolyhedron._make(space, tuple(sorted(eqs + tuple(ineqs))))
    zone._empty = False
    return SymbolicState(locs, zone)


def successors(net: Network, s: SymbolicState):
    """All one-step successors, deterministically ordered.

    Returns ``[(combo, state), ...]`` where combo lists the fired edges
    as (automaton_index, edge_index, Edge) triples.
    """
    out = []
    for combo in _moves(net, s):
        t = _fire(net, s, combo)
        if t is not None:
            out.append((combo, t))
    return out


def _subsumed(bucket, t: SymbolicState) -> bool:
    tz_rows = set(t.zone.rows)
    for old in bucket:
        # syntactic fast path: every constraint of old appears in t
        if set(old.zone.rows) <= tz_rows:
            return True
        if old.zone.contains(t.zone):
            return True
    return False


def _move_label(net: Network, combo) -> str:
    act = combo[0][2].action
    if act is not None:
        return act
    ai, ei, _e = combo[0]
    return f"{net.automata[ai].name}#internal{ei}"


# ---------------------------------------------------------------------------
# verification


@dataclass
class TraceStep:
    action: str
    edges: tuple          # (automaton name, edge index) pairs
    locs: tuple
    zone: ConvexPolyhedron


@dataclass
class Verdict:
    schedulable: bool
    trace: Optional[list] = None
    bad_state: Optional[SymbolicState] = None
    states_explored: int = 0

    def __bool__(self):
        return self.schedulable


def _build_trace(net: Network, parent, state) -> list:
    steps = []
    cur = state
    while parent[cur] is not None:
        prev, combo = parent[cur]
        steps.append(TraceStep(
            action=_move_label(net, combo),
            edges=tuple((net.automata[ai].name, ei) for ai, ei, _e in combo),
            locs=cur.locs,
            zone=cur.zone))
        cur = prev
    steps.reverse()
    return steps


def _point_domain(net: Network, dom: ConvexPolyhedron):
    got = _domain_poly(net, dom)
    if got.is_empty():
        raise PsaError("empty parameter domain")
    for p in net.params:
        lo, lo_s, hi, hi_s = got.var_interval(p)
        if lo is None or lo != hi:
            raise PsaError(
                f"verification needs every parameter pinned; {p} is not")
    return got


def reachability_verify(net: Network, dom: ConvexPolyhedron,
                        budget: int = DEFAULT_BUDGET,
                        subsumption: bool = True) -> Verdict:
    """Decide bad-location reachability for a fully pinned valuation."""
    init = initial_state(net, _point_domain(net, dom))
    if _has_bad(net, init.locs):
        return Verdict(False, [], init, 0)
    seen = {init}
    buckets = {init.locs: [init]}
    parent: dict = {init: None}
    queue = deque([init])
    explored = 0
    while queue:
        s = queue.popleft()
        explored += 1
        if explored > budget:
            raise BudgetExceeded(
                f"state budget of {budget} exhausted during verification")
        for combo, t in successors(net, s):
            if t in seen:
                continue
            bucket = buckets.get(t.locs)
            if subsumption and bucket and _subsumed(bucket, t):
                continue
            parent[t] = (s, combo)
            if _has_bad(net, t.locs):
                return Verdict(False, _build_trace(net, parent, t), t,
                               explored)
            seen.add(t)
            buckets.setdefault(t.locs, []).append(t)
            queue.append(t)
    return Verdict(True, None, None, explored)


# ---------------------------------------------------------------------------
# synthesis


def _param_over_poly(state: SymbolicState, nclocks: int,
                     pspace: VariableSpace) -> ConvexPolyhedron:
    """Clock-free rows of the zone: a cheap superset of the projection."""
    rows = []
    for rel, coeffs, bound in state.zone.rows:
        if any(coeffs[:nclocks]):
            continue
        rows.append((rel, coeffs[nclocks:], bound))
    return ConvexPolyhedron._make(pspace, tuple(sorted(rows)))


def ef_synth(net: Network, dom: ConvexPolyhedron,
             budget: int = DEFAULT_BUDGET,
             subsumption: bool = True,
             full_prune: bool = True,
             progress=None):
    """Parameter valuations that can reach a bad location.

    Returns ``(bad_region, exact)``.  ``exact`` is False when the budget
    ran out; the region is then a sound under-approximation.  When given,
    ``progress(explored, frontier, n_bad)`` is called every few thousand
    states.
    """
    pspace = net.space.param_space()
    nclocks = len(net.clocks)
    init = initial_state(net, dom)
    bad_polys: list = []

    def record(state):
        proj = state.zone.param_projection().canonicalize()
        if proj.is_empty():
            return
        for b in bad_polys:
            if b.contains(proj):
                return
        bad_polys.append(proj)

    def pruned(state):
        if not bad_polys:
            return False
        over = _param_over_poly(state, nclocks, pspace)
        for b in bad_polys:
            if b.contains(over):
                return True
        if not full_prune:
            return False
        proj = state.zone.param_projection()
        rest = Region.of(proj).difference(Region(pspace, tuple(bad_polys)))
        return rest.is_empty()

    if _has_bad(net, init.locs):
        record(init)
        return Region(pspace, tuple(bad_polys)).canonicalize(), True

    seen = {init}
    buckets = {init.locs: [init]}
    queue = deque([init])
    explored = 0
    exact = True
    while queue:
        s = queue.popleft()
        explored += 1
        if explored > budget:
            exact = False
            break
        if progress is not None and explored % 5000 == 0:
            progress(explored, len(queue), len(bad_polys))
        if pruned(s):
            continue
        for combo, t in successors(net, s):
            if t in seen:
                continue
            bucket = buckets.get(t.locs)
            if subsumption and bucket and _subsumed(bucket, t):
                continue
            if _has_bad(net, t.locs):
                record(t)
                continue
            seen.add(t)
            buckets.setdefault(t.locs, []).append(t)
            queue.append(t)
    region = Region(pspace, tuple(bad_polys)).canonicalize()
    return region, exact


def schedulable_region(net: Network, dom: ConvexPolyhedron,
                       budget: int = DEFAULT_BUDGET, progress=None) -> Region:
    """Domain minus the bad region; raises if synthesis was inexact."""
    bad, exact = ef_synth(net, dom, budget=budget, progress=progress)
    if not exact:
        raise InexactResult(
            f"synthesis exceeded the state budget of {budget}; "
            f"the schedulable region would not be exact")
    pspace = net.space.param_space()
    if dom.space == net.space:
        dom_p = dom.param_projection()
    else:
        dom_p = dom
    if dom_p.space != pspace:
        raise PsaError("domain does not range over the network parameters")
    return Region.of(dom_p).difference(bad).canonicalize()


# ---------------------------------------------------------------------------
# debugging aid


def dump_zone_graph(net: Network, dom: ConvexPolyhedron,
                    budget: int = 10_000) -> Iterator[str]:
    """Yield one line per reached symbolic state, in exploration order."""
    init = initial_state(net, dom)
    seen = {init}
    buckets = {init.locs: [init]}
    queue = deque([init])
    explored = 0
    while queue:
        s = queue.popleft()
        explored += 1
        if explored > budget:
            yield f"... truncated at {budget} states"
            return
        yield s.pretty()
        if _has_bad(net, s.locs):
            continue
        for _combo, t in successors(net, s):
            if t in seen:
                continue
            bucket = buckets.get(t.locs)
            if bucket and _subsumed(bucket, t):
                continue
            seen.add(t)
            buckets.setdefault(t.locs, []).append(t)
            queue.append(t)
