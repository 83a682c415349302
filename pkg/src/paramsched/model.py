"""Declarative real-time system model.

A system is a set of processings (subprograms with a worst-case
execution time and an activation period), threads that execute them
under fixed-priority preemptive scheduling, and reactivity chains that
bound end-to-end data latencies.  Each thread runs a repeating pattern
of cycles, one cycle per thread period, the whole pattern spanning the
thread's major frame (MAF).  Timing fields may name a parameter instead
of a constant; parameters carry interval domains used by synthesis.

All quantities are exact rationals.  One time unit is one millisecond
in the shipped case study; a 500 microsecond switch time is the
Rational 1/2, never a float.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Union

from .geometry import (
    ConvexPolyhedron,
    VariableSpace,
    parse_rational,
)


class ModelError(ValueError):
    """Malformed document or invalid system."""


@dataclass(frozen=True)
class Param:
    """Reference to a named parameter inside a timing field."""
    name: str


# a timing field holds either a known rational or an unknown parameter
TimingValue = Union[Fraction, Param]


def timing_const(v: TimingValue) -> Fraction:
    if isinstance(v, Param):
        raise ModelError(
            f"expected a concrete value, found parameter {v.name!r}")
    return v


def is_param(v: TimingValue) -> bool:
    return isinstance(v, Param)


@dataclass(frozen=True)
class Processing:
    name: str
    wcet: TimingValue
    period: TimingValue          # activation period PP


@dataclass(frozen=True)
class ThreadSpec:
    name: str
    priority: int                # larger outranks smaller
    period: Fraction             # PT
    offset: TimingValue          # OT
    deadline: TimingValue        # DT
    maf: Fraction
    cycles: tuple                # one tuple of processing names per cycle

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)


@dataclass(frozen=True)
class ReactivityChain:
    name: str
    chain: tuple                 # ordered processing names, length >= 2
    bound: Fraction              # DR


@dataclass(frozen=True)
class ParamDecl:
    name: str
    lo: Optional[Fraction] = None
    lo_strict: bool = False
    hi: Optional[Fraction] = None
    hi_strict: bool = False


@dataclass(frozen=True)
class SystemSpec:
    processings: tuple
    threads: tuple
    reactivities: tuple = ()
    switch_time: Fraction = Fraction(0)
    parameters: tuple = ()

    # -- lookups -----------------------------------------------------------

    def processing(self, name: str) -> Processing:
        for p in self.processings:
            if p.name == name:
                return p
        raise ModelError(f"unknown processing {name!r}")

    def thread(self, name: str) -> ThreadSpec:
        for t in self.threads:
            if t.name == name:
                return t
        raise ModelError(f"unknown thread {name!r}")

    def reactivity(self, name: str) -> ReactivityChain:
        for r in self.reactivities:
            if r.name == name:
                return r
        raise ModelError(f"unknown reactivity {name!r}")

    def thread_of(self, processing: str) -> ThreadSpec:
        for t in self.threads:
            if any(processing in cycle for cycle in t.cycles):
                return t
        raise ModelError(f"processing {processing!r} is not on any thread")

    # -- parameter plumbing ------------------------------------------------

    def param_names(self) -> tuple:
        return tuple(sorted(d.name for d in self.parameters))

    def param_space(self) -> VariableSpace:
        return VariableSpace((), self.param_names())

    def param_domain(self, space: Optional[VariableSpace] = None
                     ) -> ConvexPolyhedron:
        """The declared box over the parameters, as a polyhedron."""
        if space is None:
            space = self.param_space()
        cs = []
        for d in self.parameters:
            one = Fraction(1)
            if d.lo is not None:
                cs.append(({d.name: -one}, "<" if d.lo_strict else "<=",
                           -d.lo))
            if d.hi is not None:
                cs.append(({d.name: one}, "<" if d.hi_strict else "<=",
                           d.hi))
        return ConvexPolyhedron(space, cs)

    def instantiate(self, values: dict) -> "SystemSpec":
        """Pin parameters to rationals; unknown names are rejected."""
        values = {k: Fraction(v) for k, v in values.items()}
        declared = {d.name for d in self.parameters}
        unknown = set(values) - declared
        if unknown:
            raise ModelError(f"unknown parameters: {sorted(unknown)}")

        def fix(v):
            if isinstance(v, Param) and v.name in values:
                return values[v.name]
            return v

        procs = tuple(replace(p, wcet=fix(p.wcet), period=fix(p.period))
                      for p in self.processings)
        threads = tuple(replace(t, offset=fix(t.offset),
                                deadline=fix(t.deadline))
                        for t in self.threads)
        decls = tuple(d for d in self.parameters if d.name not in values)
        return replace(self, processings=procs, threads=threads,
                       parameters=decls)

    def free_parameters(self) -> tuple:
        """Parameter names still referenced by some timing field."""
        used = set()
        for p in self.processings:
            for v in (p.wcet, p.period):
                if isinstance(v, Param):
                    used.add(v.name)
        for t in self.threads:
            for v in (t.offset, t.deadline):
                if isinstance(v, Param):
                    used.add(v.name)
        return tuple(sorted(used))


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str

    def __str__(self):
        return f"[{self.code}] {self.message}"


def _is_integral(q: Fraction) -> bool:
    return q.denominator == 1


def validate(spec: SystemSpec) -> list:
    """All structural checks; an empty list means the spec is valid."""
    diags = []

    def flag(code, message):
        diags.append(Diagnostic(code, message))

    # name uniqueness, per kind and across kinds (event names are derived
    # from these, so a thread and a processing may not share a name)
    kinds = [("processing", [p.name for p in spec.processings]),
             ("thread", [t.name for t in spec.threads]),
             ("reactivity", [r.name for r in spec.reactivities]),
             ("parameter", [d.name for d in spec.parameters])]
    seen: dict = {}
    for kind, names in kinds:
        for n in names:
            if n in seen:
                code = ("duplicate-name" if seen[n] == kind
                        else "name-collision")
                flag(code, f"{kind} {n!r} clashes with a {seen[n]} name")
            else:
                seen[n] = kind

    declared = {d.name for d in spec.parameters}

    def check_ref(v, where):
        if isinstance(v, Param) and v.name not in declared:
            flag("param-undeclared",
                 f"{where} references undeclared parameter {v.name!r}")

    for d in spec.parameters:
        if d.lo is None or d.hi is None:
            flag("param-domain", f"parameter {d.name!r} has an unbounded "
                 f"domain")
        elif d.lo > d.hi or (d.lo == d.hi and (d.lo_strict or d.hi_strict)):
            flag("param-domain", f"parameter {d.name!r} has an empty domain")

    for p in spec.processings:
        check_ref(p.wcet, f"processing {p.name!r} wcet")
        check_ref(p.period, f"processing {p.name!r} period")
        if not is_param(p.wcet) and not is_param(p.period):
            if not (0 < p.wcet <= p.period):
                flag("wcet-range",
                     f"processing {p.name!r}: need 0 < wcet <= period, "
                     f"got wcet={p.wcet}, period={p.period}")

    known_procs = {p.name for p in spec.processings}
    assignment: dict = {n: [] for n in known_procs}

    for t in spec.threads:
        check_ref(t.offset, f"thread {t.name!r} offset")
        check_ref(t.deadline, f"thread {t.name!r} deadline")
        if t.period <= 0:
            flag("period-range", f"thread {t.name!r}: period must be > 0")
            continue
        q = t.maf / t.period
        if not (_is_integral(q) and q >= 1):
            flag("maf-multiple",
                 f"thread {t.name!r}: maf {t.maf} is not a positive "
                 f"integer multiple of period {t.period}")
        elif len(t.cycles) != int(q):
            flag("cycle-length",
                 f"thread {t.name!r}: {len(t.cycles)} cycles listed, "
                 f"maf/period needs {int(q)}")
        if not is_param(t.offset) and not (0 <= t.offset < t.period):
            flag("offset-range",
                 f"thread {t.name!r}: need 0 <= offset < period, "
                 f"got {t.offset}")
        if not is_param(t.deadline) and not (0 < t.deadline <= t.period):
            flag("deadline-range",
                 f"thread {t.name!r}: need 0 < deadline <= period, "
                 f"got {t.deadline}")
        for ci, cycle in enumerate(t.cycles):
            if len(set(cycle)) != len(cycle):
                flag("cycle-consistency",
                     f"thread {t.name!r} cycle {ci} lists a processing twice")
            for pname in cycle:
                if pname not in known_procs:
                    flag("unknown-processing",
                         f"thread {t.name!r} cycle {ci} references "
                         f"unknown processing {pname!r}")
                else:
                    assignment[pname].append(t)

    for pname, owners in sorted(assignment.items()):
        distinct = {t.name for t in owners}
        if not owners:
            flag("proc-assignment",
                 f"processing {pname!r} is not assigned to any thread")
        elif len(distinct) > 1:
            flag("proc-assignment",
                 f"processing {pname!r} appears on several threads: "
                 f"{sorted(distinct)}")
        else:
            # occurrences per MAF must match the processing period
            t = owners[0]
            p = spec.processing(pname)
            if is_param(p.period) or p.period <= 0:
                continue
            occurrences = sum(pname in cycle for cycle in t.cycles)
            need = t.maf / p.period
            if not (_is_integral(need) and int(need) == occurrences):
                flag("cycle-consistency",
                     f"processing {pname!r}: period {p.period} needs "
                     f"{need} occurrences per MAF {t.maf} of thread "
                     f"{t.name!r}, found {occurrences}")

    periods = sorted({t.period for t in spec.threads})
    for faster, slower in zip(periods, periods[1:]):
        if not _is_integral(slower / faster):
            flag("harmonic",
                 f"thread periods {faster} and {slower} are not harmonic")

    prios = [t.priority for t in spec.threads]
    if len(set(prios)) != len(prios):
        flag("priority-order", "thread priorities are not a total order")

    for r in spec.reactivities:
        if len(r.chain) < 2:
            flag("chain-length",
                 f"reactivity {r.name!r} needs at least two processings")
        for pname in r.chain:
            if pname not in known_procs:
                flag("chain-unresolved",
                     f"reactivity {r.name!r} references unknown "
                     f"processing {pname!r}")
        if r.bound <= 0:
            flag("chain-bound", f"reactivity {r.name!r}: bound must be > 0")

    if spec.switch_time < 0:
        flag("switch-range", "switch_time must be >= 0")

    return diags


def utilization(spec: SystemSpec) -> Fraction:
    """Sum of wcet/period over all processings (switch time excluded)."""
    total = Fraction(0)
    for p in spec.processings:
        total += timing_const(p.wcet) / timing_const(p.period)
    return total


# ---------------------------------------------------------------------------
# document format


def _req(obj: dict, key: str, where: str):
    if key not in obj:
        raise ModelError(f"{where}: missing {key!r}")
    return obj[key]


def _to_rational(v, where: str) -> Fraction:
    if isinstance(v, bool):
        raise ModelError(f"{where}: expected a number, got a boolean")
    if isinstance(v, (int, Fraction)):
        return Fraction(v)
    if isinstance(v, str):
        try:
            return parse_rational(v)
        except Exception as exc:
            raise ModelError(f"{where}: {exc}")
    raise ModelError(f"{where}: expected a rational, got {type(v).__name__}")


def _to_timing(v, where: str) -> TimingValue:
    if isinstance(v, dict):
        if set(v) != {"param"}:
            raise ModelError(f"{where}: parameter reference must be "
                             f"{{\"param\": name}}")
        return Param(str(v["param"]))
    return _to_rational(v, where)


def system_from_json_obj(obj) -> SystemSpec:
    if not isinstance(obj, dict):
        raise ModelError("system document must be a JSON object")
    procs = []
    for i, po in enumerate(obj.get("processings", [])):
        where = f"processings[{i}]"
        procs.append(Processing(
            name=str(_req(po, "name", where)),
            wcet=_to_timing(_req(po, "wcet", where), f"{where}.wcet"),
            period=_to_timing(_req(po, "period", where), f"{where}.period")))
    threads = []
    for i, to in enumerate(obj.get("threads", [])):
        where = f"threads[{i}]"
        cycles = _req(to, "cycles", where)
        if not isinstance(cycles, list) or not all(
                isinstance(c, list) for c in cycles):
            raise ModelError(f"{where}.cycles: expected a list of lists")
        threads.append(ThreadSpec(
            name=str(_req(to, "name", where)),
            priority=int(_req(to, "priority", where)),
            period=_to_rational(_req(to, "period", where),
                                f"{where}.period"),
            offset=_to_timing(to.get("offset", 0), f"{where}.offset"),
            deadline=_to_timing(
                to.get("deadline", _req(to, "period", where)),
                f"{where}.deadline"),
            maf=_to_rational(_req(to, "maf", where), f"{where}.maf"),
            cycles=tuple(tuple(str(p) for p in c) for c in cycles)))
    reactivities = []
    for i, ro in enumerate(obj.get("reactivities", [])):
        where = f"reactivities[{i}]"
        chain = _req(ro, "chain", where)
        if not isinstance(chain, list):
            raise ModelError(f"{where}.chain: expected a list")
        reactivities.append(ReactivityChain(
            name=str(_req(ro, "name", where)),
            chain=tuple(str(p) for p in chain),
            bound=_to_rational(_req(ro, "bound", where), f"{where}.bound")))
    params = []
    for i, do in enumerate(obj.get("parameters", [])):
        where = f"parameters[{i}]"
        dom = do.get("domain", {})
        if not isinstance(dom, dict):
            raise ModelError(f"{where}.domain: expected an object")
        params.append(ParamDecl(
            name=str(_req(do, "name", where)),
            lo=(None if "min" not in dom
                else _to_rational(dom["min"], f"{where}.domain.min")),
            lo_strict=bool(dom.get("min_strict", False)),
            hi=(None if "max" not in dom
                else _to_rational(dom["max"], f"{where}.domain.max")),
            hi_strict=bool(dom.get("max_strict", False))))
    return SystemSpec(
        processings=tuple(procs),
        threads=tuple(threads),
        reactivities=tuple(reactivities),
        switch_time=_to_rational(obj.get("switch_time", 0), "switch_time"),
        parameters=tuple(params))


def load_system(document: str) -> SystemSpec:
    """Parse and validate a system document; failures abort."""
    try:
        obj = json.loads(document, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise ModelError(f"parse error at line {exc.lineno}, "
                         f"column {exc.colno}: {exc.msg}")
    spec = system_from_json_obj(obj)
    diags = validate(spec)
    if diags:
        raise ModelError("invalid system: "
                         + "; ".join(str(d) for d in diags))
    return spec


def _num_json(q: Fraction):
    q = Fraction(q)
    if q.denominator == 1:
        return int(q)
    return f"{q.numerator}/{q.denominator}"


def _timing_json(v: TimingValue):
    if isinstance(v, Param):
        return {"param": v.name}
    return _num_json(v)


def system_to_json_obj(spec: SystemSpec) -> dict:
    obj: dict = {
        "processings": [
            {"name": p.name, "wcet": _timing_json(p.wcet),
             "period": _timing_json(p.period)}
            for p in spec.processings],
        "threads": [
            {"name": t.name, "priority": t.priority,
             "period": _num_json(t.period),
             "offset": _timing_json(t.offset),
             "deadline": _timing_json(t.deadline),
             "maf": _num_json(t.maf),
             "cycles": [list(c) for c in t.cycles]}
            for t in spec.threads],
        "reactivities": [
            {"name": r.name, "chain": list(r.chain),
             "bound": _num_json(r.bound)}
            for r in spec.reactivities],
        "switch_time": _num_json(spec.switch_time),
    }
    if spec.parameters:
        decls = []
        for d in spec.parameters:
            dom: dict = {}
            if d.lo is not None:
                dom["min"] = _num_json(d.lo)
                if d.lo_strict:
                    dom["min_strict"] = True
            if d.hi is not None:
                dom["max"] = _num_json(d.hi)
                if d.hi_strict:
                    dom["max_strict"] = True
            decls.append({"name": d.name, "domain": dom})
        obj["parameters"] = decls
    return obj


def emit_system(spec: SystemSpec) -> str:
    return json.dumps(system_to_json_obj(spec), indent=2) + "\n"


# ---------------------------------------------------------------------------
# parameterization helper


def parameterize(spec: SystemSpec, selectors) -> SystemSpec:
    """Replace selected thread timing fields by declared parameters.

    Selector names follow the derived parameter naming: ``offset<Thread>``
    and ``deadline<Thread>``.  Default domains: an offset ranges over
    [0, period), a deadline over (0, period].
    """
    wanted = set(selectors)
    threads = []
    decls = list(spec.parameters)
    for t in spec.threads:
        off, dl = t.offset, t.deadline
        oname, dname = f"offset{t.name}", f"deadline{t.name}"
        if oname in wanted:
            off = Param(oname)
            decls.append(ParamDecl(oname, Fraction(0), False,
                                   t.period, True))
            wanted.discard(oname)
        if dname in wanted:
            dl = Param(dname)
            decls.append(ParamDecl(dname, Fraction(0), True,
                                   t.period, False))
            wanted.discard(dname)
        threads.append(replace(t, offset=off, deadline=dl))
    if wanted:
        raise ModelError(f"unknown parameter selectors: {sorted(wanted)}")
    return replace(spec, threads=tuple(threads), parameters=tuple(decls))


def expand_selectors(spec: SystemSpec, which: str) -> tuple:
    """Map the shorthand offsets/deadlines/both to explicit names."""
    if which == "offsets":
        return tuple(f"offset{t.name}" for t in spec.threads)
    if which == "deadlines":
        return tuple(f"deadline{t.name}" for t in spec.threads)
    if which == "both":
        return (tuple(f"offset{t.name}" for t in spec.threads)
                + tuple(f"deadline{t.name}" for t in spec.threads))
    raise ModelError(f"unknown selector shorthand {which!r}")


# ---------------------------------------------------------------------------
# shipped fixtures


def fixture_document(name: str) -> str:
    """Text of a shipped system document (fcs_nominal or fcs_switch)."""
    from importlib import resources
    ref = resources.files(__package__) / "data" / f"{name}.json"
    try:
        return ref.read_text()
    except FileNotFoundError:
        raise ModelError(f"no shipped document named {name!r}")


def nominal_fcs() -> SystemSpec:
    """The flight-control case study under its nominal timing values."""
    f = Fraction
    return SystemSpec(
        processings=(
            Processing("Navigation", f(1), f(5)),
            Processing("Control", f(3), f(10)),
            Processing("Monitoring", f(5), f(20)),
            Processing("Guidance", f(15), f(60)),
        ),
        threads=(
            ThreadSpec("T1", 3, f(5), f(0), f(5), f(10),
                       (("Navigation",), ("Navigation", "Control"))),
            ThreadSpec("T2", 2, f(20), f(0), f(20), f(20),
                       (("Monitoring",),)),
            ThreadSpec("T3", 1, f(60), f(0), f(60), f(60),
                       (("Guidance",),)),
        ),
        reactivities=(
            ReactivityChain("NGC", ("Navigation", "Guidance", "Control"),
                            f(150)),
            ReactivityChain("NC", ("Navigation", "Control"), f(15)),
            ReactivityChain("NM", ("Navigation", "Monitoring"), f(55)),
        ),
        switch_time=f(0),
        parameters=())


def nominal_fcs_switch() -> SystemSpec:
    """Same case study with reduced WCETs and a 1/2 unit switch time."""
    f = Fraction
    base = nominal_fcs()
    procs = tuple(
        replace(p, wcet=f(3)) if p.name == "Monitoring"
        else replace(p, wcet=f(21, 2)) if p.name == "Guidance"
        else p
        for p in base.processings)
    return replace(base, processings=procs, switch_time=f(1, 2))
