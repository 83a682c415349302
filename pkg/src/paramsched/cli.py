"""Command-line front end over the analysis library.

Five subcommands cover the workflow end to end: ``verify`` decides
schedulability of a fully pinned system (symbolic verdict plus simulator
cross-check), ``synth`` emits the schedulable parameter region, ``compare``
does constraint algebra on emitted regions, ``simulate`` produces a concrete
timeline, and ``validate-region`` grid-checks an emitted region against both
analysis routes.

Exit codes: 0 success (for compare equal/contains: the answer is yes),
1 compare answered no (or validation found disagreements), 2 usage error,
10 deadline or reactivity miss (including a --set value outside the declared
parameter domain), 11 synthesis hit the state budget and the emitted region
is partial.
"""

import argparse
import json
import sys
from dataclasses import replace
from fractions import Fraction

from paramsched.geometry import (
    GeometryError,
    Region,
    VariableSpace,
    format_rational,
    parse_rational,
    parse_region_json_obj,
    parse_region_text,
    region_difference,
    region_equal,
    region_marginal,
    region_to_json_obj,
    region_to_text,
)
from paramsched.model import (
    ModelError,
    SystemSpec,
    expand_selectors,
    load_system,
    parameterize,
)
from paramsched.oracle import (
    OracleError,
    TieBreak,
    check_reactivities,
    default_horizon,
    grid_validate,
    result_to_csv,
    result_to_json_obj,
    simulate,
)
from paramsched.psa import (
    DEFAULT_BUDGET,
    BudgetExceeded,
    PsaError,
    ef_synth,
    reachability_verify,
)
from paramsched.translate import (
    TranslateError,
    assemble,
    parameter_domain,
)

EXIT_OK = 0
EXIT_NO = 1
EXIT_USAGE = 2
EXIT_MISS = 10
EXIT_INEXACT = 11


class CliError(Exception):
    """A usage-level problem: reported on stderr, exit code 2."""


def _load_spec(path: str) -> SystemSpec:
    try:
        with open(path) as fh:
            return load_system(fh.read())
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}")
    except (ModelError, ValueError) as e:
        raise CliError(f"{path}: {e}")


def _parse_sets(items) -> dict:
    out = {}
    for item in items or ():
        name, eq, val = item.partition("=")
        if not eq or not name:
            raise CliError(f"--set expects name=value, got {item!r}")
        try:
            out[name] = parse_rational(val)
        except (GeometryError, ValueError):
            raise CliError(f"--set {name}: {val!r} is not a rational")
    return out


def _apply_switch(spec: SystemSpec, flag) -> SystemSpec:
    if flag is None:
        return spec
    try:
        st = parse_rational(flag)
    except (GeometryError, ValueError):
        raise CliError(f"--switch: {flag!r} is not a rational")
    if st < 0:
        raise CliError("--switch must be nonnegative")
    return replace(spec, switch_time=st)


def _pin(spec: SystemSpec, values: dict):
    """Instantiate --set values, deriving offset/deadline parameters on
    demand; returns (pinned spec, out-of-domain message or None)."""
    declared = set(spec.free_parameters())
    derivable = set()
    for t in spec.threads:
        derivable.add(f"offset{t.name}")
        derivable.add(f"deadline{t.name}")
    need = []
    for name in values:
        if name in declared:
            continue
        if name in derivable:
            need.append(name)
        else:
            raise CliError(f"--set {name}: not a declared parameter and "
                           f"not an offset/deadline of any thread")
    if need:
        spec = parameterize(spec, need)
    for d in spec.parameters:
        if d.name not in values:
            continue
        v = values[d.name]
        lo_bad = d.lo is not None and (v < d.lo or
                                       (d.lo_strict and v == d.lo))
        hi_bad = d.hi is not None and (v > d.hi or
                                       (d.hi_strict and v == d.hi))
        if lo_bad or hi_bad:
            lo = "(" if d.lo_strict else "["
            hi = ")" if d.hi_strict else "]"
            bounds = "%s%s, %s%s" % (
                lo, format_rational(d.lo) if d.lo is not None else "-inf",
                format_rational(d.hi) if d.hi is not None else "inf", hi)
            return spec, (f"{d.name}={format_rational(v)} is "
                          f"outside the declared domain {bounds}")
    missing = [n for n in values if n not in {d.name for d in spec.parameters}]
    if missing:
        raise CliError(f"--set names not declared: {sorted(missing)}")
    return spec.instantiate(values), None


def _reactivity_names(spec: SystemSpec, flag: str) -> tuple:
    if flag == "none":
        return ()
    if flag == "all":
        return tuple(r.name for r in spec.reactivities)
    names = tuple(n.strip() for n in flag.split(",") if n.strip())
    known = {r.name for r in spec.reactivities}
    bad = sorted(set(names) - known)
    if bad:
        raise CliError(f"unknown reactivities: {bad}")
    return names


def _bad_location(net, verdict) -> str:
    if verdict.bad_state is None:
        return "?"
    for aut, ln in zip(net.automata, verdict.bad_state.locs):
        if aut.location(ln).is_bad:
            return f"{aut.name}.{ln}"
    return "?"


def _print_witness(trace, out):
    print("witness trace (%d steps):" % len(trace), file=out)
    for i, step in enumerate(trace, 1):
        print(f"  {i:3d}. {step.action}", file=out)


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    spec = _apply_switch(_load_spec(args.system), args.switch)
    spec, out_of_domain = _pin(spec, _parse_sets(args.set))
    if out_of_domain:
        print(f"valuation rejected: {out_of_domain}")
        print("verdict: NOT SCHEDULABLE (outside the parameter domain)")
        return EXIT_MISS
    free = spec.free_parameters()
    if free:
        raise CliError("free parameters remain: " + ", ".join(free)
                       + " (pin them with --set)")
    chosen = _reactivity_names(spec, args.reactivities)
    net, _bad = assemble(spec, chosen)
    dom = parameter_domain(spec, net.space)
    verdict = reachability_verify(net, dom, budget=args.max_states)
    if verdict:
        print(f"symbolic: schedulable "
              f"({verdict.states_explored} states explored)")
    else:
        print(f"symbolic: NOT schedulable, bad location "
              f"{_bad_location(net, verdict)} "
              f"({verdict.states_explored} states explored)")
        _print_witness(verdict.trace, sys.stdout)

    sim = simulate(spec)
    reports = check_reactivities(spec, sim, chosen) if chosen else {}
    sim_ok = sim.ok and all(r.ok for r in reports.values())
    if sim.misses:
        m = sim.misses[0]
        print(f"simulator: {m.reason} miss at t={format_rational(m.time)} "
              f"(thread {m.thread}) over [0, "
              f"{format_rational(sim.horizon)})")
    else:
        print(f"simulator: no misses over [0, "
              f"{format_rational(sim.horizon)})")
    for name, rep in sorted(reports.items()):
        worst = (format_rational(rep.worst_visibility)
                 if rep.worst_visibility is not None else "n/a")
        status = "ok" if rep.ok else "VIOLATED"
        print(f"simulator: reactivity {name} worst {worst} vs bound "
              f"{format_rational(rep.bound)}: {status}")
    if bool(verdict) != sim_ok:
        # the simulator follows one tie-break policy; the symbolic verdict
        # quantifies over every interleaving and is authoritative
        print("note: simulator trajectory disagrees with the symbolic "
              "verdict (tie-break sensitive instance)")
    print("verdict: SCHEDULABLE" if verdict else "verdict: NOT SCHEDULABLE")
    return EXIT_OK if verdict else EXIT_MISS


# ---------------------------------------------------------------------------
# synth


def _select_params(spec: SystemSpec, flag: str) -> tuple:
    if flag in ("offsets", "deadlines", "both"):
        sel = expand_selectors(spec, flag)
    else:
        sel = tuple(n.strip() for n in flag.split(",") if n.strip())
        if not sel:
            raise CliError("--params must name at least one parameter")
    return sel


def _emit_region(region: Region, exact: bool, out_path) -> None:
    text = region_to_text(region, exact=exact)
    sys.stdout.write(text)
    if out_path:
        if out_path.endswith(".json"):
            doc = json.dumps(region_to_json_obj(region, exact=exact),
                             indent=2) + "\n"
        else:
            doc = text
        with open(out_path, "w") as fh:
            fh.write(doc)


def _synth_one(spec: SystemSpec, observers: tuple, budget: int,
               emit_space: VariableSpace):
    net, _bad = assemble(spec, observers)
    dom = parameter_domain(spec, net.space)
    bad_region, exact = ef_synth(net, dom, budget=budget)
    good = Region.of(dom).difference(bad_region)
    return region_marginal(good, emit_space), exact


def cmd_synth(args) -> int:
    spec = _apply_switch(_load_spec(args.system), args.switch)
    sel = _select_params(spec, args.params)
    declared = set(spec.free_parameters())
    need = tuple(n for n in sel if n not in declared)
    if need:
        spec = parameterize(spec, need)
    chosen = _reactivity_names(spec, args.reactivities)
    emit_space = VariableSpace((), tuple(sorted(spec.free_parameters())))

    if args.compositional:
        runs = [()] + [(name,) for name in chosen]
        region, exact = None, True
        for obs in runs:
            part, ex = _synth_one(spec, obs, args.max_states, emit_space)
            exact = exact and ex
            region = part if region is None else region.intersect(part)
        region = region.canonicalize()
    else:
        region, exact = _synth_one(spec, chosen, args.max_states, emit_space)

    _emit_region(region, exact, args.out)
    if not exact:
        print("warning: state budget exhausted; the emitted region is "
              "partial (it may overapproximate the schedulable set)",
              file=sys.stderr)
        return EXIT_INEXACT
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def _read_region(path: str):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}")
    exact = "# exact: false" not in text
    try:
        if text.lstrip().startswith("{"):
            return parse_region_json_obj(json.loads(text)), exact
        return parse_region_text(text), exact
    except (GeometryError, ValueError) as e:
        raise CliError(f"{path}: {e}")


def cmd_compare(args) -> int:
    ra, ea = _read_region(args.region_a)
    rb, eb = _read_region(args.region_b)
    if ra.space != rb.space:
        raise CliError(
            f"parameter spaces differ: {list(ra.space.params)} vs "
            f"{list(rb.space.params)}")
    if args.op == "equal":
        ans = region_equal(ra, rb)
        print("true" if ans else "false")
        return EXIT_OK if ans else EXIT_NO
    if args.op == "contains":
        ans = region_difference(rb, ra).is_empty()
        print("true" if ans else "false")
        return EXIT_OK if ans else EXIT_NO
    if args.op == "intersect":
        out = ra.intersect(rb).canonicalize()
    else:
        out = region_difference(ra, rb)
    _emit_region(out, ea and eb, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    spec = _apply_switch(_load_spec(args.system), args.switch)
    spec, out_of_domain = _pin(spec, _parse_sets(args.set))
    if out_of_domain:
        raise CliError(f"valuation rejected: {out_of_domain}")
    free = spec.free_parameters()
    if free:
        raise CliError("free parameters remain: " + ", ".join(free))
    horizon = None
    if args.horizon is not None:
        try:
            horizon = parse_rational(args.horizon)
        except (GeometryError, ValueError):
            raise CliError(f"--horizon: {args.horizon!r} is not a rational")
        if horizon <= 0:
            raise CliError("--horizon must be positive")
    tie = TieBreak(args.tie)
    try:
        sim = simulate(spec, horizon=horizon, tie=tie)
    except OracleError as e:
        raise CliError(str(e))
    reports = check_reactivities(spec, sim)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(result_to_csv(sim))
    print(json.dumps(result_to_json_obj(sim, reports), indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate-region


def cmd_validate_region(args) -> int:
    spec = _load_spec(args.system)
    region, _exact = _read_region(args.region)
    try:
        step = parse_rational(args.grid)
    except (GeometryError, ValueError):
        raise CliError(f"--grid: {args.grid!r} is not a rational")
    if step <= 0:
        raise CliError("--grid step must be positive")
    chosen = _reactivity_names(spec, args.reactivities)
    try:
        disagreements = grid_validate(spec, region, step,
                                      reactivities=chosen,
                                      budget=args.max_states)
    except OracleError as e:
        raise CliError(str(e))
    if not disagreements:
        print("grid validation passed: zero disagreements")
        return EXIT_OK
    print(f"grid validation FAILED: {len(disagreements)} disagreement(s)")
    for d in disagreements:
        val = " ".join(f"{k}={format_rational(v)}"
                       for k, v in sorted(d.valuation.items()))
        print(f"  {val}: {d.kind}: {d.detail}")
    return EXIT_NO


# ---------------------------------------------------------------------------
# argument plumbing


def _add_common(p, sets=True, switch=True, budget=True, reactivities=True):
    if sets:
        p.add_argument("--set", action="append", metavar="NAME=VALUE",
                       help="pin a parameter (repeatable)")
    if switch:
        p.add_argument("--switch", metavar="RATIONAL",
                       help="override the context-switch time")
    if budget:
        p.add_argument("--max-states", type=int, default=DEFAULT_BUDGET,
                       metavar="N",
                       help="symbolic state budget (default %(default)s)")
    if reactivities:
        p.add_argument("--reactivities", default="none",
                       metavar="all|none|NAMES",
                       help="which reactivity observers to include "
                            "(default none)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="paramsched",
        description="Schedulability verification and parameter-region "
                    "synthesis for fixed-priority periodic systems.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="decide schedulability of a pinned "
                                      "system")
    p.add_argument("system", help="system document (JSON)")
    _add_common(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("synth", help="synthesize the schedulable region")
    p.add_argument("system")
    p.add_argument("--params", required=True,
                   metavar="offsets|deadlines|both|NAMES",
                   help="which timing constants to treat as unknown")
    p.add_argument("--compositional", action="store_true",
                   help="one run per reactivity, intersected")
    p.add_argument("--out", metavar="PATH",
                   help="also write the region (.json for JSON form)")
    _add_common(p, sets=False)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("compare", help="constraint algebra on two emitted "
                                       "regions")
    p.add_argument("region_a")
    p.add_argument("region_b")
    p.add_argument("--op", required=True,
                   choices=["intersect", "difference", "equal", "contains"])
    p.add_argument("--out", metavar="PATH")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("simulate", help="run the discrete-event simulator")
    p.add_argument("system")
    p.add_argument("--horizon", metavar="RATIONAL",
                   help="simulation horizon (default: offset + 2 "
                        "hyperperiods)")
    p.add_argument("--tie", default="preempt-first",
                   choices=[t.value for t in TieBreak],
                   help="simultaneous-event policy")
    p.add_argument("--csv", metavar="PATH", help="write the event timeline")
    _add_common(p, budget=False, reactivities=False)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate-region",
                       help="grid-check an emitted region against both "
                            "analysis routes")
    p.add_argument("system")
    p.add_argument("region")
    p.add_argument("--grid", default="1", metavar="STEP",
                   help="grid step (default 1)")
    _add_common(p, sets=False, switch=False)
    p.set_defaults(fn=cmd_validate_region)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, TranslateError, OracleError, PsaError,
            GeometryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
