"""Exact rational linear geometry over clock/parameter variable spaces.

Polyhedra are kept in constraint representation only; there is no
generator/double description.  Strict inequalities are first class: every
stored row is one of ``a.x = b``, ``a.x <= b``, ``a.x < b`` with integer
coefficients scaled so the gcd of all coefficients and the bound is 1.
Regions are finite unions of convex polyhedra over a shared variable space.

All values are exact rationals (`fractions.Fraction`); nothing here touches
floating point.  Polyhedra and regions are immutable and safe to share.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Iterable, Mapping, Optional, Sequence, Union

Rational = Fraction

# relation codes, ordered so equalities sort first
EQ, LE, LT = 0, 1, 2

_REL_TEXT = {EQ: "=", LE: "<=", LT: "<"}
_TEXT_REL = {"=": EQ, "==": EQ, "<=": LE, "<": LT}


class GeometryError(ValueError):
    pass


def parse_rational(value) -> Fraction:
    """Parse ``"9/2"``, ``"4.5"``, ``7``, ``Fraction`` ... into a Fraction.

    Decimal strings convert exactly (no float round-trip).
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # floats are not part of the exact pipeline; accept only integral ones
        if value != int(value):
            raise GeometryError(
                "refusing inexact float %r; pass a string like '9/2'" % value
            )
        return Fraction(int(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise GeometryError("bad rational literal %r" % value) from exc
    raise GeometryError("cannot interpret %r as a rational" % (value,))


def format_rational(q) -> str:
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return "%d/%d" % (q.numerator, q.denominator)


@dataclass(frozen=True)
class VariableSpace:
    """Ordered variable universe: clocks first, then parameters."""

    clocks: tuple
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "clocks", tuple(self.clocks))
        object.__setattr__(self, "params", tuple(self.params))
        names = self.clocks + self.params
        if len(set(names)) != len(names):
            raise GeometryError("duplicate variable names in %r" % (names,))
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def variables(self) -> tuple:
        return self.clocks + self.params

    @property
    def n(self) -> int:
        return len(self.clocks) + len(self.params)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise GeometryError("undeclared variable %r" % name) from None

    def is_clock(self, name: str) -> bool:
        return name in self._index and self._index[name] < len(self.clocks)

    def param_space(self) -> "VariableSpace":
        return VariableSpace((), self.params)


@dataclass(frozen=True)
class LinearConstraint:
    """``sum(coeff * var) REL bound`` with REL one of ``<``, ``<=``, ``=``."""

    coefficients: tuple  # sorted ((name, Fraction), ...), zero coeffs dropped
    relation: str
    bound: Fraction

    @classmethod
    def from_terms(cls, terms: Mapping, relation: str, bound=0) -> "LinearConstraint":
        rel = relation.strip()
        coeffs = {str(k): parse_rational(v) for k, v in terms.items()}
        b = parse_rational(bound)
        if rel in (">", ">="):
            coeffs = {k: -v for k, v in coeffs.items()}
            b = -b
            rel = "<" if rel == ">" else "<="
        if rel not in ("<", "<=", "=", "=="):
            raise GeometryError("unknown relation %r" % relation)
        if rel == "==":
            rel = "="
        items = tuple(sorted((k, v) for k, v in coeffs.items() if v != 0))
        return cls(items, rel, b)

    def as_dict(self) -> dict:
        return dict(self.coefficients)

    def pretty(self) -> str:
        if not self.coefficients:
            return "0 %s %s" % (self.relation, format_rational(self.bound))
        parts = []
        for name, coeff in self.coefficients:
            if coeff == 1:
                parts.append(name)
            else:
                parts.append("%s*%s" % (format_rational(coeff), name))
        return "%s %s %s" % (" + ".join(parts), self.relation, format_rational(self.bound))


# ---------------------------------------------------------------------------
# integer row machinery
#
# A row is (rel, coeffs, bound): rel in {EQ, LE, LT}, coeffs a tuple of ints
# aligned to a VariableSpace, bound an int.


def _eq_sign(dirv, q):
    # equalities are direction-free; fix the first nonzero coefficient > 0
    for c in dirv:
        if c:
            if c < 0:
                return tuple(-x for x in dirv), -q
            break
    return dirv, q


def _merge_rows(rows):
    """Normalize, deduplicate and dominance-merge rows.

    Returns a sorted row tuple, or None when a syntactic contradiction is
    found (same-direction bound conflicts, inconsistent opposite pairs).
    Opposite non-strict pairs with touching bounds become equalities.
    """
    eqs = {}  # sign-normalized primitive direction -> bound (int or Fraction)
    les = {}  # primitive direction -> (bound, strict)
    for rel, coeffs, bound in rows:
        g = 0
        for c in coeffs:
            g = gcd(g, c)
            if g == 1:
                break
        if g == 0:
            if rel == EQ:
                if bound != 0:
                    return None
            elif rel == LE:
                if bound < 0:
                    return None
            else:
                if bound <= 0:
                    return None
            continue
        if g == 1:
            q = bound
            dirv = coeffs
        else:
            q = Fraction(bound, g)
            dirv = tuple(c // g for c in coeffs)
        if rel == EQ:
            dirv, q = _eq_sign(dirv, q)
            old = eqs.get(dirv)
            if old is None:
                eqs[dirv] = q
            elif old != q:
                return None
        else:
            strict = rel == LT
            cur = les.get(dirv)
            if cur is None or q < cur[0] or (q == cur[0] and strict):
                les[dirv] = (q, strict)

    # opposite inequality pairs: touching non-strict pairs are equalities
    for dirv in list(les):
        if dirv not in les:
            continue
        neg = tuple(-c for c in dirv)
        if neg in les and neg < dirv:
            continue  # handle each pair once
        if neg in les:
            q1, s1 = les[dirv]
            q2, s2 = les[neg]
            tot = q1 + q2
            if tot < 0:
                return None
            if tot == 0:
                if s1 or s2:
                    return None
                del les[dirv]
                del les[neg]
                sdir, qe = _eq_sign(dirv, q1)
                old = eqs.get(sdir)
                if old is None:
                    eqs[sdir] = qe
                elif old != qe:
                    return None

    # inequalities on an equality's line: drop if entailed, else contradiction
    if eqs:
        for dirv in list(les):
            sdir, _ = _eq_sign(dirv, Fraction(0))
            qe = eqs.get(sdir)
            if qe is None:
                continue
            val = qe if sdir == dirv else -qe  # value of dirv . x
            q, strict = les[dirv]
            if val < q or (val == q and not strict):
                del les[dirv]
            else:
                return None

    out = []
    for dirv, q in eqs.items():
        den = q.denominator
        if den == 1:
            out.append((EQ, dirv, int(q)))
        else:
            out.append((EQ, tuple(c * den for c in dirv), q.numerator))
    for dirv, (q, strict) in les.items():
        den = q.denominator
        if den == 1:
            out.append((LT if strict else LE, dirv, int(q)))
        else:
            out.append(
                (LT if strict else LE, tuple(c * den for c in dirv), q.numerator))
    out.sort()
    return tuple(out)


def _row_gcd_reduce(rel, coeffs, bound):
    g = 0
    for c in coeffs:
        g = gcd(g, c)
        if g == 1:
            return (rel, tuple(coeffs), bound)
    g = gcd(g, bound)
    if g > 1:
        return (rel, tuple(c // g for c in coeffs), bound // g)
    return (rel, tuple(coeffs), bound)


def _subst(row, eqrow, v):
    """Eliminate variable v from row using equality eqrow (coeff at v != 0)."""
    erel, ec, eb = eqrow
    e = ec[v]
    if e < 0:
        ec = tuple(-x for x in ec)
        eb = -eb
        e = -e
    rel, c, b = row
    cv = c[v]
    nc = tuple(e * x - cv * y for x, y in zip(c, ec))
    nb = e * b - cv * eb
    return _row_gcd_reduce(rel, nc, nb)


def _fm_pair(rp, rn, v):
    relp, cp, bp = rp
    reln, cn, bn = rn
    a = cp[v]
    m = -cn[v]
    nc = tuple(m * x + a * y for x, y in zip(cp, cn))
    nb = m * bp + a * bn
    rel = LT if (relp == LT or reln == LT) else LE
    return _row_gcd_reduce(rel, nc, nb)


def _eliminate_rows(rows, targets):
    """Unconstrain the variable indices in `targets`.

    Prefers substitution through an equality row; falls back to
    Fourier-Motzkin combination.  Returns merged rows or None (empty).
    """
    rows = list(rows)
    todo = set(targets)
    while todo:
        # substitution step if any equality touches a target
        v = eqrow = None
        for r in rows:
            if r[0] == EQ:
                for t in todo:
                    if r[1][t]:
                        v, eqrow = t, r
                        break
                if eqrow is not None:
                    break
        if eqrow is not None:
            nxt = []
            for r in rows:
                if r is eqrow:
                    continue
                if r[1][v]:
                    nxt.append(_subst(r, eqrow, v))
                else:
                    nxt.append(r)
            merged = _merge_rows(nxt)
            if merged is None:
                return None
            rows = list(merged)
            todo.discard(v)
            continue
        # Fourier-Motzkin on the cheapest remaining target
        best = None
        for t in todo:
            pos = neg = 0
            for r in rows:
                c = r[1][t]
                if c > 0:
                    pos += 1
                elif c < 0:
                    neg += 1
            cost = pos * neg
            if best is None or cost < best[1]:
                best = (t, cost, pos, neg)
        v, cost, pos, neg = best
        if pos == 0 or neg == 0:
            rows = [r for r in rows if not r[1][v]]
            todo.discard(v)
            continue
        keep = []
        plus = []
        minus = []
        for r in rows:
            c = r[1][v]
            if c > 0:
                plus.append(r)
            elif c < 0:
                minus.append(r)
            else:
                keep.append(r)
        for rp in plus:
            for rn in minus:
                keep.append(_fm_pair(rp, rn, v))
        merged = _merge_rows(keep)
        if merged is None:
            return None
        rows = list(merged)
        todo.discard(v)
    return tuple(rows)


def _feasible_rows(rows, n):
    merged = _merge_rows(rows)
    if merged is None:
        return False
    support = set()
    for r in merged:
        for i, c in enumerate(r[1]):
            if c:
                support.add(i)
    return _eliminate_rows(merged, support) is not None


def _negations(row):
    rel, c, b = row
    nc = tuple(-x for x in c)
    if rel == EQ:
        return ((LT, c, b), (LT, nc, -b))
    if rel == LE:
        return ((LT, nc, -b),)
    return ((LE, nc, -b),)


def _primitive(row):
    """(rel, primitive direction, Fraction bound) of a normalized row."""
    rel, coeffs, bound = row
    g = 0
    for c in coeffs:
        g = gcd(g, c)
        if g == 1:
            return rel, coeffs, Fraction(bound)
    if g <= 1:
        return rel, coeffs, Fraction(bound)
    return rel, tuple(c // g for c in coeffs), Fraction(bound, g)


def _dominated(row, ub, eqd):
    """Row entailed by one of the indexed rows (ub/eqd from _primitive)."""
    rel, d, q = _primitive(row)
    if rel == EQ:
        sd, sq = _eq_sign(d, q)
        return eqd.get(sd) == sq
    cur = ub.get(d)
    if cur is not None:
        qb, strict = cur
        if qb < q or (qb == q and (rel != LT or strict)):
            return True
    sd, flip = d, False
    for c in d:
        if c:
            if c < 0:
                sd = tuple(-x for x in d)
                flip = True
            break
    v = eqd.get(sd)
    if v is not None:
        val = -v if flip else v
        return val < q or (val == q and rel != LT)
    return False


# ---------------------------------------------------------------------------


class ConvexPolyhedron:
    """Immutable conjunction of linear constraint rows over a VariableSpace."""

    __slots__ = ("space", "rows", "_empty", "_reduced_cache", "_canonical_cache", "_hash")

    def __init__(self, space: VariableSpace, constraints: Iterable = ()):
        rows = [_row_from(space, c) for c in constraints]
        self._setup(space, _merge_rows(rows))

    def _setup(self, space, merged):
        self.space = space
        if merged is None:
            self.rows = ((LT, (0,) * space.n, 0),)
            self._empty = True
        else:
            self.rows = merged
            self._empty = None if merged else False
        self._reduced_cache = None
        self._canonical_cache = None
        self._hash = None

    @classmethod
    def _make(cls, space, merged):
        p = cls.__new__(cls)
        p._setup(space, merged)
        return p

    @classmethod
    def universe(cls, space):
        return cls._make(space, ())

    @classmethod
    def empty(cls, space):
        return cls._make(space, None)

    # -- basic protocol ----------------------------------------------------

    def __eq__(self, other):
        # syntactic equality on normalized rows; use region_equal for semantics
        return (
            isinstance(other, ConvexPolyhedron)
            and self.space == other.space
            and self.rows == other.rows
        )

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.space, self.rows))
        return self._hash

    def __repr__(self):
        if self.is_empty():
            return "ConvexPolyhedron<empty>"
        if not self.rows:
            return "ConvexPolyhedron<universe>"
        return "ConvexPolyhedron<%s>" % " & ".join(
            _row_text(self.space, r) for r in self.rows
        )

    @property
    def constraints(self) -> tuple:
        out = []
        for rel, coeffs, bound in self.rows:
            items = tuple(
                sorted(
                    (name, Fraction(coeffs[i]))
                    for i, name in enumerate(self.space.variables)
                    if coeffs[i]
                )
            )
            out.append(LinearConstraint(items, _REL_TEXT[rel], Fraction(bound)))
        return tuple(out)

    # -- queries -----------------------------------------------------------

    def _reduced(self):
        """(equalities-in-RREF, substituted inequalities) or None if empty."""
        if self._reduced_cache is None:
            self._reduced_cache = (_reduce_structure(self.rows, self.space.n),)
        return self._reduced_cache[0]

    def is_empty(self) -> bool:
        if self._empty is None:
            red = self._reduced()
            if red is None:
                self._empty = True
            else:
                eqs, ineqs = red
                support = set()
                for r in ineqs:
                    for i, c in enumerate(r[1]):
                        if c:
                            support.add(i)
                self._empty = _eliminate_rows(list(eqs) + list(ineqs), support) is None
        return self._empty

    def membership(self, valuation: Mapping) -> bool:
        vals = []
        for name in self.space.variables:
            if name not in valuation:
                raise GeometryError("valuation misses variable %r" % name)
            vals.append(parse_rational(valuation[name]))
        for rel, coeffs, bound in self.rows:
            s = sum((c * v for c, v in zip(coeffs, vals) if c), Fraction(0))
            if rel == EQ:
                if s != bound:
                    return False
            elif rel == LE:
                if s > bound:
                    return False
            else:
                if s >= bound:
                    return False
        return True

    def contains(self, other: "ConvexPolyhedron") -> bool:
        """True iff `other` is a subset of `self`."""
        self._check_space(other)
        if other.is_empty():
            return True
        if self.is_empty():
            return False
        red = self._reduced()
        eqs, ineqs = red
        # rows of self dominated by a single row of other need no
        # feasibility check; zone comparisons mostly resolve here
        ub = {}
        eqd = {}
        for orow in other.rows:
            rel, d, q = _primitive(orow)
            if rel == EQ:
                sd, sq = _eq_sign(d, q)
                eqd[sd] = sq
            else:
                cur = ub.get(d)
                if cur is None or q < cur[0] or (q == cur[0] and rel == LT):
                    ub[d] = (q, rel == LT)
        base = None
        for row in list(eqs) + list(ineqs):
            if _dominated(row, ub, eqd):
                continue
            if base is None:
                base = list(other.rows)
            for neg in _negations(row):
                if _feasible_rows(base + [neg], self.space.n):
                    return False
        return True

    def var_interval(self, name: str):
        """(lo, lo_strict, hi, hi_strict) of a variable; None bound = unbounded."""
        i = self.space.index(name)
        others = set(range(self.space.n)) - {i}
        rows = _eliminate_rows(self.rows, others)
        if rows is None:
            raise GeometryError("interval of a variable over an empty polyhedron")
        lo = hi = None
        lo_strict = hi_strict = False
        for rel, coeffs, bound in rows:
            c = coeffs[i]
            if c == 0:
                continue
            q = Fraction(bound, c)
            if rel == EQ:
                return (q, False, q, False)
            if c > 0:  # upper bound
                if hi is None or q < hi or (q == hi and rel == LT):
                    hi, hi_strict = q, rel == LT
            else:  # lower bound
                if lo is None or q > lo or (q == lo and rel == LT):
                    lo, lo_strict = q, rel == LT
        return (lo, lo_strict, hi, hi_strict)

    # -- constructions -----------------------------------------------------

    def _check_space(self, other):
        if self.space != other.space:
            raise GeometryError("variable space mismatch")

    def intersect(self, other: "ConvexPolyhedron") -> "ConvexPolyhedron":
        self._check_space(other)
        return self._make(self.space, _merge_rows(self.rows + other.rows))

    def with_constraints(self, constraints: Iterable) -> "ConvexPolyhedron":
        rows = list(self.rows) + [_row_from(self.space, c) for c in constraints]
        return self._make(self.space, _merge_rows(rows))

    def _with_rows(self, extra) -> "ConvexPolyhedron":
        return self._make(self.space, _merge_rows(list(self.rows) + list(extra)))

    def eliminate(self, names: Iterable) -> "ConvexPolyhedron":
        targets = {self.space.index(n) for n in names}
        return self._make(self.space, _eliminate_rows(self.rows, targets))

    def reset(self, clocks: Iterable) -> "ConvexPolyhedron":
        names = list(clocks)
        for n in names:
            if not self.space.is_clock(n):
                raise GeometryError("reset of non-clock %r" % n)
        dropped = self.eliminate(names)
        if dropped.is_empty():
            return dropped
        zero = []
        nvars = self.space.n
        for n in names:
            i = self.space.index(n)
            unit = tuple(1 if j == i else 0 for j in range(nvars))
            zero.append((EQ, unit, 0))
        return dropped._with_rows(zero)

    def time_elapse(self, stopped: Iterable) -> "ConvexPolyhedron":
        """Future closure: let all clocks outside `stopped` grow uniformly."""
        stopped = set(stopped)
        for n in stopped:
            if not self.space.is_clock(n):
                raise GeometryError("stopped set contains non-clock %r" % n)
        if self.is_empty():
            return self
        elapse_idx = [
            i for i, n in enumerate(self.space.clocks) if n not in stopped
        ]
        if not elapse_idx:
            return self
        n = self.space.n
        rows2 = []
        for rel, coeffs, bound in self.rows:
            s = sum(coeffs[i] for i in elapse_idx)
            rows2.append((rel, coeffs + (-s,), bound))
        rows2.append((LE, (0,) * n + (-1,), 0))  # delay >= 0
        elim = _eliminate_rows(rows2, {n})
        if elim is None:
            return self.empty(self.space)
        return self._make(self.space, tuple((rel, c[:-1], b) for rel, c, b in elim))

    # -- canonical form ----------------------------------------------------

    def canonicalize(self) -> "ConvexPolyhedron":
        if self._canonical_cache is not None:
            return self._canonical_cache
        result = self._canonicalize_inner()
        result._canonical_cache = result
        self._canonical_cache = result
        return result

    def _canonicalize_inner(self):
        if self.is_empty():
            return self.empty(self.space)
        n = self.space.n
        rows = list(self.rows)
        # promote implicit equalities to fixpoint
        while True:
            red = _reduce_structure(tuple(rows), n)
            eqs, ineqs = red  # not None: nonempty polyhedron
            all_rows = list(eqs) + list(ineqs)
            promoted = False
            for idx, row in enumerate(ineqs):
                rel, c, b = row
                if rel != LE:
                    continue
                if not _feasible_rows(all_rows + [(LT, c, b)], n):
                    rows = list(eqs) + [r for r in ineqs if r is not row]
                    rows.append((EQ, c, b))
                    promoted = True
                    break
            if not promoted:
                break
        # drop redundant inequalities (one feasibility test per constraint;
        # an equality's negation is a disjunction, so test branches apart)
        eqs = list(eqs)
        kept = list(ineqs)
        for row in sorted(ineqs):
            rest = eqs + [r for r in kept if r != row]
            entailed = all(
                not _feasible_rows(rest + [neg], n) for neg in _negations(row)
            )
            if entailed:
                kept = [r for r in kept if r != row]
        merged = _merge_rows(eqs + kept)
        if merged is None:  # pragma: no cover - nonempty by construction
            return self.empty(self.space)
        return self._make(self.space, merged)

    # -- projections -------------------------------------------------------

    def param_projection(self) -> "ConvexPolyhedron":
        """Eliminate every clock and restrict to the parameter-only space."""
        nclocks = len(self.space.clocks)
        if nclocks == 0:
            return self
        elim = _eliminate_rows(self.rows, set(range(nclocks)))
        pspace = self.space.param_space()
        if elim is None:
            return self.empty(pspace)
        rows = tuple((rel, c[nclocks:], b) for rel, c, b in elim)
        return self._make(pspace, rows)


def _reduce_structure(rows, n):
    """RREF the equalities and substitute them out of the inequalities.

    Returns (equality rows, inequality rows) or None when contradictory.
    The inequality part is guaranteed free of equality rows: merging can
    surface new equalities (touching opposite bounds), in which case the
    whole system is reduced again.
    """
    while True:
        red = _reduce_structure_once(rows, n)
        if red is None:
            return None
        eqs, ineqs = red
        if not any(r[0] == EQ for r in ineqs):
            return eqs, ineqs
        rows = tuple(eqs) + tuple(ineqs)


def _reduce_structure_once(rows, n):
    eqs = [r for r in rows if r[0] == EQ]
    ineqs = [r for r in rows if r[0] != EQ]
    if not eqs:
        merged = _merge_rows(ineqs)
        if merged is None:
            return None
        return (), tuple(r for r in merged)
    work = [list(r[1]) + [r[2]] for r in eqs]
    pivots = []  # (var, coeffs list, bound)
    for v in range(n):
        pr = None
        for i in range(len(work)):
            if work[i][v]:
                pr = work.pop(i)
                break
        if pr is None:
            continue
        c, b = pr[:n], pr[n]
        if c[v] < 0:
            c = [-x for x in c]
            b = -b
        rel, tc, b = _row_gcd_reduce(EQ, c, b)
        c = list(tc)
        for w in work:
            if w[v]:
                f, g2 = c[v], w[v]
                for j in range(n):
                    w[j] = f * w[j] - g2 * c[j]
                w[n] = f * w[n] - g2 * b
                gg = 0
                for x in w:
                    gg = gcd(gg, x)
                    if gg == 1:
                        break
                if gg > 1:
                    for j in range(n + 1):
                        w[j] //= gg
        pivots.append((v, c, b))
    for w in work:
        if w[n] != 0:
            return None
    # back-substitute so each pivot var appears in exactly one equality
    for i in range(len(pivots) - 1, -1, -1):
        vi, ci, bi = pivots[i]
        for j in range(i + 1, len(pivots)):
            vj, cj, bj = pivots[j]
            if ci[vj]:
                f, g2 = cj[vj], ci[vj]
                ci = [f * x - g2 * y for x, y in zip(ci, cj)]
                bi = f * bi - g2 * bj
                rel, tc, bi = _row_gcd_reduce(EQ, ci, bi)
                ci = list(tc)
        pivots[i] = (vi, ci, bi)
    out_eqs = tuple((EQ, tuple(c), b) for _, c, b in pivots)
    # substitute pivots into inequalities
    out_ineqs = []
    for rel, coeffs, bound in ineqs:
        c = list(coeffs)
        b = bound
        for v, pc, pb in pivots:
            if c[v]:
                f, cv = pc[v], c[v]
                c = [f * x - cv * y for x, y in zip(c, pc)]
                b = f * b - cv * pb
        out_ineqs.append(_row_gcd_reduce(rel, tuple(c), b))
    merged = _merge_rows(out_ineqs)
    if merged is None:
        return None
    return out_eqs, merged


def _row_from(space, c):
    if isinstance(c, LinearConstraint):
        if c.relation not in _TEXT_REL:
            c = LinearConstraint.from_terms(dict(c.coefficients), c.relation, c.bound)
        terms = dict(c.coefficients)
        rel = _TEXT_REL[c.relation]
        bound = c.bound
    elif isinstance(c, tuple) and len(c) == 3:
        terms = {k: parse_rational(v) for k, v in dict(c[0]).items()}
        lc = LinearConstraint.from_terms(terms, c[1], c[2])
        terms = dict(lc.coefficients)
        rel = _TEXT_REL[lc.relation]
        bound = lc.bound
    else:
        raise GeometryError("cannot interpret constraint %r" % (c,))
    coeffs = [Fraction(0)] * space.n
    for name, q in terms.items():
        coeffs[space.index(name)] = Fraction(q)
    bound = Fraction(bound)
    den = bound.denominator
    for q in coeffs:
        den = den * q.denominator // gcd(den, q.denominator)
    return (rel, tuple(int(q * den) for q in coeffs), int(bound * den))


# ---------------------------------------------------------------------------


class Region:
    """Finite union of convex polyhedra over one variable space."""

    __slots__ = ("space", "disjuncts", "_canonical_cache")

    def __init__(self, space: VariableSpace, disjuncts: Sequence = ()):
        self.space = space
        polys = []
        for d in disjuncts:
            if not isinstance(d, ConvexPolyhedron):
                raise GeometryError("region disjuncts must be polyhedra")
            if d.space != space:
                raise GeometryError("variable space mismatch in region")
            polys.append(d)
        self.disjuncts = tuple(polys)
        self._canonical_cache = None

    @classmethod
    def empty(cls, space):
        return cls(space, ())

    @classmethod
    def universe(cls, space):
        return cls(space, (ConvexPolyhedron.universe(space),))

    @classmethod
    def of(cls, poly: ConvexPolyhedron):
        return cls(poly.space, (poly,))

    def __eq__(self, other):
        return (
            isinstance(other, Region)
            and self.space == other.space
            and self.disjuncts == other.disjuncts
        )

    def __hash__(self):
        return hash((self.space, self.disjuncts))

    def __repr__(self):
        return "Region<%d disjuncts>" % len(self.disjuncts)

    def is_empty(self) -> bool:
        return all(d.is_empty() for d in self.disjuncts)

    def membership(self, valuation: Mapping) -> bool:
        return any(d.membership(valuation) for d in self.disjuncts)

    def union(self, other: "Region") -> "Region":
        self._check_space(other)
        return Region(self.space, self.disjuncts + other.disjuncts)

    def add(self, poly: ConvexPolyhedron) -> "Region":
        if poly.space != self.space:
            raise GeometryError("variable space mismatch")
        return Region(self.space, self.disjuncts + (poly,))

    def intersect(self, other: "Region") -> "Region":
        self._check_space(other)
        out = []
        for a in self.disjuncts:
            if a.is_empty():
                continue
            for b in other.disjuncts:
                c = a.intersect(b)
                if not c.is_empty():
                    out.append(c)
        return Region(self.space, out)

    def difference(self, other: "Region") -> "Region":
        self._check_space(other)
        pieces = [d for d in self.disjuncts if not d.is_empty()]
        for q in other.disjuncts:
            if q.is_empty():
                continue
            qc = q.canonicalize()
            nxt = []
            for piece in pieces:
                nxt.extend(_poly_minus(piece, qc))
            pieces = nxt
            if not pieces:
                break
        return Region(self.space, pieces)

    def contains(self, other: "Region") -> bool:
        return other.difference(self).is_empty()

    def equal(self, other: "Region") -> bool:
        c = self.canonicalize()
        d = other.canonicalize()
        if c.disjuncts == d.disjuncts:
            return True
        return c.contains(d) and d.contains(c)

    def canonicalize(self) -> "Region":
        if self._canonical_cache is not None:
            return self._canonical_cache
        polys = []
        for d in self.disjuncts:
            c = d.canonicalize()
            if not c.is_empty():
                polys.append(c)
        polys = sorted(set(polys), key=lambda p: p.rows)
        # drop disjuncts absorbed by another disjunct (no hulls, just subsets)
        kept = []
        for i, p in enumerate(polys):
            absorbed = False
            for j, q in enumerate(polys):
                if i == j:
                    continue
                if q.contains(p) and not (p.contains(q) and j > i):
                    absorbed = True
                    break
            if not absorbed:
                kept.append(p)
        out = Region(self.space, kept)
        out._canonical_cache = out
        self._canonical_cache = out
        return out

    def _check_space(self, other):
        if self.space != other.space:
            raise GeometryError("variable space mismatch")


def _poly_minus(piece: ConvexPolyhedron, q_canonical: ConvexPolyhedron):
    out = []
    prefix = piece
    for row in q_canonical.rows:
        for neg in _negations(row):
            cand = prefix._with_rows([neg])
            if not cand.is_empty():
                out.append(cand)
        prefix = prefix._with_rows([row])
        if prefix.is_empty():
            break
    return out


def embed(p: ConvexPolyhedron, space: VariableSpace) -> ConvexPolyhedron:
    """Re-express a polyhedron over a larger variable space (match by name)."""
    if p.space == space:
        return p
    idx = [space.index(n) for n in p.space.variables]
    rows = []
    for rel, coeffs, bound in p.rows:
        nc = [0] * space.n
        for i, c in enumerate(coeffs):
            nc[idx[i]] = c
        rows.append((rel, tuple(nc), bound))
    return ConvexPolyhedron._make(space, _merge_rows(rows))


def marginal(p: ConvexPolyhedron, space: VariableSpace) -> ConvexPolyhedron:
    """Exact projection onto a smaller variable space (match by name)."""
    if p.space == space:
        return p
    for n in space.variables:
        if n not in p.space.variables:
            raise GeometryError("marginal target has new variable %r" % n)
    if p.is_empty():
        return ConvexPolyhedron.empty(space)
    drop = [n for n in p.space.variables if n not in space.variables]
    elim = p.eliminate(drop)
    if elim.is_empty():
        return ConvexPolyhedron.empty(space)
    idx = [p.space.index(n) for n in space.variables]
    rows = tuple(sorted((rel, tuple(coeffs[i] for i in idx), bound)
                        for rel, coeffs, bound in elim.rows))
    return ConvexPolyhedron._make(space, rows)


def region_marginal(region: Region, space: VariableSpace) -> Region:
    """Disjunct-wise exact projection of a region."""
    return Region(space, tuple(marginal(d, space)
                               for d in region.disjuncts)).canonicalize()


# ---------------------------------------------------------------------------
# module-level operation surface


def _as_region(x) -> Region:
    if isinstance(x, Region):
        return x
    if isinstance(x, ConvexPolyhedron):
        return Region.of(x)
    raise GeometryError("expected Region or ConvexPolyhedron, got %r" % type(x))


def intersect(a, b):
    if isinstance(a, ConvexPolyhedron) and isinstance(b, ConvexPolyhedron):
        return a.intersect(b)
    return _as_region(a).intersect(_as_region(b))


def is_empty(x) -> bool:
    return x.is_empty()


def contains(outer, inner) -> bool:
    if isinstance(outer, ConvexPolyhedron) and isinstance(inner, ConvexPolyhedron):
        return outer.contains(inner)
    return _as_region(outer).contains(_as_region(inner))


def eliminate(p: ConvexPolyhedron, names) -> ConvexPolyhedron:
    return p.eliminate(names)


def time_elapse(p: ConvexPolyhedron, stopped) -> ConvexPolyhedron:
    return p.time_elapse(stopped)


def reset(p: ConvexPolyhedron, clocks) -> ConvexPolyhedron:
    return p.reset(clocks)


def region_difference(a, b) -> Region:
    return _as_region(a).difference(_as_region(b))


def region_equal(a, b) -> bool:
    return _as_region(a).equal(_as_region(b))


def membership(x, valuation) -> bool:
    return x.membership(valuation)


def canonicalize(x):
    return x.canonicalize()


# ---------------------------------------------------------------------------
# text emission and parsing
#
# Grammar: one constraint per line, `<int-linear-term> <op> <int-linear-term>`
# with op in {<, <=, =, >=, >}; disjuncts separated by a line `OR`; `TRUE` and
# `FALSE` denote the universe/empty disjunct; `#` starts a comment line.


def _side_text(terms, const):
    parts = []
    for coeff, name in terms:
        if coeff == 1:
            parts.append(name)
        else:
            parts.append("%d*%s" % (coeff, name))
    if const:
        parts.append(str(const))
    if not parts:
        return "0"
    return " + ".join(parts)


def _row_text(space, row):
    rel, coeffs, bound = row
    names = space.variables
    lhs = [(c, names[i]) for i, c in enumerate(coeffs) if c > 0]
    rhs = [(-c, names[i]) for i, c in enumerate(coeffs) if c < 0]
    if bound >= 0:
        return "%s %s %s" % (
            _side_text(lhs, 0),
            _REL_TEXT[rel],
            _side_text(rhs, bound),
        )
    return "%s %s %s" % (
        _side_text(lhs, -bound),
        _REL_TEXT[rel],
        _side_text(rhs, 0),
    )


def region_to_text(region: Region, exact: Optional[bool] = None) -> str:
    region = region.canonicalize()
    lines = []
    if exact is not None:
        lines.append("# exact: %s" % ("true" if exact else "false"))
    if not region.disjuncts:
        lines.append("FALSE")
        return "\n".join(lines) + "\n"
    blocks = []
    for d in region.disjuncts:
        if not d.rows:
            blocks.append(["TRUE"])
        else:
            blocks.append([_row_text(region.space, r) for r in d.rows])
    for i, b in enumerate(blocks):
        if i:
            lines.append("OR")
        lines.extend(b)
    return "\n".join(lines) + "\n"


_REL_SPLIT = re.compile(r"(<=|>=|==|=|<|>)")
_TERM_RE = re.compile(
    r"\s*([+-])?\s*(?:(\d+(?:/\d+|\.\d+)?)\s*(?:\*\s*([A-Za-z_]\w*))?|([A-Za-z_]\w*))\s*"
)


def _parse_side(text, lineno):
    coeffs = {}
    const = Fraction(0)
    pos = 0
    sign = 1
    first = True
    while pos < len(text):
        m = _TERM_RE.match(text, pos)
        if not m or m.end() == pos:
            raise GeometryError("line %d: cannot parse term at %r" % (lineno, text[pos:]))
        s, num, name_mul, name_bare = m.groups()
        if s == "-":
            sign = -1
        elif s == "+":
            sign = 1
        elif not first:
            raise GeometryError("line %d: missing + or - in %r" % (lineno, text))
        name = name_mul or name_bare
        coeff = parse_rational(num) if num is not None else Fraction(1)
        if name:
            coeffs[name] = coeffs.get(name, Fraction(0)) + sign * coeff
        else:
            const += sign * coeff
        pos = m.end()
        sign = 1
        first = False
    if first:
        raise GeometryError("line %d: empty side" % lineno)
    return coeffs, const


def parse_constraint_line(line: str, lineno: int = 0) -> LinearConstraint:
    parts = _REL_SPLIT.split(line)
    if len(parts) != 3:
        raise GeometryError("line %d: expected one relation in %r" % (lineno, line))
    lhs_text, rel, rhs_text = parts
    lcoeffs, lconst = _parse_side(lhs_text, lineno)
    rcoeffs, rconst = _parse_side(rhs_text, lineno)
    terms = dict(lcoeffs)
    for k, v in rcoeffs.items():
        terms[k] = terms.get(k, Fraction(0)) - v
    bound = rconst - lconst
    return LinearConstraint.from_terms(terms, rel, bound)


def parse_region_text(text: str, space: Optional[VariableSpace] = None) -> Region:
    blocks = [[]]
    kinds = [None]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "OR":
            blocks.append([])
            kinds.append(None)
            continue
        if line in ("TRUE", "FALSE"):
            kinds[-1] = line
            continue
        blocks[-1].append(parse_constraint_line(line, lineno))
    if space is None:
        names = set()
        for b in blocks:
            for c in b:
                names.update(k for k, _ in c.coefficients)
        space = VariableSpace((), tuple(sorted(names)))
    polys = []
    for b, kind in zip(blocks, kinds):
        if kind == "FALSE":
            continue
        if kind == "TRUE" and not b:
            polys.append(ConvexPolyhedron.universe(space))
            continue
        if not b and kind is None:
            continue  # stray empty block (e.g. trailing OR)
        polys.append(ConvexPolyhedron(space, b))
    return Region(space, polys)


# -- JSON form --------------------------------------------------------------


def _num_out(q):
    q = Fraction(q)
    if q.denominator == 1:
        return q.numerator
    return format_rational(q)


def region_to_json_obj(region: Region, exact: Optional[bool] = None) -> dict:
    region = region.canonicalize()
    obj = {"variables": list(region.space.variables), "disjuncts": []}
    if exact is not None:
        obj["exact"] = bool(exact)
    for d in region.disjuncts:
        cons = []
        for rel, coeffs, bound in d.rows:
            lhs = {
                name: _num_out(coeffs[i])
                for i, name in enumerate(region.space.variables)
                if coeffs[i]
            }
            cons.append({"lhs": lhs, "rel": _REL_TEXT[rel], "rhs": _num_out(bound)})
        obj["disjuncts"].append({"constraints": cons})
    return obj


def parse_region_json_obj(obj: Mapping, space: Optional[VariableSpace] = None) -> Region:
    disjuncts = obj.get("disjuncts")
    if disjuncts is None:
        raise GeometryError("region JSON misses 'disjuncts'")
    if space is None:
        if "variables" in obj:
            space = VariableSpace((), tuple(obj["variables"]))
        else:
            names = set()
            for d in disjuncts:
                for c in d.get("constraints", ()):
                    names.update(c.get("lhs", {}))
            space = VariableSpace((), tuple(sorted(names)))
    polys = []
    for d in disjuncts:
        cons = []
        for c in d.get("constraints", ()):
            cons.append(
                LinearConstraint.from_terms(
                    {k: parse_rational(v) for k, v in c.get("lhs", {}).items()},
                    c.get("rel", "<="),
                    parse_rational(c.get("rhs", 0)),
                )
            )
        polys.append(ConvexPolyhedron(space, cons))
    return Region(space, polys)
