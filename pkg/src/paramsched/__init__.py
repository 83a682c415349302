"""Parametric schedulability analysis of fixed-priority periodic systems.

The package verifies and synthesizes schedulability regions for periodic
thread sets with major-frame activation patterns, context-switch costs and
end-to-end data-flow (reactivity) bounds.  Two independent analysis routes
are provided: a symbolic route over parametric stopwatch automata
(`psa` + `translate`) and an exact-rational discrete-event simulator
(`oracle`) used for cross-validation.
"""

from paramsched.geometry import Rational

__all__ = ["Rational"]
__version__ = "0.1.0"
