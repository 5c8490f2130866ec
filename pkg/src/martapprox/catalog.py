"""Named model instances and config-driven model construction."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import ArgumentError
from .models import (BernoulliShift, CoefficientTail, FiniteMarkovChain, LinearProcess, LinearProcessSpec,
                     ProcessModel, make_observable)
from .projective import RateFamily


def two_state():
    return FiniteMarkovChain([[0.9, 0.1], [0.2, 0.8]], [1.0, 0.0], name="two_state")


def iid_signs():
    return FiniteMarkovChain([[0.5, 0.5], [0.5, 0.5]], [1.0, -1.0], name="iid_signs")


def three_state_reversible():
    Q = [[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]
    return FiniteMarkovChain(Q, [1.0, 0.0, -1.0], name="three_state_reversible")


def circulant3():
    Q = [[0.2, 0.5, 0.3], [0.3, 0.2, 0.5], [0.5, 0.3, 0.2]]
    return FiniteMarkovChain(Q, [1.0, -1.0, 0.0], name="circulant3")


def zero_chain():
    return FiniteMarkovChain([[0.5, 0.5], [0.5, 0.5]], [0.0, 0.0], name="zero")


def doubling_map():
    return BernoulliShift(make_observable("polynomial", coefficients=[0.0, 1.0]), name="doubling_map")


def ar_geometric():
    tail = CoefficientTail("geometric", scale=1.0, ratio=0.6)
    return LinearProcess(LinearProcessSpec.from_tail(tail, J=64), name="ar_geometric")


def long_memory():
    # a_i = 1/(i log^2 i): summable coefficients but ||E_0 S_n|| ~ sqrt(n)/log n
    tail = CoefficientTail("power_log", scale=1.0, power=1.0, log_power=2.0)
    return LinearProcess(LinearProcessSpec.from_tail(tail, J=4096), name="long_memory")


CATALOG = {
    "two_state": two_state,
    "iid_signs": iid_signs,
    "three_state_reversible": three_state_reversible,
    "circulant3": circulant3,
    "zero": zero_chain,
    "doubling_map": doubling_map,
    "ar_geometric": ar_geometric,
    "long_memory": long_memory,
}

# Declared shape of n -> ||E_0 S_n|| for the untruncated model (scale fitted to a profile).
TAIL_SHAPES = {
    "two_state": RateFamily(),
    "iid_signs": RateFamily(),
    "three_state_reversible": RateFamily(),
    "circulant3": RateFamily(),
    "zero": RateFamily(0.0),
    "doubling_map": RateFamily(),
    "ar_geometric": RateFamily(),
    "long_memory": RateFamily(1.0, 0.5, -1.0, 0.0),
}

CHAINS = ("two_state", "iid_signs", "three_state_reversible", "circulant3")


def catalog_model(name: str) -> ProcessModel:
    try:
        return CATALOG[name]()
    except KeyError:
        raise ArgumentError(f"unknown catalog model {name!r}; known: {sorted(CATALOG)}") from None


def tail_shape(name: Optional[str]) -> Optional[RateFamily]:
    return TAIL_SHAPES.get(name) if name else None


def build_model(spec: dict) -> ProcessModel:
    """Model from a config section: ``{"name": ...}`` or an explicit ``kind`` block."""
    if not isinstance(spec, dict) or not spec:
        raise ArgumentError("model section is empty")
    if "name" in spec and "kind" not in spec:
        return catalog_model(spec["name"])
    kind = spec.get("kind")
    label = spec.get("name", kind)
    if kind == "chain":
        for key in ("Q", "f"):
            if key not in spec:
                raise ArgumentError(f"model.{key} is required for a chain")
        return FiniteMarkovChain(np.array(spec["Q"], dtype=float), np.array(spec["f"], dtype=float),
                                 center=spec.get("center", True), name=label)
    if kind == "shift":
        obs = dict(spec.get("observable", {"name": "polynomial", "coefficients": [0.0, 1.0]}))
        oname = obs.pop("name", "polynomial")
        return BernoulliShift(make_observable(oname, **obs), K_exact=int(spec.get("K_exact", 20)), name=label)
    if kind == "linear":
        tail = CoefficientTail(**spec.get("tail", {}))
        lspec = LinearProcessSpec.from_tail(tail, J=int(spec.get("J", 10_000)),
                                            variance=float(spec.get("variance", 1.0)),
                                            innovations=spec.get("innovations", "gaussian"),
                                            tail_epsilon=float(spec.get("tail_epsilon", 1e-3)))
        return LinearProcess(lspec, name=label)
    raise ArgumentError(f"model.kind must be one of chain, shift, linear (got {kind!r})")
