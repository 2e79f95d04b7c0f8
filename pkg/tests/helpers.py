"""Small instance builders shared by the test modules."""
from __future__ import annotations

import math

import numpy as np

from oohlab.choice import HOME, ChoiceSegment
from oohlab.instance import Location, OOHLocation, ProblemInstance
from oohlab.routing import Stop

SEGMENT = ChoiceSegment(mu_g=1.0, beta_k=0.02, beta_d=-0.25, u0_home=3.2)


def make_instance(customers=((1.0, 0.0),), lockers=(), depot=(0.0, 0.0), capacities=None,
                  area=(-10.0, -10.0, 10.0, 10.0), **kw) -> ProblemInstance:
    """Instance with explicit coordinates; ``capacities`` per locker (None = unlimited)."""
    caps = capacities or [None] * len(lockers)
    ooh = tuple(OOHLocation(i, Location(*xy), c) for i, (xy, c) in enumerate(zip(lockers, caps)))
    kw.setdefault("segments", (SEGMENT,))
    return ProblemInstance(depot=Location(*depot), customer_pool=tuple(Location(*p) for p in customers),
                           ooh=ooh, area=area, **kw)


def home_stop(x, y, minutes=0.0, key=-1) -> Stop:
    return Stop("home", Location(float(x), float(y)), 1, minutes, key)


def random_stops(rng: np.random.Generator, n: int, side: float = 100.0, max_demand: int = 1) -> list[Stop]:
    xy = rng.uniform(0.0, side, size=(n, 2))
    out = []
    for i, (x, y) in enumerate(xy):
        d = int(rng.integers(1, max_demand + 1))
        kind = "home" if d == 1 else "ooh"
        out.append(Stop(kind, Location(float(x), float(y)), d, 0.0, i))
    return out


def random_instance(rng: np.random.Generator, K: int = 10, V: int = 9, side: float = 100.0) -> ProblemInstance:
    return make_instance(customers=[(side, side)], depot=(side / 2, side / 2), vehicle_capacity=K,
                         fleet_size=V, area=(0.0, 0.0, side, side))


def profit_with_outside(prices, costs, r, params, d0k, options) -> float:
    """MNL profit with an extra zero-utility alternative that earns nothing."""
    weights = []
    for k, a, c, d in zip(options, prices, costs, d0k):
        v = params.u0_home if k == HOME else -params.beta_k * math.exp(d)
        weights.append((math.exp(v + params.beta_d * a), r + a - c))
    z = 1.0 + sum(w for w, _ in weights)
    return sum(w * m for w, m in weights) / z
