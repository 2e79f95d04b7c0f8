"""Synthetic instance generators.

``gh_like_text`` writes a 200-customer pool in the Gehring-Homberger plain
text layout (R / C / RC spatial patterns on a 140 x 140 square, depot at
(70, 70)) so the same parsing path serves real and generated benchmark files.
``seattle_like_instance`` builds a large clustered instance with the fleet,
locker and demand scale of the city case (299 lockers, 38 % capacitated at
42 parcels, E[D] = 700, 25 vehicles of 100 parcels).
"""
from __future__ import annotations

import numpy as np

from .choice import ChoiceSegment
from .instance import (ArrivalProcess, CapacityRule, Location, OOHLocation, ProblemInstance,
                       build_instance, parse_gh_pool)

GH_SIDE = 140
GH_DEPOT = (70, 70)


def _clustered(rng, n, centers, spread, side):
    pts = []
    while len(pts) < n:
        c = centers[rng.integers(len(centers))]
        p = np.rint(c + rng.normal(0.0, spread, size=2))
        if 0 <= p[0] <= side and 0 <= p[1] <= side:
            pts.append(p)
    return np.array(pts)


def gh_like_points(kind: str, n: int, rng: np.random.Generator, side: int = GH_SIDE) -> np.ndarray:
    kind = kind.upper()
    if kind == "R":
        return rng.integers(0, side + 1, size=(n, 2)).astype(float)
    centers = rng.uniform(0.1 * side, 0.9 * side, size=(10, 2))
    if kind == "C":
        return _clustered(rng, n, centers, 0.03 * side, side)
    if kind == "RC":
        half = n // 2
        return np.vstack([_clustered(rng, half, centers[:8], 0.03 * side, side),
                          rng.integers(0, side + 1, size=(n - half, 2)).astype(float)])
    raise ValueError(f"unknown pattern {kind!r}")


def gh_like_text(kind: str = "RC", n: int = 200, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    pts = gh_like_points(kind, n, rng)
    lines = [f"{kind}_synthetic_{seed}", "", "VEHICLE", "NUMBER     CAPACITY",
             "  50          200", "", "CUSTOMER",
             "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE TIME", ""]
    lines.append(f"{0:5d} {GH_DEPOT[0]:8d} {GH_DEPOT[1]:8d} {0:8d} {0:8d} {1351:8d} {0:8d}")
    for i, (x, y) in enumerate(pts, start=1):
        demand = int(rng.integers(1, 41))
        lines.append(f"{i:5d} {int(x):8d} {int(y):8d} {demand:8d} {0:8d} {1351:8d} {10:8d}")
    return "\n".join(lines) + "\n"


# Tuned so NoPricing yields about 80% home deliveries and StaticPricing(5, 2)
# about 60% with distances scaled by the area diagonal.
SYNTHETIC_SEGMENT = ChoiceSegment(mu_g=1.0, beta_k=0.2, beta_d=-0.13, u0_home=3.34)


def synthetic_instance(kind: str = "RC", seed: int = 0, n_ooh: int = 10,
                       capacity_rule: CapacityRule | None = None, gh_text: str | None = None,
                       **overrides) -> ProblemInstance:
    """Desk-scale synthetic case: GH pool, 10 lockers, 9 vehicles x 10 parcels.

    ``seed`` governs both the generated pool (unless ``gh_text`` is given)
    and the locker draw.
    """
    text = gh_text if gh_text is not None else gh_like_text(kind, 200, seed)
    pool = parse_gh_pool(text)
    params = dict(name=f"{kind.lower()}-{seed}", area=(0.0, 0.0, float(GH_SIDE), float(GH_SIDE)),
                  segments=(SYNTHETIC_SEGMENT,))
    params.update(overrides)
    return build_instance(pool, n_ooh, np.random.default_rng([seed, 1]), capacity_rule, **params)


def seattle_like_instance(seed: int = 0, pool_size: int = 4000, side: float = 400.0,
                          **overrides) -> ProblemInstance:
    rng = np.random.default_rng([seed, 7])
    centers = rng.uniform(0.1 * side, 0.9 * side, size=(40, 2))
    weights = rng.dirichlet(np.ones(40))
    which = rng.choice(40, size=pool_size, p=weights)
    xy = centers[which] + rng.normal(0.0, 0.04 * side, size=(pool_size, 2))
    xy = np.clip(xy, 0.0, side)
    n_lockers = 299
    pick = rng.choice(pool_size, size=n_lockers, replace=False)
    capped = set(int(i) for i in rng.choice(n_lockers, size=int(round(0.38 * n_lockers)), replace=False))
    lockers = tuple(OOHLocation(i, Location(float(xy[j, 0]), float(xy[j, 1])), 42 if i in capped else None)
                    for i, j in enumerate(pick))
    taken = set(int(j) for j in pick)
    customers = tuple(Location(float(x), float(y)) for j, (x, y) in enumerate(xy) if j not in taken)
    params = dict(
        name=f"seattle-like-{seed}",
        depot=Location(side / 2, side / 2),
        customer_pool=customers,
        ooh=lockers,
        fleet_size=25,
        vehicle_capacity=100,
        arrivals=ArrivalProcess(nb_r=700, nb_p=0.5, horizon_T=700),
        segments=(ChoiceSegment(1.0, 0.018, -0.18, 3.55),),
        area=(0.0, 0.0, side, side),
        capacity_rule=CapacityRule("fraction", 42, 0.38),
    )
    params.update(overrides)
    return ProblemInstance(**params)
