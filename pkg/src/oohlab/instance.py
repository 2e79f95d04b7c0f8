"""Problem instances: locations, fleet, cost rates, arrival process.

Instances are immutable and can be written to / read from a JSON document
(schema in ``oohlab/data/instance.schema.json``).  Customer pools can be read
from Gehring-Homberger VRPTW benchmark files or generated synthetically.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .choice import ChoiceSegment

__all__ = [
    "Location", "OOHLocation", "CostRates", "ArrivalProcess", "CapacityRule",
    "ProblemInstance", "InstanceError", "InvariantError", "GHParseError",
    "parse_gh_pool", "pick_ooh", "service_time", "sample_arrival_count",
    "travel", "load_instance", "save_instance", "instance_from_dict",
    "instance_to_dict", "build_instance",
]


class InstanceError(ValueError):
    """Raised for malformed instance documents."""


class InvariantError(InstanceError):
    """A field parsed fine but violates a domain invariant."""


class GHParseError(InstanceError):
    pass


@dataclass(frozen=True)
class Location:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvariantError(f"non-finite coordinate ({self.x}, {self.y})")


@dataclass(frozen=True)
class OOHLocation:
    id: int
    loc: Location
    capacity: int | None = None  # None means unlimited

    def __post_init__(self):
        if self.capacity is not None and self.capacity < 1:
            raise InvariantError(f"ooh[{self.id}].capacity: must be >= 1, got {self.capacity}")


@dataclass(frozen=True)
class CostRates:
    salary_per_hour: float = 30.0
    fuel_per_distance: float = 0.3
    failure_cost: float = 10.0
    failure_prob: float = 0.1
    revenue_per_customer: float = 50.0
    price_bounds: tuple[float, float] = (-10.0, 2.0)

    def __post_init__(self):
        for name in ("salary_per_hour", "fuel_per_distance", "failure_cost", "revenue_per_customer"):
            if getattr(self, name) < 0:
                raise InvariantError(f"rates.{name}: must be >= 0")
        if not 0.0 <= self.failure_prob <= 1.0:
            raise InvariantError("rates.failure_prob: must lie in [0, 1]")
        a, b = self.price_bounds
        if not a < b:
            raise InvariantError("rates.price_bounds: lower bound must be below upper bound")
        object.__setattr__(self, "price_bounds", (float(a), float(b)))


@dataclass(frozen=True)
class ArrivalProcess:
    """Negative-binomial number of customers per booking horizon."""

    nb_r: int = 90
    nb_p: float = 0.5
    horizon_T: int = 90

    def __post_init__(self):
        if self.nb_r < 1:
            raise InvariantError("arrivals.nb_r: must be >= 1")
        if not 0.0 < self.nb_p <= 1.0:
            raise InvariantError("arrivals.nb_p: must lie in (0, 1]")
        if self.horizon_T < 1:
            raise InvariantError("arrivals.horizon_T: must be >= 1")

    @property
    def mean(self) -> float:
        return self.nb_r * (1.0 - self.nb_p) / self.nb_p

    @property
    def variance(self) -> float:
        return self.nb_r * (1.0 - self.nb_p) / self.nb_p**2


@dataclass(frozen=True)
class CapacityRule:
    """How locker capacities are assigned when OOH locations are picked.

    kind: ``"infinite"``, ``"uniform"`` (every locker gets ``capacity``) or
    ``"fraction"`` (``round(fraction * count)`` randomly chosen lockers get
    ``capacity``, the rest are unlimited).
    """

    kind: str = "infinite"
    capacity: int | None = None
    fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("infinite", "uniform", "fraction"):
            raise InvariantError(f"capacity_rule.kind: unknown rule {self.kind!r}")
        if self.kind != "infinite" and (self.capacity is None or self.capacity < 1):
            raise InvariantError("capacity_rule.capacity: must be >= 1")
        if not 0.0 <= self.fraction <= 1.0:
            raise InvariantError("capacity_rule.fraction: must lie in [0, 1]")


@dataclass(frozen=True)
class ProblemInstance:
    depot: Location
    customer_pool: tuple[Location, ...]
    ooh: tuple[OOHLocation, ...]
    fleet_size: int = 9
    vehicle_capacity: int = 10
    rates: CostRates = field(default_factory=CostRates)
    arrivals: ArrivalProcess = field(default_factory=ArrivalProcess)
    speed: float = 30.0
    service_time_bounds: tuple[float, float] = (1.0, 10.0)
    segments: tuple[ChoiceSegment, ...] = (ChoiceSegment(),)
    offer_size_N: int = 20
    area: tuple[float, float, float, float] | None = None  # xmin, ymin, xmax, ymax
    distance_scale: float | None = None  # divisor for choice-model distances
    capacity_rule: CapacityRule = field(default_factory=CapacityRule)
    name: str = "instance"

    def __post_init__(self):
        object.__setattr__(self, "customer_pool", tuple(self.customer_pool))
        object.__setattr__(self, "ooh", tuple(self.ooh))
        object.__setattr__(self, "segments", tuple(self.segments))
        lo, hi = self.service_time_bounds
        object.__setattr__(self, "service_time_bounds", (float(lo), float(hi)))
        if self.fleet_size < 1 or self.vehicle_capacity < 1:
            raise InvariantError("fleet: size and capacity must be >= 1")
        if not self.speed > 0:
            raise InvariantError("speed: must be > 0")
        if lo > hi:
            raise InvariantError("service_time_bounds: lower bound exceeds upper bound")
        if not self.customer_pool:
            raise InvariantError("customers: pool is empty")
        if self.offer_size_N < 0:
            raise InvariantError("offer_size: must be >= 0")
        if [o.id for o in self.ooh] != list(range(len(self.ooh))):
            raise InvariantError("ooh: ids must be 0..n-1 in order")
        if not self.segments:
            raise InvariantError("segments: at least one segment required")
        total = sum(s.mu_g for s in self.segments)
        if abs(total - 1.0) > 1e-9:
            raise InvariantError(f"segments: arrival shares sum to {total}, expected 1")
        if self.area is None:
            pts = [self.depot, *self.customer_pool, *(o.loc for o in self.ooh)]
            xs = [p.x for p in pts]
            ys = [p.y for p in pts]
            object.__setattr__(self, "area", (min(xs), min(ys), max(xs), max(ys)))
        else:
            object.__setattr__(self, "area", tuple(float(v) for v in self.area))
        xmin, ymin, xmax, ymax = self.area
        if not (xmax > xmin and ymax > ymin):
            raise InvariantError("area: must have positive width and height")
        if self.distance_scale is not None and not self.distance_scale > 0:
            raise InvariantError("distance_scale: must be > 0")

    # derived, cached arrays -------------------------------------------------
    @cached_property
    def pool_xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.customer_pool], dtype=float)

    @cached_property
    def ooh_xy(self) -> np.ndarray:
        return np.array([[o.loc.x, o.loc.y] for o in self.ooh], dtype=float).reshape(-1, 2)

    @cached_property
    def depot_xy(self) -> np.ndarray:
        return np.array([self.depot.x, self.depot.y], dtype=float)

    @cached_property
    def pool_service_minutes(self) -> np.ndarray:
        return np.array([service_time(p, self.area, self.service_time_bounds)
                         for p in self.customer_pool])

    @cached_property
    def ooh_service_minutes(self) -> np.ndarray:
        return np.array([service_time(o.loc, self.area, self.service_time_bounds)
                         for o in self.ooh])

    @cached_property
    def ooh_capacities(self) -> np.ndarray:
        """Capacities with -1 marking unlimited lockers."""
        return np.array([-1 if o.capacity is None else o.capacity for o in self.ooh], dtype=np.int64)

    @property
    def fleet_capacity(self) -> int:
        return self.fleet_size * self.vehicle_capacity

    @property
    def choice_distance_scale(self) -> float:
        if self.distance_scale is not None:
            return self.distance_scale
        xmin, ymin, xmax, ymax = self.area
        return math.hypot(xmax - xmin, ymax - ymin)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.rates.price_bounds

    def replace(self, **changes) -> "ProblemInstance":
        from dataclasses import replace as _replace
        return _replace(self, **changes)


# ---------------------------------------------------------------------------
# Gehring-Homberger files


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def parse_gh_pool(text: str) -> list[Location]:
    """Read the customer table of a Gehring-Homberger VRPTW file.

    Only the id/x/y columns are used; demand, time windows and service time
    are ignored.  The depot is the first record.  Header lines (instance name,
    VEHICLE / CUSTOMER blocks) are skipped.
    """
    locs: list[Location] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        numeric = [_is_number(t) for t in toks]
        if not locs and not numeric[0]:
            continue  # header text
        if not locs and all(numeric) and len(toks) < 3:
            continue  # "NUMBER CAPACITY" values line
        if len(toks) < 3 or not all(numeric):
            raise GHParseError(f"line {lineno}: malformed customer record {line.strip()!r}")
        try:
            locs.append(Location(float(toks[1]), float(toks[2])))
        except InvariantError as exc:
            raise GHParseError(f"line {lineno}: {exc}") from None
    if not locs:
        raise GHParseError("no customer records found")
    return locs


def pick_ooh(pool: Sequence[Location], count: int, rng: np.random.Generator,
             capacity_spec: CapacityRule | None = None) -> tuple[list[OOHLocation], list[Location]]:
    """Sample ``count`` pool entries (without replacement) as OOH locations.

    Returns the lockers (ids 0..count-1) and the remaining pool in its
    original order.
    """
    if count < 0 or count > len(pool):
        raise ValueError(f"cannot pick {count} OOH locations from a pool of {len(pool)}")
    rule = capacity_spec or CapacityRule()
    chosen = rng.choice(len(pool), size=count, replace=False) if count else np.empty(0, dtype=int)
    caps: list[int | None] = [None] * count
    if rule.kind == "uniform":
        caps = [rule.capacity] * count
    elif rule.kind == "fraction":
        n_cap = int(round(rule.fraction * count))
        for i in rng.choice(count, size=n_cap, replace=False) if n_cap else []:
            caps[int(i)] = rule.capacity
    lockers = [OOHLocation(i, pool[int(j)], caps[i]) for i, j in enumerate(chosen)]
    taken = set(int(j) for j in chosen)
    rest = [p for j, p in enumerate(pool) if j not in taken]
    return lockers, rest


def camelback(x: float, y: float) -> float:
    return (4.0 - 2.1 * x * x + y / 3.0) * x * x + x * y + (-4.0 + 4.0 * x * x) * y * y


def service_time(loc: Location, area: Sequence[float],
                 bounds: tuple[float, float] = (1.0, 10.0)) -> float:
    """Service duration in minutes from the six-hump camelback surface.

    ``area`` is ``(xmin, ymin, xmax, ymax)``; the point is mapped affinely to
    x in [-3, 3], y in [-2, 2] and the surface value is clipped to ``bounds``.
    """
    xmin, ymin, xmax, ymax = area
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("service area must have positive width and height")
    u = -3.0 + 6.0 * (loc.x - xmin) / (xmax - xmin)
    v = -2.0 + 4.0 * (loc.y - ymin) / (ymax - ymin)
    lo, hi = bounds
    return float(min(max(camelback(u, v), lo), hi))


def sample_arrival_count(ap: ArrivalProcess, rng: np.random.Generator) -> int:
    # numpy counts failures before nb_r successes: mean r(1-p)/p
    if ap.nb_p >= 1.0:
        return 0
    return int(rng.negative_binomial(ap.nb_r, ap.nb_p))


def travel(i: Location, j: Location, speed: float) -> tuple[float, float]:
    """Euclidean distance and driving hours between two points."""
    d = math.hypot(i.x - j.x, i.y - j.y)
    return d, d / speed


# ---------------------------------------------------------------------------
# JSON persistence

_SCHEMA = None


def _schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        _SCHEMA = json.loads(resources.files("oohlab").joinpath("data/instance.schema.json").read_text())
    return _SCHEMA


def instance_to_dict(inst: ProblemInstance) -> dict:
    return {
        "name": inst.name,
        "depot": {"x": inst.depot.x, "y": inst.depot.y},
        "customers": [[p.x, p.y] for p in inst.customer_pool],
        "ooh": [{"id": o.id, "x": o.loc.x, "y": o.loc.y, "capacity": o.capacity} for o in inst.ooh],
        "fleet": {"size": inst.fleet_size, "vehicle_capacity": inst.vehicle_capacity},
        "rates": {
            "salary_per_hour": inst.rates.salary_per_hour,
            "fuel_per_distance": inst.rates.fuel_per_distance,
            "failure_cost": inst.rates.failure_cost,
            "failure_prob": inst.rates.failure_prob,
            "revenue_per_customer": inst.rates.revenue_per_customer,
            "price_bounds": list(inst.rates.price_bounds),
        },
        "arrivals": {"nb_r": inst.arrivals.nb_r, "nb_p": inst.arrivals.nb_p,
                     "horizon_T": inst.arrivals.horizon_T},
        "speed": inst.speed,
        "service_time_bounds": list(inst.service_time_bounds),
        "segments": [asdict(s) for s in inst.segments],
        "offer_size": inst.offer_size_N,
        "area": list(inst.area),
        "distance_scale": inst.distance_scale,
        "capacity_rule": asdict(inst.capacity_rule),
    }


def instance_from_dict(doc: dict) -> ProblemInstance:
    import jsonschema

    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InstanceError(f"{path}: {exc.message}") from None
    rates = doc["rates"]
    return ProblemInstance(
        name=doc.get("name", "instance"),
        depot=Location(doc["depot"]["x"], doc["depot"]["y"]),
        customer_pool=tuple(Location(x, y) for x, y in doc["customers"]),
        ooh=tuple(OOHLocation(o["id"], Location(o["x"], o["y"]), o.get("capacity")) for o in doc["ooh"]),
        fleet_size=doc["fleet"]["size"],
        vehicle_capacity=doc["fleet"]["vehicle_capacity"],
        rates=CostRates(
            salary_per_hour=rates["salary_per_hour"],
            fuel_per_distance=rates["fuel_per_distance"],
            failure_cost=rates["failure_cost"],
            failure_prob=rates["failure_prob"],
            revenue_per_customer=rates["revenue_per_customer"],
            price_bounds=tuple(rates["price_bounds"]),
        ),
        arrivals=ArrivalProcess(**doc["arrivals"]),
        speed=doc["speed"],
        service_time_bounds=tuple(doc.get("service_time_bounds", (1.0, 10.0))),
        segments=tuple(ChoiceSegment(**s) for s in doc["segments"]),
        offer_size_N=doc["offer_size"],
        area=tuple(doc["area"]) if doc.get("area") is not None else None,
        distance_scale=doc.get("distance_scale"),
        capacity_rule=CapacityRule(**doc.get("capacity_rule", {})),
    )


def save_instance(inst: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1))


def load_instance(path) -> ProblemInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: not valid JSON ({exc})") from None
    return instance_from_dict(doc)


def build_instance(pool: Sequence[Location], n_ooh: int, rng: np.random.Generator,
                   capacity_rule: CapacityRule | None = None, **kwargs) -> ProblemInstance:
    """Turn a parsed pool (depot first) into an instance with ``n_ooh`` lockers."""
    depot, rest = pool[0], list(pool[1:])
    rule = capacity_rule or CapacityRule()
    lockers, customers = pick_ooh(rest, n_ooh, rng, rule)
    return ProblemInstance(depot=depot, customer_pool=tuple(customers), ooh=tuple(lockers),
                           capacity_rule=rule, **kwargs)
