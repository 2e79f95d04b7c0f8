"""CVRP heuristic, insertion quotes and remove-and-resolve marginal costs.

Plans are built from *stops* (one per home customer, one per used locker).
Locker demand may be split over several vehicles; home demand is atomic.
The solver minimises total distance: Clarke-Wright savings and a polar sweep
with cheapest insertion give two starts, the better one is improved by local
search and then by a ruin-and-recreate loop (``effort`` iterations).  The
inner loops live in the kernel backend (compiled or pure Python).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..choice import HOME
from ..instance import InstanceError, Location, ProblemInstance
from . import backend

LS_MAX_MOVES = 1_000_000
IMPROVE_EPS = 1e-9
BRUTE_FORCE_LIMIT = 8


class RoutingError(InstanceError):
    pass


class CapacityError(RoutingError):
    """Demand cannot be placed within the fleet's capacity."""


@dataclass(frozen=True)
class Stop:
    kind: str  # "home" | "ooh"
    loc: Location
    demand: int = 1
    service_minutes: float = 0.0
    key: int = -1  # locker id for OOH stops, booking index for home stops

    def __post_init__(self):
        if self.kind not in ("home", "ooh"):
            raise RoutingError(f"stop kind must be 'home' or 'ooh', got {self.kind!r}")
        if self.demand < 1:
            raise RoutingError(f"stop demand must be >= 1, got {self.demand}")


@dataclass(frozen=True)
class Booking:
    """A committed customer: home location, home service time, chosen option."""

    home: Location
    service_minutes: float
    option: int  # HOME or a locker id


@dataclass(frozen=True)
class RoutePlan:
    """Vehicle routes as sequences of ``(stop index, parcels)`` visits.

    Every route implicitly starts and ends at ``depot``; empty routes are
    not stored.  A locker stop may be visited by several routes.
    """

    depot: Location
    stops: tuple[Stop, ...]
    routes: tuple[tuple[tuple[int, int], ...], ...]
    speed: float
    total_distance: float
    total_travel_hours: float
    total_service_minutes: float

    @classmethod
    def build(cls, depot: Location, stops: Sequence[Stop], routes, speed: float) -> "RoutePlan":
        stops = tuple(stops)
        routes = tuple(tuple((int(s), int(q)) for s, q in r) for r in routes if len(r))
        xy = _node_xy(depot, stops)
        dist = 0.0
        for r in routes:
            dist += _route_distance(xy, r)
        service = 0.0
        for s in stops:
            service += s.service_minutes
        return cls(depot, stops, routes, float(speed), dist, dist / speed, service)

    @classmethod
    def empty(cls, depot: Location, speed: float) -> "RoutePlan":
        return cls.build(depot, (), (), speed)

    @property
    def loads(self) -> list[int]:
        return [sum(q for _, q in r) for r in self.routes]

    def route_distances(self) -> list[float]:
        xy = _node_xy(self.depot, self.stops)
        return [_route_distance(xy, r) for r in self.routes]

    def travel_money(self, rates) -> float:
        """Salary for driving time plus fuel; service time is accounted separately."""
        return rates.salary_per_hour * self.total_travel_hours + rates.fuel_per_distance * self.total_distance

    def ooh_stop_index(self, locker_id: int) -> int:
        for i, s in enumerate(self.stops):
            if s.kind == "ooh" and s.key == locker_id:
                return i
        return -1


@dataclass(frozen=True)
class InsertionQuote:
    route_index: int
    position: int
    delta_distance: float
    delta_hours: float
    merge: bool = False  # joins an existing locker stop instead of adding a visit


# ---------------------------------------------------------------------------
# geometry helpers


def _node_xy(depot: Location, stops: Sequence[Stop]) -> np.ndarray:
    xy = np.empty((len(stops) + 1, 2))
    xy[0] = (depot.x, depot.y)
    for i, s in enumerate(stops, start=1):
        xy[i] = (s.loc.x, s.loc.y)
    return xy


def _dist_matrix(xy: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - xy[None, :, :]
    return np.ascontiguousarray(np.hypot(diff[..., 0], diff[..., 1]))


def _route_distance(xy: np.ndarray, route) -> float:
    if not route:
        return 0.0
    nodes = [0] + [s + 1 for s, _ in route] + [0]
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        total += float(np.hypot(xy[a, 0] - xy[b, 0], xy[a, 1] - xy[b, 1]))
    return total


# ---------------------------------------------------------------------------
# stop aggregation


def aggregate_stops(booked: Sequence[Booking], inst: ProblemInstance) -> tuple[list[Stop], list[int]]:
    """Stops for a set of bookings plus, per booking, the index of its stop.

    Home bookings get one stop each; OOH bookings are grouped per locker in
    order of first appearance, with the locker's service time counted once.
    """
    stops: list[Stop] = []
    owner: list[int] = []
    locker_stop: dict[int, int] = {}
    for c, b in enumerate(booked):
        if b.option == HOME:
            owner.append(len(stops))
            stops.append(Stop("home", b.home, 1, float(b.service_minutes), c))
            continue
        k = int(b.option)
        if k in locker_stop:
            i = locker_stop[k]
            stops[i] = replace(stops[i], demand=stops[i].demand + 1)
        else:
            i = locker_stop[k] = len(stops)
            stops.append(Stop("ooh", inst.ooh[k].loc, 1, float(inst.ooh_service_minutes[k]), k))
        owner.append(i)
    return stops, owner


# ---------------------------------------------------------------------------
# kernel-facing mutable state


class _State:
    """Items (node, parcels) laid out in route rows for the kernels."""

    def __init__(self, D, item_node, item_qty, splittable, K, rows, n_rows):
        self.D = D
        self.item_node = np.asarray(item_node, dtype=np.int64)
        self.item_qty = np.asarray(item_qty, dtype=np.int64)
        self.splittable = splittable
        self.K = int(K)
        width = len(self.item_node) + 4
        self.routes = np.full((n_rows, width), -1, dtype=np.int64)
        self.lens = np.zeros(n_rows, dtype=np.int64)
        for r, row in enumerate(rows):
            self.routes[r, :len(row)] = row
            self.lens[r] = len(row)

    def copy(self) -> "_State":
        new = object.__new__(_State)
        new.D, new.splittable, new.K = self.D, self.splittable, self.K
        new.item_node = self.item_node.copy()
        new.item_qty = self.item_qty.copy()
        new.routes = self.routes.copy()
        new.lens = self.lens.copy()
        return new

    def rows(self) -> list[list[int]]:
        return [self.routes[r, :self.lens[r]].tolist() for r in range(len(self.lens))]

    def cost(self) -> float:
        return backend.kernels.total_length(self.D, self.item_node, self.routes, self.lens)

    def loads(self) -> np.ndarray:
        out = np.zeros(len(self.lens), dtype=np.int64)
        for r in range(len(self.lens)):
            out[r] = int(self.item_qty[self.routes[r, :self.lens[r]]].sum())
        return out

    def add_item(self, node: int, qty: int) -> int:
        self.item_node = np.append(self.item_node, np.int64(node))
        self.item_qty = np.append(self.item_qty, np.int64(qty))
        if self.routes.shape[1] < len(self.item_node) + 1:
            extra = np.full((self.routes.shape[0], len(self.item_node) + 4 - self.routes.shape[1]), -1,
                            dtype=np.int64)
            self.routes = np.hstack([self.routes, extra])
        return len(self.item_node) - 1

    def place(self, r: int, j: int, item: int) -> None:
        n = self.lens[r]
        self.routes[r, j + 1:n + 1] = self.routes[r, j:n].copy()
        self.routes[r, j] = item
        self.lens[r] = n + 1

    def local_search(self) -> int:
        return backend.kernels.local_search(self.D, self.item_node, self.item_qty, self.routes,
                                            self.lens, self.K, LS_MAX_MOVES)


def _insert_split(st: _State, item: int) -> None:
    """Cheapest insertion of an unplaced item, splitting OOH demand if needed."""
    kern = backend.kernels
    node = int(st.item_node[item])
    while True:
        q = int(st.item_qty[item])
        r, j, _ = kern.best_insertion(st.D, node, q, st.item_node, st.item_qty, st.routes, st.lens, st.K)
        if r >= 0:
            st.place(r, j, item)
            return
        if not st.splittable[node]:
            raise CapacityError(f"no vehicle can take {q} parcel(s) of an unsplittable stop")
        resid = st.K - st.loads()
        r = int(np.argmax(resid))
        if resid[r] <= 0:
            raise CapacityError("fleet capacity exhausted")
        part = int(resid[r])
        st.item_qty[item] = q - part
        new = st.add_item(node, part)
        _, j, _ = kern.best_insertion(st.D, node, part, st.item_node, st.item_qty,
                                      st.routes[r:r + 1], st.lens[r:r + 1], st.K)
        st.place(r, j, new)


def _items(stops: Sequence[Stop], K: int):
    nodes, qtys = [], []
    for i, s in enumerate(stops):
        if s.kind == "home" and s.demand > K:
            raise CapacityError(f"home stop {i} demand {s.demand} exceeds vehicle capacity {K}")
        left = s.demand
        while left > 0:
            q = min(left, K)
            nodes.append(i + 1)
            qtys.append(q)
            left -= q
    return np.array(nodes, dtype=np.int64), np.array(qtys, dtype=np.int64)


def _splittable(stops: Sequence[Stop]) -> np.ndarray:
    return np.array([False] + [s.kind == "ooh" for s in stops])


def _clarke_wright(D, item_node, item_qty, K) -> list[list[int]]:
    n = len(item_node)
    if n == 0:
        return []
    d0 = D[0, item_node]
    iu, ju = np.triu_indices(n, 1)
    s = d0[iu] + d0[ju] - D[item_node[iu], item_node[ju]]
    order = np.lexsort((ju, iu, -s))
    route_of = list(range(n))
    routes = {i: [i] for i in range(n)}
    load = {i: int(item_qty[i]) for i in range(n)}
    for idx in order:
        if s[idx] <= 0:
            break
        i, j = int(iu[idx]), int(ju[idx])
        ri, rj = route_of[i], route_of[j]
        if ri == rj or load[ri] + load[rj] > K:
            continue
        A, B = routes[ri], routes[rj]
        if A[-1] != i:
            if A[0] != i:
                continue
            A.reverse()
        if B[0] != j:
            if B[-1] != j:
                continue
            B.reverse()
        A.extend(B)
        load[ri] += load[rj]
        for x in B:
            route_of[x] = ri
        del routes[rj]
    return [routes[k] for k in sorted(routes)]


def _reduce_routes(st_items, rows, V) -> tuple[np.ndarray, np.ndarray, list[list[int]]]:
    """Dissolve the lightest routes until at most ``V`` remain."""
    D, item_node, item_qty, splittable, K = st_items
    while len(rows) > V:
        loads = [int(item_qty[r].sum()) for r in rows]
        k = int(np.argmin(loads))
        gone = rows.pop(k)
        st = _State(D, item_node, item_qty, splittable, K, rows, len(rows))
        for item in gone:
            _insert_split(st, item)
        item_node, item_qty, rows = st.item_node, st.item_qty, st.rows()
    return item_node, item_qty, rows


def _sweep(D, xy, item_node, item_qty, splittable, K, V) -> _State:
    st = _State(D, item_node, item_qty, splittable, K, [], V)
    ang = np.arctan2(xy[item_node, 1] - xy[0, 1], xy[item_node, 0] - xy[0, 0])
    for item in np.lexsort((np.arange(len(item_node)), ang)):
        _insert_split(st, int(item))
    return st


def _ruin_recreate(st: _State, rng: np.random.Generator) -> None:
    placed = np.concatenate([st.routes[r, :st.lens[r]] for r in range(len(st.lens))])
    n = len(placed)
    if n == 0:
        return
    kmax = max(1, min(n, int(math.ceil(0.25 * n)), 30))
    k = int(rng.integers(1, kmax + 1))
    if rng.random() < 0.5:
        chosen = rng.choice(placed, size=k, replace=False)
    else:
        seed = placed[int(rng.integers(n))]
        d = st.D[st.item_node[seed], st.item_node[placed]]
        chosen = placed[np.lexsort((placed, d))[:k]]
    drop = set(int(c) for c in chosen)
    for r in range(len(st.lens)):
        row = [int(x) for x in st.routes[r, :st.lens[r]] if int(x) not in drop]
        st.routes[r, :len(row)] = row
        st.routes[r, len(row):] = -1
        st.lens[r] = len(row)
    for item in rng.permutation(chosen):
        _insert_split(st, int(item))


def _iterate(st: _State, effort: int, rng: np.random.Generator) -> _State:
    st.local_search()
    best, best_cost = st, st.cost()
    for _ in range(int(effort)):
        cand = best.copy()
        _ruin_recreate(cand, rng)
        cand.local_search()
        c = cand.cost()
        if c < best_cost - IMPROVE_EPS:
            best, best_cost = cand, c
    return best


def _to_plan(st: _State, depot: Location, stops: Sequence[Stop], speed: float) -> RoutePlan:
    routes = []
    for row in st.rows():
        visits: list[list[int]] = []
        seen: dict[int, int] = {}
        for item in row:
            s = int(st.item_node[item]) - 1
            if s in seen:
                visits[seen[s]][1] += int(st.item_qty[item])
            else:
                seen[s] = len(visits)
                visits.append([s, int(st.item_qty[item])])
        routes.append(visits)
    return RoutePlan.build(depot, stops, routes, speed)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def solve_cvrp(stops: Sequence[Stop], inst: ProblemInstance, effort: int = 100,
               rng=None) -> RoutePlan:
    """Heuristic CVRP plan over ``stops``; deterministic for a fixed seed."""
    rng = _as_rng(rng)
    stops = tuple(stops)
    V, K = inst.fleet_size, inst.vehicle_capacity
    total = sum(s.demand for s in stops)
    if total > V * K:
        raise CapacityError(f"total demand {total} exceeds fleet capacity {V * K}")
    if not stops:
        return RoutePlan.empty(inst.depot, inst.speed)
    xy = _node_xy(inst.depot, stops)
    D = _dist_matrix(xy)
    item_node, item_qty = _items(stops, K)
    splittable = _splittable(stops)

    rows = _clarke_wright(D, item_node, item_qty, K)
    cw_node, cw_qty, rows = _reduce_routes((D, item_node, item_qty, splittable, K), rows, V)
    cw = _State(D, cw_node, cw_qty, splittable, K, rows, V)
    sw = _sweep(D, xy, item_node, item_qty, splittable, K, V)
    start = cw if cw.cost() <= sw.cost() + IMPROVE_EPS else sw
    return _to_plan(_iterate(start, effort, rng), inst.depot, stops, inst.speed)


def _plan_state(plan: RoutePlan, inst: ProblemInstance) -> _State:
    D = _dist_matrix(_node_xy(plan.depot, plan.stops))
    nodes, qtys, rows = [], [], []
    for r in plan.routes:
        row = []
        for s, q in r:
            row.append(len(nodes))
            nodes.append(s + 1)
            qtys.append(q)
        rows.append(row)
    return _State(D, nodes, qtys, _splittable(plan.stops), inst.vehicle_capacity, rows, inst.fleet_size)


def improve_plan(plan: RoutePlan, inst: ProblemInstance, effort: int = 0, rng=None) -> RoutePlan:
    """Warm start: local search from ``plan`` followed by ``effort`` ruin-and-recreate rounds."""
    if not plan.routes:
        return plan
    st = _iterate(_plan_state(plan, inst), effort, _as_rng(rng))
    return _to_plan(st, plan.depot, plan.stops, plan.speed)


def remove_demand(plan: RoutePlan, stop_index: int, qty: int = 1) -> RoutePlan:
    """Plan with ``qty`` parcels of one stop removed (the stop disappears at zero)."""
    stop = plan.stops[stop_index]
    if qty > stop.demand:
        raise RoutingError("cannot remove more parcels than the stop holds")
    if qty == stop.demand:
        stops = plan.stops[:stop_index] + plan.stops[stop_index + 1:]
        routes = [[(s - (s > stop_index), q) for s, q in r if s != stop_index] for r in plan.routes]
        return RoutePlan.build(plan.depot, stops, routes, plan.speed)
    stops = list(plan.stops)
    stops[stop_index] = replace(stop, demand=stop.demand - qty)
    # take the parcels from the smallest visits first
    visits = sorted(((q, ri, vi) for ri, r in enumerate(plan.routes) for vi, (s, q) in enumerate(r)
                     if s == stop_index))
    routes = [list(r) for r in plan.routes]
    left = qty
    for q, ri, vi in visits:
        take = min(q, left)
        routes[ri][vi] = (stop_index, q - take)
        left -= take
        if left == 0:
            break
    routes = [[(s, q) for s, q in r if q > 0] for r in routes]
    return RoutePlan.build(plan.depot, stops, routes, plan.speed)


# ---------------------------------------------------------------------------
# feasibility


def check_plan(plan: RoutePlan, inst: ProblemInstance, tol: float = 1e-9) -> None:
    """Raise :class:`RoutingError` unless the plan is feasible and its totals consistent."""
    if len(plan.routes) > inst.fleet_size:
        raise RoutingError(f"{len(plan.routes)} routes exceed fleet size {inst.fleet_size}")
    served = [0] * len(plan.stops)
    for ri, r in enumerate(plan.routes):
        if not r:
            raise RoutingError(f"route {ri} is empty")
        load = 0
        for s, q in r:
            if not 0 <= s < len(plan.stops):
                raise RoutingError(f"route {ri} visits unknown stop {s}")
            if q < 1:
                raise RoutingError(f"route {ri} carries {q} parcels to stop {s}")
            served[s] += q
            load += q
        if load > inst.vehicle_capacity:
            raise RoutingError(f"route {ri} load {load} exceeds capacity {inst.vehicle_capacity}")
    for i, s in enumerate(plan.stops):
        if served[i] != s.demand:
            raise RoutingError(f"stop {i} served {served[i]} of {s.demand} parcels")
        if s.kind == "home" and sum(1 for r in plan.routes for t, _ in r if t == i) > 1:
            raise RoutingError(f"home stop {i} is split over vehicles")
    keys = [s.key for s in plan.stops if s.kind == "ooh"]
    if len(keys) != len(set(keys)):
        raise RoutingError("locker stops must be unique per locker")
    fresh = RoutePlan.build(plan.depot, plan.stops, plan.routes, plan.speed)
    for name in ("total_distance", "total_travel_hours", "total_service_minutes"):
        if abs(getattr(fresh, name) - getattr(plan, name)) > tol:
            raise RoutingError(f"{name} does not match recomputation")


# ---------------------------------------------------------------------------
# exhaustive oracle


def brute_force_cvrp(stops: Sequence[Stop], inst: ProblemInstance) -> RoutePlan:
    """Exact minimum-distance plan for at most eight unsplit stops."""
    stops = tuple(stops)
    n = len(stops)
    if n > BRUTE_FORCE_LIMIT:
        raise RoutingError(f"brute force is limited to {BRUTE_FORCE_LIMIT} stops, got {n}")
    V, K = inst.fleet_size, inst.vehicle_capacity
    if any(s.demand > K for s in stops):
        raise RoutingError("brute force does not split stops")
    if n == 0:
        return RoutePlan.empty(inst.depot, inst.speed)
    D = _dist_matrix(_node_xy(inst.depot, stops))
    full = (1 << n) - 1
    # Held-Karp: best[mask][last] = shortest depot -> mask path ending at last
    INF = math.inf
    best = [[INF] * n for _ in range(full + 1)]
    prev = [[-1] * n for _ in range(full + 1)]
    for i in range(n):
        best[1 << i][i] = D[0, i + 1]
    for mask in range(1, full + 1):
        for last in range(n):
            c = best[mask][last]
            if c == INF:
                continue
            for nxt in range(n):
                if mask & (1 << nxt):
                    continue
                m2 = mask | (1 << nxt)
                v = c + D[last + 1, nxt + 1]
                if v < best[m2][nxt]:
                    best[m2][nxt], prev[m2][nxt] = v, last
    demand = [s.demand for s in stops]
    tour = [INF] * (full + 1)
    tour_end = [-1] * (full + 1)
    for mask in range(1, full + 1):
        if sum(demand[i] for i in range(n) if mask >> i & 1) > K:
            continue
        for last in range(n):
            v = best[mask][last] + D[last + 1, 0] if best[mask][last] < INF else INF
            if v < tour[mask]:
                tour[mask], tour_end[mask] = v, last
    # cover[k][mask]: min distance serving mask with exactly k routes
    cover = [[INF] * (full + 1) for _ in range(V + 1)]
    pick = [[0] * (full + 1) for _ in range(V + 1)]
    cover[0][0] = 0.0
    for k in range(1, V + 1):
        for mask in range(1, full + 1):
            low = mask & -mask
            sub = mask
            while sub:
                if sub & low and tour[sub] < INF and cover[k - 1][mask ^ sub] < INF:
                    v = tour[sub] + cover[k - 1][mask ^ sub]
                    if v < cover[k][mask]:
                        cover[k][mask], pick[k][mask] = v, sub
                sub = (sub - 1) & mask
    k = min(range(1, V + 1), key=lambda kk: (cover[kk][full], kk))
    if cover[k][full] == INF:
        raise CapacityError("stops do not fit in the fleet")
    routes, mask = [], full
    while mask:
        sub = pick[k][mask]
        seq, m, last = [], sub, tour_end[sub]
        while last >= 0:
            seq.append(last)
            m, last = m ^ (1 << last), prev[m][last]
        routes.append([(i, demand[i]) for i in reversed(seq)])
        mask ^= sub
        k -= 1
    return RoutePlan.build(inst.depot, stops, routes, inst.speed)


# ---------------------------------------------------------------------------
# marginal-cost estimates


def cheapest_insertion(plan: RoutePlan, stop: Stop, inst: ProblemInstance) -> InsertionQuote:
    """Cheapest feasible place for ``stop`` in ``plan`` (ties: lowest route, then position).

    A locker already in the plan absorbs the new parcels at zero extra
    distance when one of its visiting vehicles has room.
    """
    K, speed = inst.vehicle_capacity, inst.speed
    loads = plan.loads
    if stop.kind == "ooh":
        idx = plan.ooh_stop_index(stop.key)
        if idx >= 0:
            for ri, r in enumerate(plan.routes):
                if loads[ri] + stop.demand > K:
                    continue
                for pos, (s, _) in enumerate(r):
                    if s == idx:
                        return InsertionQuote(ri, pos, 0.0, 0.0, merge=True)
    xy = _node_xy(plan.depot, plan.stops)
    p = np.array([stop.loc.x, stop.loc.y])
    best = None
    for ri, r in enumerate(plan.routes):
        if loads[ri] + stop.demand > K:
            continue
        nodes = np.array([0] + [s + 1 for s, _ in r] + [0])
        a, b = xy[nodes[:-1]], xy[nodes[1:]]
        da = np.hypot(a[:, 0] - p[0], a[:, 1] - p[1])
        db = np.hypot(b[:, 0] - p[0], b[:, 1] - p[1])
        dab = np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])
        delta = da + db - dab
        j = int(np.argmin(delta))
        if best is None or delta[j] < best[2]:
            best = (ri, j, float(delta[j]))
    if len(plan.routes) < inst.fleet_size and stop.demand <= K:
        d0 = float(np.hypot(xy[0, 0] - p[0], xy[0, 1] - p[1]))
        if best is None or 2.0 * d0 < best[2]:
            best = (len(plan.routes), 0, 2.0 * d0)
    if best is None:
        raise CapacityError("no vehicle has room for the stop")
    ri, j, delta = best
    return InsertionQuote(ri, j, delta, delta / speed)


def apply_insertion(plan: RoutePlan, stop: Stop, quote: InsertionQuote) -> RoutePlan:
    routes = [list(r) for r in plan.routes]
    stops = list(plan.stops)
    if quote.merge:
        s, q = routes[quote.route_index][quote.position]
        routes[quote.route_index][quote.position] = (s, q + stop.demand)
        stops[s] = replace(stops[s], demand=stops[s].demand + stop.demand)
    else:
        if stop.kind == "ooh" and plan.ooh_stop_index(stop.key) >= 0:
            # the locker is already planned: add a visit on another vehicle
            s = plan.ooh_stop_index(stop.key)
            stops[s] = replace(stops[s], demand=stops[s].demand + stop.demand)
        else:
            s = len(stops)
            stops.append(stop)
        if quote.route_index == len(routes):
            routes.append([])
        routes[quote.route_index].insert(quote.position, (s, stop.demand))
    return RoutePlan.build(plan.depot, stops, routes, plan.speed)


def insertion_money(quote: InsertionQuote, stop: Stop, inst: ProblemInstance, locker_users: int = 0) -> float:
    """Salary and fuel of an insertion plus the customer's share of service time.

    Locker service time is split over the users, ``locker_users`` counting
    those already assigned before this customer.
    """
    r = inst.rates
    share = 1.0 if stop.kind == "home" else 1.0 / (locker_users + 1)
    return (r.salary_per_hour * (quote.delta_hours + stop.service_minutes / 60.0 * share)
            + r.fuel_per_distance * quote.delta_distance)


def service_share_money(stop: Stop, users: int, inst: ProblemInstance) -> float:
    share = 1.0 if stop.kind == "home" else 1.0 / max(users, 1)
    return inst.rates.salary_per_hour * stop.service_minutes / 60.0 * share


def true_insertion_costs(booked: Sequence[Booking], inst: ProblemInstance, effort: int = 100,
                         rng=None, resolve_effort: int = 10, fresh_every: int = 10,
                         plan_all: RoutePlan | None = None, exact: bool = False) -> np.ndarray:
    """Remove-and-resolve marginal cost of every booked customer.

    The label of customer ``c`` is the drop in salary-plus-fuel travel money
    when ``c`` leaves the final plan, plus ``c``'s service-time share (the
    full home service time, or the locker's time divided by its final users).
    Each counterfactual warm-starts from the full plan with the customer's
    parcel removed; every ``fresh_every``-th one is also rebuilt from scratch
    and the cheaper plan kept.  ``exact`` uses the brute-force oracle on both
    sides (at most eight stops).  Every removal draws from its own stream, so
    labels do not depend on evaluation order.
    """
    rng = _as_rng(rng)
    stops, owner = aggregate_stops(booked, inst)
    if exact:
        plan_all = brute_force_cvrp(stops, inst)
    elif plan_all is None:
        plan_all = solve_cvrp(stops, inst, effort, rng)
    base_seed = int(rng.integers(2 ** 63))
    money_all = plan_all.travel_money(inst.rates)
    labels = np.zeros(len(booked))
    for c, s in enumerate(owner):
        stop = plan_all.stops[s]
        without = remove_demand(plan_all, s, 1)
        if exact:
            without = brute_force_cvrp(without.stops, inst)
        elif without.routes:
            sub_rng = np.random.default_rng([base_seed, c])
            warm = improve_plan(without, inst, resolve_effort, sub_rng)
            if fresh_every and c % fresh_every == fresh_every - 1:
                fresh = solve_cvrp(without.stops, inst, resolve_effort, sub_rng)
                if fresh.total_distance < warm.total_distance - IMPROVE_EPS:
                    warm = fresh
            without = warm
        labels[c] = money_all - without.travel_money(inst.rates) + service_share_money(stop, stop.demand, inst)
    return labels


# ---------------------------------------------------------------------------
# debugging output


def write_plan_csv(plan: RoutePlan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["route_id", "seq", "stop_kind", "x", "y", "demand"])
        for ri, r in enumerate(plan.routes):
            for seq, (s, q) in enumerate(r):
                st = plan.stops[s]
                w.writerow([ri, seq, st.kind, st.loc.x, st.loc.y, q])


__all__ = [
    "Booking", "CapacityError", "InsertionQuote", "RoutePlan", "RoutingError", "Stop",
    "aggregate_stops", "apply_insertion", "brute_force_cvrp", "check_plan", "cheapest_insertion",
    "improve_plan", "insertion_money", "remove_demand", "service_share_money", "solve_cvrp",
    "true_insertion_costs", "write_plan_csv",
]
