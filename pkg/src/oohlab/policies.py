"""Offer selection and pricing policies.

Cost-based policies estimate a per-option delivery cost ``C_k`` and price with
the closed-form multinomial-logit optimum::

    a_k = C_k - r - m / beta_d,   (m - 1) exp(m) = sum_k exp(v_k + beta_d (C_k - r))

where ``v_k`` is the price-free utility of option ``k``.  ``m`` is obtained
from the principal branch of the Lambert W function.  Prices are clamped to
the instance price bounds and rounded to cents when emitted.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .choice import HOME, ChoiceSegment, scaled_distance
from .encoding import GridSpec, encode, flatten
from .instance import ProblemInstance
from .routing import (CapacityError, InsertionQuote, RoutePlan, Stop, apply_insertion, cheapest_insertion,
                      improve_plan, insertion_money)

log = logging.getLogger(__name__)

INV_E = math.exp(-1.0)


# ---------------------------------------------------------------------------
# Lambert W


def lambert_w0(x: float) -> np.longdouble:
    """Principal branch W0 by Halley iteration (at most 50 steps).

    Iterates in ``np.longdouble``: near x = 1e6 the spacing of doubles around
    w already moves w * e^w by about 1e-9, so an absolute residual below
    1e-10 needs the extra mantissa bits of extended precision.
    """
    xf = float(x)
    if math.isnan(xf) or xf < -INV_E:
        raise ValueError(f"lambert_w0 is defined for x >= -1/e, got {xf}")
    if xf == 0.0:
        return np.longdouble(0.0)
    if math.isinf(xf):
        return np.longdouble(np.inf)
    if xf < -0.25:
        p = math.sqrt(max(2.0 * (math.e * xf + 1.0), 0.0))
        w0 = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif xf < 3.0:
        w0 = math.log1p(xf)
        w0 = w0 * (1.0 - math.log1p(w0) / (2.0 + w0))
    else:
        l1 = math.log(xf)
        l2 = math.log(l1)
        w0 = l1 - l2 + l2 / l1
    X = np.longdouble(xf)
    w = np.longdouble(w0)
    one, two = np.longdouble(1.0), np.longdouble(2.0)
    tol = np.finfo(np.longdouble).eps * 4
    for _ in range(50):
        ew = np.exp(w)
        f = w * ew - X
        wp1 = w + one
        if wp1 == 0:
            break
        step = f / (ew * wp1 - (w + two) * f / (two * wp1))
        if not np.isfinite(step):
            break
        w = w - step
        if abs(step) <= tol * max(one, abs(w)):
            break
    return w


def lambert_w0_exp(L: float) -> float:
    """W0(exp(L)) without forming exp(L); safe for huge ``L``."""
    if L < 700.0:
        return float(lambert_w0(math.exp(L)))
    # solve w + log(w) = L by Newton
    w = L - math.log(L)
    for _ in range(50):
        step = (w + math.log(w) - L) / (1.0 + 1.0 / w)
        w -= step
        if abs(step) <= 4e-16 * w:
            break
    return w


# ---------------------------------------------------------------------------
# closed-form prices


@dataclass(frozen=True)
class PricingParams:
    """Utility parameters the pricer assumes for an arriving customer."""

    u0_home: float
    beta_k: float
    beta_d: float

    @classmethod
    def from_segments(cls, segments: Sequence[ChoiceSegment]) -> "PricingParams":
        """Arrival-share-weighted parameters of the segments that react to prices."""
        active = [s for s in segments if not s.home_only]
        if not active:
            raise ValueError("no price-sensitive segment to price for")
        w = np.array([s.mu_g for s in active], dtype=float)
        w = w / w.sum() if w.sum() > 0 else np.full(len(active), 1.0 / len(active))
        return cls(float(np.dot(w, [s.u0_home for s in active])),
                   float(np.dot(w, [s.beta_k for s in active])),
                   float(np.dot(w, [s.beta_d for s in active])))


def base_utilities(options: Sequence[int], d0k: Sequence[float], params: PricingParams) -> np.ndarray:
    opts = np.asarray(options)
    return np.where(opts == HOME, params.u0_home, -params.beta_k * np.exp(np.asarray(d0k, dtype=float)))


def solve_m(costs: Sequence[float], r: float, params: PricingParams, d0k: Sequence[float],
            options: Sequence[int] | None = None) -> float:
    """Root ``m`` of ``(m - 1) e^m = S`` with ``S`` built in log space."""
    if not params.beta_d < 0:
        raise ValueError("price sensitivity beta_d must be negative")
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("no options offered")
    if options is None:
        options = [0] * len(costs)
    z = base_utilities(options, d0k, params) + params.beta_d * (costs - r)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite utility in price optimisation")
    zmax = float(z.max())
    log_s = zmax + math.log(float(np.exp(z - zmax).sum()))
    # (m-1) e^(m-1) = S/e  =>  m = 1 + W0(S/e)
    return 1.0 + lambert_w0_exp(log_s - 1.0)


def optimal_prices(costs: Sequence[float], r: float, params: PricingParams, d0k: Sequence[float],
                   options: Sequence[int] | None = None) -> np.ndarray:
    """Unclamped profit-maximising prices ``C_k - r - m / beta_d``."""
    m = solve_m(costs, r, params, d0k, options)
    return np.asarray(costs, dtype=float) - r - m / params.beta_d


def expected_profit(prices, costs, r: float, params: PricingParams, d0k, options=None,
                    no_purchase: bool = False) -> float:
    """Expected per-customer profit ``sum_k P_k (r + a_k - C_k)`` under MNL.

    Over the offered options alone a common shift of every price leaves the
    probabilities unchanged, so this objective has no interior maximum.  The
    closed-form prices of :func:`optimal_prices` maximise the variant with
    ``no_purchase=True``: an extra zero-utility alternative that earns nothing.
    """
    if options is None:
        options = [0] * len(costs)
    u = base_utilities(options, d0k, params) + params.beta_d * np.asarray(prices, dtype=float)
    top = max(float(u.max()), 0.0) if no_purchase else float(u.max())
    e = np.exp(u - top)
    denom = e.sum() + (math.exp(-top) if no_purchase else 0.0)
    return float(np.dot(e / denom, r + np.asarray(prices, dtype=float) - np.asarray(costs, dtype=float)))


def emit_prices(raw, bounds: tuple[float, float]) -> tuple[float, ...]:
    lo, hi = bounds
    return tuple(round(float(min(max(v, lo), hi)), 2) for v in raw)


# ---------------------------------------------------------------------------
# decisions and offer selection


@dataclass(frozen=True)
class PricingDecision:
    offered: tuple[int, ...]
    prices: tuple[float, ...]
    costs: tuple[float, ...] | None = None  # cost estimates behind the prices, if any

    def price_of(self, option: int) -> float:
        return self.prices[self.offered.index(option)]


def nearest_open_lockers(inst: ProblemInstance, home_xy, remaining, N: int) -> list[int]:
    """Up to ``N`` lockers with free capacity, nearest first (ties by id)."""
    if N <= 0 or not len(inst.ooh):
        return []
    d = np.hypot(inst.ooh_xy[:, 0] - home_xy[0], inst.ooh_xy[:, 1] - home_xy[1])
    order = np.lexsort((np.arange(len(d)), d))
    out = []
    for k in order:
        if remaining is not None and remaining[k] == 0:
            continue
        out.append(int(k))
        if len(out) == N:
            break
    return out


def select_offer(state, inst: ProblemInstance, N: int | None = None) -> list[int]:
    """Home plus the ``N`` nearest lockers that still have capacity."""
    N = inst.offer_size_N if N is None else N
    return [HOME] + nearest_open_lockers(inst, state.home_xy, state.ooh_remaining, N)


def option_d0k(inst: ProblemInstance, home_xy, options: Sequence[int]) -> np.ndarray:
    out = np.zeros(len(options))
    for i, k in enumerate(options):
        if k != HOME:
            out[i] = float(scaled_distance(math.hypot(inst.ooh_xy[k, 0] - home_xy[0],
                                                      inst.ooh_xy[k, 1] - home_xy[1]),
                                           inst.choice_distance_scale))
    return out


def option_stop(inst: ProblemInstance, state, option: int) -> Stop:
    if option == HOME:
        return Stop("home", state.customer.home, 1, state.customer.service_minutes, state.t)
    return Stop("ooh", inst.ooh[option].loc, 1, float(inst.ooh_service_minutes[option]), option)


# ---------------------------------------------------------------------------
# capacity penalty


@dataclass(frozen=True)
class CapacityPenaltyParams:
    alpha: float = 0.8
    w_fraction: float = 0.1
    lambda0: float = 0.1
    lambda_step: float = 0.001
    literal: bool = False  # use remaining/C_l instead of the fill fraction

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.lambda0 < 0 or self.lambda_step < 0:
            raise ValueError("penalty weights must be non-negative")

    def lam(self, t: int) -> float:
        return self.lambda0 + self.lambda_step * t


def capacity_penalty(remaining: int, capacity: int, t: int,
                     params: CapacityPenaltyParams = CapacityPenaltyParams()) -> float:
    """Sigmoid surcharge that grows as a capacitated locker fills up."""
    w = math.ceil(params.w_fraction * capacity)
    x = remaining / capacity if params.literal else (capacity - remaining) / capacity
    z = w * (x - params.alpha)
    sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    return params.lam(t) * sig


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Base class: home plus nearest open lockers, all at price zero."""

    name = "policy"
    uses_costs = False

    def reset(self, inst: ProblemInstance, rng: np.random.Generator | None = None) -> None:
        self.inst = inst

    def offer(self, state) -> list[int]:
        return select_offer(state, self.inst)

    def decide(self, state) -> PricingDecision:
        opts = self.offer(state)
        return PricingDecision(tuple(opts), tuple(0.0 for _ in opts))

    def commit(self, state, decision: PricingDecision, option: int) -> None:
        pass


class NoOOH(Policy):
    name = "NoOOH"

    def offer(self, state):
        return [HOME]


class OnlyOOH(Policy):
    """Lockers only; home is offered only when every locker is full."""

    name = "OnlyOOH"

    def offer(self, state):
        lockers = nearest_open_lockers(self.inst, state.home_xy, state.ooh_remaining, self.inst.offer_size_N)
        return lockers or [HOME]


class StaticPricing(Policy):
    """Fixed OOH discount and home charge; (0, 0) is the NoPricing policy."""

    def __init__(self, discount_ooh: float = 5.0, charge_home: float = 2.0, name: str | None = None):
        self.discount_ooh = float(discount_ooh)
        self.charge_home = float(charge_home)
        self.name = name or ("NoPricing" if discount_ooh == 0 and charge_home == 0 else "StaticPricing")

    def reset(self, inst, rng=None):
        super().reset(inst, rng)
        lo, hi = inst.bounds
        if not (lo <= -self.discount_ooh <= hi and lo <= self.charge_home <= hi):
            log.warning("static prices (-%g, +%g) outside bounds [%g, %g]; clamping",
                        self.discount_ooh, self.charge_home, lo, hi)

    def decide(self, state):
        opts = self.offer(state)
        raw = [self.charge_home if k == HOME else -self.discount_ooh for k in opts]
        return PricingDecision(tuple(opts), emit_prices(raw, self.inst.bounds))


def NoPricing() -> StaticPricing:
    return StaticPricing(0.0, 0.0, "NoPricing")


def static_policy(discount_ooh: float, charge_home: float) -> StaticPricing:
    return StaticPricing(discount_ooh, charge_home)


class CostBasedPolicy(Policy):
    """Prices from per-option cost estimates via the closed-form optimum."""

    uses_costs = True

    def reset(self, inst, rng=None):
        super().reset(inst, rng)
        self.params = PricingParams.from_segments(inst.segments)

    def estimate_costs(self, state, options: list[int]) -> np.ndarray:
        raise NotImplementedError

    def decide(self, state):
        opts = self.offer(state)
        costs = np.asarray(self.estimate_costs(state, opts), dtype=float)
        d0k = option_d0k(self.inst, state.home_xy, opts)
        raw = optimal_prices(costs, self.inst.rates.revenue_per_customer, self.params, d0k, opts)
        return PricingDecision(tuple(opts), emit_prices(raw, self.inst.bounds), tuple(float(c) for c in costs))


def _quote(plan: RoutePlan, stop: Stop, inst: ProblemInstance) -> InsertionQuote:
    try:
        return cheapest_insertion(plan, stop, inst)
    except CapacityError:
        d = math.hypot(stop.loc.x - inst.depot.x, stop.loc.y - inst.depot.y)
        return InsertionQuote(-1, 0, 2.0 * d, 2.0 * d / inst.speed)


def _locker_users(plan: RoutePlan, stop: Stop) -> int:
    if stop.kind != "ooh":
        return 0
    i = plan.ooh_stop_index(stop.key)
    return plan.stops[i].demand if i >= 0 else 0


def plan_insertion_money(plan: RoutePlan, stop: Stop, inst: ProblemInstance) -> tuple[float, InsertionQuote]:
    q = _quote(plan, stop, inst)
    return insertion_money(q, stop, inst, _locker_users(plan, stop)), q


class Hindsight(CostBasedPolicy):
    """Cheapest insertion into the plan of customers booked so far."""

    name = "Hindsight"

    def __init__(self, refresh_every: int = 10):
        self.refresh_every = refresh_every

    def reset(self, inst, rng=None):
        super().reset(inst, rng)
        self.plan = RoutePlan.empty(inst.depot, inst.speed)
        self.commits = 0
        self._quotes: dict[int, InsertionQuote] = {}

    def hindsight_costs(self, state, options):
        out = []
        self._quotes = {}
        for k in options:
            money, q = plan_insertion_money(self.plan, option_stop(self.inst, state, k), self.inst)
            self._quotes[k] = q
            out.append(money)
        return np.array(out)

    def estimate_costs(self, state, options):
        return self.hindsight_costs(state, options)

    def commit(self, state, decision, option):
        stop = option_stop(self.inst, state, option)
        q = self._quotes.get(option)
        if q is None or q.route_index < 0:
            q = cheapest_insertion(self.plan, stop, self.inst)
        self.plan = apply_insertion(self.plan, stop, q)
        self.commits += 1
        if self.refresh_every and self.commits % self.refresh_every == 0:
            self.plan = improve_plan(self.plan, self.inst, effort=0)


class Foresight(Hindsight):
    """Hindsight blended with mean insertion cost into historic final plans.

    The weight on the historic pool starts at ``theta0`` and drops by
    ``delta_theta`` (default ``theta0 / E[D]``) after every booking.
    """

    name = "Foresight"

    def __init__(self, pool: Sequence[RoutePlan], theta0: float = 1.0, delta_theta: float | None = None,
                 refresh_every: int = 10):
        super().__init__(refresh_every)
        if not pool:
            raise ValueError("Foresight needs a non-empty pool of historic plans")
        self.pool = list(pool)
        self.theta0 = theta0
        self._delta = delta_theta

    def reset(self, inst, rng=None):
        super().reset(inst, rng)
        self.delta_theta = self._delta if self._delta is not None else self.theta0 / inst.arrivals.mean
        self.theta = min(max(self.theta0, 0.0), 1.0)

    def pool_costs(self, state, options):
        out = np.zeros(len(options))
        for i, k in enumerate(options):
            stop = option_stop(self.inst, state, k)
            out[i] = np.mean([plan_insertion_money(p, stop, self.inst)[0] for p in self.pool])
        return out

    def estimate_costs(self, state, options):
        hind = self.hindsight_costs(state, options)
        if self.theta == 0.0:
            return hind
        return (1.0 - self.theta) * hind + self.theta * self.pool_costs(state, options)

    def commit(self, state, decision, option):
        super().commit(state, decision, option)
        self.theta = min(max(self.theta - self.delta_theta, 0.0), 1.0)


class DSPO(CostBasedPolicy):
    """Network cost predictions on the encoded state of every offered option."""

    name = "DSPO"

    def __init__(self, net, spec: GridSpec):
        self.net = net
        self.spec = spec

    def dspo_costs(self, state, options):
        return self.net.predict_encoded([encode(state, k, self.spec) for k in options])

    def estimate_costs(self, state, options):
        return self.dspo_costs(state, options)


class LinearPolicy(CostBasedPolicy):
    """Linear regression on the flattened encoding."""

    name = "Linear"

    def __init__(self, model, spec: GridSpec):
        self.model = model
        self.spec = spec

    def estimate_costs(self, state, options):
        X = np.stack([flatten(encode(state, k, self.spec)) for k in options])
        return self.model.predict(X)


def dspo_costs(net, state, options, spec: GridSpec) -> np.ndarray:
    return net.predict_encoded([encode(state, k, spec) for k in options])


__all__ = [
    "CapacityPenaltyParams", "CostBasedPolicy", "DSPO", "Foresight", "Hindsight", "LinearPolicy", "NoOOH",
    "NoPricing", "OnlyOOH", "Policy", "PricingDecision", "PricingParams", "StaticPricing", "capacity_penalty",
    "dspo_costs", "emit_prices", "expected_profit", "lambert_w0", "lambert_w0_exp", "nearest_open_lockers",
    "optimal_prices", "option_d0k", "select_offer", "solve_m", "static_policy",
]
