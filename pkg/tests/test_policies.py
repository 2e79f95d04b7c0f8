import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import home_stop, make_instance, profit_with_outside
from oohlab.choice import HOME
from oohlab.encoding import GridSpec
from oohlab.instance import Location
from oohlab.neuralnet import Network
from oohlab.policies import (DSPO, CapacityPenaltyParams, Foresight, Hindsight, NoOOH, NoPricing, OnlyOOH,
                             PricingParams, capacity_penalty, expected_profit, lambert_w0, lambert_w0_exp,
                             optimal_prices, select_offer, solve_m, static_policy)
from oohlab.routing import RoutePlan, insertion_money
from oohlab.routing.solver import InsertionQuote
from oohlab.simulator import Customer, SimState, run_episode

FLAT = PricingParams(u0_home=0.0, beta_k=0.0, beta_d=-1.0)
# root of (m - 1) e^m = 2, from an independent Newton iteration
M_TWO = 1.4630555133655487
PAPER_SYNTH = PricingParams(u0_home=3.2, beta_k=0.02, beta_d=-0.25)


def arrival(inst, x, y, minutes=0.0, n=100):
    state = SimState(inst, n)
    state.customer = Customer(0, Location(x, y), minutes, 0)
    return state


# --- offer selection ---------------------------------------------------------

def test_all_ten_lockers_offered_when_n_exceeds_them(rc_instance):
    state = arrival(rc_instance, 50.0, 50.0)
    offer = select_offer(state, rc_instance, 20)
    assert offer[0] == HOME and sorted(offer[1:]) == list(range(10))


def test_full_lockers_leave_home_only():
    inst = make_instance(lockers=[(1, 1), (2, 2)], capacities=[1, 1])
    state = arrival(inst, 0.0, 0.0)
    state.ooh_remaining[:] = 0
    assert select_offer(state, inst, 20) == [HOME]


def test_equidistant_tie_offers_lower_id():
    inst = make_instance(lockers=[(1, 0), (-1, 0)])
    assert select_offer(arrival(inst, 0.0, 0.0), inst, 1) == [HOME, 0]


def test_offer_sorted_by_distance():
    inst = make_instance(lockers=[(5, 0), (1, 0), (3, 0)])
    assert select_offer(arrival(inst, 0.0, 0.0), inst, 2) == [HOME, 1, 2]


# --- Lambert W and the optimality condition ----------------------------------

@pytest.mark.parametrize("x, w", [(0.0, 0.0), (math.e, 1.0), (1.0, 0.5671432904097838)])
def test_lambert_examples(x, w):
    assert float(lambert_w0(x)) == pytest.approx(w, abs=1e-12)


def test_lambert_domain_error():
    with pytest.raises(ValueError):
        lambert_w0(-0.5)


def test_lambert_residual_log_spaced():
    xs = np.concatenate([[-math.exp(-1) + 1e-6, -0.2, -0.01], np.logspace(-8, 6, 200)])
    for x in xs:
        w = lambert_w0(float(x))
        assert abs(float(w * np.exp(w)) - x) < 1e-10, x


def test_lambert_of_exponential_matches_direct():
    for L in (-30.0, -1.0, 0.0, 2.0, 10.0):
        assert lambert_w0_exp(L) == pytest.approx(float(lambert_w0(math.exp(L))), rel=1e-12)
    # large arguments stay finite where exp(L) would overflow
    assert math.isfinite(lambert_w0_exp(1000.0))


def test_solve_m_two_equal_options():
    m = solve_m([0.0, 0.0], 0.0, FLAT, [0.0, 0.0])
    assert m == pytest.approx(M_TWO, abs=1e-12)
    assert abs((m - 1) * math.exp(m) - 2.0) < 1e-8


def test_solve_m_limits():
    # S = e^2 through a single option with utility 2
    assert solve_m([-2.0], 0.0, FLAT, [0.0]) == pytest.approx(2.0, abs=1e-12)
    assert solve_m([60.0], 0.0, FLAT, [0.0]) == pytest.approx(1.0, abs=1e-20)


def test_solve_m_requires_negative_price_sensitivity():
    with pytest.raises(ValueError):
        solve_m([0.0], 0.0, PricingParams(0.0, 0.0, 0.0), [0.0])


def test_symmetric_prices_match_grid_search():
    prices = optimal_prices([0.0, 0.0], 0.0, FLAT, [0.0, 0.0])
    assert prices == pytest.approx([M_TWO, M_TWO], abs=1e-12)
    grid = np.arange(0.0, 3.0001, 0.01)
    best = max(itertools.product(grid, grid),
               key=lambda ab: profit_with_outside(ab, [0.0, 0.0], 0.0, FLAT, [0.0, 0.0], [0, 1]))
    assert np.max(np.abs(np.array(best) - prices)) <= 0.02


def test_expected_profit_matches_oracle():
    args = ([1.0, -2.0, 0.5], [3.0, 1.0, 2.0], 50.0, PAPER_SYNTH, [0.0, 0.4, 1.1], [HOME, 0, 1])
    assert expected_profit(*args, no_purchase=True) == pytest.approx(profit_with_outside(*args), rel=1e-12)


def test_closed_set_profit_has_no_interior_optimum():
    base = expected_profit([0.0, 0.0], [0.0, 0.0], 0.0, FLAT, [0.0, 0.0])
    assert expected_profit([1.0, 1.0], [0.0, 0.0], 0.0, FLAT, [0.0, 0.0]) == pytest.approx(base + 1.0)


def test_cost_difference_passes_through():
    params = PricingParams(u0_home=3.2, beta_k=0.02, beta_d=-0.25)
    home, ooh = optimal_prices([5.0, 1.0], 50.0, params, [0.0, 0.3], [HOME, 0])
    assert home - ooh == pytest.approx(4.0, abs=1e-12)


costs_st = st.lists(st.floats(0, 10), min_size=1, max_size=5)


@given(costs_st, st.floats(0, 60), st.lists(st.floats(0, 5), min_size=5, max_size=5))
def test_unclamped_markup_is_constant(costs, r, d0k):
    opts = [HOME] + list(range(len(costs) - 1))
    prices = optimal_prices(costs, r, PAPER_SYNTH, d0k[:len(costs)], opts)
    markup = prices - np.array(costs)
    assert np.ptp(markup) < 1e-10


def _random_pricing_instances(n_instances=100, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_instances):
        n = int(rng.integers(1, 6))
        opts = [HOME] + list(range(n - 1))
        yield rng.uniform(0, 10, n), opts, np.concatenate([[0.0], rng.uniform(0, 2, n - 1)])


def test_closed_form_prices_beat_grid_inside_bounds():
    # with r = 50 the unclamped optimum usually exceeds the upper bound; those cases are out of scope
    for costs, opts, d0k in _random_pricing_instances():
        prices = optimal_prices(costs, 50.0, PAPER_SYNTH, d0k, opts)
        if np.any(prices < -10) or np.any(prices > 2):
            continue
        best = _grid_profit(costs, opts, d0k, -10.0, 2.0)
        assert profit_with_outside(prices, costs, 50.0, PAPER_SYNTH, d0k, opts) >= best - 1e-3


def test_closed_form_prices_beat_grid_around_optimum():
    for costs, opts, d0k in _random_pricing_instances(40, seed=1):
        prices = optimal_prices(costs, 50.0, PAPER_SYNTH, d0k, opts)
        lo, hi = float(prices.min()) - 3.0, float(prices.max()) + 3.0
        best = _grid_profit(costs, opts, d0k, lo, hi)
        assert profit_with_outside(prices, costs, 50.0, PAPER_SYNTH, d0k, opts) >= best - 1e-3


def _grid_profit(costs, opts, d0k, lo, hi):
    """Best profit on a 0.01 price grid: exhaustive for one option, coordinate ascent beyond."""
    grid = np.round(np.arange(lo, hi + 1e-9, 0.01), 2)
    f = lambda p: profit_with_outside(p, costs, 50.0, PAPER_SYNTH, d0k, opts)
    if len(costs) == 1:
        return max(f([g]) for g in grid)
    p = np.full(len(costs), grid[len(grid) // 2])
    best = f(p)
    for _ in range(100):
        improved = False
        for i in range(len(costs)):
            vals = []
            for g in grid:
                p_try = p.copy()
                p_try[i] = g
                vals.append(f(p_try))
            j = int(np.argmax(vals))
            if vals[j] > best + 1e-12:
                best, improved = vals[j], True
                p[i] = grid[j]
        if not improved:
            break
    return best


# --- static policies ---------------------------------------------------------

def _decide(policy, inst, x=0.0, y=0.0):
    policy.reset(inst)
    return policy.decide(arrival(inst, x, y))


def test_static_five_two():
    inst = make_instance(lockers=[(1, 1), (2, 2)])
    d = _decide(static_policy(5, 2), inst)
    assert d.price_of(HOME) == 2.0 and d.price_of(0) == -5.0 and d.price_of(1) == -5.0


def test_static_zero_is_no_pricing():
    inst = make_instance(lockers=[(1, 1)])
    assert _decide(static_policy(0, 0), inst) == _decide(NoPricing(), inst)
    assert static_policy(0, 0).name == "NoPricing"


def test_static_discount_clamped(caplog):
    inst = make_instance(lockers=[(1, 1)])
    d = _decide(static_policy(12, 0), inst)
    assert d.price_of(0) == -10.0
    assert "clamping" in caplog.text


def test_no_ooh_and_only_ooh_offers():
    inst = make_instance(lockers=[(1, 1)], capacities=[1])
    assert _decide(NoOOH(), inst).offered == (HOME,)
    policy = OnlyOOH()
    policy.reset(inst)
    state = arrival(inst, 0.0, 0.0)
    assert policy.decide(state).offered == (0,)
    state.ooh_remaining[0] = 0
    assert policy.decide(state).offered == (HOME,)


# --- Hindsight and Foresight -------------------------------------------------

def test_hindsight_empty_plan_prices_out_and_back():
    inst = make_instance(customers=[(10, 0)])
    policy = Hindsight()
    policy.reset(inst)
    cost = policy.hindsight_costs(arrival(inst, 10.0, 0.0), [HOME])
    # 20 km at 30 km/h: salary 30 * 2/3 plus fuel 0.3 * 20
    assert cost[0] == pytest.approx(26.0, abs=1e-12)


def test_hindsight_colocated_candidate_has_no_travel():
    inst = make_instance(customers=[(10, 0)])
    policy = Hindsight()
    policy.reset(inst)
    policy.plan = RoutePlan.build(inst.depot, [home_stop(10, 0)], [[(0, 1)]], inst.speed)
    cost = policy.hindsight_costs(arrival(inst, 10.0, 0.0, minutes=6.0), [HOME])
    assert cost[0] == pytest.approx(30.0 * 6.0 / 60.0, abs=1e-12)


def test_hindsight_matches_exhaustive_positions():
    inst = make_instance(customers=[(0, 0)], area=(-20, -20, 20, 20))
    stops = [home_stop(4, 1, key=0), home_stop(6, 5, key=1), home_stop(1, 7, key=2)]
    plan = RoutePlan.build(inst.depot, stops, [[(0, 1), (1, 1), (2, 1)]], inst.speed)
    policy = Hindsight()
    policy.reset(inst)
    policy.plan = plan
    cand = (5.0, -3.0)
    got = policy.hindsight_costs(arrival(inst, *cand), [HOME])[0]
    tour = [(0.0, 0.0)] + [(s.loc.x, s.loc.y) for s in stops] + [(0.0, 0.0)]
    deltas = [math.dist(tour[j], cand) + math.dist(cand, tour[j + 1]) - math.dist(tour[j], tour[j + 1])
              for j in range(len(tour) - 1)]
    deltas.append(2 * math.dist((0.0, 0.0), cand))  # a vehicle of its own
    best = min(deltas)
    expected = insertion_money(InsertionQuote(0, 0, best, best / inst.speed), home_stop(*cand), inst)
    assert got == pytest.approx(expected, abs=1e-9)


def _foresight(inst, theta0, pool=None):
    pool = pool or [RoutePlan.build(inst.depot, [home_stop(8, 0)], [[(0, 1)]], inst.speed),
                    RoutePlan.build(inst.depot, [home_stop(0, 8)], [[(0, 1)]], inst.speed)]
    policy = Foresight(pool, theta0=theta0)
    policy.reset(inst)
    return policy


def test_foresight_theta_one_is_pool_average():
    inst = make_instance(customers=[(4, 4)])
    policy = _foresight(inst, 1.0)
    state = arrival(inst, 4.0, 4.0)
    assert policy.estimate_costs(state, [HOME]) == pytest.approx(policy.pool_costs(state, [HOME]), abs=1e-12)


def test_foresight_theta_zero_is_hindsight():
    inst = make_instance(customers=[(4, 4)])
    policy = _foresight(inst, 0.0)
    state = arrival(inst, 4.0, 4.0)
    assert np.array_equal(policy.estimate_costs(state, [HOME]), policy.hindsight_costs(state, [HOME]))


def test_foresight_theta_schedule_halves_after_45(rc_instance):
    policy = _foresight(rc_instance, 1.0, [RoutePlan.empty(rc_instance.depot, rc_instance.speed)])
    assert policy.delta_theta == pytest.approx(1.0 / 90.0)
    for t in range(45):
        state = arrival(rc_instance, 50.0 + t % 7, 50.0 - t % 5)
        state.t = t
        policy.commit(state, policy.decide(state), HOME)
    assert policy.theta == pytest.approx(0.5, abs=1e-12)


def test_foresight_requires_pool():
    with pytest.raises(ValueError):
        Foresight([])


def test_foresight_theta_non_increasing_over_episode(rc_instance):
    from oohlab.simulator import foresight_pool
    policy = _foresight(rc_instance, 1.0, foresight_pool(rc_instance, 2, solver_effort=10))
    thetas = []
    orig = policy.commit

    def commit(state, decision, option):
        orig(state, decision, option)
        thetas.append(policy.theta)

    policy.commit = commit
    run_episode(rc_instance, policy, 0, solver_effort=10)
    assert thetas and all(0.0 <= b <= a <= 1.0 for a, b in zip(thetas, thetas[1:]))


# --- DSPO --------------------------------------------------------------------

def test_zero_network_gives_uniform_solution(rc_instance):
    spec = GridSpec.for_instance(rc_instance)
    policy = DSPO(Network(zero=True), spec)
    policy.reset(rc_instance)
    state = arrival(rc_instance, 30.0, 60.0)
    d = policy.decide(state)
    assert d.costs == (0.0,) * len(d.offered)
    from oohlab.policies import option_d0k
    raw = optimal_prices(np.zeros(len(d.offered)), 50.0, policy.params,
                         option_d0k(rc_instance, state.home_xy, d.offered), d.offered)
    assert np.ptp(raw) == 0.0  # one price for every option
    assert d.prices == tuple(round(min(max(float(v), -10.0), 2.0), 2) for v in raw)


def test_identical_candidates_identical_predictions(rc_instance):
    spec = GridSpec.for_instance(rc_instance)
    policy = DSPO(Network(seed=3), spec)
    policy.reset(rc_instance)
    a = policy.dspo_costs(arrival(rc_instance, 30.0, 60.0), [HOME, 0])
    b = policy.dspo_costs(arrival(rc_instance, 30.0, 60.0), [HOME, 0])
    assert np.array_equal(a, b)


# --- capacity penalty --------------------------------------------------------

def test_penalty_at_threshold_is_half_lambda():
    assert capacity_penalty(2, 10, 0) == pytest.approx(0.05, abs=1e-15)


def test_penalty_empty_locker_is_negligible():
    assert capacity_penalty(1000, 1000, 0) < 1e-30


def test_penalty_lambda_schedule():
    assert CapacityPenaltyParams().lam(100) == pytest.approx(0.2, abs=1e-15)


def test_penalty_params_validated():
    with pytest.raises(ValueError):
        CapacityPenaltyParams(alpha=1.0)


# --- emitted prices ----------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_emitted_prices_in_bounds_and_capacity_respected(seed):
    xy = np.random.default_rng(seed).uniform(-9, 9, (30, 2))
    caps = [2, 1, 3]
    inst = make_instance(customers=[tuple(p) for p in xy], lockers=[(1, 1), (-3, 2), (4, -4)],
                         capacities=caps, fleet_size=30)
    res = run_episode(inst, Hindsight(), seed, solver_effort=5, trace=True)
    for row in res.trace:
        assert all(-10.0 <= float(p) <= 2.0 for p in row["prices"].split("|"))
    used = [sum(1 for b in res.bookings if b.option == k) for k in range(3)]
    assert all(u <= c for u, c in zip(used, caps))
