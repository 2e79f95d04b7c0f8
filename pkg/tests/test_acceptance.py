"""End-to-end acceptance checks, one test per criterion.

Several of these run for minutes (criterion 8 for hours at desk scale); the
runtime budget of each criterion is asserted alongside its outcome.
"""
import filecmp
import itertools
import json
import math
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.stats import chisquare

from helpers import make_instance, profit_with_outside, random_instance, random_stops
from oohlab.choice import HOME, ChoiceSegment, Offer, choice_probabilities, sample_choice, tune_parameters
from oohlab.encoding import GridSpec
from oohlab.generators import synthetic_instance
from oohlab.harness.cli import main
from oohlab.harness.config import load_config
from oohlab.harness.experiments import run_sweep
from oohlab.instance import CapacityRule
from oohlab.neuralnet import Geometry, LinearModel, Network, finite_diff_check, linear_finite_diff_check
from oohlab.policies import (DSPO, CapacityPenaltyParams, Foresight, NoOOH, NoPricing, OnlyOOH, PricingParams, StaticPricing,
                             lambert_w0, optimal_prices)
from oohlab.routing import brute_force_cvrp, check_plan, solve_cvrp
from oohlab.simulator import (DSPOConfig, aggregate, collect_training_data, foresight_pool, run_episode, run_many,
                              train_dspo)

PAPER_SYNTH = PricingParams(u0_home=3.2, beta_k=0.02, beta_d=-0.25)
SEEDS = range(30)


def test_criterion_01_lambert_w():
    start = time.perf_counter()
    xs = np.logspace(-6, math.log10(1e6 + math.exp(-1)), 10_000) - math.exp(-1)
    for x in xs:
        w = lambert_w0(float(x))
        assert abs(float(w * np.exp(w)) - float(x)) < 1e-10, x
    assert abs(float(lambert_w0(0.0))) <= 1e-12
    assert abs(float(lambert_w0(math.e)) - 1.0) <= 1e-12
    assert time.perf_counter() - start < 1.0


def test_criterion_02_pricing_optimality():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    grid = np.round(np.arange(-10.0, 2.0001, 0.01), 2)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        costs = rng.uniform(0, 10, n)
        opts = [HOME] + list(range(n - 1))
        d0k = np.concatenate([[0.0], rng.uniform(0, 2, n - 1)])
        prices = optimal_prices(costs, 50.0, PAPER_SYNTH, d0k, opts)
        markup = prices - costs
        assert np.ptp(markup) < 1e-10
        if np.any(prices < -10) or np.any(prices > 2):
            continue
        # coordinate ascent over the 0.01 grid from the upper corner
        f = lambda p: profit_with_outside(p, costs, 50.0, PAPER_SYNTH, d0k, opts)
        p = np.full(n, 2.0)
        best = f(p)
        improved = True
        while improved:
            improved = False
            for i in range(n):
                for g in grid:
                    trial = p.copy()
                    trial[i] = g
                    v = f(trial)
                    if v > best + 1e-12:
                        best, p, improved = v, trial, True
        assert f(prices) >= best - 1e-3
    assert time.perf_counter() - start < 60.0


def test_criterion_03_cvrp_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    for _ in range(50):
        inst = random_instance(rng, K=int(rng.integers(2, 6)), V=9)
        stops = random_stops(rng, int(rng.integers(1, 8)))
        heuristic = solve_cvrp(stops, inst, 100, 0)
        exact = brute_force_cvrp(stops, inst)
        check_plan(heuristic, inst)
        assert heuristic.total_distance <= 1.02 * exact.total_distance + 1e-9
    for i in range(1000):
        K = int(rng.integers(3, 15))
        n = int(rng.integers(8, 60))
        inst = random_instance(rng, K=K, V=n)
        stops = random_stops(rng, n, max_demand=min(K, 4))
        check_plan(solve_cvrp(stops, inst, 20, i), inst)
    assert time.perf_counter() - start < 300.0


def _oracle_distance(stops, depot, V, K):
    """Minimum total distance over every assignment of unsplit stops to at most V routes."""
    pts = [xy for xy, _ in stops]

    @lru_cache(maxsize=None)
    def tour(group):
        if not group:
            return 0.0
        best = math.inf
        for perm in itertools.permutations(group):
            path = [depot] + [pts[i] for i in perm] + [depot]
            best = min(best, sum(math.dist(a, b) for a, b in zip(path, path[1:])))
        return best

    best = math.inf
    for assign in itertools.product(range(V), repeat=len(stops)):
        groups = [tuple(i for i, a in enumerate(assign) if a == v) for v in range(V)]
        if any(sum(stops[i][1] for i in g) > K for g in groups):
            continue
        best = min(best, sum(tour(g) for g in groups))
    return best


def _oracle_labels(res, inst):
    """Remove-and-resolve label of every booking from first principles."""
    r = inst.rates
    money = lambda d: r.salary_per_hour * d / inst.speed + r.fuel_per_distance * d
    depot = (inst.depot.x, inst.depot.y)

    def stops_of(bookings):
        out, lockers = [], {}
        for b in bookings:
            if b.option == HOME:
                out.append(((b.home.x, b.home.y), 1))
            else:
                lockers[b.option] = lockers.get(b.option, 0) + 1
        for k, q in lockers.items():
            out.append(((inst.ooh[k].loc.x, inst.ooh[k].loc.y), q))
        return out

    V, K = inst.fleet_size, inst.vehicle_capacity
    full = _oracle_distance(stops_of(res.bookings), depot, V, K)
    users = {}
    for b in res.bookings:
        users[b.option] = users.get(b.option, 0) + 1
    labels = []
    for c, b in enumerate(res.bookings):
        rest = res.bookings[:c] + res.bookings[c + 1:]
        delta = money(full - _oracle_distance(stops_of(rest), depot, V, K))
        if b.option == HOME:
            share = r.salary_per_hour * b.service_minutes / 60.0
        else:
            share = r.salary_per_hour * float(inst.ooh_service_minutes[b.option]) / 60.0 / users[b.option]
        labels.append(delta + share)
    return np.array(labels)


def test_criterion_04_true_cost_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    checked = 0
    for i in range(20):
        inst = make_instance(customers=[tuple(p) for p in rng.uniform(-9, 9, (12, 2))],
                             lockers=[tuple(p) for p in rng.uniform(-9, 9, (2, 2))], capacities=[3, 3],
                             fleet_size=2, vehicle_capacity=3)
        res = run_episode(inst, StaticPricing(5, 2), i, collect_spec=GridSpec.for_instance(inst), solver_effort=20)
        assert res.n_customers <= 6
        samples = collect_training_data(res, inst, 20, exact=True)
        assert np.max(np.abs(samples.labels - _oracle_labels(res, inst))) < 1e-6
        checked += any(b.option != HOME for b in res.bookings)
    assert checked >= 5  # lockers take part in most episodes
    assert time.perf_counter() - start < 120.0


def test_criterion_05_mnl_suite(rc_instance):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    seg = ChoiceSegment(1.0, 0.2, -0.13, 3.34)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        offer = Offer((HOME,) + tuple(range(n - 1)), tuple(rng.uniform(-10, 2, n)), tuple(rng.uniform(0, 5, n)))
        p = choice_probabilities(offer, seg)
        assert abs(p.sum() - 1.0) < 1e-12
        if n > 1:
            cheaper = list(offer.prices)
            cheaper[0] -= 0.5
            q = choice_probabilities(Offer(offer.options, tuple(cheaper), offer.d0k), seg)
            assert q[0] > p[0]
    offer = Offer((HOME, 0, 1, 2), (2.0, -5.0, -3.0, 0.0), (0.0, 0.4, 1.0, 2.0))
    draws = np.array([sample_choice(offer, seg, rng) for _ in range(100_000)])
    observed = np.array([np.sum(draws == k) for k in offer.options])
    assert chisquare(observed, choice_probabilities(offer, seg) * len(draws)).pvalue > 0.001

    tuned = tune_parameters(rc_instance, replications=100, seed=0)
    inst = rc_instance.replace(segments=(tuned,))
    seeds = range(1000, 1100)  # replications disjoint from the tuning draws
    no_pricing = np.mean([r.home_share for r in run_many(inst, NoPricing, seeds, 5)])
    static = np.mean([r.home_share for r in run_many(inst, StaticPricing, seeds, 5)])
    assert abs(no_pricing - 0.80) <= 0.03, no_pricing
    assert abs(static - 0.60) <= 0.03, static
    assert time.perf_counter() - start < 600.0


def test_criterion_06_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    for _ in range(20):
        g = Geometry(layers=int(rng.integers(1, 4)), side=int(rng.choice([2, 4, 6, 10])),
                     filters=int(rng.integers(2, 6)), hidden=int(rng.integers(3, 10)))
        net = Network(g, seed=int(rng.integers(1 << 30)))
        n = int(rng.integers(1, 4))
        x = rng.integers(0, 4, size=(n, g.layers, g.side, g.side)).astype(float)
        res = finite_diff_check(net, x, rng.uniform(0, 1, n), rng.uniform(0, 20, n), max_per_tensor=25, rng=rng)
        assert res.checked > 0 and res.max_rel_error < 1e-4
        dim = int(rng.integers(2, 30))
        model = LinearModel(dim)
        model.weights = rng.normal(size=dim)
        model.bias = float(rng.normal())
        res = linear_finite_diff_check(model, rng.normal(size=(n + 2, dim)), rng.normal(size=n + 2) * 5)
        assert res.checked > 0 and res.max_rel_error < 1e-4
    assert time.perf_counter() - start < 60.0


def _operational(agg):
    c = agg.columns
    return c["travel_costs"] + c["service_costs"] + c["delivery_fail_costs"]


def test_criterion_07_table_ordering(rc_instance):
    start = time.perf_counter()
    base = run_many(rc_instance, NoOOH, SEEDS)
    pool = foresight_pool(rc_instance)
    aggs = {name: aggregate(run_many(rc_instance, f, SEEDS), base) for name, f in [
        ("NoOOH", NoOOH), ("OnlyOOH", OnlyOOH), ("NoPricing", NoPricing), ("StaticPricing", StaticPricing),
        ("Foresight", lambda: Foresight(pool))]}
    cost = {k: a.columns["total_cost"] for k, a in aggs.items()}
    assert cost["NoOOH"] > cost["NoPricing"] > cost["StaticPricing"] >= cost["Foresight"], cost
    operational = {k: _operational(a) for k, a in aggs.items()}
    assert min(operational, key=operational.get) == "OnlyOOH", operational
    assert 4.0 <= aggs["StaticPricing"].mean_savings <= 12.0, aggs["StaticPricing"].mean_savings
    assert time.perf_counter() - start < 45 * 60


def test_criterion_08_dspo_learning(rc_instance):
    start = time.perf_counter()
    net, report = train_dspo(rc_instance, DSPOConfig(phase1_samples=100_000, iterations=2000))
    spec = GridSpec.for_instance(rc_instance)
    base = run_many(rc_instance, NoOOH, SEEDS)
    dspo = aggregate(run_many(rc_instance, lambda: DSPO(net, spec), SEEDS), base).mean_savings
    no_pricing = aggregate(run_many(rc_instance, NoPricing, SEEDS), base).mean_savings
    elapsed = time.perf_counter() - start
    print(f"held-out {report.heldout}; DSPO savings {dspo:.2f}% vs NoPricing {no_pricing:.2f}%; {elapsed:.0f} s")
    assert report.heldout_final <= 0.7 * report.heldout_start, report.heldout
    assert dspo >= no_pricing, (dspo, no_pricing)
    assert elapsed < 4 * 3600


def _discount_windows(results):
    first, last = [], []
    for r in results:
        n = r.n_customers
        for row in r.trace:
            if int(row["chosen"]) == HOME:
                continue
            if row["t"] < 0.2 * n:
                first.append(row["j_minus"])
            elif row["t"] >= 0.8 * n:
                last.append(row["j_minus"])
    return float(np.mean(first)), float(np.mean(last))


def test_criterion_09_capacity_behaviour():
    start = time.perf_counter()
    inst = synthetic_instance("RC", 0, capacity_rule=CapacityRule("uniform", 3))
    assert np.all(inst.ooh_capacities == 3)
    cfg = DSPOConfig(phase1_samples=20_000, iterations=300, penalty=CapacityPenaltyParams())
    net, _ = train_dspo(inst, cfg)
    spec = GridSpec.for_instance(inst)
    results = run_many(inst, lambda: DSPO(net, spec), SEEDS, trace=True)
    for r in results:
        remaining = inst.ooh_capacities.copy()
        for row in r.trace:
            offered = [int(o) for o in row["offered"].split("|")]
            assert all(remaining[k] > 0 for k in offered if k != HOME)
            k = int(row["chosen"])
            if k != HOME:
                remaining[k] -= 1
            assert np.all(remaining >= 0)
    first, last = _discount_windows(results)
    print(f"mean accepted OOH discount: first 20% {first:.3f}, last 20% {last:.3f}")
    assert last > first
    assert time.perf_counter() - start < 3600


def test_criterion_10_discount_sweep():
    start = time.perf_counter()
    pcts = list(range(11))
    cfg = load_config(None, {"sweep": {"axes": {"static_discount_pct": pcts}, "policies": ["StaticPricing"],
                                       "static_charge": 0.0}})
    _, rows = run_sweep(cfg)
    assert all(r["status"] == "ok" for r in rows)
    totals = [np.mean([r["total_cost"] for r in rows if r["static_discount_pct"] == p]) for p in pcts]
    print("mean total cost by discount %:", [round(t, 1) for t in totals])
    best = int(np.argmin(totals))
    assert 0 < best < len(pcts) - 1, totals
    assert time.perf_counter() - start < 30 * 60


def _csv_bodies(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*.csv"))}


def test_criterion_11_determinism(tmp_path):
    tiny = {"filters": 4, "hidden": 8, "phase1_samples": 200, "phase1_epochs": 1, "heldout_samples": 50,
            "iterations": 2, "solver_effort": 10, "resolve_effort": 3}
    doc = {"seeds": {"start": 0, "count": 2}, "solver_effort": 10, "foresight_pool": 2, "training": tiny,
           "policies": ["NoOOH", "NoPricing", "StaticPricing(5,2)", "Hindsight", "Foresight",
                        {"name": "DSPO", "checkpoint": "model/model.ckpt"}],
           "tuning": {"replications": 3, "seed": 0},
           "sweep": {"axes": {"fuel": [0.3, 0.6]}, "policies": ["NoPricing"]},
           "ablation": {"arms": ["full", "no_retraining"]}}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    cfg = str(tmp_path / "c.json")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "model")]) == 0
    commands = [["generate-instance", "--seed", "3"], ["tune-choice"], ["simulate", "--trace"], ["train"],
                ["evaluate", "--trace"], ["sweep"], ["ablation"]]
    for run in ("a", "b"):
        for cmd in commands:
            status = main([cmd[0], "--config", cfg, "--out", str(tmp_path / run / cmd[0]), *cmd[1:]])
            assert status in (0, 3), cmd  # tune-choice may report unreachable targets at 3 replications
        assert main(["report", "--config", str(tmp_path / run / "evaluate"),
                     "--out", str(tmp_path / run / "report")]) == 0
    a, b = _csv_bodies(tmp_path / "a"), _csv_bodies(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) >= 8
    for name in a:
        assert a[name] == b[name], name
    assert filecmp.cmp(tmp_path / "a" / "generate-instance" / "instance.json",
                       tmp_path / "b" / "generate-instance" / "instance.json", shallow=False)
