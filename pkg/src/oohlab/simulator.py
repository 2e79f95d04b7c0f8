"""Booking-horizon simulation, cost accounting and policy training.

One episode: draw the number of customers, then for each arrival build the
offer, ask the policy for prices, sample the MNL choice, book it (consuming
locker capacity).  After the cutoff all stops are routed and costs are
accounted::

    total = travel + service + failure + discounts - charges

Randomness is split into independent streams (arrivals, choice noise,
solver), so policies evaluated on the same seed face the same customers and
the same Gumbel noise per option.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .choice import HOME, utility
from .encoding import EncodedState, GridSpec, encode
from .instance import Location, ProblemInstance, sample_arrival_count
from .neuralnet import (AdamState, Geometry, LinearModel, Network, TrainConfig, adam_step, evaluate_loss,
                        huber)
from .policies import (DSPO, CapacityPenaltyParams, LinearPolicy, Policy, PricingDecision, StaticPricing,
                       capacity_penalty, option_d0k)
from .routing import Booking, CapacityError, RoutePlan, aggregate_stops, solve_cvrp, true_insertion_costs

log = logging.getLogger(__name__)

STREAMS = {"eval": 0, "train": 1, "heldout": 2, "pool": 3}


@dataclass(frozen=True)
class Customer:
    pool_index: int
    home: Location
    service_minutes: float
    segment: int


class SimState:
    """What a policy observes when customer ``t`` (0-based) arrives."""

    def __init__(self, inst: ProblemInstance, n: int):
        self.inst = inst
        self.t = 0
        self.customer: Customer | None = None
        self.booked: list[tuple[Customer, int, int]] = []
        self.ooh_remaining = inst.ooh_capacities.copy()  # -1 marks unlimited
        self._xy = np.zeros((max(n, 1), 2))
        self._t = np.zeros(max(n, 1), dtype=np.int64)

    @property
    def home_xy(self) -> np.ndarray:
        return np.array([self.customer.home.x, self.customer.home.y])

    @property
    def booked_xy(self) -> np.ndarray:
        return self._xy[:len(self.booked)]

    @property
    def booked_t(self) -> np.ndarray:
        return self._t[:len(self.booked)]

    def book(self, option: int) -> None:
        i = len(self.booked)
        if option == HOME:
            self._xy[i] = self.home_xy
        else:
            self._xy[i] = self.inst.ooh_xy[option]
            if self.ooh_remaining[option] >= 0:
                if self.ooh_remaining[option] == 0:
                    raise RuntimeError(f"locker {option} booked while full")
                self.ooh_remaining[option] -= 1
        self._t[i] = self.t
        self.booked.append((self.customer, option, self.t))


@dataclass
class TrainingBuffer:
    """Encodings of chosen options awaiting their end-of-episode labels."""

    pending: list[tuple[EncodedState, int, int]] = field(default_factory=list)  # (encoding, t, booking)
    penalties: list[float] = field(default_factory=list)
    labeled: list[tuple[EncodedState, float]] = field(default_factory=list)


@dataclass
class EpisodeResult:
    policy: str
    seed: int
    n_customers: int
    home_share: float
    travel_cost: float
    service_cost: float
    failure_cost: float
    discount_cost: float
    charge_revenue: float
    total_cost: float
    discounts: list[float]
    charges: list[float]
    plan: RoutePlan | None
    bookings: list[Booking]
    feasible: bool = True
    trace: list[dict] | None = None
    buffer: TrainingBuffer | None = None
    home_count: int = 0

    @property
    def avg_discount(self) -> float:
        return float(np.mean(self.discounts)) if self.discounts else math.nan

    @property
    def sd_discount(self) -> float:
        return float(np.std(self.discounts)) if self.discounts else math.nan

    @property
    def avg_charge(self) -> float:
        return float(np.mean(self.charges)) if self.charges else math.nan

    @property
    def sd_charge(self) -> float:
        return float(np.std(self.charges)) if self.charges else math.nan


def ledger(decision: PricingDecision, choice: int) -> tuple[float, float]:
    """(charge revenue j+, discount cost j-) of the option the customer chose."""
    if choice not in decision.offered:
        raise ValueError(f"option {choice} was not offered")
    price = decision.price_of(choice)
    return max(0.0, price), max(0.0, -price)


def failure_cost(inst: ProblemInstance, home_count: int) -> float:
    r = inst.rates
    # round away float noise such as 0.1 * 90 = 9.000000000000002 before the ceiling
    return r.failure_cost * math.ceil(round(r.failure_prob * home_count, 9))


def service_cost(inst: ProblemInstance, plan: RoutePlan) -> float:
    return inst.rates.salary_per_hour * plan.total_service_minutes / 60.0


def episode_streams(seed: int, stream: str = "eval") -> tuple[np.random.Generator, ...]:
    ss = np.random.SeedSequence([int(seed), STREAMS[stream]])
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


@dataclass
class EpisodeDraw:
    """Exogenous randomness of one episode, shared by all policies."""

    customers: list[Customer]
    gumbel: np.ndarray  # (n, 1 + |L|): column 0 is home, column k + 1 locker k

    @classmethod
    def sample(cls, inst: ProblemInstance, arrivals_rng, choice_rng) -> "EpisodeDraw":
        n = min(sample_arrival_count(inst.arrivals, arrivals_rng), inst.fleet_capacity)
        idx = arrivals_rng.integers(len(inst.customer_pool), size=n)
        if len(inst.segments) > 1:
            mu = np.array([s.mu_g for s in inst.segments])
            seg = arrivals_rng.choice(len(mu), size=n, p=mu / mu.sum())
        else:
            seg = np.zeros(n, dtype=int)
        service = inst.pool_service_minutes
        customers = [Customer(int(i), inst.customer_pool[i], float(service[i]), int(g)) for i, g in zip(idx, seg)]
        gumbel = choice_rng.gumbel(size=(n, len(inst.ooh) + 1))
        return cls(customers, gumbel)


def choose(inst: ProblemInstance, state: SimState, decision: PricingDecision, noise: np.ndarray) -> int:
    """MNL choice by Gumbel-max over the offered options."""
    seg = inst.segments[state.customer.segment]
    opts = decision.offered
    if seg.home_only:
        if HOME in opts:
            return HOME
        d = [math.hypot(inst.ooh_xy[k, 0] - state.home_xy[0], inst.ooh_xy[k, 1] - state.home_xy[1]) for k in opts]
        return opts[int(np.argmin(d))]
    d0k = option_d0k(inst, state.home_xy, opts)
    best, best_u = None, -math.inf
    for k, p, d in zip(opts, decision.prices, d0k):
        u = utility(seg, k, p, d) + noise[k + 1]  # home (-1) reads column 0
        if u > best_u:
            best, best_u = k, u
    return best


def run_episode(inst: ProblemInstance, policy: Policy, seed: int, stream: str = "eval", trace: bool = False,
                collect_spec: GridSpec | None = None, solver_effort: int = 200,
                penalty: CapacityPenaltyParams | None = None) -> EpisodeResult:
    """Simulate one booking horizon and account its costs.

    With ``collect_spec`` the encoding of every chosen option is kept in the
    result's buffer for :func:`collect_training_data`.
    """
    arr_rng, choice_rng, solver_rng = episode_streams(seed, stream)
    draw = EpisodeDraw.sample(inst, arr_rng, choice_rng)
    policy.reset(inst, np.random.default_rng([int(seed), STREAMS[stream], 7]))
    n = len(draw.customers)
    state = SimState(inst, n)
    rows = [] if trace else None
    buffer = TrainingBuffer() if collect_spec is not None else None
    discounts, charges = [], []
    charge_total = discount_total = 0.0
    bookings = []
    for t, cust in enumerate(draw.customers):
        state.t, state.customer = t, cust
        decision = policy.decide(state)
        for k in decision.offered:
            if k != HOME and state.ooh_remaining[k] == 0:
                raise RuntimeError(f"policy {policy.name} offered full locker {k}")
        k = choose(inst, state, decision, draw.gumbel[t])
        j_plus, j_minus = ledger(decision, k)
        charge_total += j_plus
        discount_total += j_minus
        if j_minus > 0:
            discounts.append(j_minus)
        if j_plus > 0:
            charges.append(j_plus)
        if buffer is not None:
            buffer.pending.append((encode(state, k, collect_spec), t, t))
        policy.commit(state, decision, k)
        state.book(k)
        if buffer is not None:
            pen = 0.0
            if penalty is not None and k != HOME and inst.ooh_capacities[k] > 0:
                pen = capacity_penalty(int(state.ooh_remaining[k]), int(inst.ooh_capacities[k]), t, penalty)
            buffer.penalties.append(pen)
        bookings.append(Booking(cust.home, cust.service_minutes, k))
        if rows is not None:
            rows.append({
                "t": t, "x": cust.home.x, "y": cust.home.y, "segment": cust.segment,
                "offered": "|".join(str(o) for o in decision.offered),
                "prices": "|".join(f"{p:.2f}" for p in decision.prices),
                "predicted_costs": "" if decision.costs is None else "|".join(f"{c:.6f}" for c in decision.costs),
                "chosen": k, "j_plus": j_plus, "j_minus": j_minus,
                "remaining": "|".join(str(int(v)) for v in state.ooh_remaining if v >= 0),
            })
    home_count = sum(1 for b in bookings if b.option == HOME)
    stops, _ = aggregate_stops(bookings, inst)
    feasible = True
    try:
        plan = solve_cvrp(stops, inst, solver_effort, solver_rng)
    except CapacityError as exc:
        log.error("episode %s/%d infeasible: %s", policy.name, seed, exc)
        plan, feasible = None, False
    travel = plan.travel_money(inst.rates) if plan is not None else math.nan
    service = service_cost(inst, plan) if plan is not None else math.nan
    fail = failure_cost(inst, home_count)
    total = travel + service + fail + discount_total - charge_total
    return EpisodeResult(policy.name, int(seed), n, home_count / n if n else 1.0, travel, service, fail,
                         discount_total, charge_total, total, discounts, charges, plan, bookings, feasible,
                         rows, buffer, home_count)


def recompute_total(result: EpisodeResult, inst: ProblemInstance) -> float:
    """Total cost from the audit trace and the final plan alone."""
    rows = result.trace or []
    homes = sum(1 for r in rows if int(r["chosen"]) == HOME)
    charge = sum(float(r["j_plus"]) for r in rows)
    disc = sum(float(r["j_minus"]) for r in rows)
    plan = result.plan
    return plan.travel_money(inst.rates) + service_cost(inst, plan) + failure_cost(inst, homes) + disc - charge


# ---------------------------------------------------------------------------
# training data


@dataclass
class Samples:
    counts: np.ndarray  # (n, L, S, S) uint16
    capacity: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def empty(cls, spec: GridSpec) -> "Samples":
        return cls(np.zeros((0, *spec.shape), dtype=np.uint16), np.zeros(0), np.zeros(0))

    def extend(self, other: "Samples") -> "Samples":
        return Samples(np.concatenate([self.counts, other.counts]), np.concatenate([self.capacity, other.capacity]),
                       np.concatenate([self.labels, other.labels]))

    def subset(self, idx) -> "Samples":
        return Samples(self.counts[idx], self.capacity[idx], self.labels[idx])


def collect_training_data(result: EpisodeResult, inst: ProblemInstance, solver_effort: int = 200,
                          resolve_effort: int = 10, rng=None, exact: bool = False) -> Samples:
    """Label every stored encoding with its remove-and-resolve cost (plus capacity penalty)."""
    buf = result.buffer
    if buf is None:
        raise ValueError("episode was run without collecting encodings")
    if not result.feasible:
        raise ValueError("cannot label an infeasible episode")
    if buf.labeled:
        raise ValueError("episode buffer was already labeled")
    if not buf.pending:
        return Samples(np.zeros((0, 1, 1, 1), dtype=np.uint16), np.zeros(0), np.zeros(0))
    rng = rng if rng is not None else np.random.default_rng([result.seed, 11])
    labels = true_insertion_costs(result.bookings, inst, solver_effort, rng, resolve_effort,
                                  plan_all=None if exact else result.plan, exact=exact)
    counts = np.stack([e.counts for e, _, _ in buf.pending])
    cap = np.array([e.candidate_capacity for e, _, _ in buf.pending])
    y = np.array([labels[b] for _, _, b in buf.pending]) + np.asarray(buf.penalties)
    if len(y) != result.n_customers:
        raise RuntimeError("training buffer does not match the served customers")
    buf.labeled = [(e, float(v)) for (e, _, _), v in zip(buf.pending, y)]
    return Samples(counts, cap, y)


# ---------------------------------------------------------------------------
# DSPO training


@dataclass(frozen=True)
class DSPOConfig:
    model: str = "cnn"  # "cnn", "dense" (no convolutions) or "linear"
    cells_per_side: int = 10
    temporal_layers: int = 3
    filters: int = 32
    hidden: int = 128
    train: TrainConfig = TrainConfig()
    phase1_samples: int = 100_000
    phase1_epochs: int = 5
    heldout_samples: int = 2_000
    iterations: int = 2_000
    replay_factor: int = 10
    solver_effort: int = 200
    resolve_effort: int = 10
    penalty: CapacityPenaltyParams | None = None
    heldout_every: int = 100
    seed: int = 0
    checkpoint: str | None = None  # written if training diverges

    def geometry(self) -> Geometry:
        return Geometry(self.temporal_layers, self.cells_per_side, self.filters, self.hidden,
                        self.train.dropout, self.model != "dense")


@dataclass
class TrainingReport:
    phase1_trace: list[float]
    heldout: list[tuple[str, int, float]]  # (stage, episodes done, held-out loss)
    phase2_losses: list[float]
    n_phase1: int
    seconds: float

    @property
    def heldout_start(self) -> float:
        return self.heldout[0][2]

    @property
    def heldout_final(self) -> float:
        return self.heldout[-1][2]


def gather_samples(inst: ProblemInstance, policy: Policy, spec: GridSpec, target: int, stream: str,
                   seed_base: int, cfg: DSPOConfig) -> tuple[Samples, int]:
    """Run episodes on consecutive seeds until ``target`` labelled samples exist."""
    parts = []
    k = 0
    have = 0
    while have < target:
        res = run_episode(inst, policy, seed_base + k, stream, collect_spec=spec,
                          solver_effort=cfg.solver_effort, penalty=cfg.penalty)
        k += 1
        if not res.feasible or res.n_customers == 0:
            continue
        s = collect_training_data(res, inst, cfg.solver_effort, cfg.resolve_effort)
        parts.append(s)
        have += len(s)
    if not parts:
        return Samples.empty(spec), k
    out = Samples(np.concatenate([p.counts for p in parts]), np.concatenate([p.capacity for p in parts]),
                  np.concatenate([p.labels for p in parts]))
    return out, k


class _Model:
    """Uniform training interface over the network and the linear baseline."""

    def __init__(self, cfg: DSPOConfig, spec: GridSpec):
        self.cfg = cfg
        self.kind = cfg.model
        if self.kind == "linear":
            self.model = LinearModel(spec.flat_size)
        else:
            self.model = Network(cfg.geometry(), seed=cfg.seed)
        self.adam = AdamState()

    def _flat(self, s: Samples) -> np.ndarray:
        n = len(s)
        return np.concatenate([s.counts.reshape(n, -1).astype(float), s.capacity[:, None]], axis=1)

    def loss(self, s: Samples) -> float:
        if self.kind == "linear":
            return float(huber(self.model.predict(self._flat(s)), s.labels, self.cfg.train.huber_delta).mean())
        return evaluate_loss(self.model, s.counts.astype(float), s.capacity, s.labels, self.cfg.train.huber_delta)

    def epoch(self, s: Samples, rng) -> float:
        cfg = self.cfg.train
        n = len(s)
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            b = s.subset(idx)
            if self.kind == "linear":
                loss, gw, gb = self.model.loss_and_grads(self._flat(b), b.labels, cfg.huber_delta)
                if not (np.all(np.isfinite(gw)) and math.isfinite(gb)):
                    raise FloatingPointError("non-finite gradient in linear model")
                self.model.weights -= cfg.learning_rate * gw
                self.model.bias -= cfg.learning_rate * gb
            else:
                loss, grads = self.model.loss_and_grads(b.counts.astype(float), b.capacity, b.labels,
                                                        cfg.huber_delta, train=True, rng=rng)
                adam_step(self.model.params, grads, self.adam, cfg)
            if not math.isfinite(loss):
                raise FloatingPointError("training loss became non-finite")
            total += loss * len(idx)
        return total / n

    def policy(self, spec: GridSpec) -> Policy:
        if self.kind == "linear":
            return LinearPolicy(self.model, spec)
        return DSPO(self.model, spec)


def train_dspo(inst: ProblemInstance, cfg: DSPOConfig = DSPOConfig(),
               progress: Callable[[str], None] | None = None):
    """Two-phase training: fit on NoPricing data, then learn while pricing.

    Phase 1 simulates NoPricing episodes on training seeds until
    ``phase1_samples`` labelled samples exist and fits the model for
    ``phase1_epochs`` epochs.  Phase 2 runs ``iterations`` episodes with the
    current model's prices; after each, the model takes one pass over the
    fresh batch plus ``replay_factor`` times as many samples drawn uniformly
    from everything seen so far.  Returns ``(model, TrainingReport)``.
    """
    from .neuralnet import save_checkpoint
    from .policies import NoPricing

    t0 = time.time()
    say = progress or (lambda msg: log.info(msg))
    spec = GridSpec.for_instance(inst, cfg.cells_per_side, cfg.temporal_layers)
    rng = np.random.default_rng([cfg.seed, 99])
    m = _Model(cfg, spec)
    heldout, _ = gather_samples(inst, NoPricing(), spec, cfg.heldout_samples, "heldout", 0, cfg)
    report = TrainingReport([], [("phase1_start", 0, m.loss(heldout))], [], 0, 0.0)
    data, n_eps = gather_samples(inst, NoPricing(), spec, cfg.phase1_samples, "train", 0, cfg)
    report.n_phase1 = len(data)
    say(f"phase 1: {len(data)} samples from {n_eps} episodes")
    try:
        for e in range(cfg.phase1_epochs):
            report.phase1_trace.append(m.epoch(data, rng))
            say(f"phase 1 epoch {e + 1}: loss {report.phase1_trace[-1]:.4f}")
        report.heldout.append(("phase1_end", 0, m.loss(heldout)))
        seed = n_eps
        # replay memory as preallocated arrays that double when full
        store = _Store(data, cfg.iterations * inst.fleet_capacity)
        for it in range(cfg.iterations):
            res = run_episode(inst, m.policy(spec), seed, "train", collect_spec=spec,
                              solver_effort=cfg.solver_effort, penalty=cfg.penalty)
            seed += 1
            if not res.feasible or res.n_customers == 0:
                continue
            fresh = collect_training_data(res, inst, cfg.solver_effort, cfg.resolve_effort)
            replay = store.sample(rng, cfg.replay_factor * len(fresh))
            store.add(fresh)
            report.phase2_losses.append(m.epoch(fresh.extend(replay), rng))
            if cfg.heldout_every and (it + 1) % cfg.heldout_every == 0:
                report.heldout.append(("phase2", it + 1, m.loss(heldout)))
                say(f"phase 2 episode {it + 1}: held-out loss {report.heldout[-1][2]:.4f}")
        if cfg.iterations and (not cfg.heldout_every or cfg.iterations % cfg.heldout_every):
            report.heldout.append(("phase2", cfg.iterations, m.loss(heldout)))
    except FloatingPointError:
        if cfg.checkpoint:
            save_checkpoint(m.model, cfg.checkpoint, {"diverged": True})
        raise
    report.seconds = time.time() - t0
    return m.model, report


class _Store:
    def __init__(self, initial: Samples, extra: int):
        n = len(initial) + max(extra, 1)
        self.counts = np.zeros((n, *initial.counts.shape[1:]), dtype=np.uint16)
        self.capacity = np.zeros(n)
        self.labels = np.zeros(n)
        self.n = 0
        self.add(initial)

    def add(self, s: Samples) -> None:
        k = len(s)
        if self.n + k > len(self.labels):
            grow = max(k, len(self.labels))
            self.counts = np.concatenate([self.counts, np.zeros((grow, *self.counts.shape[1:]), dtype=np.uint16)])
            self.capacity = np.concatenate([self.capacity, np.zeros(grow)])
            self.labels = np.concatenate([self.labels, np.zeros(grow)])
        self.counts[self.n:self.n + k] = s.counts
        self.capacity[self.n:self.n + k] = s.capacity
        self.labels[self.n:self.n + k] = s.labels
        self.n += k

    def sample(self, rng, k: int) -> Samples:
        idx = rng.integers(self.n, size=k) if self.n else np.zeros(0, dtype=int)
        return Samples(self.counts[idx], self.capacity[idx], self.labels[idx])


# ---------------------------------------------------------------------------
# evaluation


def foresight_pool(inst: ProblemInstance, size: int = 10, solver_effort: int = 200) -> list[RoutePlan]:
    """Final plans of StaticPricing(5, 2) episodes on training seeds."""
    plans = []
    k = 0
    while len(plans) < size:
        res = run_episode(inst, StaticPricing(5.0, 2.0), k, "pool", solver_effort=solver_effort)
        k += 1
        if res.feasible and res.plan is not None:
            plans.append(res.plan)
    return plans


@dataclass
class Aggregate:
    policy: str
    n: int
    columns: dict[str, float]
    savings: list[float]
    results: list[EpisodeResult]

    @property
    def mean_savings(self) -> float:
        return float(np.mean(self.savings)) if self.savings else math.nan

    @property
    def ci95(self) -> float:
        if len(self.savings) < 2:
            return math.nan
        return 1.96 * float(np.std(self.savings, ddof=1)) / math.sqrt(len(self.savings))


def mean_ci(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()) if len(v) else math.nan, math.nan
    return float(v.mean()), 1.96 * float(v.std(ddof=1)) / math.sqrt(len(v))


def aggregate(results: Sequence[EpisodeResult], baseline: Sequence[EpisodeResult] | None) -> Aggregate:
    cols = {
        "pct_home_delivery": float(np.mean([r.home_share for r in results])) * 100.0,
        "travel_costs": float(np.mean([r.travel_cost for r in results])),
        "service_costs": float(np.mean([r.service_cost for r in results])),
        "delivery_fail_costs": float(np.mean([r.failure_cost for r in results])),
        "discount_costs": float(np.mean([r.discount_cost for r in results])),
        "charge_revenue": float(np.mean([r.charge_revenue for r in results])),
        "total_cost": float(np.mean([r.total_cost for r in results])),
    }
    disc = [d for r in results for d in r.discounts]
    chg = [c for r in results for c in r.charges]
    cols["avg_discount"] = float(np.mean(disc)) if disc else math.nan
    cols["sd_discount"] = float(np.std(disc)) if disc else math.nan
    cols["avg_charge"] = float(np.mean(chg)) if chg else math.nan
    cols["sd_charge"] = float(np.std(chg)) if chg else math.nan
    savings = []
    if baseline is not None:
        base = {b.seed: b for b in baseline}
        for r in results:
            b = base[r.seed]
            savings.append(100.0 * (b.total_cost - r.total_cost) / b.total_cost)
    return Aggregate(results[0].policy if results else "", len(results), cols, savings, list(results))


def evaluate(inst: ProblemInstance, policy_factory: Callable[[], Policy], seeds: Sequence[int],
             baseline: Sequence[EpisodeResult] | None = None, solver_effort: int = 200,
             trace: bool = False, workers: int = 1) -> Aggregate:
    """Evaluate a policy on ``seeds``; savings are paired against ``baseline`` (NoOOH if omitted)."""
    from .policies import NoOOH

    results = run_many(inst, policy_factory, seeds, solver_effort, trace, workers)
    if baseline is None:
        baseline = run_many(inst, NoOOH, seeds, solver_effort, False, workers)
    return aggregate(results, baseline)


def _run_one(args):
    inst, factory, seed, effort, trace = args
    return run_episode(inst, factory(), seed, "eval", trace=trace, solver_effort=effort)


def run_many(inst, policy_factory, seeds, solver_effort=200, trace=False, workers=1) -> list[EpisodeResult]:
    jobs = [(inst, policy_factory, s, solver_effort, trace) for s in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))
