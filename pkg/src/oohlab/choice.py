"""Multinomial-logit delivery choice.

Option ``HOME`` (= -1) is home delivery; non-negative option ids are OOH
locker ids.  Deterministic utilities are

    home:  u0_home + beta_d * price
    OOH:   -beta_k * exp(d0k) + beta_d * price

with ``d0k`` the home-to-locker distance divided by the instance distance
scale and capped at ``D0K_CAP``.  Sampling adds standard Gumbel noise.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

HOME = -1
D0K_CAP = 5.0


@dataclass(frozen=True)
class ChoiceSegment:
    mu_g: float = 1.0
    beta_k: float = 0.02
    beta_d: float = -0.25
    u0_home: float = 3.2
    home_only: bool = False

    def __post_init__(self):
        from .instance import InvariantError

        if not 0.0 <= self.mu_g <= 1.0:
            raise InvariantError("segments.mu_g: must lie in [0, 1]")
        if not self.home_only:
            if self.beta_k < 0:
                raise InvariantError("segments.beta_k: must be >= 0")
            if not self.beta_d < 0:
                raise InvariantError("segments.beta_d: must be < 0")


@dataclass(frozen=True)
class Offer:
    options: tuple[int, ...]
    prices: tuple[float, ...]
    d0k: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.options) == len(self.prices) == len(self.d0k)):
            raise ValueError("offer lists must have equal length")
        if not self.options:
            raise ValueError("empty offer")


def scaled_distance(dist, scale: float):
    """Choice-model distance: ``dist / scale`` capped at ``D0K_CAP``."""
    return np.minimum(np.asarray(dist, dtype=float) / scale, D0K_CAP)


def utility(seg: ChoiceSegment, option: int, price: float, d0k: float) -> float:
    if option == HOME:
        return seg.u0_home + seg.beta_d * price
    return -seg.beta_k * math.exp(d0k) + seg.beta_d * price


def utilities(offer: Offer, seg: ChoiceSegment) -> np.ndarray:
    opts = np.asarray(offer.options)
    price = np.asarray(offer.prices, dtype=float)
    d0k = np.asarray(offer.d0k, dtype=float)
    base = np.where(opts == HOME, seg.u0_home, -seg.beta_k * np.exp(d0k))
    return base + seg.beta_d * price


def softmax(u: np.ndarray) -> np.ndarray:
    z = np.exp(u - np.max(u))
    return z / z.sum()


def choice_probabilities(offer: Offer, seg: ChoiceSegment) -> np.ndarray:
    if seg.home_only:
        return np.array([1.0 if o == HOME else 0.0 for o in offer.options])
    return softmax(utilities(offer, seg))


def sample_choice(offer: Offer, seg: ChoiceSegment, rng: np.random.Generator) -> int:
    """Gumbel-max draw; home-only customers always pick home."""
    if seg.home_only:
        if HOME in offer.options:
            return HOME
        return offer.options[int(np.argmin(offer.d0k))]
    noise = rng.gumbel(0.0, 1.0, size=len(offer.options))
    return offer.options[int(np.argmax(utilities(offer, seg) + noise))]


def sample_segment(segments: Sequence[ChoiceSegment], rng: np.random.Generator) -> int:
    if len(segments) == 1:
        return 0
    mu = np.array([s.mu_g for s in segments])
    return int(rng.choice(len(segments), p=mu / mu.sum()))


# ---------------------------------------------------------------------------
# Tuning


class TuningError(RuntimeError):
    def __init__(self, message: str, candidates: list[dict]):
        super().__init__(message)
        self.candidates = candidates


@dataclass
class ChoiceScenario:
    """Frozen customer draws used to evaluate home shares on a parameter grid.

    ``exp_d0k[c, j]`` holds exp(d0k) for customer c and offered locker j
    (NaN where fewer lockers are offered), ``gumbel`` the per-option noise with
    column 0 reserved for home.
    """

    exp_d0k: np.ndarray
    gumbel: np.ndarray

    @classmethod
    def draw(cls, inst, replications: int, rng: np.random.Generator) -> "ChoiceScenario":
        from .instance import sample_arrival_count

        cap = inst.fleet_capacity
        counts = [min(sample_arrival_count(inst.arrivals, rng), cap) for _ in range(replications)]
        n = int(sum(counts))
        idx = rng.integers(len(inst.customer_pool), size=n)
        homes = inst.pool_xy[idx]
        dist = np.linalg.norm(homes[:, None, :] - inst.ooh_xy[None, :, :], axis=2)
        N = min(inst.offer_size_N, len(inst.ooh))
        order = np.argsort(dist, axis=1, kind="stable")[:, :N]
        near = np.take_along_axis(dist, order, axis=1)
        exp_d0k = np.exp(scaled_distance(near, inst.choice_distance_scale))
        gumbel = rng.gumbel(size=(n, N + 1))
        return cls(exp_d0k, gumbel)

    def home_share(self, u0_home: float, beta_k: float, beta_d: float,
                   home_price: float = 0.0, ooh_price: float = 0.0) -> float:
        u_home = u0_home + beta_d * home_price + self.gumbel[:, 0]
        u_ooh = -beta_k * self.exp_d0k + beta_d * ooh_price + self.gumbel[:, 1:]
        best_ooh = u_ooh.max(axis=1) if u_ooh.shape[1] else np.full(len(u_home), -np.inf)
        return float(np.mean(u_home >= best_ooh))


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


def tune_parameters(inst, simulate: Callable[..., float] | None = None, targets=(0.80, 0.60),
                    static_prices=(5.0, 2.0), replications: int = 100, seed: int = 0,
                    grid=(-5.0, 5.0), steps=(0.1, 0.01), tolerance: float = 0.05,
                    reference=(3.2, 0.02, -0.25), tie_band: float = 0.005,
                    log_rows: list | None = None) -> ChoiceSegment:
    """Two-stage grid tuning of (u0_home, beta_k) then beta_d.

    ``simulate(u0_home, beta_k, beta_d, home_price, ooh_price) -> home share``
    defaults to a frozen :class:`ChoiceScenario` over ``replications``
    horizons (common random numbers across grid points).  Stage one matches
    the NoPricing target, stage two the StaticPricing target with OOH discount
    ``static_prices[0]`` and home charge ``static_prices[1]``.  Shares within
    ``tie_band`` of a target count as equally good; among those the point
    closest to ``reference`` wins (the share ridge is otherwise flat along
    one direction of the parameter plane).  Every evaluated point is appended to ``log_rows`` as
    ``(u0_home, beta_k, beta_d, share_nopricing, share_static)``.
    """
    if simulate is None:
        scenario = ChoiceScenario.draw(inst, replications, np.random.default_rng(seed))
        simulate = scenario.home_share
    t_np, t_sp = targets
    ref_u0, ref_bk, ref_bd = reference
    lo, hi = grid
    disc, charge = static_prices
    rows = log_rows if log_rows is not None else []

    # stage 1: (u0_home, beta_k) against the NoPricing target
    def stage1(u0s, bks):
        best = None
        for u0, bk in itertools.product(u0s, bks):
            share = simulate(u0, bk, ref_bd, 0.0, 0.0)
            rows.append((u0, bk, float("nan"), share, float("nan")))
            key = (max(abs(share - t_np) - tie_band, 0.0), (u0 - ref_u0) ** 2 + (bk - ref_bk) ** 2)
            if best is None or key < best[0]:
                best = (key, u0, bk, share)
        return best

    coarse, fine = steps
    bk_lo = max(lo, 0.0)
    best1 = stage1(_grid(lo, hi, coarse), _grid(bk_lo, hi, coarse))
    _, u0c, bkc, _ = best1
    best1 = stage1(_grid(max(lo, u0c - coarse), min(hi, u0c + coarse), fine),
                   _grid(max(bk_lo, bkc - coarse), min(hi, bkc + coarse), fine))
    _, u0, bk, share_np = best1

    def stage2(bds):
        best = None
        for bd in bds:
            if bd >= 0:
                continue
            share = simulate(u0, bk, bd, charge, -disc)
            rows.append((u0, bk, bd, share_np, share))
            key = (max(abs(share - t_sp) - tie_band, 0.0), abs(bd - ref_bd))
            if best is None or key < best[0]:
                best = (key, bd, share)
        return best

    best2 = stage2(_grid(lo, min(hi, 0.0), coarse))
    if best2 is None:
        raise TuningError("no admissible price sensitivity on the grid", [])
    bdc = best2[1]
    best2 = stage2(_grid(max(lo, bdc - coarse), min(0.0, bdc + coarse), fine))
    bd, share_sp = best2[1], best2[2]

    if abs(share_np - t_np) > tolerance or abs(share_sp - t_sp) > tolerance:
        cands = [{"u0_home": u0, "beta_k": bk, "beta_d": bd,
                  "home_share_nopricing": share_np, "home_share_static": share_sp}]
        raise TuningError(
            f"targets {targets} not reachable within +-{tolerance:.0%}: "
            f"best shares {share_np:.3f} / {share_sp:.3f}", cands)
    log.info("tuned u0_home=%.2f beta_k=%.2f beta_d=%.2f (shares %.3f / %.3f)",
             u0, bk, bd, share_np, share_sp)
    return ChoiceSegment(mu_g=1.0, beta_k=float(bk), beta_d=float(bd), u0_home=float(u0))
