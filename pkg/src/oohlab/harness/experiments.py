"""Experiment pipelines behind the command-line subcommands."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from pathlib import Path
from typing import Sequence

from .. import __version__
from ..encoding import GridSpec
from ..instance import ProblemInstance
from ..neuralnet import load_checkpoint
from ..policies import DSPO, Foresight, Hindsight, LinearPolicy, NoOOH, NoPricing, OnlyOOH, StaticPricing
from ..simulator import Aggregate, EpisodeResult, aggregate, foresight_pool, run_many, train_dspo
from .config import (ConfigError, apply_axis, build_cell_instance, config_hash, dspo_config, instance_hash,
                     parse_policy, policy_label)

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["policy", "pct_home_delivery", "travel_costs", "service_costs", "delivery_fail_costs",
                  "discount_costs", "charge_revenue", "avg_discount", "avg_charge", "pct_savings", "ci95"]
EPISODE_COLUMNS = ["policy", "seed", "n_customers", "home_share", "travel_cost", "service_cost", "failure_cost",
                   "discount_cost", "charge_revenue", "total_cost", "feasible"]
TRACE_COLUMNS = ["t", "x", "y", "segment", "offered", "prices", "predicted_costs", "chosen", "j_plus", "j_minus",
                 "remaining"]


class MissingCheckpoint(ConfigError):
    pass


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    if isinstance(v, (bool, int)):
        return str(int(v)) if isinstance(v, bool) else str(v)
    return f"{v:.4f}"


def write_csv(path, columns: Sequence[str], rows: Sequence[dict], chash: str) -> None:
    """CSV with a leading ``# config_hash=`` line; values formatted deterministically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in columns])


def read_csv(path) -> tuple[str | None, list[dict]]:
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    chash = None
    body = []
    for line in lines:
        if line.startswith("# config_hash="):
            chash = line.split("=", 1)[1]
        elif not line.startswith("#"):
            body.append(line)
    return chash, list(csv.DictReader(body))


def write_run_record(out: Path, command: str, cfg: dict, inst: ProblemInstance | None, seeds, payload: dict,
                     started: float) -> Path:
    rec = {
        "command": command,
        "config_hash": config_hash(cfg),
        "instance_hash": instance_hash(inst) if inst is not None else None,
        "code_version": __version__,
        "seeds": list(seeds),
        "wall_clock_s": round(time.time() - started, 3),
        **payload,
    }
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"run_{command}_{rec['config_hash']}.json"
    path.write_text(json.dumps(rec, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n")
    return path


def _json_default(v):
    if isinstance(v, float):
        return None
    raise TypeError(type(v))


# ---------------------------------------------------------------------------
# policies


class PolicyFactory:
    """Picklable zero-argument constructor for a configured policy."""

    def __init__(self, spec: dict, inst: ProblemInstance, cfg: dict, model=None, grid: GridSpec | None = None,
                 pool=None):
        self.spec = spec
        self.model, self.grid, self.pool = model, grid, pool
        self.label = policy_label(spec)

    def __call__(self):
        s, name = self.spec, self.spec["name"]
        if name == "NoOOH":
            return NoOOH()
        if name == "OnlyOOH":
            return OnlyOOH()
        if name == "NoPricing":
            return NoPricing()
        if name == "StaticPricing":
            return StaticPricing(float(s.get("discount", 5.0)), float(s.get("charge", 2.0)), self.label)
        if name == "Hindsight":
            return Hindsight(int(s.get("refresh_every", 10)))
        if name == "Foresight":
            return Foresight(self.pool, float(s.get("theta0", 1.0)))
        if name == "DSPO":
            return DSPO(self.model, self.grid)
        if name == "Linear":
            return LinearPolicy(self.model, self.grid)
        raise ConfigError(f"unknown policy {name!r}")


def load_model(path: str):
    if not path or not Path(path).exists():
        raise MissingCheckpoint(f"checkpoint {path!r} not found (run the 'train' subcommand first)")
    model, extra = load_checkpoint(path)
    return model, extra


def make_factory(spec, inst: ProblemInstance, cfg: dict, trained=None) -> PolicyFactory:
    """``trained``: optional ``(model, GridSpec)`` used instead of a checkpoint."""
    spec = parse_policy(spec)
    name = spec["name"]
    model = grid = pool = None
    if name in ("DSPO", "Linear"):
        if trained is not None:
            model, grid = trained
        else:
            model, extra = load_model(spec.get("checkpoint", ""))
            grid = GridSpec.for_instance(inst, int(extra.get("cells_per_side", 10)),
                                         int(extra.get("temporal_layers", 3)))
    if name == "Foresight":
        pool = foresight_pool(inst, int(cfg.get("foresight_pool", 10)), int(cfg.get("solver_effort", 200)))
    return PolicyFactory(spec, inst, cfg, model, grid, pool)


def train_model(inst: ProblemInstance, cfg: dict, **changes):
    dcfg = dspo_config(cfg, inst, **changes)
    model, report = train_dspo(inst, dcfg)
    return model, GridSpec.for_instance(inst, dcfg.cells_per_side, dcfg.temporal_layers), report, dcfg


# ---------------------------------------------------------------------------
# evaluation


def result_row(label: str, agg: Aggregate) -> dict:
    c = agg.columns
    mean_sav = agg.mean_savings
    return {"policy": label, "pct_home_delivery": c["pct_home_delivery"], "travel_costs": c["travel_costs"],
            "service_costs": c["service_costs"], "delivery_fail_costs": c["delivery_fail_costs"],
            "discount_costs": c["discount_costs"], "charge_revenue": c["charge_revenue"],
            "avg_discount": c["avg_discount"], "avg_charge": c["avg_charge"], "pct_savings": mean_sav,
            "ci95": agg.ci95, "total_cost": c["total_cost"]}


def episode_row(label: str, r: EpisodeResult) -> dict:
    return {"policy": label, "seed": r.seed, "n_customers": r.n_customers, "home_share": r.home_share,
            "travel_cost": r.travel_cost, "service_cost": r.service_cost, "failure_cost": r.failure_cost,
            "discount_cost": r.discount_cost, "charge_revenue": r.charge_revenue, "total_cost": r.total_cost,
            "feasible": r.feasible}


def evaluate_policies(inst: ProblemInstance, cfg: dict, policies, seeds, workers: int = 1, trace_dir=None,
                      trained: dict | None = None) -> tuple[list[dict], list[dict], dict[str, Aggregate]]:
    """Evaluate every policy on ``seeds``, savings paired against NoOOH on the same seeds."""
    effort = int(cfg.get("solver_effort", 200))
    trained = trained or {}
    factories = [make_factory(p, inst, cfg, trained.get(parse_policy(p)["name"])) for p in policies]
    baseline = run_many(inst, NoOOH, seeds, effort, False, workers)
    rows, episodes, aggs = [], [], {}
    for f in factories:
        res = run_many(inst, f, seeds, effort, trace_dir is not None, workers)
        for r in res:
            r.policy = f.label
        agg = aggregate(res, baseline)
        aggs[f.label] = agg
        rows.append(result_row(f.label, agg))
        episodes.extend(episode_row(f.label, r) for r in res)
        if trace_dir is not None:
            for r in res:
                write_csv(Path(trace_dir) / f"trace_{f.label}_{r.seed}.csv", TRACE_COLUMNS, r.trace,
                          config_hash(cfg))
    return rows, episodes, aggs


# ---------------------------------------------------------------------------
# sweep and ablation

SWEEP_METRICS = ["total_cost", "travel_cost", "service_cost", "failure_cost", "discount_cost", "charge_revenue",
                 "home_share", "pct_savings"]


def run_sweep(cfg: dict, workers: int = 1) -> tuple[list[str], list[dict]]:
    """One row per (cell, policy, seed) over the Cartesian product of the axes."""
    axes = cfg.get("sweep", {}).get("axes", {})
    names = sorted(axes)
    seeds = _seeds(cfg)
    policies = cfg["sweep"].get("policies", ["NoOOH", "StaticPricing"])
    rows = []
    effort = int(cfg.get("solver_effort", 200))
    for values in itertools.product(*(axes[n] for n in names)) if names else [()]:
        cell = dict(zip(names, values))
        base = dict(cell)
        try:
            spec = cfg["instance"]
            for n, v in cell.items():
                spec = apply_axis(spec, n, v)
            inst = build_cell_instance(spec)
            r = inst.rates.revenue_per_customer
            cell_policies = []
            for p in policies:
                p = parse_policy(p)
                if "static_discount_pct" in cell and p["name"] == "StaticPricing":
                    p = dict(p, discount=cell["static_discount_pct"] / 100.0 * r,
                             charge=float(cfg["sweep"].get("static_charge", 0.0)))
                cell_policies.append(p)
            trained = {}
            for p in cell_policies:
                if p["name"] in ("DSPO", "Linear") and p["name"] not in trained:
                    model, grid, _, _ = train_model(inst, cfg, model="linear" if p["name"] == "Linear" else
                                                    cfg.get("training", {}).get("model", "cnn"))
                    trained[p["name"]] = (model, grid)
            baseline = {b.seed: b for b in run_many(inst, NoOOH, seeds, effort, False, workers)}
            for p in cell_policies:
                f = make_factory(p, inst, cfg, trained.get(p["name"]))
                for res in run_many(inst, f, seeds, effort, False, workers):
                    b = baseline[res.seed]
                    rows.append({**base, "policy": f.label, "seed": res.seed, "status": "ok",
                                 "total_cost": res.total_cost, "travel_cost": res.travel_cost,
                                 "service_cost": res.service_cost, "failure_cost": res.failure_cost,
                                 "discount_cost": res.discount_cost, "charge_revenue": res.charge_revenue,
                                 "home_share": res.home_share,
                                 "pct_savings": 100.0 * (b.total_cost - res.total_cost) / b.total_cost})
        except Exception as exc:  # a failing cell is recorded and the sweep continues
            log.error("sweep cell %s failed: %s", cell, exc)
            rows.append({**base, "policy": "", "seed": "", "status": f"error: {exc}"})
    columns = names + ["policy", "seed", "status"] + SWEEP_METRICS
    return columns, rows


ABLATION_ARMS = {
    "full": dict(),
    "no_cnn": dict(model="dense"),
    "no_retraining": dict(iterations=0),
    "no_cnn_no_retraining": dict(model="dense", iterations=0),
}


def run_ablation(inst: ProblemInstance, cfg: dict, workers: int = 1) -> list[dict]:
    seeds = _seeds(cfg)
    effort = int(cfg.get("solver_effort", 200))
    arms = cfg.get("ablation", {}).get("arms", list(ABLATION_ARMS))
    baseline = run_many(inst, NoOOH, seeds, effort, False, workers)
    out = []
    for arm in arms:
        if arm not in ABLATION_ARMS:
            raise ConfigError(f"unknown ablation arm {arm!r}")
        changes = dict(ABLATION_ARMS[arm])
        model, grid, _, _ = train_model(inst, cfg, **changes)
        f = PolicyFactory({"name": "DSPO", "label": f"DSPO[{arm}]"}, inst, cfg, model, grid)
        agg = aggregate(run_many(inst, f, seeds, effort, False, workers), baseline)
        out.append({"arm": arm, "total_cost": agg.columns["total_cost"], "pct_savings": agg.mean_savings,
                    "ci95": agg.ci95})
    full = next((o["total_cost"] for o in out if o["arm"] == "full"), None)
    for o in out:
        o["delta_vs_full_pct"] = math.nan if full is None else 100.0 * (o["total_cost"] - full) / full
    return out


def _seeds(cfg):
    from .config import seeds_of

    return seeds_of(cfg)


# ---------------------------------------------------------------------------
# report


def build_report(directory) -> tuple[list[str], list[dict]]:
    """Join evaluate run records found under ``directory`` into one table."""
    directory = Path(directory)
    recs = sorted(directory.glob("**/run_evaluate_*.json")) if directory.exists() else []
    rows = []
    inst_hash = None
    for path in recs:
        rec = json.loads(path.read_text())
        h = rec.get("instance_hash")
        if inst_hash is None:
            inst_hash = h
        elif h != inst_hash:
            raise ConfigError(f"{path}: instance hash {h} differs from {inst_hash}; refusing to merge")
        for r in rec.get("results", []):
            rows.append({"config_hash": rec["config_hash"], **r})
    return ["config_hash"] + RESULT_COLUMNS, rows


__all__ = ["ABLATION_ARMS", "EPISODE_COLUMNS", "MissingCheckpoint", "PolicyFactory", "RESULT_COLUMNS",
           "TRACE_COLUMNS", "build_report", "evaluate_policies", "make_factory", "read_csv", "run_ablation",
           "run_sweep", "train_model", "write_csv", "write_run_record"]
