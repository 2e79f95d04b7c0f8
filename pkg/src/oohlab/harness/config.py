"""Experiment configuration: JSON files with ``extends``, hashing, builders.

A config is a JSON object; every key is optional and falls back to
:data:`DEFAULTS`.  ``extends`` names a base file (relative to the extending
file) whose values are deep-merged underneath.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..choice import ChoiceSegment
from ..instance import CapacityRule, OOHLocation, ProblemInstance, instance_to_dict, load_instance
from ..neuralnet import TrainConfig
from ..policies import CapacityPenaltyParams
from ..simulator import DSPOConfig

DEFAULTS: dict = {
    "instance": {"generator": "synthetic", "kind": "RC", "seed": 0, "n_ooh": 10},
    "policies": ["NoOOH", "OnlyOOH", "NoPricing", "StaticPricing", "Hindsight", "Foresight"],
    "seeds": {"start": 0, "count": 30},
    "solver_effort": 200,
    "foresight_pool": 10,
    "training": {},
    "tuning": {"replications": 100, "targets": [0.80, 0.60], "seed": 0},
    "sweep": {"axes": {}, "policies": ["NoOOH", "StaticPricing"], "static_charge": 0.0},
    "ablation": {"arms": ["full", "no_cnn", "no_retraining", "no_cnn_no_retraining"]},
}

SWEEP_AXES = ("fuel", "salary", "service_max", "capacity_fraction", "capacity", "segment_share",
              "static_discount_pct", "n_ooh")


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _read(path: Path, seen: tuple = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"{path}: circular 'extends'")
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    parent = doc.pop("extends", None)
    if parent is None:
        return doc
    return deep_merge(_read(path.parent / parent, seen + (path,)), doc)


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolved config: defaults, then the ``extends`` chain, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        cfg = deep_merge(cfg, _read(Path(path)))
        base_dir = Path(path).resolve().parent
    if overrides:
        cfg = deep_merge(cfg, overrides)
    inst = cfg.get("instance", {})
    if "path" in inst:
        p = Path(inst["path"])
        if not p.is_absolute():
            inst["path"] = str((base_dir / p).resolve())
        if not Path(inst["path"]).exists():
            raise ConfigError(f"instance file {inst['path']} does not exist")
    for pol in cfg.get("policies", []):
        if isinstance(pol, dict) and "checkpoint" in pol:
            p = Path(pol["checkpoint"])
            if not p.is_absolute():
                pol["checkpoint"] = str((base_dir / p).resolve())
    for name, values in cfg.get("sweep", {}).get("axes", {}).items():
        if name not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {name!r}; known: {', '.join(SWEEP_AXES)}")
        if not values or not all(isinstance(v, (int, float)) and math.isfinite(v) for v in values):
            raise ConfigError(f"sweep axis {name!r} needs a non-empty list of finite numbers")
    return cfg


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    """Stable under key reordering; output locations do not affect it."""
    doc = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()[:16]


def instance_hash(inst: ProblemInstance) -> str:
    return hashlib.sha256(canonical_json(instance_to_dict(inst)).encode()).hexdigest()[:16]


def seeds_of(cfg: dict) -> list[int]:
    s = cfg["seeds"]
    if isinstance(s, dict):
        return list(range(int(s.get("start", 0)), int(s.get("start", 0)) + int(s["count"])))
    return [int(v) for v in s]


# ---------------------------------------------------------------------------
# instances


def _apply_overrides(inst: ProblemInstance, ov: dict) -> ProblemInstance:
    ov = dict(ov)
    changes = {}
    if "rates" in ov:
        changes["rates"] = replace(inst.rates, **{k: tuple(v) if isinstance(v, list) else v
                                                  for k, v in ov.pop("rates").items()})
    if "arrivals" in ov:
        changes["arrivals"] = replace(inst.arrivals, **ov.pop("arrivals"))
    if "segments" in ov:
        changes["segments"] = tuple(ChoiceSegment(**s) for s in ov.pop("segments"))
    if "service_time_bounds" in ov:
        changes["service_time_bounds"] = tuple(ov.pop("service_time_bounds"))
    changes.update(ov)
    return inst.replace(**changes) if changes else inst


def with_capacity_rule(inst: ProblemInstance, rule: CapacityRule, seed: int = 0) -> ProblemInstance:
    """Reassign locker capacities by ``rule`` (locations unchanged)."""
    n = len(inst.ooh)
    caps: list[int | None] = [None] * n
    if rule.kind == "uniform":
        caps = [rule.capacity] * n
    elif rule.kind == "fraction":
        rng = np.random.default_rng([seed, 5])
        k = int(round(rule.fraction * n))
        for i in rng.choice(n, size=k, replace=False) if k else []:
            caps[int(i)] = rule.capacity
    lockers = tuple(OOHLocation(o.id, o.loc, c) for o, c in zip(inst.ooh, caps))
    return inst.replace(ooh=lockers, capacity_rule=rule)


def build_instance_from(spec: dict) -> ProblemInstance:
    from ..generators import seattle_like_instance, synthetic_instance

    spec = dict(spec)
    cap = spec.get("capacity")
    rule = CapacityRule(**cap) if cap else None
    if "path" in spec:
        inst = load_instance(spec["path"])
        if rule is not None:
            inst = with_capacity_rule(inst, rule, int(spec.get("seed", 0)))
    else:
        gen = spec.get("generator", "synthetic")
        if gen == "synthetic":
            inst = synthetic_instance(spec.get("kind", "RC"), int(spec.get("seed", 0)), int(spec.get("n_ooh", 10)),
                                      capacity_rule=rule)
        elif gen == "seattle-like":
            inst = seattle_like_instance(int(spec.get("seed", 0)))
            if rule is not None:
                inst = with_capacity_rule(inst, rule, int(spec.get("seed", 0)))
        else:
            raise ConfigError(f"unknown instance generator {gen!r}")
    return _apply_overrides(inst, spec.get("overrides", {}))


def apply_axis(spec: dict, name: str, value: float) -> dict:
    """Instance spec with one sweep axis applied (policy axes leave it unchanged)."""
    spec = copy.deepcopy(spec)
    ov = spec.setdefault("overrides", {})
    if name == "fuel":
        ov.setdefault("rates", {})["fuel_per_distance"] = float(value)
    elif name == "salary":
        ov.setdefault("rates", {})["salary_per_hour"] = float(value)
    elif name == "service_max":
        lo = ov.get("service_time_bounds", [1.0, 10.0])[0]
        ov["service_time_bounds"] = [min(lo, float(value)), float(value)]
    elif name in ("capacity_fraction", "capacity"):
        cap = spec.setdefault("capacity", {"kind": "fraction", "capacity": 3, "fraction": 1.0})
        cap["kind"] = "fraction"
        if name == "capacity_fraction":
            cap["fraction"] = float(value)
        else:
            cap["capacity"] = int(value)
    elif name == "segment_share":
        ov["_segment_share"] = float(value)
    elif name == "n_ooh":
        spec["n_ooh"] = int(value)
    return spec


def build_cell_instance(spec: dict) -> ProblemInstance:
    spec = copy.deepcopy(spec)
    share = spec.get("overrides", {}).pop("_segment_share", None)
    inst = build_instance_from(spec)
    if share is not None:
        base = next(s for s in inst.segments if not s.home_only)
        segs = [replace(base, mu_g=1.0 - share)]
        if share > 0:
            if share >= 1:
                raise ConfigError("segment_share must be < 1 (some customers must price-respond)")
            segs.insert(0, ChoiceSegment(mu_g=share, home_only=True))
        inst = inst.replace(segments=tuple(segs))
    return inst


# ---------------------------------------------------------------------------
# training


def dspo_config(cfg: dict, inst: ProblemInstance, **changes) -> DSPOConfig:
    t = dict(cfg.get("training", {}))
    train = TrainConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in t.pop("train", {}).items()})
    pen = t.pop("penalty", None)
    if pen is False:
        penalty = None
    elif isinstance(pen, dict):
        penalty = CapacityPenaltyParams(**pen)
    else:
        penalty = CapacityPenaltyParams() if (inst.ooh_capacities >= 0).any() else None
    t.setdefault("solver_effort", cfg.get("solver_effort", 200))
    t.update(changes)
    try:
        return DSPOConfig(train=train, penalty=penalty, **t)
    except TypeError as exc:
        raise ConfigError(f"training: {exc}") from None


# ---------------------------------------------------------------------------
# policy specs

_CALL = re.compile(r"^\s*([A-Za-z]+)\s*(?:\((.*)\))?\s*$")
POLICY_NAMES = ("NoOOH", "OnlyOOH", "NoPricing", "StaticPricing", "Hindsight", "Foresight", "DSPO", "Linear")
_POSITIONAL = {"StaticPricing": ("discount", "charge"), "Foresight": ("theta0",), "Hindsight": ("refresh_every",),
               "DSPO": ("checkpoint",), "Linear": ("checkpoint",)}


def parse_policy(spec) -> dict:
    """``"Name"``, ``"Name(a, b)"`` or ``{"name": ..., **params}`` -> dict."""
    if isinstance(spec, dict):
        out = dict(spec)
    else:
        m = _CALL.match(str(spec))
        if not m:
            raise ConfigError(f"cannot parse policy {spec!r}")
        out = {"name": m.group(1)}
        if m.group(2):
            args = [a.strip() for a in m.group(2).split(",") if a.strip()]
            keys = _POSITIONAL.get(out["name"], ())
            if len(args) > len(keys):
                raise ConfigError(f"too many arguments for {out['name']}")
            for k, a in zip(keys, args):
                out[k] = a if k == "checkpoint" else float(a)
    if out.get("name") not in POLICY_NAMES:
        raise ConfigError(f"unknown policy {out.get('name')!r}; known: {', '.join(POLICY_NAMES)}")
    return out


def policy_label(p: dict) -> str:
    if p["name"] == "StaticPricing":
        return f"StaticPricing({p.get('discount', 5.0):g},{p.get('charge', 2.0):g})"
    return p.get("label", p["name"])
