"""``oohlab`` command line: generate-instance, tune-choice, simulate, train, evaluate, sweep, ablation, report."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from ..choice import TuningError, tune_parameters
from ..instance import InstanceError, save_instance
from ..neuralnet import save_checkpoint
from ..routing import write_plan_csv
from ..simulator import run_episode
from .config import ConfigError, build_instance_from, config_hash, load_config, parse_policy, seeds_of
from .experiments import (EPISODE_COLUMNS, RESULT_COLUMNS, TRACE_COLUMNS, build_report, episode_row,
                          evaluate_policies, make_factory, run_ablation, run_sweep, train_model, write_csv,
                          write_run_record)

log = logging.getLogger("oohlab")

COMMANDS = ("generate-instance", "tune-choice", "simulate", "train", "evaluate", "sweep", "ablation", "report")


def workers_from(args) -> int:
    env = os.environ.get("OOH_LAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OOH_LAB_WORKERS must be an integer, got {env!r}") from None
    return max(1, args.workers)


def resolve(args) -> dict:
    over = {}
    if args.seed is not None:
        if args.command in ("generate-instance",):
            over["instance"] = {"seed": args.seed}
        elif args.command in ("train", "ablation"):
            over["training"] = {"seed": args.seed}
        elif args.command == "tune-choice":
            over["tuning"] = {"seed": args.seed}
        else:
            over["seeds"] = [args.seed]
    cfg = load_config(args.config, over)
    if args.seed is not None and args.command not in ("generate-instance", "train", "ablation", "tune-choice"):
        cfg["seeds"] = [args.seed]
    if args.policy:
        pols = [p.strip() for p in args.policy.split(";") if p.strip()]
        cfg["policies"] = [parse_policy(p) for p in pols]
    return cfg


def cmd_generate(args, cfg, out: Path) -> None:
    started = time.time()
    inst = build_instance_from(cfg["instance"])
    save_instance(inst, out / "instance.json")
    rows = [{"kind": "depot", "id": 0, "x": inst.depot.x, "y": inst.depot.y, "capacity": "", "service_minutes": ""}]
    rows += [{"kind": "ooh", "id": o.id, "x": o.loc.x, "y": o.loc.y,
              "capacity": "unlimited" if o.capacity is None else str(o.capacity),
              "service_minutes": float(inst.ooh_service_minutes[o.id])} for o in inst.ooh]
    rows += [{"kind": "customer", "id": i, "x": p.x, "y": p.y, "capacity": "",
              "service_minutes": float(inst.pool_service_minutes[i])} for i, p in enumerate(inst.customer_pool)]
    write_csv(out / "locations.csv", ["kind", "id", "x", "y", "capacity", "service_minutes"], rows, config_hash(cfg))
    write_run_record(out, "generate-instance", cfg, inst, [], {"n_ooh": len(inst.ooh)}, started)
    print(f"wrote {out / 'instance.json'}")


def cmd_tune(args, cfg, out: Path) -> int:
    started = time.time()
    inst = build_instance_from(cfg["instance"])
    t = cfg["tuning"]
    rows = []
    status = 0
    try:
        seg = tune_parameters(inst, targets=tuple(t.get("targets", (0.8, 0.6))),
                              replications=int(t.get("replications", 100)), seed=int(t.get("seed", 0)),
                              log_rows=rows)
        chosen = {"u0_home": seg.u0_home, "beta_k": seg.beta_k, "beta_d": seg.beta_d}
    except TuningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        chosen, status = {"error": str(exc), "candidates": exc.candidates}, 3
    cols = ["u0_home", "beta_k", "beta_d", "home_share_nopricing", "home_share_static"]
    write_csv(out / "tuning.csv", cols, [dict(zip(cols, r)) for r in rows], config_hash(cfg))
    write_run_record(out, "tune-choice", cfg, inst, [], {"tuned": chosen}, started)
    if not status:
        print(f"tuned u0_home={chosen['u0_home']:.2f} beta_k={chosen['beta_k']:.2f} beta_d={chosen['beta_d']:.2f}")
    return status


def cmd_simulate(args, cfg, out: Path) -> None:
    started = time.time()
    inst = build_instance_from(cfg["instance"])
    spec = parse_policy(cfg["policies"][0])
    f = make_factory(spec, inst, cfg)
    chash = config_hash(cfg)
    rows = []
    for seed in seeds_of(cfg):
        res = run_episode(inst, f(), seed, trace=args.trace, solver_effort=int(cfg["solver_effort"]))
        rows.append(episode_row(f.label, res))
        if args.trace:
            write_csv(out / f"trace_{f.label}_{seed}.csv", TRACE_COLUMNS, res.trace, chash)
        if res.plan is not None:
            write_plan_csv(res.plan, out / f"plan_{f.label}_{seed}.csv")
    write_csv(out / "episodes.csv", EPISODE_COLUMNS, rows, chash)
    write_run_record(out, "simulate", cfg, inst, seeds_of(cfg), {"policy": f.label}, started)
    for r in rows:
        print(f"{r['policy']} seed {r['seed']}: total cost {r['total_cost']:.2f}")


def cmd_train(args, cfg, out: Path) -> None:
    started = time.time()
    inst = build_instance_from(cfg["instance"])
    model, grid, report, dcfg = train_model(inst, cfg, checkpoint=str(out / "model.diverged.ckpt"))
    save_checkpoint(model, out / "model.ckpt", {"cells_per_side": dcfg.cells_per_side,
                                                "temporal_layers": dcfg.temporal_layers, "model": dcfg.model})
    rows = [{"stage": "phase1", "step": i + 1, "train_loss": v, "heldout_loss": ""}
            for i, v in enumerate(report.phase1_trace)]
    rows += [{"stage": "phase2", "step": i + 1, "train_loss": v, "heldout_loss": ""}
             for i, v in enumerate(report.phase2_losses)]
    rows += [{"stage": f"heldout:{stage}", "step": ep, "train_loss": "", "heldout_loss": v}
             for stage, ep, v in report.heldout]
    write_csv(out / "loss_trace.csv", ["stage", "step", "train_loss", "heldout_loss"], rows, config_hash(cfg))
    write_run_record(out, "train", cfg, inst, [], {
        "heldout_start": report.heldout_start, "heldout_final": report.heldout_final,
        "phase1_samples": report.n_phase1, "checkpoint": "model.ckpt"}, started)
    print(f"held-out loss {report.heldout_start:.4f} -> {report.heldout_final:.4f}; wrote {out / 'model.ckpt'}")


def cmd_evaluate(args, cfg, out: Path) -> None:
    started = time.time()
    inst = build_instance_from(cfg["instance"])
    seeds = seeds_of(cfg)
    rows, episodes, _ = evaluate_policies(inst, cfg, cfg["policies"], seeds, workers_from(args),
                                          out if args.trace else None)
    chash = config_hash(cfg)
    write_csv(out / "results.csv", RESULT_COLUMNS, rows, chash)
    write_csv(out / "episodes.csv", EPISODE_COLUMNS, episodes, chash)
    clean = [{k: (None if isinstance(v, float) and v != v else v) for k, v in r.items()} for r in rows]
    write_run_record(out, "evaluate", cfg, inst, seeds, {"results": clean}, started)
    for r in rows:
        ci = "n/a" if r["ci95"] != r["ci95"] else f"{r['ci95']:.2f}"
        print(f"{r['policy']:<24s} cost {r['total_cost']:9.2f}  savings {r['pct_savings']:6.2f}% (+-{ci})")


def cmd_sweep(args, cfg, out: Path) -> None:
    started = time.time()
    cols, rows = run_sweep(cfg, workers_from(args))
    write_csv(out / "sweep.csv", cols, rows, config_hash(cfg))
    failed = sum(1 for r in rows if r["status"] != "ok")
    write_run_record(out, "sweep", cfg, None, seeds_of(cfg), {"rows": len(rows), "failed_cells": failed}, started)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'} ({failed} failed cells)")


def cmd_ablation(args, cfg, out: Path) -> None:
    started = time.time()
    inst = build_instance_from(cfg["instance"])
    rows = run_ablation(inst, cfg, workers_from(args))
    write_csv(out / "ablation.csv", ["arm", "total_cost", "pct_savings", "ci95", "delta_vs_full_pct"], rows,
              config_hash(cfg))
    write_run_record(out, "ablation", cfg, inst, seeds_of(cfg), {"arms": [r["arm"] for r in rows]}, started)
    for r in rows:
        print(f"{r['arm']:<22s} cost {r['total_cost']:9.2f}  vs full {r['delta_vs_full_pct']:+.2f}%")


def cmd_report(args, cfg, out: Path) -> None:
    src = Path(args.config).parent if args.config and Path(args.config).is_file() else out
    if args.config and Path(args.config).is_dir():
        src = Path(args.config)
    cols, rows = build_report(src)
    write_csv(out / "report.csv", cols, rows, config_hash(cfg))
    print(f"report: {len(rows)} rows")


HANDLERS = {
    "generate-instance": cmd_generate, "tune-choice": cmd_tune, "simulate": cmd_simulate, "train": cmd_train,
    "evaluate": cmd_evaluate, "sweep": cmd_sweep, "ablation": cmd_ablation, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oohlab", description="Out-of-home delivery pricing experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config (for 'report': a results directory)")
    p.add_argument("--seed", type=int, help="evaluation seed (generator seed for generate-instance, "
                                            "training seed for train/ablation, tuning seed for tune-choice)")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--policy", help="policy override, e.g. 'StaticPricing(5,2)'; separate several with ';'")
    p.add_argument("--trace", action="store_true", help="write per-episode audit traces")
    p.add_argument("--workers", type=int, default=1, help="parallel episode workers (env OOH_LAB_WORKERS wins)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    out = Path(args.out)
    try:
        if args.command == "report":
            cfg = load_config(None)
        else:
            cfg = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        status = HANDLERS[args.command](args, cfg, out)
        return int(status or 0)
    except (ConfigError, InstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
