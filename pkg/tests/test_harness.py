import argparse
import json

import pytest

from oohlab.harness.cli import main, workers_from
from oohlab.harness.config import (ConfigError, build_cell_instance, build_instance_from, apply_axis, config_hash,
                                   load_config, parse_policy, policy_label, seeds_of)
from oohlab.harness.experiments import RESULT_COLUMNS, evaluate_policies, read_csv, run_sweep
from oohlab.policies import NoPricing
from oohlab.simulator import evaluate

FAST = {"seeds": {"start": 0, "count": 2}, "solver_effort": 5, "policies": ["NoPricing"]}


def write_config(path, doc):
    path.write_text(json.dumps(doc))
    return path


# --- configuration -----------------------------------------------------------

def test_config_hash_ignores_key_order():
    a = {"seeds": [1, 2], "instance": {"kind": "RC", "seed": 0}}
    b = {"instance": {"seed": 0, "kind": "RC"}, "seeds": [1, 2]}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seeds": [1, 3]})


def test_extends_merges_base(tmp_path):
    write_config(tmp_path / "base.json", {"solver_effort": 7, "instance": {"seed": 3}})
    cfg = load_config(write_config(tmp_path / "top.json", {"extends": "base.json", "instance": {"kind": "R"}}))
    assert cfg["solver_effort"] == 7 and cfg["instance"]["seed"] == 3 and cfg["instance"]["kind"] == "R"
    assert cfg["instance"]["n_ooh"] == 10  # untouched default


def test_circular_extends_rejected(tmp_path):
    write_config(tmp_path / "a.json", {"extends": "b.json"})
    write_config(tmp_path / "b.json", {"extends": "a.json"})
    with pytest.raises(ConfigError, match="circular"):
        load_config(tmp_path / "a.json")


def test_unknown_sweep_axis_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown sweep axis"):
        load_config(write_config(tmp_path / "c.json", {"sweep": {"axes": {"weather": [1]}}}))


def test_non_finite_sweep_axis_rejected(tmp_path):
    (tmp_path / "c.json").write_text('{"sweep": {"axes": {"fuel": [0.3, Infinity]}}}')
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_missing_instance_file_rejected(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(write_config(tmp_path / "c.json", {"instance": {"path": "nowhere.json"}}))


def test_seed_lists():
    assert seeds_of({"seeds": {"start": 5, "count": 3}}) == [5, 6, 7]
    assert seeds_of({"seeds": [9, 4]}) == [9, 4]


@pytest.mark.parametrize("text, expected", [
    ("NoOOH", {"name": "NoOOH"}),
    ("StaticPricing(5, 2)", {"name": "StaticPricing", "discount": 5.0, "charge": 2.0}),
    ("Foresight(0.5)", {"name": "Foresight", "theta0": 0.5}),
])
def test_parse_policy(text, expected):
    assert {k: v for k, v in parse_policy(text).items() if k in expected} == expected


def test_parse_unknown_policy():
    with pytest.raises(ConfigError):
        parse_policy("Teleport")


def test_policy_labels_distinguish_parameters():
    assert policy_label(parse_policy("StaticPricing(5,2)")) != policy_label(parse_policy("StaticPricing(3,2)"))


def test_axes_change_instance():
    spec = load_config(None)["instance"]
    assert build_instance_from(apply_axis(spec, "fuel", 2.0)).rates.fuel_per_distance == 2.0
    assert build_instance_from(apply_axis(spec, "salary", 50)).rates.salary_per_hour == 50.0
    capped = build_instance_from(apply_axis(apply_axis(spec, "capacity_fraction", 0.5), "capacity", 3))
    assert sorted(o.capacity for o in capped.ooh if o.capacity is not None) == [3] * 5
    seg = build_cell_instance(apply_axis(spec, "segment_share", 0.3)).segments
    assert seg[0].home_only and seg[0].mu_g == 0.3 and seg[1].mu_g == pytest.approx(0.7)


def test_workers_env_overrides(monkeypatch):
    args = argparse.Namespace(workers=1)
    monkeypatch.setenv("OOH_LAB_WORKERS", "3")
    assert workers_from(args) == 3
    monkeypatch.setenv("OOH_LAB_WORKERS", "many")
    with pytest.raises(ConfigError):
        workers_from(args)


# --- command line ------------------------------------------------------------

def test_generate_instance(tmp_path):
    out = tmp_path / "gen"
    assert main(["generate-instance", "--seed", "2", "--out", str(out)]) == 0
    doc = json.loads((out / "instance.json").read_text())
    assert doc["fleet"]["size"] == 9
    chash, rows = read_csv(out / "locations.csv")
    assert chash and rows[0]["kind"] == "depot" and sum(r["kind"] == "ooh" for r in rows) == 10
    # the generated file drives later commands
    cfg = write_config(tmp_path / "c.json", {**FAST, "instance": {"path": "gen/instance.json"}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0


def test_evaluate_single_seed_reports_na(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", FAST)
    assert main(["evaluate", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    chash, rows = read_csv(tmp_path / "o" / "results.csv")
    assert chash == config_hash(load_config(cfg, {"seeds": [4]}))
    assert list(rows[0]) == RESULT_COLUMNS and rows[0]["ci95"] == "n/a"
    assert "n/a" in capsys.readouterr().out


def test_report_on_empty_directory(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", "--config", str(empty), "--out", str(tmp_path / "r")]) == 0
    _, rows = read_csv(tmp_path / "r" / "report.csv")
    assert rows == []


def test_report_refuses_mixed_instances(tmp_path, capsys):
    for seed in (0, 1):
        cfg = write_config(tmp_path / f"c{seed}.json", {**FAST, "instance": {"seed": seed}})
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "runs" / str(seed))]) == 0
    assert main(["report", "--config", str(tmp_path / "runs"), "--out", str(tmp_path / "r")]) == 2
    assert "refusing to merge" in capsys.readouterr().err


def test_report_joins_matching_runs(tmp_path):
    for i, pol in enumerate(("NoPricing", "StaticPricing(5,2)")):
        cfg = write_config(tmp_path / f"c{i}.json", {**FAST, "policies": [pol]})
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "runs" / str(i))]) == 0
    assert main(["report", "--config", str(tmp_path / "runs"), "--out", str(tmp_path / "r")]) == 0
    _, rows = read_csv(tmp_path / "r" / "report.csv")
    assert [r["policy"] for r in rows] == ["NoPricing", "StaticPricing(5,2)"]


def test_unknown_policy_exits_2(tmp_path, capsys):
    assert main(["evaluate", "--policy", "Teleport", "--out", str(tmp_path)]) == 2
    assert "Teleport" in capsys.readouterr().err


def test_missing_checkpoint_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {**FAST, "policies": [{"name": "DSPO", "checkpoint": "none.ckpt"}]})
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "train" in capsys.readouterr().err


def test_schema_error_exits_2(tmp_path):
    bad = tmp_path / "inst.json"
    bad.write_text("{}")
    cfg = write_config(tmp_path / "c.json", {**FAST, "instance": {"path": "inst.json"}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_simulate_writes_trace_and_plan(tmp_path):
    cfg = write_config(tmp_path / "c.json", FAST)
    assert main(["simulate", "--config", str(cfg), "--seed", "1", "--trace", "--out", str(tmp_path / "o")]) == 0
    _, trace = read_csv(tmp_path / "o" / "trace_NoPricing_1.csv")
    assert trace and {"offered", "prices", "chosen", "j_plus", "j_minus", "remaining"} <= set(trace[0])
    assert (tmp_path / "o" / "plan_NoPricing_1.csv").exists()


def test_train_then_evaluate_with_checkpoint(tmp_path):
    training = {"filters": 4, "hidden": 8, "phase1_samples": 200, "phase1_epochs": 1, "heldout_samples": 50,
                "iterations": 1, "solver_effort": 10, "resolve_effort": 3}
    cfg = write_config(tmp_path / "c.json", {**FAST, "training": training,
                                             "policies": [{"name": "DSPO", "checkpoint": "t/model.ckpt"}]})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    _, trace = read_csv(tmp_path / "t" / "loss_trace.csv")
    assert [r["stage"] for r in trace if r["stage"].startswith("heldout")][0] == "heldout:phase1_start"
    assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0
    _, rows = read_csv(tmp_path / "e" / "results.csv")
    assert rows[0]["policy"] == "DSPO"


# --- sweeps ------------------------------------------------------------------

def test_single_cell_sweep_equals_evaluate(rc_instance):
    cfg = load_config(None, {**FAST, "sweep": {"axes": {"fuel": [0.3]}, "policies": ["NoPricing"]}})
    _, rows = run_sweep(cfg)
    direct = evaluate(rc_instance, NoPricing, [0, 1], solver_effort=5)
    assert [r["total_cost"] for r in rows] == [r.total_cost for r in direct.results]
    assert [r["pct_savings"] for r in rows] == pytest.approx(direct.savings)


def test_failed_cell_is_recorded_and_sweep_continues():
    cfg = load_config(None, {**FAST, "sweep": {"axes": {"segment_share": [0.0, 1.0]}, "policies": ["NoPricing"]}})
    _, rows = run_sweep(cfg)
    ok = [r for r in rows if r["status"] == "ok"]
    bad = [r for r in rows if r["status"] != "ok"]
    assert len(ok) == 2 and all(r["segment_share"] == 0.0 for r in ok)
    assert len(bad) == 1 and bad[0]["segment_share"] == 1.0 and "segment_share" in bad[0]["status"]


def test_discount_axis_sets_static_price():
    cfg = load_config(None, {**FAST, "sweep": {"axes": {"static_discount_pct": [4]}, "policies": ["StaticPricing"]}})
    _, rows = run_sweep(cfg)
    assert {r["policy"] for r in rows} == {"StaticPricing(2,0)"}


def test_evaluate_policies_pairs_against_no_ooh(rc_instance):
    cfg = load_config(None, FAST)
    rows, episodes, aggs = evaluate_policies(rc_instance, cfg, ["NoOOH"], [0, 1])
    assert rows[0]["pct_savings"] == 0.0 and len(episodes) == 2
