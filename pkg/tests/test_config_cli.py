import copy
import json
import os

import numpy as np
import pytest

from lagsync.cli import main
from lagsync.config import ConfigError, ExperimentConfig
from lagsync.fixtures import fixture_config


@pytest.fixture(scope="module")
def fixture_dict():
    return fixture_config().to_dict()


def test_round_trip_identity(fixture_dict, tmp_path):
    cfg = ExperimentConfig.from_dict(fixture_dict)
    assert cfg.to_dict() == fixture_dict
    path = tmp_path / "config.json"
    cfg.save(path)
    assert ExperimentConfig.load(path).to_dict() == fixture_dict


def test_unknown_section_rejected(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["mystery"] = {}
    with pytest.raises(ConfigError, match="mystery"):
        ExperimentConfig.from_dict(bad)


def test_unknown_key_rejected(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["integrator"]["dt"] = 0.1
    with pytest.raises(ConfigError, match=r"integrator.*dt"):
        ExperimentConfig.from_dict(bad)


def test_missing_section_rejected(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    del bad["plant"]
    with pytest.raises(ConfigError, match="plant"):
        ExperimentConfig.from_dict(bad)


def test_gain_coverage_checked(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    del bad["gains"]["follower"]["4,2"]
    with pytest.raises(ConfigError, match=r"missing gain.*4, 2"):
        ExperimentConfig.from_dict(bad)
    bad = copy.deepcopy(fixture_dict)
    bad["gains"]["follower"]["2,1"] = [0.1, 0.1, 0.1]
    with pytest.raises(ConfigError, match="no edge"):
        ExperimentConfig.from_dict(bad)


def test_gain_dimension_checked(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["gains"]["pin"]["1"] = [0.1, 0.2]
    with pytest.raises(ConfigError, match="length-3"):
        ExperimentConfig.from_dict(bad)


def test_switching_needs_dominating_rho(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["protocol_kind"] = "smoothed"
    bad["disturbance"] = {
        "kind": "biased-sinusoid",
        "offsets": [0.0, 0.0, 0.0, 0.0],
        "amplitudes": [20.0, 1.0, 1.0, 1.0],
        "frequencies": [1.0, 1.0, 1.0, 1.0],
    }
    with pytest.raises(ConfigError, match="rho"):
        ExperimentConfig.from_dict(bad)


def test_unreachable_topology_rejected(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["topology"]["adjacency"] = [[0.0] * 4 for _ in range(4)]
    bad["gains"]["follower"] = {}
    with pytest.raises(ConfigError, match="leader"):
        ExperimentConfig.from_dict(bad)


def test_initial_section_shape_checked(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["initial"]["leader"] = [1.0, 2.0]
    with pytest.raises(ConfigError, match="initial.leader"):
        ExperimentConfig.from_dict(bad)


def test_master_seed_derivation(fixture_dict):
    cfg = ExperimentConfig.from_dict(fixture_dict)
    seeded = cfg.with_master_seed(7)
    assert seeded.delays["seed"] != cfg.delays["seed"]
    assert seeded.with_master_seed is not None
    again = cfg.with_master_seed(7)
    assert again.delays["seed"] == seeded.delays["seed"]


def test_filter_scaling_validated(fixture_dict):
    bad = copy.deepcopy(fixture_dict)
    bad["gains"]["filter_scaling"] = "weird"
    cfg = ExperimentConfig.from_dict(bad)
    with pytest.raises(ConfigError, match="filter_scaling"):
        _ = cfg.filter_scaling


# ---------------------------------------------------------------------------
# CLI


@pytest.fixture(scope="module")
def short_config_path(tmp_path_factory):
    cfg = fixture_config()
    raw = cfg.to_dict()
    raw["integrator"]["horizon"] = 1.0
    path = tmp_path_factory.mktemp("cfg") / "short.json"
    ExperimentConfig.from_dict(raw).save(path)
    return str(path)


def test_cli_usage_error_exits_1(capsys):
    assert main(["certify"]) == 1
    assert "config" in capsys.readouterr().err


def test_cli_unknown_command_exits_1():
    assert main(["frobnicate"]) == 1


def test_cli_bad_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["simulate", "--config", str(path)]) == 1
    assert "config error" in capsys.readouterr().err


def test_cli_simulate_outputs(short_config_path, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", short_config_path, "--out", str(out)]) == 0
    names = sorted(os.listdir(out))
    assert names == ["manifest.json", "profiles.csv", "summary.json", "trace.csv"]
    cfg = ExperimentConfig.load(short_config_path)
    step, horizon = cfg.integrator_params()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["samples"] == int(round(horizon / step)) + 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["package_version"]


def test_cli_simulate_plots(short_config_path, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", short_config_path, "--out", str(out), "--plots"]) == 0
    pngs = sorted(p.name for p in out.glob("*.png"))
    assert pngs == [
        "trace_controls.png",
        "trace_errors.png",
        "trace_sliding.png",
        "trace_states.png",
    ]


def test_cli_simulate_rerun_is_byte_identical(short_config_path, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", short_config_path, "--out", str(out1)]) == 0
    assert main(["simulate", "--config", short_config_path, "--out", str(out2)]) == 0
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    assert (out1 / "profiles.csv").read_bytes() == (out2 / "profiles.csv").read_bytes()


def test_cli_manifest_replay_is_byte_identical(short_config_path, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", short_config_path, "--out", str(out1)]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())
    replay_cfg = tmp_path / "replay.json"
    ExperimentConfig.from_dict(manifest["config"]).save(replay_cfg)
    assert main(["simulate", "--config", str(replay_cfg), "--out", str(out2)]) == 0
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()


def test_cli_seed_override_changes_trace(short_config_path, tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", short_config_path, "--out", str(out1)]) == 0
    assert (
        main(["simulate", "--config", short_config_path, "--seed", "5", "--out", str(out2)])
        == 0
    )
    assert (out1 / "trace.csv").read_bytes() != (out2 / "trace.csv").read_bytes()


def test_cli_certify_and_max_delay(short_config_path, tmp_path, capsys):
    out = tmp_path / "cert"
    rc = main(["certify", "--config", short_config_path, "--tau", "0.01", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "lmi_report.json").read_text())
    assert report["feasible"] and report["tau"] == 0.01
    assert (out / "certificate.json").exists()
    capsys.readouterr()
    rc = main(
        ["max-delay", str(out / "certificate.json"), "--config", short_config_path]
    )
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["ratios"]) == 3


@pytest.mark.parametrize("variant", ["fig2", "fig3", "fig4"])
def test_cli_reproduce_paper_variants(variant, tmp_path, monkeypatch):
    # Shorten the bundled scenario so the command path stays fast to test.
    monkeypatch.setattr("lagsync.fixtures.FIXTURE_HORIZON", 1.0)
    out = tmp_path / variant
    assert main(["reproduce-paper", "--variant", variant, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["variant"] == variant
    assert (out / "profiles.csv").exists()
    assert (out / "manifest.json").exists()
    if variant == "fig4":
        assert (out / "trace_smoothed.csv").exists()
        assert (out / "trace_discontinuous.csv").exists()
        assert summary["control_total_variation_discontinuous"] > 0
        assert "chattering_reduction_factor" in summary
    else:
        assert (out / "trace.csv").exists()
        assert "final_max_error" in summary


def test_cli_reproduce_unknown_variant_exits_1(capsys):
    assert main(["reproduce-paper", "--variant", "fig9"]) == 1


def test_cli_tune_infeasible_seed_exits_2(short_config_path, tmp_path, capsys):
    raw = json.loads(open(short_config_path).read())
    raw["tuner"] = {"tau_seed": 500.0, "outer_budget": 1, "inner_budget": 1, "search_budget": 200}
    cfg_path = tmp_path / "hopeless.json"
    ExperimentConfig.from_dict(raw).save(cfg_path)
    rc = main(["tune", "--config", str(cfg_path), "--out", str(tmp_path / "t")])
    assert rc == 2
    assert "tune failed" in capsys.readouterr().err
    payload = json.loads((tmp_path / "t" / "tune_result.json").read_text())
    assert payload["failed"] is True
    assert np.isfinite(payload["best_margin"])


def test_cli_certify_infeasible_exits_2(short_config_path, tmp_path, capsys):
    # Huge bound: the ratio analysis rules it out quickly with a small budget.
    raw = json.loads(open(short_config_path).read())
    raw["certify"]["search_budget"] = 300
    cfg_path = tmp_path / "small_budget.json"
    ExperimentConfig.from_dict(raw).save(cfg_path)
    rc = main(["certify", "--config", str(cfg_path), "--tau", "1e3", "--out", str(tmp_path / "c")])
    assert rc == 2
    assert "not certified" in capsys.readouterr().err
    report = json.loads((tmp_path / "c" / "lmi_report.json").read_text())
    assert report["feasible"] is False
    assert np.isfinite(report["best_margin"])
