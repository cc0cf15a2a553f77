import json
import textwrap
from pathlib import Path

import pytest

from aoi_lab.harness import ConfigError, load_config, parse_config, run_scenario
from aoi_lab.harness.cli import main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

SMALL = textwrap.dedent("""\
    scenario: small
    seed: 3
    replications: 4
    horizon: 300
    burn_in: 10
    network:
      agents: 3
      channels:
        - {from: 0, to: 1, kind: iid, q: 0.5}
        - {from: 1, to: 2, kind: gilbert_elliott, p_gb: 0.2, p_bg: 0.3, s_good: 0.9, s_bad: 0.1}
        - {from: 2, to: 0, kind: periodic, period: 3, offset: 1}
    objective: {kind: quadratic, center: [1.0, -1.0, 0.5], noise_sigma: 0.1}
    analysis:
      ssc: {epsilon: 0.3, kappa: 3}
      dominance: {bound: iid, m_max: 40}
    output: {trace_stride: 1, sgd_stride: 50}
    """)


def write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- config parsing -----------------------------------------------------------


def test_defaults_filled():
    cfg = parse_config(SMALL)
    assert cfg.schedule.a0 == 1.0 and cfg.schedule.gamma == 1.0
    assert cfg.additive.mode == "none"
    assert cfg.analysis.mixing is None
    assert cfg.network.num_agents == 3


def test_error_reports_line_and_field():
    bad = SMALL.replace("q: 0.5", "q: 1.5")
    with pytest.raises(ConfigError) as exc:
        parse_config(bad, source="bad.yaml")
    assert exc.value.line == 9
    assert exc.value.field_path == "network.channels[0]"
    assert str(exc.value).startswith("bad.yaml:9: field 'network.channels[0]'")


def test_zero_replications_rejected():
    with pytest.raises(ConfigError) as exc:
        parse_config(SMALL.replace("replications: 4", "replications: 0"))
    assert exc.value.field_path == "replications" and exc.value.line == 3


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="horizn"):
        parse_config(SMALL + "horizn: 5\n")


def test_overrides_validated():
    assert parse_config(SMALL, overrides={"seed": 11}).seed == 11
    with pytest.raises(ConfigError):
        parse_config(SMALL, overrides={"replications": -1})


def test_malformed_yaml():
    with pytest.raises(ConfigError):
        parse_config("network: [1, 2\n")


# -- CLI ------------------------------------------------------------------------


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_unknown_subcommand_exit_code():
    assert main(["frobnicate", "--config", "x.yaml"]) == 2


def test_bad_config_exit_code(tmp_path, capsys):
    path = write(tmp_path, SMALL.replace("agents: 3", "agents: zero"))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "network.agents" in capsys.readouterr().err


def test_certify_ring(tmp_path, capsys):
    code = main(["certify-ssc", "--config", str(SCENARIOS / "ssc_ring.yaml"), "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "window probability 0->1: 0.875" in out
    assert (tmp_path / "ssc.csv").exists()


def test_certify_requires_section(tmp_path):
    path = write(tmp_path, SMALL.replace("  ssc: {epsilon: 0.3, kappa: 3}\n", ""))
    assert main(["certify-ssc", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_negative_control_exit_code(tmp_path):
    code = main(["report", "--config", str(SCENARIOS / "crit7_negative_control.yaml"), "--out", str(tmp_path),
                 "--replications", "20"])
    assert code == 1


# -- outputs ------------------------------------------------------------------


def csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).glob("*.csv"))}


def test_rerun_is_byte_identical(tmp_path):
    path = write(tmp_path, SMALL)
    for name in ("a", "b"):
        assert main(["report", "--config", str(path), "--out", str(tmp_path / name)]) in (0, 1)
    a, b = csv_bytes(tmp_path / "a"), csv_bytes(tmp_path / "b")
    assert {"aoi_traces.csv", "verdicts.csv", "sgd_trace.csv", "sgd_errors.csv"} <= set(a)
    assert a == b


def test_worker_count_does_not_change_results(tmp_path):
    one = run_scenario(parse_config(SMALL + "workers: 1\n"), tmp_path / "one")
    two = run_scenario(parse_config(SMALL + "workers: 2\n"), tmp_path / "two")
    assert csv_bytes(one.out_dir) == csv_bytes(two.out_dir)


def test_manifest_echoes_defaults(tmp_path):
    path = write(tmp_path, SMALL)
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "o"), "--seed", "8"])
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    cfg = manifest["config"]
    assert manifest["seed"] == 8 and cfg["seed"] == 8
    assert cfg["schedule"] == {"a0": 1.0, "gamma": 1.0, "constant": False}
    assert cfg["additive"] == {"bound": 0.0, "mode": "none"}
    assert cfg["output"]["sgd_stride"] == 50
    assert manifest["csv_schema_version"] == 1


def test_load_config_roundtrip(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    again = parse_config(json.dumps(cfg.to_dict()))
    assert again.to_dict() == cfg.to_dict()
