import io
from pathlib import Path

import pytest

from dopploc.cli import main
from dopploc.config import DEFAULTS, ConfigError, dump_config, effective_config, load_text, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


def test_empty_config_gives_defaults():
    spec, eff = parse_config("")
    assert eff == DEFAULTS
    assert spec.radio.tx_power == pytest.approx(1.0)
    assert spec.radio.num_subcarriers == 20
    assert spec.scenario.num_ips == 2


def test_checked_in_default_matches_builtin():
    _, eff = parse_config((CONFIGS / "default.yaml").read_text())
    assert eff == DEFAULTS


def test_power_conversion():
    spec, _ = parse_config("radio:\n  power_dbm: 0\n")
    assert spec.radio.tx_power == pytest.approx(1e-3)


def test_numeric_strings_accepted():
    # YAML 1.1 reads exponent forms without a dot as strings
    spec, _ = parse_config("radio:\n  fc_hz: 28e9\n")
    assert spec.radio.carrier_frequency == 28e9


def test_validation_names_the_key():
    with pytest.raises(ConfigError) as exc:
        parse_config("radio:\n  num_subcarriers: -4\n")
    assert exc.value.key == "radio.num_subcarriers"
    with pytest.raises(ConfigError) as exc:
        parse_config("radio:\n  bogus: 1\n")
    assert exc.value.key == "radio.bogus"
    with pytest.raises(ConfigError) as exc:
        parse_config("experiment:\n  kind: nonsense\n")
    assert exc.value.key == "experiment.kind"
    with pytest.raises(ConfigError) as exc:
        parse_config("scenario:\n  ip_positions_m: [[-6, 8], [5, 2]]\n")
    assert exc.value.key == "scenario.ip_positions_m"


def test_malformed_yaml_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        load_text("radio:\n  fc_hz: 1\n  bad: : x\n")


def test_unknown_section():
    with pytest.raises(ConfigError):
        effective_config({"nope": {}})


def test_dump_roundtrip():
    spec, eff = parse_config("scenario:\n  speed_mps: 2\n  direction: [2, 1]\nexperiment:\n  trials: 7\n")
    spec2, eff2 = parse_config(dump_config(eff))
    assert eff2 == eff
    assert spec2.trials == 7
    assert (spec2.scenario.velocity == spec.scenario.velocity).all()


def test_cli_unknown_subcommand():
    assert run(["bogus"])[0] == 2


def test_cli_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("radio:\n  num_subcarriers: -1\n")
    assert run(["crb", "-c", str(bad)])[0] == 2
    assert run(["crb", "-c", str(tmp_path / "missing.yaml")])[0] == 2


def test_cli_echo_config_roundtrip(tmp_path):
    code, text = run(["crb", "--echo-config", "--seed", "5"])
    assert code == 0
    f = tmp_path / "echo.yaml"
    f.write_text(text)
    code2, text2 = run(["crb", "-c", str(f), "--echo-config"])
    assert code2 == 0 and text2 == text
    assert "seed: 5" in text


def test_cli_crb(tmp_path):
    out = tmp_path / "crb.csv"
    code, text = run(["crb", "--out", str(out)])
    assert code == 0
    assert text.startswith("state FIM rank 9 of 9")
    assert "PEB 0.00166734 m" in text
    assert out.read_text().splitlines()[0] == "peb,meb_agg,meb_1,meb_2,ceb,veb"


def test_cli_locate_deterministic():
    a = run(["locate", "--seed", "7"])
    b = run(["locate", "--seed", "7"])
    assert a[0] == 0 and a == b
    assert run(["locate", "--seed", "8"])[1] != a[1]


def test_cli_sweep_writes_outputs(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("experiment:\n  speed_points: 3\n")
    out = tmp_path / "sub" / "speed.csv"
    code, text = run(["speed-sweep", "-c", str(cfg), "--out", str(out)])
    assert code == 0
    assert out.exists() and out.with_suffix(".png").exists() and out.with_suffix(".config.yaml").exists()
    assert len(out.read_text().splitlines()) == 4
    _, eff = parse_config(out.with_suffix(".config.yaml").read_text())
    assert eff["experiment"]["kind"] == "speed-sweep"


def test_cli_solvability_small(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("experiment:\n  instances: 12\n")
    code, text = run(["solvability", "-c", str(cfg)])
    assert code == 0
    assert text.strip().endswith("mismatches: 0 over 12 instances")
