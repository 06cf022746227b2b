import hashlib
from pathlib import Path

import pytest

from src.event_log import read_log
from src.hri_cli import EXIT_INPUT, EXIT_OK, EXIT_VIOLATIONS, main
from src.hri_codec import loads

ROOT = Path(__file__).resolve().parent.parent
FIG1 = str(ROOT / "data" / "scenarios" / "fig1_situation.json")
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def fig1_log(tmp_path, capsys):
    out = tmp_path / "fig1.hrilog"
    assert main(["simulate", FIG1, "--out", str(out), "--quiet"]) == EXIT_OK
    capsys.readouterr()
    return out


@pytest.mark.unit
def test_urdf_goes_to_stdout(capsys):
    assert main(["urdf", "1.75", "37ef0000", "--quiet"]) == EXIT_OK

    out = capsys.readouterr().out
    assert out.startswith("<?xml")
    assert "waist_37ef0000" in out


@pytest.mark.unit
@pytest.mark.parametrize("argv", [
    ["urdf", "1.75", "not-an-id"],
    ["urdf", "3.5", "37ef0000"],
    ["validate", "missing.hrilog"],
    ["simulate", "missing.json"],
    ["simulate", str(FIXTURES / "scenario_malformed.json")],
    ["score", "missing.hrilog"],
    ["frobnicate"],
    [],
])
def test_input_errors_exit_with_two(argv, capsys):
    assert main(argv + ["--quiet"] if argv else argv) == EXIT_INPUT
    assert capsys.readouterr().out == ""


@pytest.mark.unit
def test_set_overrides_a_config_value(capsys):
    assert main(["urdf", "2.8", "37ef0000", "--quiet"]) == EXIT_INPUT
    capsys.readouterr()

    assert main(["urdf", "2.8", "37ef0000", "--quiet", "--set", "kinematics.max_height=3.0"]) == EXIT_OK
    assert "waist_37ef0000" in capsys.readouterr().out


@pytest.mark.unit
@pytest.mark.parametrize("override", ["kinematics.tallest=3", "max_height=3", "person_manager.association_gate=0"])
def test_bad_overrides_are_input_errors(override, capsys):
    assert main(["urdf", "1.75", "37ef0000", "--quiet", "--set", override]) == EXIT_INPUT
    assert capsys.readouterr().out == ""


@pytest.mark.unit
def test_missing_config_file_is_an_input_error(capsys):
    assert main(["urdf", "1.75", "37ef0000", "--config", "absent.yaml"]) == EXIT_INPUT
    assert "absent.yaml" in capsys.readouterr().err


@pytest.mark.unit
def test_invalid_fixture_exits_with_three(capsys):
    code = main(["validate", str(FIXTURES / "topic_grammar.hrilog")])

    captured = capsys.readouterr()
    report = loads(captured.out)
    assert code == EXIT_VIOLATIONS
    assert report["status"] == "fail"
    assert report["violations"][0]["type"] == "topic_grammar"
    assert "topic_grammar" in captured.err


@pytest.mark.integration
def test_simulate_writes_log_and_truth(fig1_log):
    _, events = read_log(fig1_log)

    voices = [e for e in events if e.topic == "/humans/voices/tracked" and e.payload["ids"]]
    assert voices
    assert fig1_log.with_name("fig1.truth.json").is_file()


@pytest.mark.integration
def test_simulate_reports_on_stdout(tmp_path, capsys):
    out = tmp_path / "run.hrilog"
    assert main(["simulate", FIG1, "--out", str(out), "--seed", "21", "--quiet"]) == EXIT_OK

    report = loads(capsys.readouterr().out)
    assert report["seed"] == 21
    assert report["log"] == str(out)
    assert len(report["persons"]) == 3


@pytest.mark.integration
def test_same_seed_gives_same_checksum(tmp_path, capsys):
    digests = []
    for name in ("a.hrilog", "b.hrilog"):
        out = tmp_path / name
        assert main(["simulate", FIG1, "--out", str(out), "--seed", "4", "--quiet"]) == EXIT_OK
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())

    assert digests[0] == digests[1]


@pytest.mark.integration
def test_simulated_log_validates(fig1_log, capsys):
    assert main(["validate", str(fig1_log)]) == EXIT_OK
    assert loads(capsys.readouterr().out)["status"] == "pass"


@pytest.mark.integration
def test_score_finds_the_truth_sidecar(fig1_log, capsys):
    assert main(["score", str(fig1_log), "--quiet"]) == EXIT_OK

    report = loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert report["metrics"]["identity_continuity"] == 1.0


@pytest.mark.integration
def test_replay_reproduces_the_log(fig1_log, tmp_path, capsys):
    out = tmp_path / "replayed.hrilog"

    assert main(["replay", str(fig1_log), "--out", str(out), "--quiet"]) == EXIT_OK

    assert out.read_text(encoding="utf-8") == fig1_log.read_text(encoding="utf-8")
    assert loads(capsys.readouterr().out)["source"] == str(fig1_log)


@pytest.mark.integration
def test_replay_with_another_seed_renames_persons(fig1_log, capsys):
    assert main(["replay", str(fig1_log), "--seed", "99", "--quiet"]) == EXIT_OK

    out = capsys.readouterr().out
    assert out != fig1_log.read_text(encoding="utf-8")
    assert loads(out.splitlines()[0])["seed"] == 99


@pytest.mark.integration
def test_replay_streams_to_stdout(fig1_log, capsys):
    assert main(["replay", str(fig1_log), "--quiet"]) == EXIT_OK

    assert capsys.readouterr().out == fig1_log.read_text(encoding="utf-8")
