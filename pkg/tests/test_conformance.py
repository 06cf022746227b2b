from pathlib import Path

import pytest

from src.conformance import RULES, ConformanceChecker, validate_log
from src.event_log import LogEvent, make_header
from src.exceptions import LogParseError
from src.hri_codec import canonical_dumps
from src.scenario_sim import load_scenario, simulate

FIXTURES = Path(__file__).resolve().parent / "fixtures"
SCENARIOS = Path(__file__).resolve().parent.parent / "data" / "scenarios"
RULE_FIXTURES = sorted(path.stem for path in FIXTURES.glob("*.hrilog") if path.stem in RULES)


def _tracked(seq, t, ids):
    return LogEvent(seq=seq, t=t, topic="/humans/faces/tracked", schema="IdsList", latched=True,
                    payload={"ids": ids})


@pytest.mark.unit
def test_every_rule_but_timestamps_has_a_fixture():
    assert len(RULE_FIXTURES) == 12
    assert set(RULES) - set(RULE_FIXTURES) == {"timestamp_monotonic", "face_frame_orientation"}


@pytest.mark.unit
@pytest.mark.parametrize("rule", RULE_FIXTURES)
def test_fixture_reports_its_rule(rule):
    results = validate_log(FIXTURES / f"{rule}.hrilog")

    assert results["status"] == "fail"
    assert results["summary"][rule] >= 1
    violation = next(v for v in results["violations"] if v["type"] == rule)
    assert violation["severity"] == "critical"
    assert violation["message"]


@pytest.mark.unit
def test_upside_down_face_frame_is_flagged():
    results = validate_log(FIXTURES / "nonconformant_face.hrilog")

    violations = [v for v in results["violations"] if v["type"] == "face_frame_orientation"]
    assert violations
    assert violations[0]["frame"] == "face_a1b2c3d4"
    assert violations[0]["line"] == 3


@pytest.mark.unit
def test_zero_confidence_frame_message():
    results = validate_log(FIXTURES / "frame_at_zero_confidence.hrilog")

    violation = next(v for v in results["violations"] if v["type"] == "frame_at_zero_confidence")
    assert "frame published at zero confidence" in violation["message"]


@pytest.mark.unit
def test_timestamp_regression_is_reported():
    text = "\n".join([
        canonical_dumps(make_header()),
        _tracked(1, 1.0, ["a1b2c3d4"]).to_line(),
        _tracked(2, 0.5, []).to_line(),
    ])

    results = validate_log(text)

    assert [v["type"] for v in results["violations"]] == ["timestamp_monotonic"]
    assert results["violations"][0]["line"] == 3


@pytest.mark.unit
def test_rules_can_be_selected():
    results = ConformanceChecker(["untracked_id"]).check(FIXTURES / "topic_grammar.hrilog")

    assert results["status"] == "pass"
    assert results["checks_performed"] == ["untracked_id"]


@pytest.mark.unit
def test_unreadable_log_raises():
    with pytest.raises(LogParseError) as excinfo:
        validate_log('{"hrilog_version":1}\nnot json\n')

    assert excinfo.value.line == 2


@pytest.mark.integration
def test_simulated_fig1_log_is_conformant():
    result = simulate(load_scenario(SCENARIOS / "fig1_situation.json"))

    results = validate_log(result.recorder.getvalue())

    assert results["violations"] == []
    assert results["events"] == result.recorder.count


@pytest.mark.slow
@pytest.mark.integration
@pytest.mark.parametrize("name", ["table1_walkthrough", "mafia_3p", "occlusion_stress", "crowd_10"])
def test_every_shipped_scenario_is_conformant(name):
    result = simulate(load_scenario(SCENARIOS / f"{name}.json"))

    assert validate_log(result.recorder.getvalue())["status"] == "pass"
