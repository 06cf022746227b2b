import io

import pytest

from src.event_log import EventRecorder, LogEvent, integrity_issues, make_header, parse_log, read_log
from src.exceptions import LogIntegrityError, LogParseError

HEADER = '{"hrilog_version":1}'
EVENT = '{"latched":false,"payload":{"data":true},"schema":"Bool","seq":%d,"t":%s,"topic":"/humans/voices/0000abcd/is_speaking"}'


def _event(seq, t=0.0):
    return LogEvent(seq=seq, t=t, topic="/humans/voices/0000abcd/is_speaking", schema="Bool",
                    latched=False, payload={"data": True})


@pytest.mark.unit
def test_event_lines_are_canonical():
    assert _event(1).to_line() == EVENT % (1, "0.0")
    assert _event(3, 0.1 + 0.2).to_line() == EVENT % (3, "0.3")


@pytest.mark.unit
def test_recorder_writes_header_first(tmp_path):
    path = tmp_path / "run.hrilog"
    with EventRecorder(path, make_header(seed=9)) as recorder:
        recorder.write(_event(1))
        recorder.write(_event(2, 0.5))

    lines = path.read_text(encoding="utf-8").split("\n")
    assert lines[0] == '{"hrilog_version":1,"seed":9}'
    assert lines[-1] == ""
    header, events = read_log(path)
    assert header["seed"] == 9
    assert [event.t for event in events] == [0.0, 0.5]
    assert events[0].message().data is True


@pytest.mark.unit
def test_in_memory_recorder():
    recorder = EventRecorder()
    recorder.write(_event(1))

    assert recorder.getvalue() == HEADER + "\n" + EVENT % (1, "0.0") + "\n"
    assert recorder.count == 1


@pytest.mark.unit
def test_blank_lines_are_skipped():
    header, events = parse_log(io.StringIO("\n".join([HEADER, EVENT % (1, "0.0"), "", EVENT % (2, "0.1")])))

    assert [line for line, _ in events] == [2, 4]


@pytest.mark.unit
@pytest.mark.parametrize("text, line", [
    ("", 1),
    ('{"hrilog_version":2}', 1),
    ("not json", 1),
    (HEADER + "\n" + '{"seq":1}', 2),
    (HEADER + "\n" + EVENT % (1, "0.0") + "\n" + '{"latched":false,"payload":{},', 3),
    (HEADER + "\n" + EVENT % (1, '"zero"'), 2),
])
def test_parse_errors_carry_the_line(text, line):
    with pytest.raises(LogParseError) as excinfo:
        parse_log(text.splitlines())

    assert excinfo.value.line == line


@pytest.mark.unit
def test_integrity_issues_name_both_rules():
    _, events = parse_log([HEADER, EVENT % (2, "1.0"), EVENT % (2, "0.5")])
    issues = integrity_issues(events)

    assert [issue["type"] for issue in issues] == ["sequence_monotonic", "timestamp_monotonic"]
    assert all(issue["line"] == 3 and issue["severity"] == "critical" for issue in issues)


@pytest.mark.unit
def test_read_log_raises_on_the_first_integrity_issue():
    with pytest.raises(LogIntegrityError) as excinfo:
        read_log([HEADER, EVENT % (5, "0.0"), EVENT % (4, "0.0")])

    assert excinfo.value.line == 3
    assert excinfo.value.event_index == 2
