"""End-to-end checks over the shipped scenarios."""
from pathlib import Path

import pytest

from src.config_manager import Config
from src.conformance import validate_log
from src.exceptions import RecordCreationError
from src.hri_bus import HRIBus
from src.hri_model import IdKind
from src.person_manager import PersonManager, PersonRecord, replay_fusion
from src.scenario_sim import Simulation, load_scenario, parse_scenario, score, simulate

SCENARIOS = Path(__file__).resolve().parent.parent / "data" / "scenarios"
ID_LEAVES = ("face_id", "body_id", "voice_id")


@pytest.fixture
def config():
    return Config()


def _stepper(scenario, config):
    effective = scenario.effective_config(config)
    bus = HRIBus(effective.bus)
    simulation = Simulation(scenario, bus, config)
    manager = PersonManager(bus, effective.person_manager, scenario.seed, simulation.known_persons())
    for t in scenario.ticks():
        truth = simulation.emit(t)
        manager.tick(t)
        yield t, truth, bus, manager


def _bus_state(bus, truth):
    """What a subscriber sees: tracked lists and the latched person ids."""
    persons = set(bus.tracked(IdKind.PERSON))
    owners = {}
    for person_id in persons:
        for leaf in ID_LEAVES:
            delivery = bus.last_value(f"/humans/persons/{person_id}/{leaf}")
            if delivery is not None and delivery.message.data:
                owners[delivery.message.data] = person_id
    return {
        "faces": set(bus.tracked(IdKind.FACE)),
        "bodies": set(bus.tracked(IdKind.BODY)),
        "voices": set(bus.tracked(IdKind.VOICE)),
        "persons": persons,
        "owners": owners,
        "truth": truth.actors,
    }


@pytest.fixture(scope="module")
def walkthrough():
    scenario = load_scenario(SCENARIOS / "table1_walkthrough.json")
    states, confidences = {}, {}
    for t, truth, bus, manager in _stepper(scenario, Config()):
        states[t] = _bus_state(bus, truth)
        confidences[t] = {pid: record.location_confidence for pid, record in manager.records.items()}
        alice = manager.person_by_name("Alice").person_id
    return states, confidences, alice


def _id(state, actor, kind):
    return state["truth"][actor][f"{kind}_id"]


def _ids_of(state, person_id):
    return {entity for entity, owner in state["owners"].items() if owner == person_id}


@pytest.mark.integration
def test_walkthrough_face_without_person(walkthrough):
    states, confidences, alice = walkthrough
    state = states[0.2]

    face = _id(state, "Passerby", "face")
    assert face in state["faces"]
    assert face not in state["owners"]
    assert state["persons"] == {alice}
    assert _ids_of(state, alice) == set()
    assert confidences[0.2][alice] == 0.0


@pytest.mark.integration
def test_walkthrough_recognised_face_joins_the_known_person(walkthrough):
    states, confidences, alice = walkthrough

    assert _id(states[1.2], "Alice", "face") not in states[1.2]["owners"]
    first = _id(states[2.0], "Alice", "face")
    assert states[2.0]["owners"] == {first: alice}
    assert confidences[2.0][alice] == 1.0


@pytest.mark.integration
def test_walkthrough_person_without_live_identifiers(walkthrough):
    states, confidences, alice = walkthrough
    state = states[2.8]

    assert state["faces"] == set()
    assert alice in state["persons"]
    assert _ids_of(state, alice) == set()
    assert 0.0 < confidences[2.8][alice] <= 0.5


@pytest.mark.integration
def test_walkthrough_new_face_is_recognised(walkthrough):
    states, _, alice = walkthrough

    first = _id(states[2.0], "Alice", "face")
    second = _id(states[3.8], "Alice", "face")
    assert second != first
    assert states[3.8]["owners"] == {second: alice}


@pytest.mark.integration
def test_walkthrough_face_and_body(walkthrough):
    states, _, alice = walkthrough

    body = _id(states[4.2], "Alice", "body")
    assert body in states[4.2]["bodies"] and body not in states[4.2]["owners"]
    assert _ids_of(states[4.8], alice) == {_id(states[4.8], "Alice", "face"), body}


@pytest.mark.integration
def test_walkthrough_bodies_and_faces_before_a_person(walkthrough):
    states, _, _ = walkthrough

    body = _id(states[5.0], "Bob", "body")
    assert body in states[5.0]["bodies"] and _id(states[5.0], "Bob", "face") is None
    assert body not in states[5.0]["owners"]
    face = _id(states[5.2], "Bob", "face")
    assert {face, body} <= states[5.2]["faces"] | states[5.2]["bodies"]
    assert not {face, body} & set(states[5.2]["owners"])


@pytest.mark.integration
def test_walkthrough_body_person_then_face(walkthrough):
    states, _, alice = walkthrough

    body = _id(states[5.5], "Bob", "body")
    bob = states[5.5]["owners"][body]
    assert bob != alice
    assert _ids_of(states[5.5], bob) == {body}
    assert _ids_of(states[5.8], bob) == {body, _id(states[5.8], "Bob", "face")}


@pytest.mark.integration
def test_walkthrough_voice_then_voice_person(walkthrough):
    states, _, alice = walkthrough

    voice = _id(states[6.2], "Carol", "voice")
    assert voice in states[6.2]["voices"] and voice not in states[6.2]["owners"]
    carol = states[7.0]["owners"][voice]
    assert carol != alice
    assert _ids_of(states[7.0], carol) == {voice}


@pytest.mark.integration
def test_walkthrough_never_shares_a_live_id(walkthrough):
    states, _, _ = walkthrough

    for state in states.values():
        live = state["faces"] | state["bodies"] | state["voices"]
        assert set(state["owners"]) <= live


@pytest.mark.unit
def test_record_without_any_identifier_is_rejected():
    with pytest.raises(RecordCreationError):
        PersonRecord(person_id="0f0f0f0f")


@pytest.mark.integration
def test_person_frame_state_machine(config):
    scenario = parse_scenario({
        "name": "decay",
        "duration": 4.0,
        "config": {"forget_after": 2.0},
        "actors": [{"name": "A", "height": 1.7, "timeline": [{"start": 0.0, "end": 1.0, "position": [2.0, 0.0]}]}],
    })
    confidences, frames, subscription = {}, [], None
    for t, truth, bus, manager in _stepper(scenario, config):
        if subscription is None:
            subscription = bus.subscribe("/tf")
        (record,) = manager.records.values()
        confidences[t] = record.location_confidence
        person_frame = f"person_{record.person_id}"
        if truth.actors:
            face_frame = f"face_{truth.actors['A']['face_id']}"
            person, face = bus.tf.lookup("map", person_frame, t), bus.tf.lookup("map", face_frame, t)
            assert person.translation_distance(face) <= 1e-9
            assert person.rotation_distance(face) <= 1e-6
        frames.extend(d.timestamp for d in subscription.drain() if d.message.child == person_frame)

    assert confidences[0.9] == 1.0
    assert confidences[1.0] == 0.5
    assert confidences[2.0] == pytest.approx(0.25)
    assert confidences[3.0] == 0.0 and confidences[4.0] == 0.0
    assert max(frames) == pytest.approx(2.9)
    assert all(confidences[t] > 0.0 for t in frames)


@pytest.mark.integration
@pytest.mark.parametrize("name", [
    "fig1_situation",
    "mafia_3p",
    pytest.param("crowd_10", marks=pytest.mark.slow),
])
def test_noise_free_fusion_quality(name, config):
    result = simulate(load_scenario(SCENARIOS / f"{name}.json"), config)

    report = score(result.truth, result.recorder.getvalue())

    assert report["metrics"]["identity_continuity"] == 1.0
    assert report["metrics"]["association_accuracy"] == 1.0
    assert validate_log(result.recorder.getvalue())["status"] == "pass"


@pytest.mark.slow
@pytest.mark.integration
def test_gaze_detection_under_position_noise(config):
    scenario = load_scenario(SCENARIOS / "mafia_3p.json").without_blinks().with_noise(position_sigma=0.005)
    result = simulate(scenario, config)

    metrics = score(result.truth, result.recorder.getvalue())["metrics"]

    assert metrics["gaze_recall"] >= 0.95
    assert metrics["gaze_precision"] >= 0.95


@pytest.mark.integration
def test_closed_eyes_never_send_gaze(config):
    result = simulate(load_scenario(SCENARIOS / "mafia_3p.json"), config)

    assert score(result.truth, result.recorder.getvalue())["metrics"]["eyes_closed_false_positives"] == 0


@pytest.mark.integration
def test_replay_through_a_fresh_person_manager_is_byte_identical(config):
    scenario = load_scenario(SCENARIOS / "occlusion_stress.json")
    first = simulate(scenario, config).recorder.getvalue()

    manager, recorder = replay_fusion(first)

    assert simulate(scenario, config).recorder.getvalue() == first
    assert recorder.getvalue() == first
    assert len(manager.records) == 3
