import math

import numpy as np
import pytest

from src.config_manager import Config
from src.event_log import LogEvent
from src.exceptions import RecordCreationError, TimeRegressionError
from src.hri_bus import HRIBus
from src.hri_model import IdKind, RegionOfInterest
from src.hri_tf import Transform
from src.person_manager import (
    BodyObservation,
    Evidence,
    FaceObservation,
    KnownPerson,
    PersonManager,
    PersonRecord,
    associate,
    face_body_cost,
    identify,
    is_fusion_output,
    solve_assignment,
    voice_person_cost,
)
from src.scenario_sim import parse_scenario, simulate

FACE, BODY = "24ac0000", "37ef0000"
FACE_ROI = RegionOfInterest(x_offset=295, y_offset=215, width=50, height=50)
BODY_ROI = RegionOfInterest(x_offset=270, y_offset=200, width=100, height=270)


@pytest.fixture
def config():
    return Config()


def _manager(config, **overrides):
    bus = HRIBus(config.bus)
    return PersonManager(bus, config.with_person_manager(overrides).person_manager, seed=3)


def _step(manager, t, action, *args, **kwargs):
    manager.bus.publish_transform("map", "camera", Transform((0.0, 0.0, 1.2)), t)
    return action(*args, t, **kwargs)


def _descriptor(seed):
    return np.random.default_rng(seed).normal(0.0, 1.0, 16)


@pytest.mark.unit
def test_assignment_prefers_lexicographic_order_on_ties():
    assert solve_assignment(np.full((2, 2), 0.1), 0.5) == [(0, 0), (1, 1)]


@pytest.mark.unit
def test_assignment_maximises_matches_before_cost():
    cost = np.array([[0.1, 0.2], [0.15, np.inf]])

    assert solve_assignment(cost, 0.5) == [(0, 1), (1, 0)]


@pytest.mark.unit
def test_assignment_respects_the_gate():
    assert solve_assignment(np.array([[0.6, 0.4]]), 0.5) == [(0, 1)]
    assert solve_assignment(np.array([[0.6]]), 0.5) == []
    assert solve_assignment(np.zeros((0, 3)), 0.5) == []


@pytest.mark.unit
def test_face_inside_the_upper_body_costs_nothing(config):
    cost, evidence = face_body_cost(FaceObservation(FACE, FACE_ROI), BodyObservation(BODY, BODY_ROI),
                                    config.person_manager)

    assert cost == 0.0
    assert evidence == Evidence.SPATIAL_OVERLAP


@pytest.mark.unit
def test_contained_face_is_matched_whatever_its_size(config):
    small = FaceObservation(FACE, FACE_ROI)
    straddling = FaceObservation("0000cccc", RegionOfInterest(x_offset=295, y_offset=265, width=50, height=50))

    matched = associate([small], [BodyObservation(BODY, BODY_ROI)], {}, {}, config.person_manager)
    half, _ = face_body_cost(straddling, BodyObservation(BODY, BODY_ROI), config.person_manager)

    assert [(c.first, c.second, c.cost) for c in matched] == [(FACE, BODY, 0.0)]
    assert half == pytest.approx(0.5)


@pytest.mark.unit
def test_distant_head_vetoes_overlapping_rois(config):
    face = FaceObservation(FACE, FACE_ROI, np.array([1.8, 0.0, 0.0]))
    far = BodyObservation(BODY, BODY_ROI, np.array([3.0, 0.0, 0.0]))
    near = BodyObservation(BODY, None, np.array([1.8, 0.06, 0.0]))

    assert face_body_cost(face, far, config.person_manager) is None
    cost, evidence = face_body_cost(face, near, config.person_manager)
    assert cost == pytest.approx(0.2)
    assert evidence == Evidence.FRAME_DISTANCE


@pytest.mark.unit
def test_voice_cost_scales_with_bearing(config):
    assert voice_person_cost(math.radians(20), math.radians(5), config.person_manager) == pytest.approx(0.5)
    assert voice_person_cost(math.radians(179), math.radians(-179), config.person_manager) == \
        pytest.approx(2.0 / 30.0)


@pytest.mark.unit
def test_associate_pairs_faces_with_bodies_and_voices_with_persons(config):
    faces = [FaceObservation("0000bbbb", RegionOfInterest(x_offset=500, y_offset=100, width=30, height=30)),
             FaceObservation("0000aaaa", FACE_ROI)]
    bodies = [BodyObservation("1111aaaa", BODY_ROI)]
    voices = {"2222aaaa": math.radians(40.0)}
    persons = {"3333aaaa": math.radians(-30.0), "3333bbbb": math.radians(35.0)}

    result = associate(faces, bodies, voices, persons, config.person_manager)

    assert [(c.kinds, c.first, c.second) for c in result] == [
        (("face", "body"), "0000aaaa", "1111aaaa"),
        (("voice", "person"), "2222aaaa", "3333bbbb"),
    ]


@pytest.mark.unit
def test_identify_returns_the_nearest_person_under_threshold():
    alice = PersonRecord(person_id="0000aaaa", name="Alice", descriptor=_descriptor(1))
    bob = PersonRecord(person_id="0000bbbb", name="Bob", descriptor=_descriptor(2))
    query = _descriptor(1) + 0.01

    assert identify(query, [bob, alice], 0.4) == "0000aaaa"
    assert alice.descriptor_count == 2
    assert identify(_descriptor(3), [alice, bob], 0.4) is None


@pytest.mark.unit
def test_record_needs_an_identifier():
    with pytest.raises(RecordCreationError):
        PersonRecord(person_id="0000aaaa")


@pytest.mark.unit
def test_face_then_body_join_one_person(config):
    manager = _manager(config)

    created = _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI)
    assert len(created) == 1 and created[0].face_id == FACE

    joined = _step(manager, 0.1, manager.on_detection, IdKind.BODY, BODY, roi=BODY_ROI)
    assert joined[0].person_id == created[0].person_id
    assert joined[0].body_id == BODY
    assert len(manager.records) == 1
    assert manager.person_of(BODY) == created[0].person_id

    delivery = manager.bus.last_value(f"/humans/persons/{created[0].person_id}/body_id")
    assert delivery.message.data == BODY


@pytest.mark.unit
def test_person_frame_follows_the_face(config):
    manager = _manager(config)
    person = _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI)[0]

    pose = manager.bus.tf.lookup("camera", f"person_{person.person_id}", 0.0)
    assert pose.translation == pytest.approx((1.8, 0.0, 0.0))
    assert person.frame_source == "face_roi"
    assert manager.bus.tracked(IdKind.PERSON) == (person.person_id,)


@pytest.mark.unit
def test_confidence_decays_after_loss_and_the_frame_is_withdrawn(config):
    manager = _manager(config, forget_after=60.0)
    person_id = _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI)[0].person_id
    confidences = manager.bus.subscribe(f"/humans/persons/{person_id}/location_confidence")
    frames = manager.bus.subscribe("/tf")

    for t in (1.0, 31.0, 61.0):
        _step(manager, t, manager.on_loss, IdKind.FACE, FACE)

    assert [d.message.data for d in confidences.drain()] == [0.5, 0.25, 0.0]
    person_frames = [d.timestamp for d in frames.drain() if d.message.child == f"person_{person_id}"]
    assert person_frames == [1.0, 31.0]
    assert manager.bus.last_value(f"/humans/persons/{person_id}/face_id").message.data == ""
    assert manager.records[person_id].face_id is None


@pytest.mark.unit
def test_known_person_is_recognised_from_the_face_descriptor(config):
    bus = HRIBus(config.bus)
    manager = PersonManager(bus, config.person_manager, seed=1,
                            known_persons=[KnownPerson("Alice", tuple(_descriptor(7)), "fr")])
    alice = manager.person_by_name("Alice")
    assert alice.location_confidence == 0.0

    _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI, descriptor=_descriptor(7) + 0.01)

    assert alice.face_id == FACE
    assert len(manager.records) == 1
    assert bus.last_value(f"/humans/persons/{alice.person_id}/face_id").message.data == FACE


@pytest.mark.unit
def test_unknown_descriptor_creates_an_anonymous_person(config):
    manager = PersonManager(HRIBus(config.bus), config.person_manager, seed=1,
                            known_persons=[KnownPerson("Alice", tuple(_descriptor(7)))])

    _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI, descriptor=_descriptor(8))

    assert len(manager.records) == 2
    assert manager.person_by_name("Alice").face_id is None


@pytest.mark.unit
def test_young_tracks_are_not_adopted(config):
    manager = _manager(config, min_track_age=0.5)

    assert _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI) == []
    assert _step(manager, 0.3, manager.tick) is None
    assert manager.records == {}
    _step(manager, 0.5, manager.tick)
    assert len(manager.records) == 1


@pytest.mark.unit
def test_ticks_must_move_forward(config):
    manager = _manager(config)
    _step(manager, 1.0, manager.tick)

    with pytest.raises(TimeRegressionError):
        manager.tick(0.5)


@pytest.mark.unit
def test_same_seed_gives_same_person_ids(config):
    ids = []
    for _ in range(2):
        manager = _manager(config)
        ids.append(_step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI)[0].person_id)

    assert ids[0] == ids[1]


@pytest.mark.unit
@pytest.mark.parametrize("topic, payload, expected", [
    ("/tf", {"child": "person_0000aaaa"}, True),
    ("/tf", {"child": "face_0000aaaa"}, False),
    ("/humans/persons/0000aaaa/face_id", {"data": ""}, True),
    ("/humans/persons/tracked", {"ids": []}, True),
    ("/humans/interactions/groups", {}, True),
    ("/humans/bodies/0000aaaa/attitude", {}, True),
    ("/humans/faces/0000aaaa/roi", {}, False),
    ("/humans/faces/tracked", {"ids": []}, False),
])
def test_fusion_output_events(topic, payload, expected):
    event = LogEvent(seq=1, t=0.0, topic=topic, schema="", latched=False, payload=payload)

    assert is_fusion_output(event) is expected


@pytest.mark.unit
def test_late_overlap_merges_a_face_person_and_a_body_person(config):
    manager = _manager(config)
    face_person = _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE)[0].person_id
    body_person = _step(manager, 0.1, manager.on_detection, IdKind.BODY, BODY, roi=BODY_ROI)[0].person_id
    assert body_person != face_person

    _step(manager, 0.4, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI)

    assert list(manager.records) == [face_person]
    assert manager.person_of(BODY) == manager.person_of(FACE) == face_person
    assert manager.bus.last_value(f"/humans/persons/{body_person}/body_id").message.data == ""
    assert manager.bus.last_value(f"/humans/persons/{face_person}/body_id").message.data == BODY
    assert manager.bus.tracked(IdKind.PERSON) == (face_person,)


@pytest.mark.unit
def test_known_body_person_absorbs_an_anonymous_face_person(config):
    manager = _manager(config)
    face_person = _step(manager, 0.0, manager.on_detection, IdKind.FACE, FACE)[0].person_id
    body_person = _step(manager, 0.1, manager.on_detection, IdKind.BODY, BODY, roi=BODY_ROI)[0]
    body_person.name = "Bob"

    _step(manager, 0.2, manager.on_detection, IdKind.FACE, FACE, roi=FACE_ROI)

    assert list(manager.records) == [body_person.person_id]
    assert body_person.face_id == FACE and body_person.body_id == BODY
    assert manager.bus.last_value(f"/humans/persons/{face_person}/face_id").message.data == ""


@pytest.mark.integration
def test_per_id_state_is_dropped_once_ids_leave(config):
    scenario = parse_scenario({
        "name": "leaving",
        "duration": 2.0,
        "actors": [
            {"name": "A", "height": 1.7, "timeline": [
                {"start": 0.0, "end": 1.0, "position": [2.0, 0.3], "voice": True}]},
            {"name": "B", "height": 1.8, "timeline": [
                {"start": 0.5, "end": 1.5, "position": [2.5, -0.6], "facing": "A"}]},
        ],
    })

    manager = simulate(scenario, config).manager

    assert manager.records and not any(record.tracked for record in manager.records.values())
    for store in (manager._first_seen, manager._face_roi, manager._descriptors, manager._au45,
                  manager._face_demographics, manager._body_roi, manager._attitudes):
        assert store == {}
