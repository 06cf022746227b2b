import math

import numpy as np
import pytest

from src.hri_model import IdRegistry, is_identifier
from src.hri_tf import FACE_TO_GAZE, Transform
from src.interactions import GroupIdAllocator, connected_groups, detect_gaze, detect_groups, gaze_angle

ANA, BEN, CLEO = "0000aaaa", "0000bbbb", "0000cccc"


def _gaze(position, forward):
    return Transform.from_axes(position, forward, (0.0, 0.0, 1.0)) @ FACE_TO_GAZE


@pytest.mark.unit
def test_gaze_angle_is_measured_from_the_optical_axis():
    gaze = _gaze((0.0, 0.0, 1.6), (1.0, 0.0, 0.0))

    assert gaze_angle(gaze, (2.0, 0.0, 1.6)) == pytest.approx(0.0, abs=1e-9)
    assert gaze_angle(gaze, (0.0, 2.0, 1.6)) == pytest.approx(math.pi / 2)
    assert gaze_angle(gaze, (0.0, 0.0, 1.6)) == math.pi


@pytest.mark.unit
def test_mutual_gaze_is_reported_both_ways():
    faces = {ANA: (0.0, 0.0, 1.6), BEN: (2.0, 0.0, 1.6), CLEO: (0.0, 2.0, 1.6)}
    gazes = {ANA: _gaze(faces[ANA], (1.0, 0.0, 0.0)), BEN: _gaze(faces[BEN], (-1.0, 0.0, 0.0))}

    result = detect_gaze(gazes, faces, 15.0, 1.0)

    assert [(g.sender, g.receiver) for g in result.gazes] == [(ANA, BEN), (BEN, ANA)]
    assert result.timestamp == 1.0


@pytest.mark.unit
def test_closed_eyes_send_no_gaze():
    faces = {ANA: (0.0, 0.0, 1.6), BEN: (2.0, 0.0, 1.6)}
    gazes = {ANA: _gaze(faces[ANA], (1.0, 0.0, 0.0)), BEN: _gaze(faces[BEN], (-1.0, 0.0, 0.0))}

    result = detect_gaze(gazes, faces, 15.0, 1.0, eyes_closed={BEN})

    assert [(g.sender, g.receiver) for g in result.gazes] == [(ANA, BEN)]


@pytest.mark.unit
def test_gaze_outside_the_cone_is_ignored():
    faces = {ANA: (0.0, 0.0, 1.6), BEN: (2.0, 0.7, 1.6)}
    gazes = {ANA: _gaze(faces[ANA], (1.0, 0.0, 0.0))}

    assert detect_gaze(gazes, faces, 15.0, 0.0).gazes == []
    assert len(detect_gaze(gazes, faces, 25.0, 0.0).gazes) == 1


@pytest.mark.unit
def test_groups_are_connected_components():
    positions = {"a": (0.0, 0.0), "b": (1.0, 0.0), "c": (2.0, 0.0), "d": (10.0, 0.0), "e": (10.5, 0.5), "f": (20.0, 0.0)}

    assert connected_groups(positions, 1.5) == [["a", "b", "c"], ["d", "e"]]
    assert connected_groups({"a": (0.0, 0.0)}, 1.5) == []


@pytest.mark.unit
def test_group_ids_are_stable_per_member_set():
    registry = IdRegistry()
    allocator = GroupIdAllocator(np.random.default_rng(0), registry)

    first = allocator.id_for([ANA, BEN])
    assert allocator.id_for([BEN, ANA]) == first
    assert allocator.id_for([ANA, BEN, CLEO]) != first
    assert is_identifier(first) and first in registry


@pytest.mark.unit
def test_detect_groups_builds_the_message():
    allocator = GroupIdAllocator(np.random.default_rng(1))
    positions = {ANA: (2.0, -0.9), BEN: (3.0, 0.0), CLEO: (8.0, 0.9)}

    result = detect_groups(positions, 1.5, 2.0, allocator)

    assert len(result.groups) == 1
    assert result.groups[0].members == [ANA, BEN]
    assert result.groups[0].group_id == allocator.id_for([ANA, BEN])
