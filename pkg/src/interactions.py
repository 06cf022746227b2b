"""Gaze and group detection over person frames."""
import math
from typing import Collection, Dict, FrozenSet, List, Mapping, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform
import structlog

from .hri_model import GazeSenderReceiver, GazesStamped, Group, GroupsStamped, IdKind, IdRegistry
from .hri_tf import Transform

logger = structlog.get_logger()


def gaze_angle(gaze: Transform, target: Sequence[float]) -> float:
    """Angle (radians) between the gaze z axis and the ray to ``target``."""
    ray = np.asarray(target, dtype=float) - np.asarray(gaze.translation)
    distance = float(np.linalg.norm(ray))
    if distance == 0.0:
        return math.pi
    cosine = float(np.dot(gaze.axis(2), ray / distance))
    return math.acos(max(-1.0, min(1.0, cosine)))


def detect_gaze(gazes: Mapping[str, Transform], faces: Mapping[str, Sequence[float]],
                cone_deg: float, timestamp: float,
                eyes_closed: Collection[str] = ()) -> GazesStamped:
    """Every (sender, receiver) pair whose receiver face lies inside the sender's gaze cone.

    ``gazes`` maps person ids to gaze poses, ``faces`` maps person ids to face
    origins, both in one common frame.
    """
    cone = math.radians(cone_deg)
    pairs = []
    for sender in sorted(gazes):
        if sender in eyes_closed:
            continue
        for receiver in sorted(faces):
            if receiver == sender:
                continue
            if gaze_angle(gazes[sender], faces[receiver]) < cone:
                pairs.append(GazeSenderReceiver(sender=sender, receiver=receiver))
    return GazesStamped(timestamp=timestamp, gazes=pairs)


def connected_groups(positions: Mapping[str, Sequence[float]], radius: float) -> List[List[str]]:
    names = sorted(positions)
    if len(names) < 2:
        return []
    points = np.array([positions[name] for name in names], dtype=float)
    adjacency = squareform(pdist(points)) < radius
    np.fill_diagonal(adjacency, False)
    count, labels = connected_components(csr_matrix(adjacency), directed=False)
    groups = []
    for label in range(count):
        members = [names[i] for i in np.flatnonzero(labels == label)]
        if len(members) >= 2:
            groups.append(members)
    return sorted(groups)


class GroupIdAllocator:
    """Keeps one group id per distinct member set."""

    def __init__(self, rng: np.random.Generator, registry: Optional[IdRegistry] = None):
        self._rng = rng
        self._registry = registry if registry is not None else IdRegistry()
        self._ids: Dict[FrozenSet[str], str] = {}

    def id_for(self, members: Collection[str]) -> str:
        key = frozenset(members)
        if key not in self._ids:
            # group ids share the person id format
            self._ids[key] = self._registry.draw(IdKind.PERSON, self._rng).value
            logger.debug("group_id_assigned", group_id=self._ids[key], members=sorted(key))
        return self._ids[key]


def detect_groups(positions: Mapping[str, Sequence[float]], radius: float, timestamp: float,
                  allocator: GroupIdAllocator) -> GroupsStamped:
    groups = [
        Group(group_id=allocator.id_for(members), members=members)
        for members in connected_groups(positions, radius)
    ]
    return GroupsStamped(timestamp=timestamp, groups=groups)
