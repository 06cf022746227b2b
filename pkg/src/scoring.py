from collections import Counter, defaultdict
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import structlog

from .event_log import LogEvent, read_log
from .hri_bus import TF_TOPIC, parse_topic
from .hri_model import IdKind

logger = structlog.get_logger()

ID_LEAVES = ("face_id", "body_id", "voice_id")
UNRESOLVED = "?"


def _ratio(numerator: float, denominator: float) -> float:
    return 1.0 if denominator == 0 else numerator / denominator


class _FusionState:
    """Person-side bus state rebuilt from a log, one timestamp at a time."""

    def __init__(self):
        self.owner: Dict[str, str] = {}
        self.ids: Dict[str, Dict[str, str]] = defaultdict(dict)
        self.confidence: Dict[str, float] = {}
        self.gazes: List[Tuple[str, str]] = []
        self.groups: List[List[str]] = []

    def apply(self, event: LogEvent) -> None:
        if event.topic == TF_TOPIC:
            return
        topic = parse_topic(event.topic)
        if topic.namespace == "interactions":
            if topic.leaf == "gaze":
                self.gazes = [(g["sender"], g["receiver"]) for g in event.payload["gazes"]]
            else:
                self.groups = [list(g["members"]) for g in event.payload["groups"]]
            return
        if topic.kind != IdKind.PERSON or topic.entity_id is None:
            return
        if topic.leaf in ID_LEAVES:
            previous = self.ids[topic.entity_id].get(topic.leaf)
            if previous and self.owner.get(previous) == topic.entity_id:
                del self.owner[previous]
            value = event.payload["data"]
            self.ids[topic.entity_id][topic.leaf] = value
            if value:
                self.owner[value] = topic.entity_id
        elif topic.leaf == "location_confidence":
            self.confidence[topic.entity_id] = float(event.payload["data"])


def _by_timestamp(events: Iterable[LogEvent]) -> Iterable[Tuple[float, List[LogEvent]]]:
    group: List[LogEvent] = []
    for event in events:
        if group and event.t != group[0].t:
            yield group[0].t, group
            group = []
        group.append(event)
    if group:
        yield group[0].t, group


class FusionScorer:
    """Compares the fusion output recorded in a log against ground truth."""

    def __init__(self, thresholds: Optional[Dict[str, float]] = None):
        self.thresholds = thresholds or {
            "identity_continuity": 1.0,
            "association_accuracy": 1.0,
            "voice_accuracy": 1.0,
        }

    def score(self, truth, log_source) -> Dict[str, Any]:
        _, events = read_log(log_source)
        ticks = {tick.t: tick for tick in truth.ticks}
        state = _FusionState()
        history: Dict[str, List[Optional[str]]] = defaultdict(list)
        counts = Counter()
        per_actor = defaultdict(Counter)

        for t, group in _by_timestamp(events):
            for event in group:
                state.apply(event)
            tick = ticks.get(t)
            if tick is None:
                continue
            self._score_tick(tick, state, history, counts, per_actor)

        continuity_hits, continuity_total = 0, 0
        actors: Dict[str, Dict[str, Any]] = {}
        for actor, pids in sorted(history.items()):
            resolved = [pid for pid in pids if pid is not None]
            modal = Counter(resolved).most_common(1)[0][0] if resolved else None
            hits = sum(1 for pid in pids if pid is not None and pid == modal)
            continuity_hits += hits
            continuity_total += len(pids)
            actors[actor] = {
                "person_id": modal,
                "identity_continuity": _ratio(hits, len(pids)),
                "distinct_persons": len(set(resolved)),
                "association_accuracy": _ratio(per_actor[actor]["pair_hits"], per_actor[actor]["pairs"]),
                "voice_accuracy": _ratio(per_actor[actor]["voice_hits"], per_actor[actor]["voices"]),
            }

        precision = _ratio(counts["gaze_tp"], counts["gaze_tp"] + counts["gaze_fp"])
        recall = _ratio(counts["gaze_tp"], counts["gaze_tp"] + counts["gaze_fn"])
        metrics = {
            "identity_continuity": _ratio(continuity_hits, continuity_total),
            "coverage": _ratio(counts["covered"], counts["observed"]),
            "association_accuracy": _ratio(counts["pair_hits"], counts["pairs"]),
            "voice_accuracy": _ratio(counts["voice_hits"], counts["voices"]),
            "gaze_precision": precision,
            "gaze_recall": recall,
            "group_f1": _ratio(2 * counts["group_tp"], counts["group_predicted"] + counts["group_true"]),
            "confidence_state_accuracy": _ratio(counts["confidence_hits"], counts["confidence_checks"]),
            "eyes_closed_false_positives": counts["eyes_closed_fp"],
        }
        results = {
            "scenario": truth.scenario,
            "seed": truth.seed,
            "metrics": metrics,
            "per_actor": actors,
            "checks": {},
            "passed": True,
            "issues": [],
        }
        for name, threshold in sorted(self.thresholds.items()):
            value = metrics[name]
            passed = value >= threshold
            results["checks"][name] = {"passed": passed, "value": value, "threshold": threshold}
            if not passed:
                results["passed"] = False
                results["issues"].append({
                    "type": f"low_{name}", "severity": "warning", "value": value, "threshold": threshold,
                })
        logger.info("fusion_scored", scenario=truth.scenario, passed=results["passed"], **{
            key: value for key, value in metrics.items() if key != "eyes_closed_false_positives"
        })
        return results

    def _score_tick(self, tick, state: _FusionState, history, counts: Counter, per_actor) -> None:
        person_actor: Dict[str, str] = {}
        face_actor: Dict[str, str] = {}
        tracked_persons: Set[str] = set()
        for actor, record in sorted(tick.actors.items()):
            ids = [record[leaf] for leaf in ID_LEAVES if record.get(leaf)]
            if not ids:
                continue
            counts["observed"] += 1
            owners = {state.owner[i] for i in ids if i in state.owner}
            tracked_persons |= owners
            if owners:
                counts["covered"] += 1
                history[actor].append(owners.pop() if len(owners) == 1 else None)
                for pid in {state.owner[i] for i in ids if i in state.owner}:
                    person_actor.setdefault(pid, actor)
            face_owner = state.owner.get(record.get("face_id") or "")
            body_owner = state.owner.get(record.get("body_id") or "")
            voice_owner = state.owner.get(record.get("voice_id") or "")
            if face_owner is not None:
                face_actor[face_owner] = actor
            if face_owner is not None and body_owner is not None:
                hit = int(face_owner == body_owner)
                counts["pairs"] += 1
                counts["pair_hits"] += hit
                per_actor[actor]["pairs"] += 1
                per_actor[actor]["pair_hits"] += hit
            anchor = face_owner or body_owner
            if voice_owner is not None and anchor is not None:
                hit = int(voice_owner == anchor)
                counts["voices"] += 1
                counts["voice_hits"] += hit
                per_actor[actor]["voices"] += 1
                per_actor[actor]["voice_hits"] += hit

        predicted = {(face_actor.get(s, UNRESOLVED), face_actor.get(r, UNRESOLVED)) for s, r in state.gazes}
        expected = {tuple(pair) for pair in tick.gazes}
        counts["gaze_tp"] += len(predicted & expected)
        counts["gaze_fp"] += len(predicted - expected)
        counts["gaze_fn"] += len(expected - predicted)
        counts["eyes_closed_fp"] += sum(
            1 for sender, _ in predicted if sender in tick.actors and tick.actors[sender].get("blinking")
        )

        predicted_groups: Set[FrozenSet[str]] = {
            frozenset(person_actor.get(member, UNRESOLVED + member) for member in group) for group in state.groups
        }
        true_groups = {frozenset(group) for group in tick.groups}
        counts["group_tp"] += len(predicted_groups & true_groups)
        counts["group_predicted"] += len(predicted_groups)
        counts["group_true"] += len(true_groups)

        for pid, confidence in sorted(state.confidence.items()):
            counts["confidence_checks"] += 1
            counts["confidence_hits"] += int((confidence == 1.0) == (pid in tracked_persons))


def score(truth, log_source, thresholds: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
    return FusionScorer(thresholds).score(truth, log_source)
