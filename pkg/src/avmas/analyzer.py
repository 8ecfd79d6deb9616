"""Compare monitor reports from several environments and classify the specimen.

A specimen is polymorphic when its reports disagree: an offspring path whose
digest differs between environments, an offspring present in some
environments only, or any difference in canonical activity. Agreeing reports
with at least one offspring mean a traditional specimen; agreeing reports
without offspring mean it never replicated.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple, Sequence

from avmas.canonical import canonical_bytes
from avmas.monitor import EventKind, MonitorReport
from avmas.virtual_env import canonicalize

VERDICT_SUFFIX = ".verdict.json"


class Classification(str, Enum):
    TRADITIONAL = "Traditional"
    POLYMORPHIC = "Polymorphic"
    NON_REPLICATING = "NonReplicating"

    def __str__(self) -> str:
        return self.value


class MatchStatus(str, Enum):
    MATCHED = "Matched"
    MISSING = "Missing"


class PreconditionError(ValueError):
    """Reports cannot be compared (different specimens, windows, or too few)."""


class VerdictFormatError(ValueError):
    pass


class Activity(NamedTuple):
    kind: str
    detail: str  # canonical JSON of the environment-neutral details


@dataclass(frozen=True)
class OffspringEntry:
    env_id: str
    md5: str
    size: int

    def to_dict(self) -> dict[str, Any]:
        return {"env_id": self.env_id, "md5": self.md5, "size": self.size}


@dataclass(frozen=True)
class OffspringMatch:
    canonical_path: str
    entries: tuple[OffspringEntry, ...]
    status: MatchStatus

    @property
    def digests(self) -> set[str]:
        return {e.md5 for e in self.entries}

    @property
    def diverges(self) -> bool:
        return self.status is MatchStatus.MISSING or len(self.digests) > 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "canonical_path": self.canonical_path,
            "entries": [e.to_dict() for e in self.entries],
            "status": self.status.value,
        }


@dataclass(frozen=True)
class ActivityDelta:
    """One canonical activity whose count is not the same in every report."""

    kind: str
    detail: dict[str, Any]
    counts: tuple[tuple[str, int], ...]  # (env_id, occurrences) per input report

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "detail": self.detail,
            "counts": [{"env_id": env_id, "count": n} for env_id, n in self.counts],
        }


@dataclass(frozen=True)
class Verdict:
    classification: Classification
    offspring_evidence: tuple[OffspringMatch, ...]
    activity_evidence: tuple[ActivityDelta, ...]
    report_ids: tuple[str, ...]

    @property
    def evidence_count(self) -> int:
        return len(self.offspring_evidence) + len(self.activity_evidence)

    def to_dict(self) -> dict[str, Any]:
        return {
            "classification": self.classification.value,
            "evidence": {
                "offspring": [m.to_dict() for m in self.offspring_evidence],
                "activity": [d.to_dict() for d in self.activity_evidence],
            },
            "report_ids": list(self.report_ids),
        }


# details whose string values may carry environment-specific text
_CANONICAL_KEYS = frozenset({"path", "key", "value"})


def canonical_activity_set(report: MonitorReport) -> Counter[Activity]:
    """Environment-neutral multiset of what the specimen did.

    Paths, registry keys and values are put in placeholder form, pids become
    spawn-order ordinals (init is 0), and timestamps and sequence numbers are
    dropped.
    """
    profile = report.env_profile
    ordinals: dict[int, int] = {1: 0}
    for event in sorted(report.events, key=lambda e: e.seq):
        if event.kind is EventKind.PROC_SPAWN:
            ordinals.setdefault(event.details["pid"], len(ordinals))

    def ordinal(pid: Any) -> Any:
        if pid is None:
            return None
        return ordinals.get(pid, f"unspawned:{pid}")

    activities: Counter[Activity] = Counter()
    for event in report.events:
        detail: dict[str, Any] = {}
        for key, value in event.details.items():
            if key in ("pid", "parent_pid"):
                detail[key] = ordinal(value)
            elif key in _CANONICAL_KEYS or (key == "target" and event.details.get("action") == "delete_file"):
                detail[key] = canonicalize(profile, value)
            else:
                detail[key] = value
        text = json.dumps(detail, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        activities[Activity(EventKind(event.kind).value, text)] += 1
    return activities


def check_comparable(reports: Sequence[MonitorReport]) -> None:
    if len(reports) < 2:
        raise PreconditionError(f"need at least 2 reports, got {len(reports)}")
    first = reports[0]
    for other in reports[1:]:
        if other.specimen_id != first.specimen_id:
            raise PreconditionError("reports are not for the same specimen")
        if other.config.window_ms != first.config.window_ms:
            raise PreconditionError(
                f"monitoring windows differ ({first.config.window_seconds}s vs {other.config.window_seconds}s)"
            )


def pair_offspring(reports: Sequence[MonitorReport]) -> list[OffspringMatch]:
    check_comparable(reports)
    by_path: dict[str, list[tuple[int, OffspringEntry]]] = {}
    for index, report in enumerate(reports):
        for rec in report.offspring:
            entry = OffspringEntry(report.env_id, rec.md5, rec.size_bytes)
            by_path.setdefault(rec.canonical_path, []).append((index, entry))
    matches = []
    for path in sorted(by_path):
        present = {index for index, _ in by_path[path]}
        status = MatchStatus.MATCHED if len(present) == len(reports) else MatchStatus.MISSING
        matches.append(OffspringMatch(path, tuple(e for _, e in by_path[path]), status))
    return matches


def activity_deltas(reports: Sequence[MonitorReport]) -> list[ActivityDelta]:
    sets = [canonical_activity_set(r) for r in reports]
    union = sorted(set().union(*sets))
    deltas = []
    for activity in union:
        counts = [s[activity] for s in sets]
        if len(set(counts)) > 1:
            deltas.append(ActivityDelta(
                activity.kind,
                json.loads(activity.detail),
                tuple((r.env_id, n) for r, n in zip(reports, counts)),
            ))
    return deltas


def classify(reports: Sequence[MonitorReport]) -> Verdict:
    reports = list(reports)
    matches = pair_offspring(reports)
    offspring_evidence = tuple(m for m in matches if m.diverges)
    activity_evidence = tuple(activity_deltas(reports))
    if offspring_evidence or activity_evidence:
        label = Classification.POLYMORPHIC
    elif all(r.offspring for r in reports):
        label = Classification.TRADITIONAL
    else:
        label = Classification.NON_REPLICATING
    return Verdict(label, offspring_evidence, activity_evidence, tuple(r.report_id for r in reports))


def serialize_verdict(verdict: Verdict) -> bytes:
    return canonical_bytes(verdict.to_dict())


def parse_verdict(data: bytes | str) -> Verdict:
    try:
        obj = json.loads(data)
        evidence = obj["evidence"]
        offspring = tuple(
            OffspringMatch(
                m["canonical_path"],
                tuple(OffspringEntry(e["env_id"], e["md5"], e["size"]) for e in m["entries"]),
                MatchStatus(m["status"]),
            )
            for m in evidence["offspring"]
        )
        activity = tuple(
            ActivityDelta(d["kind"], d["detail"], tuple((c["env_id"], c["count"]) for c in d["counts"]))
            for d in evidence["activity"]
        )
        verdict = Verdict(Classification(obj["classification"]), offspring, activity, tuple(obj["report_ids"]))
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VerdictFormatError(f"not a verdict document: {exc}") from None
    if set(obj) != {"classification", "evidence", "report_ids"} or set(evidence) != {"offspring", "activity"}:
        raise VerdictFormatError("unexpected verdict fields")
    return verdict
