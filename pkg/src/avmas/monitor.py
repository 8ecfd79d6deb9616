"""Run a specimen inside one virtual environment and record what it does.

Execution is bounded by a virtual monitoring window. Every leaf instruction
costs 1 ms of virtual time except ``sleep``, which costs its duration. Events
are stamped with the clock at the moment the instruction starts, relative to
the start of monitoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Any

from avmas.canonical import canonical_bytes, number
from avmas.signature import digest_bytes
from avmas.specimen import (
    DeleteFile,
    ExitProc,
    RegDelete,
    RegSet,
    Repeat,
    Replicate,
    Sleep,
    Spawn,
    SpecimenProgram,
    WriteFile,
    render_offspring,
    validate,
)
from avmas.virtual_env import (
    EnvError,
    EnvProfile,
    NotFoundError,
    ProcessStateError,
    ValidationError,
    VirtualEnvironment,
    canonicalize_path,
    create_env,
    expand_path,
    expand_template,
    is_executable_path,
)

REPORT_VERSION = 1
REPORT_SUFFIX = ".avmas.json"
DEFAULT_WINDOW_SECONDS = 300
DEFAULT_MAX_INSTRUCTIONS = 1_000_000


class EventKind(str, Enum):
    FILE_CREATE = "FileCreate"
    FILE_MODIFY = "FileModify"
    FILE_DELETE = "FileDelete"
    REG_SET = "RegSet"
    REG_DELETE = "RegDelete"
    PROC_SPAWN = "ProcSpawn"
    PROC_EXIT = "ProcExit"
    FAILED_ACTION = "FailedAction"
    TRUNCATED = "Truncated"

    def __str__(self) -> str:
        return self.value


# details keys per kind; (required, optional)
DETAIL_FIELDS: dict[EventKind, tuple[frozenset[str], frozenset[str]]] = {
    EventKind.FILE_CREATE: (frozenset({"path"}), frozenset({"size", "md5"})),
    EventKind.FILE_MODIFY: (frozenset({"path"}), frozenset({"size", "md5"})),
    EventKind.FILE_DELETE: (frozenset({"path"}), frozenset()),
    EventKind.REG_SET: (frozenset({"key", "value"}), frozenset()),
    EventKind.REG_DELETE: (frozenset({"key", "existed"}), frozenset()),
    EventKind.PROC_SPAWN: (frozenset({"pid", "name", "parent_pid"}), frozenset()),
    EventKind.PROC_EXIT: (frozenset({"pid"}), frozenset()),
    EventKind.FAILED_ACTION: (frozenset({"action", "target", "reason"}), frozenset()),
    EventKind.TRUNCATED: (frozenset({"reason"}), frozenset({"message"})),
}


class ContractViolation(Exception):
    """The caller broke a precondition (e.g. passed an unvalidated specimen)."""


class ReportError(ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class MalformedReportError(ReportError):
    pass


class UnknownVersionError(ReportError):
    pass


class SchemaError(ReportError):
    pass


@dataclass(frozen=True)
class MonitorConfig:
    window_seconds: float | int = DEFAULT_WINDOW_SECONDS
    max_instructions: int = DEFAULT_MAX_INSTRUCTIONS

    def __post_init__(self) -> None:
        w = self.window_seconds
        if isinstance(w, bool) or not isinstance(w, (int, float)) or not 0 < w < float("inf"):
            raise ValidationError("window_seconds", f"must be a positive number, got {w!r}")
        if (Decimal(str(w)) * 1000) % 1:
            raise ValidationError("window_seconds", f"{w} is finer than the 1 ms clock granularity")
        object.__setattr__(self, "window_seconds", number(w))
        m = self.max_instructions
        if isinstance(m, bool) or not isinstance(m, int) or m < 1:
            raise ValidationError("max_instructions", f"must be a positive integer, got {m!r}")

    @property
    def window_ms(self) -> int:
        return int(Decimal(str(self.window_seconds)) * 1000)

    def to_dict(self) -> dict[str, Any]:
        return {"window_seconds": self.window_seconds, "max_instructions": self.max_instructions}


@dataclass(frozen=True)
class BehaviorEvent:
    seq: int
    t_virtual_ms: int
    kind: EventKind
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "t_virtual_ms": self.t_virtual_ms, "kind": self.kind.value, "details": self.details}


@dataclass(frozen=True)
class OffspringRecord:
    canonical_path: str
    expanded_path: str
    size_bytes: int
    md5: str
    created_at_ms: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "canonical_path": self.canonical_path,
            "expanded_path": self.expanded_path,
            "size_bytes": self.size_bytes,
            "md5": self.md5,
            "created_at_ms": self.created_at_ms,
        }


@dataclass(frozen=True)
class MonitorReport:
    specimen_id: str
    env_profile: EnvProfile
    config: MonitorConfig
    events: tuple[BehaviorEvent, ...]
    offspring: tuple[OffspringRecord, ...]
    truncated: bool
    report_version: int = REPORT_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_version": self.report_version,
            "specimen_id": self.specimen_id,
            "env_profile": self.env_profile.to_dict(),
            "config": self.config.to_dict(),
            "events": [e.to_dict() for e in self.events],
            "offspring": [o.to_dict() for o in self.offspring],
            "truncated": self.truncated,
        }

    @property
    def env_id(self) -> str:
        return self.env_profile.env_id

    @property
    def report_id(self) -> str:
        """MD5 of the canonical serialization."""
        return digest_bytes(serialize_report(self)).hex


def serialize_report(report: MonitorReport) -> bytes:
    return canonical_bytes(report.to_dict())


# -- parsing -----------------------------------------------------------------


def _expect(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise SchemaError(field_name, message)


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _exact_keys(obj: Any, required: set[str] | frozenset[str], where: str, optional: frozenset[str] = frozenset()) -> None:
    _expect(isinstance(obj, dict), where, "expected an object")
    for key in sorted(required):
        _expect(key in obj, f"{where}.{key}" if where else key, "missing field")
    for key in sorted(obj):
        _expect(key in required or key in optional, f"{where}.{key}" if where else key, "unknown field")


def _is_md5(value: Any) -> bool:
    return isinstance(value, str) and len(value) == 32 and all(c in "0123456789abcdef" for c in value)


def _parse_details(kind: EventKind, details: Any, where: str) -> dict[str, Any]:
    required, optional = DETAIL_FIELDS[kind]
    _exact_keys(details, required, where, optional)
    for key, value in details.items():
        f = f"{where}.{key}"
        if key in ("pid", "size"):
            _expect(_is_int(value) and value >= 0, f, "expected a non-negative integer")
        elif key == "parent_pid":
            _expect(value is None or (_is_int(value) and value >= 0), f, "expected an integer or null")
        elif key == "existed":
            _expect(isinstance(value, bool), f, "expected a boolean")
        elif key == "md5":
            _expect(_is_md5(value), f, "expected 32 lowercase hex characters")
        else:
            _expect(isinstance(value, str), f, "expected a string")
    _expect(("size" in details) == ("md5" in details), where, "size and md5 appear together")
    return dict(details)


def parse_report(data: bytes | str) -> MonitorReport:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedReportError("report", f"not UTF-8: {exc}") from None
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedReportError("report", f"malformed JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedReportError("report", "top level must be a JSON object")
    if "report_version" not in obj:
        raise SchemaError("report_version", "missing field")
    version = obj["report_version"]
    if version != REPORT_VERSION or not _is_int(version):
        raise UnknownVersionError("report_version", f"unsupported report version {version!r}")

    _exact_keys(obj, {"report_version", "specimen_id", "env_profile", "config", "events", "offspring", "truncated"}, "")
    _expect(_is_md5(obj["specimen_id"]), "specimen_id", "expected 32 lowercase hex characters")
    try:
        profile = EnvProfile.from_dict(obj["env_profile"])
    except ValidationError as exc:
        raise SchemaError(f"env_profile.{exc.field}", str(exc)) from None
    _exact_keys(obj["config"], {"window_seconds", "max_instructions"}, "config")
    try:
        config = MonitorConfig(**obj["config"])
    except ValidationError as exc:
        raise SchemaError(f"config.{exc.field}", str(exc)) from None
    _expect(isinstance(obj["truncated"], bool), "truncated", "expected a boolean")

    _expect(isinstance(obj["events"], list), "events", "expected an array")
    events = []
    last_seq, last_t = -1, 0
    for i, raw in enumerate(obj["events"]):
        where = f"events[{i}]"
        _exact_keys(raw, {"seq", "t_virtual_ms", "kind", "details"}, where)
        seq, t = raw["seq"], raw["t_virtual_ms"]
        _expect(_is_int(seq) and seq > last_seq, f"{where}.seq", "must be a strictly increasing integer")
        _expect(_is_int(t) and last_t <= t <= config.window_ms, f"{where}.t_virtual_ms",
                "must be non-decreasing and inside the window")
        try:
            kind = EventKind(raw["kind"])
        except ValueError:
            raise SchemaError(f"{where}.kind", f"unknown event kind {raw['kind']!r}") from None
        events.append(BehaviorEvent(seq, t, kind, _parse_details(kind, raw["details"], f"{where}.details")))
        last_seq, last_t = seq, t

    _expect(isinstance(obj["offspring"], list), "offspring", "expected an array")
    offspring = []
    seen: set[str] = set()
    for i, raw in enumerate(obj["offspring"]):
        where = f"offspring[{i}]"
        _exact_keys(raw, {"canonical_path", "expanded_path", "size_bytes", "md5", "created_at_ms"}, where)
        for key in ("canonical_path", "expanded_path"):
            _expect(isinstance(raw[key], str) and raw[key].startswith(("/", "%")), f"{where}.{key}", "expected a path")
        _expect(raw["canonical_path"] not in seen, f"{where}.canonical_path", "duplicate offspring path")
        seen.add(raw["canonical_path"])
        _expect(_is_int(raw["size_bytes"]) and raw["size_bytes"] >= 0, f"{where}.size_bytes", "expected a non-negative integer")
        _expect(_is_md5(raw["md5"]), f"{where}.md5", "expected 32 lowercase hex characters")
        _expect(_is_int(raw["created_at_ms"]) and raw["created_at_ms"] >= 0, f"{where}.created_at_ms", "expected a non-negative integer")
        offspring.append(OffspringRecord(**raw))

    return MonitorReport(obj["specimen_id"], profile, config, tuple(events), tuple(offspring), obj["truncated"])


# -- execution ---------------------------------------------------------------


class _Stop(Exception):
    def __init__(self, reason: str, message: str | None = None) -> None:
        super().__init__(reason)
        self.reason = reason
        self.message = message


class _Run:
    def __init__(self, program: SpecimenProgram, env: VirtualEnvironment, config: MonitorConfig) -> None:
        self.program = program
        self.env = env
        self.profile = env.profile
        self.config = config
        self.start_ms = env.clock_ms
        self.events: list[BehaviorEvent] = []
        self.executed = 0
        self.children: list[int] = []
        self.root_pid = 0

    def now(self) -> int:
        return self.env.clock_ms - self.start_ms

    def emit(self, kind: EventKind, **details: Any) -> None:
        self.events.append(BehaviorEvent(len(self.events), self.now(), kind, details))

    def file_details(self, path: str, content: bytes) -> dict[str, Any]:
        if is_executable_path(path):
            return {"path": path, "size": len(content), "md5": digest_bytes(content).hex}
        return {"path": path}

    def write(self, path: str, content: bytes) -> None:
        created = self.env.fs_write(path, content)
        kind = EventKind.FILE_CREATE if created else EventKind.FILE_MODIFY
        self.emit(kind, **self.file_details(path, content))

    def resolve_child(self, ref: int | str) -> int | None:
        if ref == "last":
            for pid in reversed(self.children):
                if self.env.proc_get(pid).exited_at is None:
                    return pid
            return None
        if isinstance(ref, int) and 1 <= ref <= len(self.children):
            return self.children[ref - 1]
        return None

    def perform(self, ins) -> None:
        profile = self.profile
        if isinstance(ins, Replicate):
            path = expand_path(profile, ins.path)
            self.write(path, render_offspring(self.program, ins.mutation, self.env.rng))
        elif isinstance(ins, WriteFile):
            self.write(expand_path(profile, ins.path), ins.data)
        elif isinstance(ins, DeleteFile):
            path = expand_path(profile, ins.path)
            try:
                self.env.fs_delete(path)
            except NotFoundError:
                self.emit(EventKind.FAILED_ACTION, action="delete_file", target=path, reason="not found")
            else:
                self.emit(EventKind.FILE_DELETE, path=path)
        elif isinstance(ins, RegSet):
            key, value = expand_template(profile, ins.key), expand_template(profile, ins.value)
            self.env.reg_set(key, value)
            self.emit(EventKind.REG_SET, key=key, value=value)
        elif isinstance(ins, RegDelete):
            key = expand_template(profile, ins.key)
            existed = self.env.reg_delete(key)
            self.emit(EventKind.REG_DELETE, key=key, existed=existed)
        elif isinstance(ins, Spawn):
            pid = self.env.proc_spawn(ins.name, parent_pid=self.root_pid)
            self.children.append(pid)
            self.emit(EventKind.PROC_SPAWN, pid=pid, name=ins.name, parent_pid=self.root_pid)
        elif isinstance(ins, ExitProc):
            pid = self.resolve_child(ins.ref)
            if pid is None:
                self.emit(EventKind.FAILED_ACTION, action="exit_process", target=str(ins.ref), reason="no such process")
                return
            try:
                self.env.proc_exit(pid)
            except ProcessStateError:
                self.emit(EventKind.FAILED_ACTION, action="exit_process", target=str(ins.ref), reason="already exited")
            else:
                self.emit(EventKind.PROC_EXIT, pid=pid)
        elif isinstance(ins, Sleep):
            pass
        else:
            raise ContractViolation(f"not an executable instruction: {ins!r}")

    def step(self, ins) -> None:
        if self.executed >= self.config.max_instructions:
            raise _Stop("max_instructions")
        window = self.config.window_ms
        if self.now() >= window:
            raise _Stop("window")
        self.executed += 1
        try:
            self.perform(ins)
        except EnvError as exc:
            raise _Stop("aborted", str(exc)) from None
        cost = ins.ms if isinstance(ins, Sleep) else 1
        self.env.advance_ms(min(cost, window - self.now()))

    def block(self, items) -> None:
        for ins in items:
            if isinstance(ins, Repeat):
                for _ in range(ins.count):
                    self.block(ins.body)
            else:
                self.step(ins)

    def run(self) -> bool:
        self.root_pid = self.env.proc_spawn(self.program.name, parent_pid=1)
        self.emit(EventKind.PROC_SPAWN, pid=self.root_pid, name=self.program.name, parent_pid=1)
        try:
            self.block(self.program.instructions)
        except _Stop as stop:
            extra = {"message": stop.message} if stop.message else {}
            self.emit(EventKind.TRUNCATED, reason=stop.reason, **extra)
            return True
        self.env.proc_exit(self.root_pid)
        self.emit(EventKind.PROC_EXIT, pid=self.root_pid)
        return False

    def offspring(self) -> tuple[OffspringRecord, ...]:
        records = [
            OffspringRecord(
                canonical_path=canonicalize_path(self.profile, node.path),
                expanded_path=node.path,
                size_bytes=len(node.content),
                md5=digest_bytes(node.content).hex,
                created_at_ms=node.created_at - self.start_ms,
            )
            for node in self.env.files.values()
            if node.executable_class
        ]
        return tuple(sorted(records, key=lambda r: r.canonical_path))


def execute_and_monitor(
    program: SpecimenProgram,
    profile: EnvProfile,
    config: MonitorConfig | None = None,
    *,
    env: VirtualEnvironment | None = None,
) -> MonitorReport:
    """Execute ``program`` in a fresh environment built from ``profile``.

    ``env`` may be supplied to inspect the final state; it must be freshly
    created from the same profile.
    """
    config = config or MonitorConfig()
    errors = [d for d in validate(program) if d.severity == "error"]
    if errors:
        raise ContractViolation("specimen does not validate: " + "; ".join(str(d) for d in errors))
    if env is None:
        env = create_env(profile)
    elif env.profile != profile:
        raise ContractViolation("supplied environment was built from a different profile")
    run = _Run(program, env, config)
    truncated = run.run()
    return MonitorReport(
        specimen_id=program.specimen_id.hex,
        env_profile=profile,
        config=config,
        events=tuple(run.events),
        offspring=run.offspring(),
        truncated=truncated,
    )

