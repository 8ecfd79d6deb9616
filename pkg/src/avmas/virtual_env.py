"""In-process virtual host: filesystem, registry, process table and clock.

Nothing here touches the real machine. Each environment is driven by an
``EnvProfile`` so two environments can differ in identity, paths and PRNG
seed while running the same specimen.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any

MASK64 = (1 << 64) - 1
EXECUTABLE_SUFFIXES = (".exe", ".scr", ".com", ".dll")
PLACEHOLDERS = ("%SYSROOT%", "%USER%", "%HOST%")

_PLACEHOLDER_RE = re.compile(r"%[A-Z][A-Z0-9_]*%")
_IDENT_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class EnvError(Exception):
    pass


class ValidationError(EnvError, ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class NotFoundError(EnvError, LookupError):
    pass


class ProcessStateError(EnvError):
    pass


class SplitMix64:
    """SplitMix64 generator; pinned so every implementation draws the same stream."""

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_byte(self) -> int:
        # top byte: the best-mixed bits of the output
        return self.next_u64() >> 56

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SplitMix64) and other.state == self.state

    def __repr__(self) -> str:
        return f"SplitMix64(state={self.state:#018x})"


def normalize_path(path: str) -> str:
    """Absolute ``/``-separated path with no empty, ``.`` or ``..`` segments."""
    if not isinstance(path, str) or not path.startswith("/"):
        raise ValidationError("path", f"not an absolute virtual path: {path!r}")
    parts = [p for p in path.split("/") if p not in ("", ".")]
    if ".." in parts:
        raise ValidationError("path", f"'..' segments are not allowed: {path!r}")
    return "/" + "/".join(parts)


def is_executable_path(path: str) -> bool:
    return path.lower().endswith(EXECUTABLE_SUFFIXES)


@dataclass(frozen=True)
class EnvProfile:
    env_id: str
    hostname: str
    username: str
    sysroot: str
    rng_seed: int
    start_time: int = 0

    def __post_init__(self) -> None:
        for name in ("env_id", "hostname", "username"):
            value = getattr(self, name)
            if not isinstance(value, str) or not _IDENT_RE.match(value):
                raise ValidationError(name, f"must match {_IDENT_RE.pattern}, got {value!r}")
        if self.hostname == self.username:
            raise ValidationError("username", "must differ from hostname")
        if not isinstance(self.sysroot, str) or "%" in self.sysroot:
            raise ValidationError("sysroot", f"invalid sysroot {self.sysroot!r}")
        try:
            normalized = normalize_path(self.sysroot)
        except ValidationError as exc:
            raise ValidationError("sysroot", str(exc)) from None
        if normalized != self.sysroot or normalized == "/":
            raise ValidationError("sysroot", f"must be a normalized path below '/', got {self.sysroot!r}")
        if isinstance(self.rng_seed, bool) or not isinstance(self.rng_seed, int) or not 0 <= self.rng_seed <= MASK64:
            raise ValidationError("rng_seed", f"must be an unsigned 64-bit integer, got {self.rng_seed!r}")
        if isinstance(self.start_time, bool) or not isinstance(self.start_time, int) or self.start_time < 0:
            raise ValidationError("start_time", f"must be a non-negative integer, got {self.start_time!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Any) -> "EnvProfile":
        if not isinstance(data, dict):
            raise ValidationError("profile", "expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(unknown[0], "unknown profile field")
        missing = sorted(known - {"start_time"} - set(data))
        if missing:
            raise ValidationError(missing[0], "missing profile field")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "EnvProfile":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError("profile", f"malformed JSON: {exc}") from None
        return cls.from_dict(data)

    def placeholder_values(self) -> dict[str, str]:
        return {"%SYSROOT%": self.sysroot, "%USER%": self.username, "%HOST%": self.hostname}


def unknown_placeholders(template: str) -> list[str]:
    return [m.group(0) for m in _PLACEHOLDER_RE.finditer(template) if m.group(0) not in PLACEHOLDERS]


def expand_template(profile: EnvProfile, template: str) -> str:
    """Substitute placeholders in arbitrary text (paths, registry keys and values)."""
    values = profile.placeholder_values()

    def _sub(match: re.Match[str]) -> str:
        name = match.group(0)
        if name not in values:
            raise ValidationError("template", f"unknown placeholder {name} in {template!r}")
        return values[name]

    return _PLACEHOLDER_RE.sub(_sub, template)


def expand_path(profile: EnvProfile, template: str) -> str:
    return normalize_path(expand_template(profile, template))


_PATH_CHARS = frozenset("/\\._-")


def _at_boundary(text: str, start: int, end: int, value: str, name: str) -> bool:
    if name == "%SYSROOT%" and start > 0:
        # the system root only ever starts a path, never continues one
        prev = text[start - 1]
        if prev.isalnum() or prev in _PATH_CHARS:
            return False
    left = start == 0 or not text[start - 1].isalnum() or not value[0].isalnum()
    right = end == len(text) or not text[end].isalnum() or not value[-1].isalnum()
    return left and right


def canonicalize(profile: EnvProfile, text: str) -> str:
    """Replace profile values with their placeholders, longest value first.

    A value is only replaced where it does not split an alphanumeric run, so
    user ``al`` leaves ``/calendar`` alone; the system root is only replaced
    where a path begins.
    """
    candidates = sorted(
        ((value, name) for name, value in profile.placeholder_values().items()),
        key=lambda item: (-len(item[0]), item[1]),
    )
    out: list[str] = []
    i = 0
    while i < len(text):
        for value, name in candidates:
            end = i + len(value)
            if text.startswith(value, i) and _at_boundary(text, i, end, value, name):
                out.append(name)
                i = end
                break
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def canonicalize_path(profile: EnvProfile, path: str) -> str:
    return canonicalize(profile, normalize_path(path))


@dataclass
class FileNode:
    path: str
    content: bytes
    created_at: int
    modified_at: int

    @property
    def executable_class(self) -> bool:
        return is_executable_path(self.path)


@dataclass
class ProcessEntry:
    pid: int
    name: str
    parent_pid: int | None
    spawned_at: int
    exited_at: int | None = None


@dataclass
class VirtualEnvironment:
    """One isolated virtual host. Single owner; never share across threads.

    Timestamps on files and processes are absolute virtual milliseconds.
    ``journal`` records every state mutation as ``(operation, target)``.
    """

    profile: EnvProfile
    files: dict[str, FileNode] = field(default_factory=dict)
    dirs: set[str] = field(default_factory=set)
    registry: dict[str, str] = field(default_factory=dict)
    processes: list[ProcessEntry] = field(default_factory=list)
    clock_ms: int = 0
    rng: SplitMix64 = field(default_factory=lambda: SplitMix64(0))
    journal: list[tuple[str, str]] = field(default_factory=list)

    @property
    def clock(self) -> float:
        return self.clock_ms / 1000

    # -- filesystem --------------------------------------------------------

    def fs_exists(self, path: str) -> bool:
        return normalize_path(path) in self.files

    def fs_write(self, path: str, content: bytes) -> bool:
        """Create or replace a file. Returns True when the file is new."""
        path = normalize_path(path)
        node = self.files.get(path)
        if node is None:
            self.files[path] = FileNode(path, bytes(content), self.clock_ms, self.clock_ms)
            self.journal.append(("fs_create", path))
            return True
        node.content = bytes(content)
        node.modified_at = self.clock_ms
        self.journal.append(("fs_modify", path))
        return False

    def fs_read(self, path: str) -> bytes:
        path = normalize_path(path)
        try:
            return self.files[path].content
        except KeyError:
            raise NotFoundError(f"no such file: {path}") from None

    def fs_delete(self, path: str) -> None:
        path = normalize_path(path)
        if path not in self.files:
            raise NotFoundError(f"no such file: {path}")
        del self.files[path]
        self.journal.append(("fs_delete", path))

    # -- registry ----------------------------------------------------------

    def reg_set(self, key: str, value: str) -> None:
        if not key:
            raise ValidationError("key", "registry key must be non-empty")
        self.registry[key] = value
        self.journal.append(("reg_set", key))

    def reg_delete(self, key: str) -> bool:
        """Delete a key; a missing key is a no-op. Returns whether it existed."""
        if not key:
            raise ValidationError("key", "registry key must be non-empty")
        existed = self.registry.pop(key, None) is not None
        self.journal.append(("reg_delete", key))
        return existed

    # -- processes ---------------------------------------------------------

    def proc_spawn(self, name: str, parent_pid: int | None = 1) -> int:
        pid = max(p.pid for p in self.processes) + 1 if self.processes else 1
        self.processes.append(ProcessEntry(pid, name, parent_pid, self.clock_ms))
        self.journal.append(("proc_spawn", str(pid)))
        return pid

    def proc_get(self, pid: int) -> ProcessEntry:
        for proc in self.processes:
            if proc.pid == pid:
                return proc
        raise ProcessStateError(f"no such process: {pid}")

    def proc_exit(self, pid: int) -> None:
        proc = self.proc_get(pid)
        if proc.exited_at is not None:
            raise ProcessStateError(f"process {pid} already exited")
        proc.exited_at = self.clock_ms
        self.journal.append(("proc_exit", str(pid)))

    # -- clock -------------------------------------------------------------

    def advance_ms(self, ms: int) -> None:
        if isinstance(ms, bool) or not isinstance(ms, int) or ms < 0:
            raise ValidationError("seconds", f"clock advance must be a non-negative integer ms, got {ms!r}")
        self.clock_ms += ms

    def advance_clock(self, seconds: float | int | str | Decimal) -> None:
        try:
            ms = Decimal(str(seconds)) * 1000
        except InvalidOperation:
            raise ValidationError("seconds", f"not a number: {seconds!r}") from None
        if ms < 0:
            raise ValidationError("seconds", f"clock cannot move backwards ({seconds})")
        if ms != ms.to_integral_value():
            raise ValidationError("seconds", f"{seconds} is finer than the 1 ms clock granularity")
        self.advance_ms(int(ms))


def create_env(profile: EnvProfile) -> VirtualEnvironment:
    if not isinstance(profile, EnvProfile):
        raise ValidationError("profile", f"expected EnvProfile, got {type(profile).__name__}")
    env = VirtualEnvironment(
        profile=profile,
        dirs={profile.sysroot},
        clock_ms=profile.start_time * 1000,
        rng=SplitMix64(profile.rng_seed),
    )
    env.processes.append(ProcessEntry(1, "init-analog", None, env.clock_ms))
    return env
