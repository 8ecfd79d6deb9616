"""Hypothesis strategies for monitor reports, plus a brute-force verdict oracle.

Reports are drawn as *abstract* behaviour: placeholder templates instead of
paths and local process ids instead of pids. Each abstract report is
rendered into a concrete ``MonitorReport`` for one profile. The oracle only
looks at the abstract form, so it never relies on the analyzer's own
canonicalization.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from hypothesis import strategies as st

from avmas.monitor import BehaviorEvent, EventKind, MonitorConfig, MonitorReport, OffspringRecord
from avmas.virtual_env import EnvProfile

USERS = ["alice", "bob", "carol", "dave", "erin"]
HOSTS = ["pc-1", "pc-2", "pc-3", "pc-4", "pc-5"]
SYSROOTS = ["/WINDOWS/system32", "/winnt/sys"]
DIRS = ["drv", "temp", "svc", "%USER%", "%HOST%"]
FILES = ["a.exe", "b.dll", "c.scr", "note.txt", "%USER%.exe"]
MD5S = [hashlib.md5(bytes([i])).hexdigest() for i in range(4)]
SPECIMEN_ID = hashlib.md5(b"generated specimen").hexdigest()
INIT = ("init",)


@dataclass
class AbstractReport:
    events: list[tuple[str, dict]] = field(default_factory=list)
    offspring: dict[str, str] = field(default_factory=dict)  # canonical path -> md5

    def copy(self) -> "AbstractReport":
        return AbstractReport([(k, dict(d)) for k, d in self.events], dict(self.offspring))


def expand(profile: EnvProfile, template: str) -> str:
    return (
        template.replace("%SYSROOT%", profile.sysroot)
        .replace("%USER%", profile.username)
        .replace("%HOST%", profile.hostname)
    )


def size_of(md5: str) -> int:
    return int(md5[:2], 16)


paths = st.builds(
    lambda head, dirs, name: "/".join([head, *dirs, name]),
    st.sampled_from(["%SYSROOT%", "/home/%USER%", "/data"]),
    st.lists(st.sampled_from(DIRS), max_size=2),
    st.sampled_from(FILES),
)
keys = st.builds(lambda a, b: f"HKLM\\Software\\{a}\\{b}", st.sampled_from(["Run", "Policies"]),
                 st.sampled_from(["svc", "%USER%", "%HOST%"]))
values = st.one_of(st.sampled_from(["on", "1", "%HOST%"]), paths)


@st.composite
def profiles(draw, env_id: str = "E0") -> EnvProfile:
    return EnvProfile(env_id, draw(st.sampled_from(HOSTS)), draw(st.sampled_from(USERS)),
                      draw(st.sampled_from(SYSROOTS)), draw(st.integers(0, 2**64 - 1)))


@st.composite
def simple_events(draw) -> tuple[str, dict]:
    kind = draw(st.sampled_from(["FileCreate", "FileModify", "FileDelete", "RegSet", "RegDelete",
                                 "FailedAction", "Truncated"]))
    if kind in ("FileCreate", "FileModify"):
        detail = {"path": draw(paths)}
        if draw(st.booleans()):
            md5 = draw(st.sampled_from(MD5S))
            detail.update(md5=md5, size=size_of(md5))
        return kind, detail
    if kind == "FileDelete":
        return kind, {"path": draw(paths)}
    if kind == "RegSet":
        return kind, {"key": draw(keys), "value": draw(values)}
    if kind == "RegDelete":
        return kind, {"key": draw(keys), "existed": draw(st.booleans())}
    if kind == "FailedAction":
        return kind, {"action": "delete_file", "target": draw(paths), "reason": "not found"}
    return kind, {"reason": draw(st.sampled_from(["window", "max_instructions"]))}


@st.composite
def abstract_reports(draw, max_events: int = 8) -> AbstractReport:
    report = AbstractReport()
    spawned: list[int] = []
    for _ in range(draw(st.integers(0, max_events))):
        choice = draw(st.sampled_from(["simple", "simple", "spawn", "exit"]))
        if choice == "spawn":
            local = draw(st.integers(0, 10**9))
            while ("local", local) in {("local", s) for s in spawned}:
                local += 1
            parent = draw(st.sampled_from([INIT] + [("local", s) for s in spawned]))
            report.events.append(("ProcSpawn", {"pid": ("local", local), "name": draw(st.sampled_from(["w", "svc"])),
                                                "parent_pid": parent}))
            spawned.append(local)
        elif choice == "exit" and spawned:
            report.events.append(("ProcExit", {"pid": ("local", draw(st.sampled_from(spawned)))}))
        else:
            report.events.append(draw(simple_events()))
    for path in draw(st.lists(paths.filter(lambda p: p.endswith((".exe", ".dll", ".scr"))), max_size=3, unique=True)):
        report.offspring[path] = draw(st.sampled_from(MD5S))
    return report


@st.composite
def perturbed(draw, base: AbstractReport) -> AbstractReport:
    """A copy of ``base`` with zero or more adversarial edits."""
    rep = base.copy()
    for op in draw(st.lists(st.sampled_from(
            ["md5", "drop_offspring", "add_offspring", "add_event", "drop_event", "shuffle", "empty"]), max_size=2)):
        if op == "md5" and rep.offspring:
            path = draw(st.sampled_from(sorted(rep.offspring)))
            rep.offspring[path] = draw(st.sampled_from([m for m in MD5S if m != rep.offspring[path]]))
        elif op == "drop_offspring" and rep.offspring:
            del rep.offspring[draw(st.sampled_from(sorted(rep.offspring)))]
        elif op == "add_offspring":
            path = draw(paths.filter(lambda p: p.endswith(".exe")))
            rep.offspring.setdefault(path, draw(st.sampled_from(MD5S)))
        elif op == "add_event":
            rep.events.insert(draw(st.integers(0, len(rep.events))), draw(simple_events()))
        elif op == "drop_event":
            droppable = [i for i, (k, _) in enumerate(rep.events) if k != "ProcSpawn"]
            if droppable:
                del rep.events[draw(st.sampled_from(droppable))]
        elif op == "shuffle":
            rep.events = draw(st.permutations(rep.events))
        elif op == "empty":
            rep = AbstractReport()
    return rep


def render(abstract: AbstractReport, profile: EnvProfile, pid_base: int = 2,
           config: MonitorConfig | None = None, specimen_id: str = SPECIMEN_ID) -> MonitorReport:
    pid_of: dict[int, int] = {}
    for kind, detail in abstract.events:
        if kind == "ProcSpawn":
            pid_of[detail["pid"][1]] = pid_base + len(pid_of)

    def conv(value):
        if value == INIT:
            return 1
        if isinstance(value, tuple):
            return pid_of[value[1]]
        if isinstance(value, str):
            return expand(profile, value)
        return value

    events = tuple(
        BehaviorEvent(i, i, EventKind(kind), {k: (v if k in ("md5", "reason", "action") else conv(v))
                                              for k, v in detail.items()})
        for i, (kind, detail) in enumerate(abstract.events)
    )
    offspring = tuple(
        OffspringRecord(path, expand(profile, path), size_of(md5), md5, 0)
        for path, md5 in sorted(abstract.offspring.items())
    )
    truncated = any(kind == "Truncated" for kind, _ in abstract.events)
    return MonitorReport(specimen_id, profile, config or MonitorConfig(), events, offspring, truncated)


def oracle_descriptors(abstract: AbstractReport) -> list:
    ordinal = {}
    for kind, detail in abstract.events:
        if kind == "ProcSpawn":
            ordinal[detail["pid"][1]] = len(ordinal) + 1

    def conv(value):
        if value == INIT:
            return 0
        if isinstance(value, tuple):
            return ordinal[value[1]]
        return value

    return sorted(
        (kind, tuple(sorted((k, repr(conv(v))) for k, v in detail.items())))
        for kind, detail in abstract.events
    )


def oracle_classify(abstracts: list[AbstractReport]) -> str:
    """Polymorphic iff some canonical path's digest (absent counting as a value)
    differs between reports, or the canonical activity multisets differ."""
    paths_union = set().union(*(a.offspring for a in abstracts))
    for path in paths_union:
        if len({a.offspring.get(path) for a in abstracts}) > 1:
            return "Polymorphic"
    descriptors = [oracle_descriptors(a) for a in abstracts]
    if any(d != descriptors[0] for d in descriptors[1:]):
        return "Polymorphic"
    if all(a.offspring for a in abstracts):
        return "Traditional"
    return "NonReplicating"


@st.composite
def report_groups(draw, n_min: int = 2, n_max: int = 2, same_profile: bool | None = None):
    """``(abstracts, reports)`` for one base behaviour and ``n`` perturbed copies."""
    n = draw(st.integers(n_min, n_max))
    base = draw(abstract_reports())
    abstracts = [base] + [draw(perturbed(base)) for _ in range(n - 1)]
    if same_profile is None:
        same_profile = draw(st.booleans())
    shared = draw(profiles())
    reports = []
    for i, a in enumerate(abstracts):
        profile = shared if same_profile else draw(profiles(env_id=f"E{i}"))
        reports.append(render(a, profile, pid_base=draw(st.integers(2, 500))))
    return abstracts, reports
