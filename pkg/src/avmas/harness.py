"""End-to-end pipeline: monitor a specimen in several environments, classify,
and persist everything under a content-addressed results directory."""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from avmas.analyzer import VERDICT_SUFFIX, Verdict, classify, serialize_verdict
from avmas.canonical import canonical_bytes
from avmas.corpus import CorpusManifest, load_manifest
from avmas.monitor import REPORT_SUFFIX, MonitorConfig, MonitorReport, execute_and_monitor, serialize_report
from avmas.signature import digest_bytes
from avmas.specimen import SpecimenProgram, parse
from avmas.virtual_env import EnvProfile

DEFAULT_SYSROOT = "/WINDOWS/system32"
RECORD_NAME = "record.json"


def default_profiles(seeds: Sequence[int]) -> list[EnvProfile]:
    """One templated profile per seed: pc1, pc2, ... with distinct identities."""
    return [
        EnvProfile(f"pc{i}", f"vbmt-host{i}", f"tester{i}", DEFAULT_SYSROOT, seed)
        for i, seed in enumerate(seeds, start=1)
    ]


def run_id_for(specimen_id: str, profiles: Sequence[EnvProfile], config: MonitorConfig) -> str:
    content = {
        "specimen_id": specimen_id,
        "profiles": [p.to_dict() for p in sorted(profiles, key=lambda p: p.env_id)],
        "config": config.to_dict(),
    }
    return digest_bytes(canonical_bytes(content)).hex


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    report_paths: tuple[str, ...]
    verdict_path: str
    created_at: str  # wall clock, informational only

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "reports": list(self.report_paths),
            "verdict": self.verdict_path,
            "created_at": self.created_at,
        }


@dataclass(frozen=True)
class RunResult:
    record: RunRecord
    reports: tuple[MonitorReport, ...]
    verdict: Verdict
    directory: Path


def run_pipeline(
    program: SpecimenProgram,
    profiles: Sequence[EnvProfile],
    config: MonitorConfig,
    results_dir: str | Path,
) -> RunResult:
    if len(profiles) < 2:
        raise ValueError("need at least 2 environments")
    if len({p.env_id for p in profiles}) != len(profiles):
        raise ValueError("environment ids must be distinct")
    reports = tuple(execute_and_monitor(program, p, config) for p in profiles)
    verdict = classify(reports)

    run_id = run_id_for(program.specimen_id.hex, profiles, config)
    directory = Path(results_dir) / run_id
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for report in reports:
        name = f"report-{report.env_id}{REPORT_SUFFIX}"
        (directory / name).write_bytes(serialize_report(report))
        names.append(name)
    verdict_name = f"verdict{VERDICT_SUFFIX}"
    (directory / verdict_name).write_bytes(serialize_verdict(verdict))
    created = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    record = RunRecord(run_id, tuple(names), verdict_name, created)
    (directory / RECORD_NAME).write_bytes(canonical_bytes(record.to_dict()))
    return RunResult(record, reports, verdict, directory)


@dataclass(frozen=True)
class BenchRow:
    analog_name: str
    ground_truth: str
    verdict: str
    run_id: str

    @property
    def agrees(self) -> bool:
        return self.ground_truth == self.verdict


def bench(corpus_dir: str | Path, results_dir: str | Path, config: MonitorConfig | None = None) -> list[BenchRow]:
    """Run every manifest entry through the two-environment pipeline."""
    corpus = Path(corpus_dir)
    manifest: CorpusManifest = load_manifest(corpus)
    config = config or MonitorConfig()
    profiles = default_profiles([1, 2])
    rows = []
    for entry in manifest.entries:
        program = parse((corpus / entry.specimen_file).read_text(encoding="utf-8"))
        result = run_pipeline(program, profiles, config, results_dir)
        rows.append(BenchRow(entry.analog_name, entry.ground_truth,
                             result.verdict.classification.value, result.record.run_id))
    return rows


def format_table(rows: Sequence[BenchRow]) -> str:
    header = ("#", "analog", "ground truth", "avmas", "match")
    body = [(str(i), r.analog_name, r.ground_truth, r.verdict, "yes" if r.agrees else "NO")
            for i, r in enumerate(rows, start=1)]
    widths = [max(len(line[c]) for line in [header, *body]) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in [header, *body]]
    agreed = sum(r.agrees for r in rows)
    lines.append(f"agreement: {agreed}/{len(rows)}")
    return "\n".join(lines)
