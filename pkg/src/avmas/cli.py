"""Command-line entry point.

Exit codes: 0 success, 1 bench disagreement, 2 input or usage error,
3 reports that cannot be compared.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from avmas import __version__
from avmas.analyzer import PreconditionError, VERDICT_SUFFIX, classify, serialize_verdict
from avmas.corpus import MANIFEST_NAME, ManifestError, generate_corpus
from avmas.harness import bench, default_profiles, format_table, run_pipeline
from avmas.monitor import (
    DEFAULT_MAX_INSTRUCTIONS,
    DEFAULT_WINDOW_SECONDS,
    REPORT_SUFFIX,
    ContractViolation,
    MonitorConfig,
    ReportError,
    execute_and_monitor,
    parse_report,
    serialize_report,
)
from avmas.specimen import SpecimenError, SpecimenProgram, parse
from avmas.virtual_env import EnvError, EnvProfile

EXIT_OK = 0
EXIT_DISAGREE = 1
EXIT_USAGE = 2
EXIT_INCOMPATIBLE = 3


@dataclass(frozen=True)
class CLIError(Exception):
    message: str
    exit_code: int = EXIT_USAGE

    def __str__(self) -> str:
        return self.message


def _results_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("AVMAS_RESULTS") or "results")


def _load_specimen(path: str) -> SpecimenProgram:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CLIError(f"specimen not found: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise CLIError(f"cannot read specimen {path}: {exc}") from None
    try:
        return parse(text)
    except SpecimenError as exc:
        raise CLIError(f"{path}: {exc}") from None


def _config(args: argparse.Namespace) -> MonitorConfig:
    try:
        return MonitorConfig(args.window, args.max_instructions)
    except EnvError as exc:
        raise CLIError(f"invalid monitor settings: {exc}") from None


def _seconds(text: str) -> float | int:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    return int(value) if value.is_integer() else value


def _seeds(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers: {text!r}") from None


# -- commands ----------------------------------------------------------------


def cmd_monitor(args: argparse.Namespace) -> int:
    program = _load_specimen(args.specimen)
    try:
        profile = EnvProfile.load(args.profile)
    except FileNotFoundError:
        raise CLIError(f"profile not found: {args.profile}") from None
    except EnvError as exc:
        raise CLIError(f"{args.profile}: {exc}") from None
    try:
        report = execute_and_monitor(program, profile, _config(args))
    except ContractViolation as exc:
        raise CLIError(str(exc)) from None
    out = Path(args.out or f"{Path(args.specimen).stem}-{profile.env_id}{REPORT_SUFFIX}")
    out.write_bytes(serialize_report(report))
    print(out)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    if len(args.reports) < 2:
        raise CLIError(f"need at least 2 reports, got {len(args.reports)}")
    reports = []
    for path in args.reports:
        try:
            reports.append(parse_report(Path(path).read_bytes()))
        except FileNotFoundError:
            raise CLIError(f"report not found: {path}") from None
        except ReportError as exc:
            raise CLIError(f"{path}: {exc}") from None
    try:
        verdict = classify(reports)
    except PreconditionError as exc:
        raise CLIError(str(exc), EXIT_INCOMPATIBLE) from None
    out = Path(args.out or f"verdict{VERDICT_SUFFIX}")
    out.write_bytes(serialize_verdict(verdict))
    print(verdict.classification.value.upper())
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if args.envs < 2:
        raise CLIError("--envs must be at least 2")
    seeds = args.seeds if args.seeds is not None else list(range(1, args.envs + 1))
    if len(seeds) != args.envs:
        raise CLIError(f"--seeds lists {len(seeds)} values for {args.envs} environments")
    program = _load_specimen(args.specimen)
    try:
        result = run_pipeline(program, default_profiles(seeds), _config(args), _results_dir(args.results_dir))
    except (EnvError, ContractViolation) as exc:
        raise CLIError(str(exc)) from None
    print(f"run_id: {result.record.run_id}")
    print(f"results: {result.directory}")
    print(result.verdict.classification.value.upper())
    return EXIT_OK


def cmd_corpus_generate(args: argparse.Namespace) -> int:
    manifest = generate_corpus(args.out_dir)
    counts = manifest.counts()
    print(f"wrote {len(manifest.entries)} specimens to {args.out_dir} "
          f"({counts['Traditional']} Traditional, {counts['Polymorphic']} Polymorphic)")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    corpus = Path(args.corpus_dir)
    if not (corpus / MANIFEST_NAME).is_file():
        raise CLIError(f"no {MANIFEST_NAME} in {corpus}")
    try:
        rows = bench(corpus, _results_dir(args.results_dir), _config(args))
    except ManifestError as exc:
        raise CLIError(str(exc)) from None
    except FileNotFoundError as exc:
        raise CLIError(f"specimen not found: {exc.filename}") from None
    except (SpecimenError, ContractViolation) as exc:
        raise CLIError(str(exc)) from None
    if not rows:
        raise CLIError("manifest lists no specimens")
    print(format_table(rows))
    return EXIT_OK if all(r.agrees for r in rows) else EXIT_DISAGREE


# -- parser ------------------------------------------------------------------


def _add_monitor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=_seconds, default=DEFAULT_WINDOW_SECONDS,
                   help="monitoring window in seconds (default %(default)s)")
    p.add_argument("--max-instructions", type=int, default=DEFAULT_MAX_INSTRUCTIONS,
                   help="instruction budget per run (default %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avmas", description="Classify specimens as traditional or polymorphic replicators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("monitor", help="run one specimen in one environment and write its report")
    p.add_argument("specimen")
    p.add_argument("profile", help="environment profile (JSON)")
    _add_monitor_flags(p)
    p.add_argument("--out", help="report path (default <specimen>-<env_id>.avmas.json)")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("analyze", help="compare reports and print the verdict")
    p.add_argument("reports", nargs="*")
    p.add_argument("--out", help="verdict path (default verdict.verdict.json)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="monitor in N environments, analyze, persist")
    p.add_argument("specimen")
    p.add_argument("--envs", type=int, default=2)
    p.add_argument("--seeds", type=_seeds, help="comma-separated PRNG seeds (default 1..N)")
    _add_monitor_flags(p)
    p.add_argument("--results-dir", help="results root (default $AVMAS_RESULTS or ./results)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = p.add_subparsers(dest="corpus_command", required=True)
    g = corpus_sub.add_parser("generate", help="write the built-in 20-specimen corpus")
    g.add_argument("out_dir")
    g.set_defaults(func=cmd_corpus_generate)

    p = sub.add_parser("bench", help="run the corpus and compare verdicts with its labels")
    p.add_argument("corpus_dir")
    _add_monitor_flags(p)
    p.add_argument("--results-dir", help="results root (default $AVMAS_RESULTS or ./results)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"avmas: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"avmas: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
