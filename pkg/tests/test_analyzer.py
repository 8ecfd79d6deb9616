import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avmas.analyzer import (
    Classification,
    MatchStatus,
    PreconditionError,
    VerdictFormatError,
    canonical_activity_set,
    classify,
    pair_offspring,
    parse_verdict,
    serialize_verdict,
)
from avmas.monitor import MonitorConfig, execute_and_monitor
from avmas.specimen import parse
from avmas.virtual_env import EnvProfile
from report_gen import AbstractReport, MD5S, oracle_classify, render, report_groups

PA = EnvProfile("A", "pc-a", "alice", "/WINDOWS/system32", 1)
PB = EnvProfile("B", "pc-b", "bob", "/WINDOWS/system32", 2)
PC = EnvProfile("C", "pc-c", "carol", "/WINDOWS/system32", 3)

TRADITIONAL = """specimen trad payload 0 4
PAYLOAD:ABCD
regset HKLM\\Run\\trad "%SYSROOT%/a.exe"
spawn helper
replicate %SYSROOT%/a.exe mutate none
replicate /home/%USER%/docs/a.exe mutate none
"""
POLY = "specimen poly payload 0 4\nPAYLOAD:ABCD\nreplicate %SYSROOT%/a.exe mutate randbytes 4\n"
INERT = "specimen inert payload 0 1\nPAYLOAD:A\nspawn x\nregset HKLM\\x \"1\"\n"


def run(src, *profiles, config=None):
    prog = parse(src)
    return [execute_and_monitor(prog, p, config) for p in profiles]


def test_traditional():
    verdict = classify(run(TRADITIONAL, PA, PB))
    assert verdict.classification is Classification.TRADITIONAL
    assert verdict.offspring_evidence == () and verdict.activity_evidence == ()


def test_polymorphic_digest_difference():
    verdict = classify(run(POLY, PA, PB))
    assert verdict.classification is Classification.POLYMORPHIC
    [match] = verdict.offspring_evidence
    assert match.canonical_path == "%SYSROOT%/a.exe"
    assert len(match.digests) == 2
    # the differing md5 also shows in the FileCreate activity
    assert {d.kind for d in verdict.activity_evidence} == {"FileCreate"}


def test_non_replicating():
    verdict = classify(run(INERT, PA, PB))
    assert verdict.classification is Classification.NON_REPLICATING


def test_symmetry_example():
    ra, rb = run(POLY, PA, PB)
    assert classify([ra, rb]).classification == classify([rb, ra]).classification
    ta, tb = run(TRADITIONAL, PA, PB)
    assert classify([ta, tb]).classification == classify([tb, ta]).classification


def test_activity_sets_equal_across_profiles():
    ra, rb = run(TRADITIONAL, PA, PB)
    assert canonical_activity_set(ra) == canonical_activity_set(rb)


def test_activity_set_ignores_seq_and_time():
    ra, = run(TRADITIONAL, PA)
    shuffled = ra.__class__(ra.specimen_id, ra.env_profile, ra.config,
                            tuple(e.__class__(e.seq + 100, 0, e.kind, e.details) for e in reversed(ra.events)),
                            ra.offspring, ra.truncated)
    assert canonical_activity_set(shuffled) == canonical_activity_set(ra)


def test_user_dependent_path_canonical_descriptor():
    src = "specimen u payload 0 1\nPAYLOAD:A\nreplicate %SYSROOT%/u/%USER%/x.exe mutate none\n"
    ra, rb = run(src, PA, PB)
    assert ra.offspring[0].expanded_path == "/WINDOWS/system32/u/alice/x.exe"
    assert rb.offspring[0].expanded_path == "/WINDOWS/system32/u/bob/x.exe"
    for report in (ra, rb):
        details = [a.detail for a in canonical_activity_set(report) if a.kind == "FileCreate"]
        assert len(details) == 1 and '"path":"%SYSROOT%/u/%USER%/x.exe"' in details[0]
    assert classify([ra, rb]).classification is Classification.TRADITIONAL


def test_pids_become_spawn_ordinals():
    base = AbstractReport(events=[
        ("ProcSpawn", {"pid": ("local", 7), "name": "w", "parent_pid": ("init",)}),
        ("ProcExit", {"pid": ("local", 7)}),
    ])
    low, high = render(base, PA, pid_base=2), render(base, PB, pid_base=400)
    assert low.events[0].details["pid"] != high.events[0].details["pid"]
    assert canonical_activity_set(low) == canonical_activity_set(high)


def test_pair_offspring_matched():
    [match] = pair_offspring(run(TRADITIONAL.replace("replicate /home", "# replicate /home"), PA, PB))
    assert match.status is MatchStatus.MATCHED
    assert [e.env_id for e in match.entries] == ["A", "B"]
    assert len(match.entries) == 2


def test_pair_offspring_missing():
    ra = render(AbstractReport(offspring={"%SYSROOT%/a.exe": MD5S[0]}), PA)
    rb = render(AbstractReport(), PB)
    [match] = pair_offspring([ra, rb])
    assert match.status is MatchStatus.MISSING
    verdict = classify([ra, rb])
    assert verdict.classification is Classification.POLYMORPHIC
    assert verdict.offspring_evidence == (match,)


def test_pair_offspring_none():
    assert pair_offspring(run(INERT, PA, PB)) == []


def test_pair_offspring_sorted():
    ra = render(AbstractReport(offspring={"/z.exe": MD5S[0], "/a.exe": MD5S[1], "/m.dll": MD5S[2]}), PA)
    assert [m.canonical_path for m in pair_offspring([ra, ra])] == ["/a.exe", "/m.dll", "/z.exe"]


def test_precondition_errors():
    ra, = run(TRADITIONAL, PA)
    other, = run(POLY, PB)
    with pytest.raises(PreconditionError, match="not for the same specimen"):
        classify([ra, other])
    short, = run(TRADITIONAL, PB, config=MonitorConfig(window_seconds=240))
    with pytest.raises(PreconditionError, match="windows differ"):
        classify([ra, short])
    with pytest.raises(PreconditionError):
        classify([ra])


def test_equal_digest_mutation_is_a_false_negative():
    # a randbytes engine whose draw happens to reproduce the parent: known blind spot
    a = render(AbstractReport(offspring={"%SYSROOT%/a.exe": MD5S[0]}), PA)
    b = render(AbstractReport(offspring={"%SYSROOT%/a.exe": MD5S[0]}), PB)
    assert classify([a, b]).classification is Classification.TRADITIONAL


def test_three_reports_one_diverging():
    ra, rb = run(TRADITIONAL, PA, PB)
    odd = render(AbstractReport(offspring={"%SYSROOT%/a.exe": MD5S[0]}), PC,
                 specimen_id=ra.specimen_id)
    assert classify([ra, rb]).classification is Classification.TRADITIONAL
    assert classify([ra, rb, odd]).classification is Classification.POLYMORPHIC


def test_verdict_serialization():
    for reports in (run(TRADITIONAL, PA, PB), run(POLY, PA, PB), run(INERT, PA, PB)):
        verdict = classify(reports)
        raw = serialize_verdict(verdict)
        assert raw == serialize_verdict(verdict)
        assert parse_verdict(raw) == verdict
        assert serialize_verdict(parse_verdict(raw)) == raw
        assert list(verdict.report_ids) == [r.report_id for r in reports]
        if verdict.classification is Classification.TRADITIONAL:
            assert b'"evidence":{"activity":[],"offspring":[]}' in raw


def test_parse_verdict_rejects_garbage():
    with pytest.raises(VerdictFormatError):
        parse_verdict(b"{}")
    with pytest.raises(VerdictFormatError):
        parse_verdict(b"nope")


# -- properties ------------------------------------------------------------------


@given(report_groups())
@settings(max_examples=150, deadline=None)
def test_classify_matches_oracle(group):
    abstracts, reports = group
    verdict = classify(reports)
    assert verdict.classification.value == oracle_classify(abstracts)
    assert (verdict.classification is Classification.POLYMORPHIC) == (verdict.evidence_count > 0)


@given(report_groups(3, 4), st.data())
@settings(max_examples=60, deadline=None)
def test_permutation_invariance(group, data):
    _, reports = group
    expected = classify(reports)
    perm = data.draw(st.permutations(reports))
    got = classify(perm)
    assert got.classification == expected.classification
    assert got.evidence_count == expected.evidence_count


@given(report_groups(2, 2), st.data())
@settings(max_examples=60, deadline=None)
def test_adding_a_report_never_clears_polymorphism(group, data):
    abstracts, reports = group
    before = classify(reports).classification
    extra = data.draw(st.sampled_from(reports))
    after = classify(reports + [extra]).classification
    if before is Classification.POLYMORPHIC:
        assert after is Classification.POLYMORPHIC


def test_identical_profiles_never_polymorphic():
    for src in (TRADITIONAL, POLY, INERT):
        a, b = run(src, PA, PA)
        assert classify([a, b]).classification is not Classification.POLYMORPHIC


def test_all_pairs_of_three_profiles():
    reports = run(POLY, PA, PB, PC)
    for pair in itertools.combinations(reports, 2):
        assert classify(list(pair)).classification is Classification.POLYMORPHIC
