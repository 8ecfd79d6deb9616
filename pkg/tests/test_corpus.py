import json

import pytest

from avmas.analyzer import Classification, classify
from avmas.corpus import MANIFEST_NAME, ManifestError, generate_corpus, load_manifest, templates
from avmas.harness import default_profiles
from avmas.monitor import execute_and_monitor
from avmas.specimen import Replicate, Repeat, parse, validate


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_generation_is_byte_identical(tmp_path):
    generate_corpus(tmp_path / "a")
    generate_corpus(tmp_path / "b")
    first, second = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert first == second
    assert len(first) == 21 and MANIFEST_NAME in first


def test_manifest_counts(tmp_path):
    manifest = generate_corpus(tmp_path)
    assert len(manifest.entries) == 20
    assert manifest.counts() == {"Traditional": 18, "Polymorphic": 2}
    poly_rows = [i for i, e in enumerate(manifest.entries, start=1) if e.ground_truth == "Polymorphic"]
    assert poly_rows == [4, 7]
    assert load_manifest(tmp_path) == manifest


def test_manifest_is_canonical_json(tmp_path):
    generate_corpus(tmp_path)
    raw = (tmp_path / MANIFEST_NAME).read_bytes()
    obj = json.loads(raw)
    assert raw == (json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n").encode()
    assert set(obj) == {"entries"}
    assert all(set(e) == {"specimen_file", "analog_name", "ground_truth"} for e in obj["entries"])


def _mutations(items):
    for ins in items:
        if isinstance(ins, Repeat):
            yield from _mutations(ins.body)
        elif isinstance(ins, Replicate):
            yield type(ins.mutation).__name__


@pytest.mark.parametrize("entry, text", templates(), ids=[e.specimen_file for e, _ in templates()])
def test_specimens_validate_and_match_their_label(entry, text):
    prog = parse(text)
    assert validate(prog) == []
    kinds = set(_mutations(prog.instructions))
    if entry.ground_truth == "Traditional":
        assert kinds == {"NoMutation"}
    else:
        assert kinds and "NoMutation" not in kinds


def test_polymorphic_rows_use_one_strategy_each():
    by_row = {e.specimen_file: set(_mutations(parse(t).instructions)) for e, t in templates()}
    assert by_row["04_fasong_analog.spec"] == {"RandBytes"}
    assert by_row["07_klez_analog.spec"] == {"XorKey"}


def test_label_soundness():
    profiles = default_profiles([1, 2])
    for entry, text in templates():
        prog = parse(text)
        verdict = classify([execute_and_monitor(prog, p) for p in profiles])
        assert verdict.classification == Classification(entry.ground_truth), entry.analog_name


def test_load_manifest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text('{"entries": [{"specimen_file": "x"}]}')
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)
    (tmp_path / MANIFEST_NAME).write_text(
        '{"entries": [{"specimen_file": "x", "analog_name": "x", "ground_truth": "Metamorphic"}]}')
    with pytest.raises(ManifestError, match="unknown label"):
        load_manifest(tmp_path)
