import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgk.errors import ParseError, ValidationError
from lgk.knowledge_base import (
    KnowledgeEntry,
    NounLexicon,
    RawRecord,
    build_kb,
    canonicalize,
    check_alignment,
    extract_nouns,
    load_kb,
    load_records,
    save_kb,
    save_records,
)

LEX = NounLexicon({"table", "chair", "cat", "lamp"}, {"desk": "table"})


def test_canonicalize_pair():
    assert canonicalize(RawRecord("attribute_pair", ("wooden", "table")), LEX) == "wooden table"


def test_canonicalize_triple_identity():
    assert canonicalize(RawRecord("svo_triple", ("cat", "sits", "chair")), LEX) == "cat sits chair"


def test_canonicalize_synonym():
    assert canonicalize(RawRecord("attribute_pair", ("circular", "desk")), LEX) == "circular table"


def test_canonicalize_lowercases_multiword_parts():
    rec = RawRecord("svo_triple", ("Old Cat", "sits on", "Desk"))
    assert canonicalize(rec, LEX) == "old cat sits on table"


@pytest.mark.parametrize(
    "rec",
    [
        RawRecord("attribute_pair", ("wooden", "")),
        RawRecord("attribute_pair", ("wooden",)),
        RawRecord("svo_triple", ("a", "b")),
        RawRecord("attribute_pair", ("two  spaces", "table")),
        RawRecord("attribute_pair", (" lead", "table")),
        RawRecord("attribute_pair", ("tab\there", "table")),
        RawRecord("quad", ("a", "b")),
    ],
)
def test_invalid_records_rejected(rec):
    with pytest.raises(ValidationError):
        canonicalize(rec, LEX)


def test_extract_nouns_cases():
    assert extract_nouns("wooden table", NounLexicon({"table"})) == ["table"]
    assert extract_nouns("running quickly", NounLexicon({"table", "chair"})) == []
    assert extract_nouns("table near table", NounLexicon({"table"})) == ["table", "table"]


def test_lexicon_must_be_idempotent():
    with pytest.raises(ValidationError):
        NounLexicon({"table"}, {"desk": "bench", "bench": "table"})


def test_default_lexicon_loads():
    lex = NounLexicon.default()
    assert {"table", "fireplace", "window", "door"} <= lex.nouns
    assert lex.canonical("couch") == "sofa"


def test_build_kb_cardinality_and_flags():
    recs = [
        RawRecord("attribute_pair", ("wooden", "table")),
        RawRecord("attribute_pair", ("running", "quickly")),
        RawRecord("svo_triple", ("cat", "on", "chair")),
    ]
    kb = build_kb(recs, LEX)
    assert [e.id for e in kb] == [0, 1, 2]
    assert [e.retrievable for e in kb] == [True, False, True]
    assert kb[2].kb2_nouns == ("cat", "chair")
    check_alignment(kb)


def test_build_kb_empty_and_bad_index():
    with pytest.raises(ValidationError, match="no records"):
        build_kb([], LEX)
    with pytest.raises(ValidationError, match="record 1"):
        build_kb([RawRecord("attribute_pair", ("a", "table")), RawRecord("attribute_pair", ("", "x"))], LEX)


GOLDEN_RECORDS = [
    ("attribute_pair", ["wooden", "table"]),
    ("attribute_pair", ["circular", "desk"]),
    ("svo_triple", ["cat", "sits", "chair"]),
    ("attribute_pair", ["running", "quickly"]),
    ("svo_triple", ["lamp", "near", "table"]),
    ("attribute_pair", ["red", "chair"]),
    ("svo_triple", ["table", "near", "table"]),
    ("attribute_pair", ["very", "bright"]),
    ("attribute_pair", ["Tall", "Lamp"]),
    ("svo_triple", ["cat", "under", "desk"]),
    ("attribute_pair", ["old", "cat"]),
    ("svo_triple", ["chair", "beside", "lamp"]),
    ("attribute_pair", ["small", "desk"]),
    ("svo_triple", ["dog", "chases", "ball"]),
    ("attribute_pair", ["glass", "table"]),
    ("svo_triple", ["lamp", "on", "desk"]),
    ("attribute_pair", ["soft", "light"]),
    ("svo_triple", ["cat", "likes", "cat"]),
    ("attribute_pair", ["broken", "chair"]),
    ("svo_triple", ["man", "reads", "book"]),
]

GOLDEN_KB = """\
{"id": 0, "kb1_text": "wooden table", "kb2_nouns": ["table"], "retrievable": true}
{"id": 1, "kb1_text": "circular table", "kb2_nouns": ["table"], "retrievable": true}
{"id": 2, "kb1_text": "cat sits chair", "kb2_nouns": ["cat", "chair"], "retrievable": true}
{"id": 3, "kb1_text": "running quickly", "kb2_nouns": [], "retrievable": false}
{"id": 4, "kb1_text": "lamp near table", "kb2_nouns": ["lamp", "table"], "retrievable": true}
{"id": 5, "kb1_text": "red chair", "kb2_nouns": ["chair"], "retrievable": true}
{"id": 6, "kb1_text": "table near table", "kb2_nouns": ["table", "table"], "retrievable": true}
{"id": 7, "kb1_text": "very bright", "kb2_nouns": [], "retrievable": false}
{"id": 8, "kb1_text": "tall lamp", "kb2_nouns": ["lamp"], "retrievable": true}
{"id": 9, "kb1_text": "cat under table", "kb2_nouns": ["cat", "table"], "retrievable": true}
{"id": 10, "kb1_text": "old cat", "kb2_nouns": ["cat"], "retrievable": true}
{"id": 11, "kb1_text": "chair beside lamp", "kb2_nouns": ["chair", "lamp"], "retrievable": true}
{"id": 12, "kb1_text": "small table", "kb2_nouns": ["table"], "retrievable": true}
{"id": 13, "kb1_text": "dog chases ball", "kb2_nouns": [], "retrievable": false}
{"id": 14, "kb1_text": "glass table", "kb2_nouns": ["table"], "retrievable": true}
{"id": 15, "kb1_text": "lamp on table", "kb2_nouns": ["lamp", "table"], "retrievable": true}
{"id": 16, "kb1_text": "soft light", "kb2_nouns": [], "retrievable": false}
{"id": 17, "kb1_text": "cat likes cat", "kb2_nouns": ["cat", "cat"], "retrievable": true}
{"id": 18, "kb1_text": "broken chair", "kb2_nouns": ["chair"], "retrievable": true}
{"id": 19, "kb1_text": "man reads book", "kb2_nouns": [], "retrievable": false}
"""


def test_golden_kb_bytes(tmp_path):
    kb = build_kb([RawRecord(k, tuple(p)) for k, p in GOLDEN_RECORDS], LEX)
    path = tmp_path / "kb.jsonl"
    save_kb(kb, path)
    assert path.read_bytes() == GOLDEN_KB.encode()
    assert load_kb(path) == kb


def test_records_file_round_trip(tmp_path):
    recs = [RawRecord(k, tuple(p)) for k, p in GOLDEN_RECORDS]
    save_records(recs, tmp_path / "r.jsonl")
    assert load_records(tmp_path / "r.jsonl") == recs


def test_empty_store_round_trip(tmp_path):
    save_kb([], tmp_path / "kb.jsonl")
    assert (tmp_path / "kb.jsonl").read_bytes() == b""
    assert load_kb(tmp_path / "kb.jsonl") == []


@pytest.mark.parametrize(
    "line, fragment",
    [
        ('{"id": 1, "kb1_text": "x", "kb2_nouns": [], "retrievable": false}', "expected 0"),
        ('{"id": 0, "kb1_text": "x", "kb2_nouns": []}', "retrievable"),
        ('{"id": 0, "kb1_text": "x", "kb2_nouns": ["x"], "retrievable": false}', "disagrees"),
        ("{not json", "invalid JSON"),
    ],
)
def test_load_errors_name_line(tmp_path, line, fragment):
    good = '{"id": 0, "kb1_text": "wooden table", "kb2_nouns": ["table"], "retrievable": true}'
    path = tmp_path / "kb.jsonl"
    if "expected 0" in fragment:
        path.write_text(line + "\n")
        lineno = 1
    else:
        path.write_text(good + "\n" + line.replace('"id": 0', '"id": 1') + "\n")
        lineno = 2
    with pytest.raises(ParseError) as exc:
        load_kb(path)
    assert exc.value.line == lineno
    assert str(exc.value).startswith(f"line {lineno}:")


words = st.text(alphabet="abcdefghijklmnopqrstuvwxyzé", min_size=1, max_size=8)


@st.composite
def stores(draw):
    n = draw(st.integers(0, 1000))
    out = []
    for i in range(n):
        nouns = tuple(draw(st.lists(words, max_size=3)))
        text = " ".join(draw(st.lists(words, min_size=1, max_size=4)))
        out.append(KnowledgeEntry(i, text, nouns, bool(nouns)))
    return out


@settings(max_examples=20, deadline=None)
@given(stores())
def test_save_load_round_trip(tmp_path_factory, kb):
    path = tmp_path_factory.mktemp("kb") / "kb.jsonl"
    save_kb(kb, path)
    assert load_kb(path) == kb
    for line, e in zip(path.read_text(encoding="utf-8").splitlines(), kb):
        assert list(json.loads(line)) == ["id", "kb1_text", "kb2_nouns", "retrievable"]


def test_build_is_deterministic(tmp_path):
    recs = [RawRecord(k, tuple(p)) for k, p in GOLDEN_RECORDS]
    save_kb(build_kb(recs, LEX), tmp_path / "a.jsonl")
    save_kb(build_kb(recs, LEX), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
