"""KB1/KB2 knowledge stores built from attribute pairs and relation triples.

KB1 holds the canonical description of each record, KB2 the nouns found in
it. Both live in one list of :class:`KnowledgeEntry`; an entry's position is
its id, which keeps the two views aligned. Entries without nouns stay in the
store but are flagged non-retrievable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from lgk.errors import ParseError, ValidationError

KINDS = {"attribute_pair": 2, "svo_triple": 3}
KB_KEYS = ("id", "kb1_text", "kb2_nouns", "retrievable")


@dataclass(frozen=True)
class RawRecord:
    kind: str
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown record kind {self.kind!r}")
        if len(self.parts) != KINDS[self.kind]:
            raise ValidationError(f"{self.kind} needs {KINDS[self.kind]} parts, got {len(self.parts)}")
        for part in self.parts:
            if not isinstance(part, str) or not part:
                raise ValidationError(f"empty record part in {self.parts!r}")
            if part != part.strip() or "  " in part or any(c in part for c in "\t\n\r"):
                raise ValidationError(f"malformed whitespace in record part {part!r}")


@dataclass
class NounLexicon:
    nouns: set = field(default_factory=set)
    synonyms: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nouns = set(self.nouns)
        self.synonyms = dict(self.synonyms)
        for src, dst in self.synonyms.items():
            if self.synonyms.get(dst, dst) != dst:
                raise ValidationError(f"synonym map not idempotent: {src!r} -> {dst!r} -> {self.synonyms[dst]!r}")

    def canonical(self, token: str) -> str:
        return self.synonyms.get(token, token)

    @classmethod
    def from_file(cls, path) -> "NounLexicon":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"lexicon {path}: {exc}") from None
        if not isinstance(doc, dict) or "nouns" not in doc:
            raise ValidationError(f"lexicon {path}: expected an object with 'nouns'")
        return cls(set(doc["nouns"]), dict(doc.get("synonyms", {})))

    @classmethod
    def default(cls) -> "NounLexicon":
        text = resources.files("lgk").joinpath("data/lexicon.json").read_text(encoding="utf-8")
        doc = json.loads(text)
        return cls(set(doc["nouns"]), dict(doc.get("synonyms", {})))

    def to_dict(self) -> dict:
        return {"nouns": sorted(self.nouns), "synonyms": dict(sorted(self.synonyms.items()))}


@dataclass(frozen=True)
class KnowledgeEntry:
    id: int
    kb1_text: str
    kb2_nouns: tuple
    retrievable: bool

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "kb1_text": self.kb1_text, "kb2_nouns": list(self.kb2_nouns), "retrievable": self.retrievable},
            ensure_ascii=False,
        )


def canonicalize(record: RawRecord, lexicon: NounLexicon) -> str:
    """Template-join the record parts after synonym substitution.

    Pairs render as ``"<attr> <object>"``, triples as
    ``"<subject> <verb> <object>"``.
    """
    record.validate()
    tokens = []
    for part in record.parts:
        for tok in part.lower().split(" "):
            tokens.append(lexicon.canonical(tok))
    return " ".join(tokens)


def extract_nouns(text: str, lexicon: NounLexicon) -> list:
    return [tok for tok in text.split() if tok in lexicon.nouns]


def build_kb(records: Iterable[RawRecord], lexicon: NounLexicon) -> list:
    records = list(records)
    if not records:
        raise ValidationError("no records")
    entries = []
    for i, rec in enumerate(records):
        try:
            text = canonicalize(rec, lexicon)
        except ValidationError as exc:
            raise ValidationError(f"record {i}: {exc}") from None
        nouns = tuple(extract_nouns(text, lexicon))
        entries.append(KnowledgeEntry(i, text, nouns, bool(nouns)))
    return entries


def check_alignment(entries) -> None:
    for i, e in enumerate(entries):
        if e.id != i:
            raise ValidationError(f"entry at position {i} has id {e.id}")
        if e.retrievable != bool(e.kb2_nouns):
            raise ValidationError(f"entry {i}: retrievable flag disagrees with nouns")


def save_kb(entries, path) -> None:
    check_alignment(entries)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_json())
            fh.write("\n")


def load_kb(path) -> list:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(doc, dict):
                raise ParseError("expected a JSON object", lineno)
            missing = [k for k in KB_KEYS if k not in doc]
            if missing:
                raise ParseError(f"missing field(s) {', '.join(missing)}", lineno)
            nouns = doc["kb2_nouns"]
            if not isinstance(nouns, list) or not all(isinstance(n, str) for n in nouns):
                raise ParseError("kb2_nouns must be a list of strings", lineno)
            if not isinstance(doc["retrievable"], bool) or not isinstance(doc["id"], int):
                raise ParseError("id must be an integer and retrievable a boolean", lineno)
            entry = KnowledgeEntry(doc["id"], str(doc["kb1_text"]), tuple(nouns), doc["retrievable"])
            if entry.id != len(entries):
                raise ParseError(f"id {entry.id} out of position (expected {len(entries)})", lineno)
            if entry.retrievable != bool(entry.kb2_nouns):
                raise ParseError("retrievable flag disagrees with kb2_nouns", lineno)
            entries.append(entry)
    return entries


def load_records(path) -> list:
    """Read raw records from JSONL ``{"kind": ..., "parts": [...]}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                rec = RawRecord(doc["kind"], tuple(doc["parts"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad record ({exc})", lineno) from None
            out.append(rec)
    return out


def save_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"kind": r.kind, "parts": list(r.parts)}) + "\n")
