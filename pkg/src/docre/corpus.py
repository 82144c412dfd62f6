"""DocRED-format corpora, relation schemas, statistics and low-resource subsampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NA_ID = "NA"
NA_NAME = "no relation"
NA_DESCRIPTION = "no relation holds between the two entities"


class CorpusError(ValueError):
    pass


class SubsampleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mention:
    name: str
    sent_id: int
    pos: tuple[int, int]
    type: str


@dataclass(frozen=True)
class Label:
    h: int
    t: int
    r: str
    evidence: tuple[int, ...] = ()


@dataclass
class RawDocument:
    title: str
    sents: list[list[str]]
    vertex_set: list[list[Mention]]
    labels: list[Label] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "title": self.title,
            "sents": self.sents,
            "vertexSet": [
                [{"name": m.name, "sent_id": m.sent_id, "pos": list(m.pos), "type": m.type}
                 for m in entity]
                for entity in self.vertex_set
            ],
            "labels": [
                {"h": lb.h, "t": lb.t, "r": lb.r, "evidence": list(lb.evidence)}
                for lb in self.labels
            ],
        }

    def entity_names(self, e: int) -> set[str]:
        return {m.name for m in self.vertex_set[e]}


@dataclass(frozen=True)
class Relation:
    id: str
    name: str
    description: str


@dataclass
class RelationSchema:
    """Ordered relations; the NA entry is always last."""

    relations: list[Relation]

    def __post_init__(self):
        ids = [r.id for r in self.relations]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise CorpusError(f"duplicate relation ids: {sorted(dup)}")
        for r in self.relations:
            if not r.description or not r.description.strip():
                raise CorpusError(f"relation {r.id!r} has no description")
        na = [r for r in self.relations if r.id.upper() == NA_ID]
        rest = [r for r in self.relations if r.id.upper() != NA_ID]
        self.relations = rest + (na or [Relation(NA_ID, NA_NAME, NA_DESCRIPTION)])
        self.index = {r.id: i for i, r in enumerate(self.relations)}

    def __len__(self) -> int:
        return len(self.relations)

    @property
    def na_index(self) -> int:
        return len(self.relations) - 1

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.relations]

    def to_json(self) -> list[dict]:
        return [{"id": r.id, "name": r.name, "description": r.description} for r in self.relations]


def load_schema(path) -> RelationSchema:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise CorpusError(f"{path}: schema must be a JSON array of {{id, name, description}}")
    rels = []
    for i, entry in enumerate(data):
        try:
            rels.append(Relation(str(entry["id"]), str(entry.get("name", entry["id"])),
                                 str(entry["description"])))
        except (KeyError, TypeError, AttributeError):
            raise CorpusError(f"{path}: schema entry {i} lacks id or description") from None
    return RelationSchema(rels)


def save_schema(schema: RelationSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_json(), indent=1) + "\n", encoding="utf-8")


def _field(record: dict, key: str, title: str):
    if key not in record:
        raise CorpusError(f"document {title!r}: missing field {key!r}")
    return record[key]


def parse_document(record: dict, schema: RelationSchema | None = None) -> RawDocument:
    """Build and validate one document from a DocRED JSON record."""
    if not isinstance(record, dict):
        raise CorpusError(f"document record must be an object, got {type(record).__name__}")
    title = str(record.get("title", "<untitled>"))
    sents = _field(record, "sents", title)
    if not isinstance(sents, list) or not all(isinstance(s, list) for s in sents):
        raise CorpusError(f"document {title!r}: field 'sents' must be a list of token lists")
    sents = [[str(w) for w in s] for s in sents]

    vertex_set = []
    for e, entity in enumerate(_field(record, "vertexSet", title)):
        if not entity:
            raise CorpusError(f"document {title!r}: entity {e} in 'vertexSet' has no mentions")
        mentions = []
        for m in entity:
            try:
                sid = int(m["sent_id"])
                lo, hi = (int(x) for x in m["pos"])
                mention = Mention(str(m["name"]), sid, (lo, hi), str(m.get("type", "")))
            except (KeyError, TypeError, ValueError):
                raise CorpusError(
                    f"document {title!r}: malformed mention in 'vertexSet' entity {e}") from None
            if not 0 <= sid < len(sents):
                raise CorpusError(f"document {title!r}: mention {mention.name!r} sent_id {sid} out of range")
            if not 0 <= lo < hi <= len(sents[sid]):
                raise CorpusError(
                    f"document {title!r}: mention {mention.name!r} pos {[lo, hi]} outside "
                    f"sentence {sid} of length {len(sents[sid])}")
            mentions.append(mention)
        vertex_set.append(mentions)

    labels = []
    for lb in record.get("labels", []):
        try:
            label = Label(int(lb["h"]), int(lb["t"]), str(lb["r"]),
                          tuple(int(x) for x in lb.get("evidence", [])))
        except (KeyError, TypeError, ValueError):
            raise CorpusError(f"document {title!r}: malformed record in 'labels'") from None
        n = len(vertex_set)
        if not (0 <= label.h < n and 0 <= label.t < n):
            raise CorpusError(f"document {title!r}: label entity index out of range in 'labels'")
        if label.h == label.t:
            raise CorpusError(f"document {title!r}: label with h == t ({label.h}) in 'labels'")
        if schema is not None and label.r not in schema.index:
            raise CorpusError(f"document {title!r}: unknown relation id {label.r!r} in 'labels'")
        if schema is not None and schema.index[label.r] == schema.na_index:
            raise CorpusError(f"document {title!r}: NA may not appear as a gold label")
        labels.append(label)
    return RawDocument(title, sents, vertex_set, labels)


def load_docred(path, schema: RelationSchema | None = None) -> list[RawDocument]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise CorpusError(f"{path}: expected a JSON array of documents")
    return [parse_document(rec, schema) for rec in data]


def dumps_docred(docs: Sequence[RawDocument]) -> str:
    return json.dumps([d.to_json() for d in docs], ensure_ascii=False, separators=(",", ":"))


def save_docred(docs: Sequence[RawDocument], path) -> None:
    Path(path).write_text(dumps_docred(docs), encoding="utf-8")


@dataclass
class CorpusStats:
    documents: int
    relation_types: int
    entity_pairs: int
    na_pairs: int
    na_ratio: float
    triples: int
    relation_counts: dict[str, int]

    def to_json(self) -> dict:
        return {
            "documents": self.documents,
            "relation_types": self.relation_types,
            "entity_pairs": self.entity_pairs,
            "na_pairs": self.na_pairs,
            "na_ratio": self.na_ratio,
            "triples": self.triples,
            "relation_counts": self.relation_counts,
        }


def gold_triples(doc: RawDocument) -> set[tuple[int, int, str]]:
    return {(lb.h, lb.t, lb.r) for lb in doc.labels}


def relation_counts(docs: Sequence[RawDocument], schema: RelationSchema | None = None) -> dict[str, int]:
    counts: dict[str, int] = {}
    if schema is not None:
        counts = {rid: 0 for rid in schema.ids[:-1]}
    for d in docs:
        for _, _, r in gold_triples(d):
            counts[r] = counts.get(r, 0) + 1
    return counts


def stats(docs: Sequence[RawDocument], schema: RelationSchema | None = None) -> CorpusStats:
    """Counts over ordered entity pairs with h != t."""
    pairs = na = 0
    for d in docs:
        n = len(d.vertex_set)
        pairs += n * (n - 1)
        na += n * (n - 1) - len({(h, t) for h, t, _ in gold_triples(d)})
    counts = relation_counts(docs, schema)
    return CorpusStats(
        documents=len(docs),
        relation_types=len(schema) if schema is not None else len(counts) + 1,
        entity_pairs=pairs,
        na_pairs=na,
        na_ratio=na / pairs if pairs else 0.0,
        triples=sum(counts.values()),
        relation_counts=counts,
    )


def label_distribution(docs: Sequence[RawDocument], relations: Sequence[str]) -> np.ndarray:
    counts = relation_counts(docs)
    v = np.array([counts.get(r, 0) for r in relations], dtype=np.float64)
    s = v.sum()
    return v / s if s else v


def l1_distance(docs: Sequence[RawDocument], reference: np.ndarray, relations: Sequence[str]) -> float:
    return float(np.abs(label_distribution(docs, relations) - reference).sum())


@dataclass
class SubsampleResult:
    documents: list[RawDocument]
    indices: list[int]
    distance: float
    attempts: int
    seed: int


def subsample(docs: Sequence[RawDocument], n: int, seed: int, tolerance: float = 0.05,
              max_attempts: int = 1000) -> SubsampleResult:
    """Draw uniform n-document subsets until the non-NA relation distribution is
    within ``tolerance`` (L1) of the full corpus."""
    if not 0 < n <= len(docs):
        raise SubsampleError(f"cannot draw {n} documents from a corpus of {len(docs)}")
    full_counts = relation_counts(docs)
    relations = sorted(r for r, c in full_counts.items() if c > 0)
    reference = label_distribution(docs, relations)
    if n == len(docs):
        return SubsampleResult(list(docs), list(range(n)), 0.0, 0, seed)
    rng = np.random.default_rng(seed)
    best = np.inf
    for attempt in range(1, max_attempts + 1):
        idx = np.sort(rng.choice(len(docs), size=n, replace=False))
        chosen = [docs[i] for i in idx]
        dist = l1_distance(chosen, reference, relations)
        best = min(best, dist)
        if dist <= tolerance:
            return SubsampleResult(chosen, idx.tolist(), dist, attempt, seed)
    raise SubsampleError(
        f"no subset of {n} documents within L1 tolerance {tolerance} after {max_attempts} "
        f"attempts; best distance {best:.4f}")
