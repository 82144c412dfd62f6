"""Synthetic long-tailed DocRED-format corpora.

A gold triple (h, r, t) is expressed by one sentence that reads
``<h> ... <trigger words of r> ... <t>``. Relation frequencies follow a Zipf
law, and the description of ``r`` reuses its trigger words. Every document
also contains trigger sentences with a single entity and sentences where two
entities co-occur without a trigger, so neither cue alone decides a pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Label, Mention, RawDocument, Relation, RelationSchema

ENTITY_TYPES = ("PER", "ORG", "LOC", "TIME", "NUM", "MISC")


class SyntheticConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    docs: int = 200
    vocab_size: int = 200
    relations: int = 12
    zipf: float = 1.2
    na_ratio: float = 0.95
    mean_entities: int = 8
    seed: int = 0
    name_pool: int = 1000
    distractors: float = 1.0  # mean single-entity trigger sentences per document

    def validate(self) -> None:
        if self.docs < 1:
            raise SyntheticConfigError(f"docs must be >= 1, got {self.docs}")
        if self.relations < 2:
            raise SyntheticConfigError(f"relation count must be >= 2, got {self.relations}")
        if not 0.0 < self.na_ratio < 1.0:
            raise SyntheticConfigError(f"NA ratio must lie in (0, 1), got {self.na_ratio}")
        if self.vocab_size < 1 or self.name_pool < 1:
            raise SyntheticConfigError("vocab_size and name_pool must be positive")
        if self.zipf < 0:
            raise SyntheticConfigError(f"Zipf exponent must be >= 0, got {self.zipf}")
        if self.mean_entities < 2:
            raise SyntheticConfigError(
                f"mean_entities must be >= 2 for any entity pair to exist, got {self.mean_entities}")
        if self.na_ratio < 0.5:
            # each unordered pair carries at most one labelled direction
            raise SyntheticConfigError(
                f"NA ratio {self.na_ratio} is infeasible: at most half of the ordered pairs "
                "can be labelled, so it must be >= 0.5")
        if self.name_pool < self.mean_entities + 2:
            raise SyntheticConfigError("name_pool is smaller than the number of entities per document")
        if self.distractors < 0:
            raise SyntheticConfigError("distractors must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


def zipf_probabilities(n: int, s: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -s
    return w / w.sum()


def trigger_words(k: int) -> tuple[str, str]:
    return f"trig{k}a", f"trig{k}b"


def synthetic_schema(n_relations: int) -> RelationSchema:
    rels = []
    for k in range(n_relations):
        a, b = trigger_words(k)
        rels.append(Relation(
            f"R{k + 1:02d}", f"relation {k + 1}",
            f"{a} {b} holds from the head entity to the tail entity"))
    return RelationSchema(rels)


def _fill(rng, vocab_size: int, lo: int, hi: int) -> list[str]:
    return [f"w{i}" for i in rng.integers(0, vocab_size, size=int(rng.integers(lo, hi + 1)))]


def generate_synthetic(cfg: SyntheticConfig) -> tuple[list[RawDocument], RelationSchema]:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    schema = synthetic_schema(cfg.relations)
    probs = zipf_probabilities(cfg.relations, cfg.zipf)
    docs = []
    lo_n = max(2, cfg.mean_entities - 2)
    hi_n = 2 * cfg.mean_entities - lo_n
    for d in range(cfg.docs):
        n = int(rng.integers(lo_n, hi_n + 1))
        names = [f"e{i}" for i in rng.choice(cfg.name_pool, size=n, replace=False)]
        types = [ENTITY_TYPES[i] for i in rng.integers(0, len(ENTITY_TYPES), size=n)]

        target = (1.0 - cfg.na_ratio) * n * (n - 1)
        k = int(np.floor(target)) + int(rng.random() < target - np.floor(target))
        k = min(k, n * (n - 1) // 2)
        unordered = [(i, j) for i in range(n) for j in range(i + 1, n)]
        picked = rng.choice(len(unordered), size=k, replace=False) if k else []
        triples = []
        for u in picked:
            i, j = unordered[int(u)]
            h, t = (i, j) if rng.random() < 0.5 else (j, i)
            triples.append((h, int(rng.choice(cfg.relations, p=probs)), t))

        # sentence plans: lists of ("w", word) / ("m", entity) items
        plans: list[list[tuple[str, object]]] = []
        evidence_of: list[int] = []
        for h, r, t in triples:
            a, b = trigger_words(r)
            plan = [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
            plan += [("m", h)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
            plan += [("w", a), ("w", b)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
            plan += [("m", t)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
            evidence_of.append(len(plans))
            plans.append(plan)
        order = rng.permutation(n)
        for s in range(0, n, 2):
            group = [int(e) for e in order[s:s + 2]]
            plan = [("w", w) for w in _fill(rng, cfg.vocab_size, 1, 3)]
            for e in group:
                plan += [("m", e)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 1, 3)]
            plans.append(plan)
        for _ in range(int(rng.poisson(cfg.distractors))):
            a, b = trigger_words(int(rng.choice(cfg.relations, p=probs)))
            e = int(rng.integers(0, n))
            plan = [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
            if rng.random() < 0.5:
                plan += [("m", e)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
                plan += [("w", a), ("w", b)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 1, 3)]
            else:
                plan += [("w", a), ("w", b)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 0, 2)]
                plan += [("m", e)] + [("w", w) for w in _fill(rng, cfg.vocab_size, 1, 3)]
            plans.append(plan)

        perm = [int(i) for i in rng.permutation(len(plans))]
        position = {p: i for i, p in enumerate(perm)}
        sents: list[list[str]] = []
        vertex_set: list[list[Mention]] = [[] for _ in range(n)]
        for sid, p in enumerate(perm):
            words: list[str] = []
            for kind, val in plans[p]:
                if kind == "m":
                    e = int(val)
                    vertex_set[e].append(Mention(names[e], sid, (len(words), len(words) + 1), types[e]))
                    words.append(names[e])
                else:
                    words.append(str(val))
            sents.append(words)
        for ms in vertex_set:
            ms.sort(key=lambda m: (m.sent_id, m.pos))
        labels = [
            Label(h, t, schema.relations[r].id, (position[evidence_of[i]],))
            for i, (h, r, t) in enumerate(triples)
        ]
        labels.sort(key=lambda lb: (lb.h, lb.t, lb.r))
        docs.append(RawDocument(f"synthetic-{cfg.seed}-{d}", sents, vertex_set, labels))
    return docs, schema
