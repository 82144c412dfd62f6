"""End-to-end document relation model and its scored outputs."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import head as hd
from .autodiff import Parameter, Tensor
from .corpus import RawDocument, RelationSchema
from .encoder import Encoder, EncoderConfig, TokenizedDocument, Vocabulary, chunk_document, tokenize_with_markers
from .head import HeadConfig


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent random stream for one purpose (data, init, dropout, ...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


@dataclass
class PreparedDocument:
    title: str
    tokens: TokenizedDocument
    pairs: np.ndarray
    gold: np.ndarray
    names: list[set[str]]


@dataclass
class ScoredDocument:
    title: str
    pairs: np.ndarray  # [P, 2] entity indices
    logits: np.ndarray  # [P, C] combined pre-sigmoid scores
    gold: np.ndarray  # [P, C] 0/1
    names: list[set[str]] = field(default_factory=list)


@dataclass
class Scores:
    """Model outputs over a corpus; columns follow ``relation_ids``."""

    docs: list[ScoredDocument]
    relation_ids: list[str]
    na_column: int | None

    def logits(self) -> np.ndarray:
        return np.concatenate([d.logits for d in self.docs]) if self.docs else np.zeros((0, len(self.relation_ids)))

    def gold(self) -> np.ndarray:
        return np.concatenate([d.gold for d in self.docs]) if self.docs else np.zeros((0, len(self.relation_ids)))

    def with_logits(self, logits: np.ndarray) -> "Scores":
        out, at = [], 0
        for d in self.docs:
            n = len(d.pairs)
            out.append(ScoredDocument(d.title, d.pairs, logits[at:at + n], d.gold, d.names))
            at += n
        return Scores(out, self.relation_ids, self.na_column)


class DocREModel:
    def __init__(self, enc_cfg: EncoderConfig, head_cfg: HeadConfig, vocab: Vocabulary,
                 schema: RelationSchema, seed: int = 0):
        head_cfg.validate()
        self.enc_cfg = enc_cfg
        self.head_cfg = head_cfg
        self.vocab = vocab
        self.schema = schema
        self.seed = seed
        self.encoder = Encoder(enc_cfg, vocab, named_rng(seed, "init"))
        self.head_params = hd.init_head_params(head_cfg, enc_cfg.dim, len(schema),
                                               named_rng(seed, "init-head"))
        if not head_cfg.na_class:
            self.head_params["bilinear.w"] = Parameter(self.head_params["bilinear.w"].data[:-1], "bilinear.w")
            self.head_params["bilinear.b"] = Parameter(self.head_params["bilinear.b"].data[:-1], "bilinear.b")

    @property
    def n_classes(self) -> int:
        return len(self.schema) if self.head_cfg.na_class else len(self.schema) - 1

    @property
    def relation_ids(self) -> list[str]:
        return self.schema.ids[: self.n_classes]

    def parameters(self) -> list[Parameter]:
        return list(self.encoder.params.values()) + list(self.head_params.values())

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"missing parameter {p.name!r}")
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"parameter {p.name!r}: shape {state[p.name].shape} != {p.data.shape}")
            p.data[...] = state[p.name]

    def prepare(self, doc: RawDocument) -> PreparedDocument:
        tokens = chunk_document(tokenize_with_markers(doc, self.vocab), self.enc_cfg.max_len)
        pairs, gold = hd.gold_matrix(doc.labels, len(doc.vertex_set), self.schema)
        return PreparedDocument(doc.title, tokens, pairs, gold[:, : self.n_classes],
                                [doc.entity_names(e) for e in range(len(doc.vertex_set))])

    def relation_table(self, rng: np.random.Generator | None = None) -> Tensor | None:
        if not self.head_cfg.prism:
            return None
        table = self.encoder.encode_relations(self.schema, rng)
        if not self.head_cfg.na_class:
            table = table[: self.n_classes]
        return table

    def entity_embeddings(self, doc: PreparedDocument, rng=None) -> Tensor:
        h = self.encoder.encode(doc.tokens, rng)
        pooled = [hd.pool_entity(ad.take_rows(h, doc.tokens.mention_index(e)))
                  for e in range(len(doc.tokens.mentions))]
        return ad.stack(pooled)

    def forward(self, doc: PreparedDocument, rel_table: Tensor | None,
                rng: np.random.Generator | None = None) -> Tensor:
        """Combined logits [pairs x classes] for one document."""
        ents = self.entity_embeddings(doc, rng)
        zh = ad.take_rows(hd.project(ents, self.head_params, "head"), doc.pairs[:, 0])
        zt = ad.take_rows(hd.project(ents, self.head_params, "tail"), doc.pairs[:, 1])
        s = hd.bilinear_score(zh, zt, self.head_params)
        if rel_table is None:
            return s
        z_pair = hd.pair_representation(zh, zt, self.head_params)
        return hd.combined_logits(s, hd.adaptive_scores(z_pair, rel_table), self.head_cfg.lam)

    def batch_loss(self, docs: list[PreparedDocument], rng_doc=None, rng_rel=None) -> Tensor:
        docs = [d for d in docs if len(d.pairs)]
        if not docs:
            raise ValueError("batch has no entity pairs")
        table = self.relation_table(rng_rel)
        logits = [self.forward(d, table, rng_doc) for d in docs]
        logits = logits[0] if len(logits) == 1 else ad.concat(logits, axis=0)
        gold = np.concatenate([d.gold for d in docs])
        return hd.loss(ad.sigmoid(logits), gold)

    def score(self, docs: list[PreparedDocument]) -> Scores:
        """Inference pass (no dropout, no gradient record)."""
        table = self.relation_table()
        out = []
        for d in docs:
            if len(d.pairs):
                logits = self.forward(d, table).data
            else:
                logits = np.zeros((0, self.n_classes))
            out.append(ScoredDocument(d.title, d.pairs, logits, d.gold, d.names))
        na = self.n_classes - 1 if self.head_cfg.na_class else None
        return Scores(out, self.relation_ids, na)
