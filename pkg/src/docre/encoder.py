"""Marker tokenization, chunking and a small pre-norm transformer encoder."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

PAD, UNK, CLS, MARKER = "[PAD]", "[UNK]", "[CLS]", "*"
RESERVED = (PAD, UNK, CLS, MARKER)


class IngestionError(ValueError):
    pass


class UnsupportedDocumentError(ValueError):
    pass


class SchemaError(ValueError):
    pass


def escape(word: str) -> str:
    if word in RESERVED or word.startswith("\\"):
        return "\\" + word
    return word


def unescape(token: str) -> str:
    return token[1:] if token.startswith("\\") else token


class Vocabulary:
    """Word-level vocabulary. Ids 0-3 are ``[PAD] [UNK] [CLS] *``; corpus
    words that collide with a reserved token are stored escaped."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: list[str] = list(RESERVED)
        self.ids: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        for t in tokens:
            if t not in self.ids:
                self.ids[t] = len(self.tokens)
                self.tokens.append(t)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for sent in sentences:
            for w in sent:
                seen.setdefault(escape(w), None)
        return cls(list(seen))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def marker_id(self) -> int:
        return 3

    def word_id(self, word: str) -> int:
        return self.ids.get(escape(word), self.unk_id)

    def decode(self, ids: Iterable[int], strip_markers: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip_markers and i == self.marker_id:
                continue
            out.append(self.tokens[i] if i < 4 else unescape(self.tokens[i]))
        return out

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED:
            raise ValueError(f"{path}: vocabulary must start with reserved tokens {RESERVED}")
        return cls(lines[4:])


@dataclass
class EncoderConfig:
    dim: int = 32
    layers: int = 1
    heads: int = 2
    ff_dim: int = 64
    max_len: int = 512
    dropout: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.dim <= 0 or self.heads <= 0 or self.dim % self.heads:
            raise ValueError(f"dim {self.dim} must be a positive multiple of heads {self.heads}")
        if self.layers < 0 or self.ff_dim <= 0:
            raise ValueError("layers must be >= 0 and ff_dim > 0")
        if self.max_len < 8:
            raise ValueError(f"max_len must be >= 8, got {self.max_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class TokenizedDocument:
    token_ids: np.ndarray
    # per entity: [(opening-marker index, (span start, span end)), ...]; spans
    # are half-open and include both markers
    mentions: list[list[tuple[int, tuple[int, int]]]]
    chunks: list[tuple[int, int]] = field(default_factory=list)
    title: str = ""

    def __len__(self) -> int:
        return len(self.token_ids)

    def mention_index(self, entity: int) -> list[int]:
        return [m for m, _ in self.mentions[entity]]


def tokenize_with_markers(doc, vocab: Vocabulary) -> TokenizedDocument:
    """Flatten ``doc.sents`` and wrap every mention as ``* mention *``.

    ``doc`` needs ``title``, ``sents`` and ``vertex_set`` (entities as lists of
    mentions with ``sent_id`` and ``pos``).
    """
    offsets = np.cumsum([0] + [len(s) for s in doc.sents])
    n_words = int(offsets[-1])
    starts: dict[int, list[tuple[int, int]]] = {}
    ends: dict[int, list[tuple[int, int]]] = {}
    for e, entity in enumerate(doc.vertex_set):
        for j, m in enumerate(entity):
            sid = m.sent_id
            lo, hi = m.pos
            if not (0 <= sid < len(doc.sents)) or not (0 <= lo < hi <= len(doc.sents[sid])):
                raise IngestionError(
                    f"document {doc.title!r}: mention {m.name!r} of entity {e} has span "
                    f"{list(m.pos)} outside sentence {sid}"
                )
            starts.setdefault(int(offsets[sid]) + lo, []).append((e, j))
            ends.setdefault(int(offsets[sid]) + hi, []).append((e, j))

    words = [w for s in doc.sents for w in s]
    ids: list[int] = []
    open_at: dict[tuple[int, int], int] = {}
    spans: dict[tuple[int, int], tuple[int, int]] = {}
    for w in range(n_words + 1):
        for key in ends.get(w, ()):
            ids.append(vocab.marker_id)
            spans[key] = (open_at[key], len(ids))
        if w == n_words:
            break
        for key in starts.get(w, ()):
            open_at[key] = len(ids)
            ids.append(vocab.marker_id)
        ids.append(vocab.word_id(words[w]))

    mentions = [
        [(open_at[(e, j)], spans[(e, j)]) for j in range(len(entity))]
        for e, entity in enumerate(doc.vertex_set)
    ]
    return TokenizedDocument(np.asarray(ids, dtype=np.int64), mentions, title=doc.title)


def chunk_document(doc: TokenizedDocument, max_len: int) -> TokenizedDocument:
    """Split into consecutive chunks of at most ``max_len`` tokens.

    A boundary that would cut a marked mention moves left to the mention's
    opening marker.
    """
    spans = [span for ms in doc.mentions for _, span in ms]
    n = len(doc)
    chunks = []
    start = 0
    while start < n:
        end = min(start + max_len, n)
        moved = True
        while moved and end < n:
            moved = False
            for lo, hi in spans:
                if lo < end < hi:
                    end, moved = lo, True
        if end <= start:
            raise UnsupportedDocumentError(
                f"document {doc.title!r}: a mention longer than the chunk length {max_len}"
            )
        chunks.append((start, end))
        start = end
    if not chunks:
        chunks = [(0, 0)]
    return TokenizedDocument(doc.token_ids, doc.mentions, chunks, doc.title)


def _glorot(rng, fan_in, fan_out):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Initial value of the (learned) positional table."""
    pos = np.arange(n)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq)[:, : d // 2]
    return out


def init_encoder_params(cfg: EncoderConfig, vocab_size: int,
                        rng: np.random.Generator) -> dict[str, Parameter]:
    d, f = cfg.dim, cfg.ff_dim
    p: dict[str, Parameter] = {}

    def add(name, value):
        p[name] = Parameter(value, name)

    add("tok_emb", rng.normal(0.0, 1.0, size=(vocab_size, d)))
    add("pos_emb", sinusoidal_positions(cfg.max_len, d))
    for i in range(cfg.layers):
        pre = f"layer{i}."
        add(pre + "ln1.g", np.ones(d))
        add(pre + "ln1.b", np.zeros(d))
        for m in ("q", "k", "v", "o"):
            add(pre + f"attn.w{m}", _glorot(rng, d, d))
            add(pre + f"attn.b{m}", np.zeros(d))
        add(pre + "ln2.g", np.ones(d))
        add(pre + "ln2.b", np.zeros(d))
        add(pre + "ff.w1", _glorot(rng, d, f))
        add(pre + "ff.b1", np.zeros(f))
        add(pre + "ff.w2", _glorot(rng, f, d))
        add(pre + "ff.b2", np.zeros(d))
    if cfg.layers:
        add("ln_f.g", np.ones(d))
        add("ln_f.b", np.zeros(d))
    return p


class Encoder:
    """Token/position embeddings followed by ``cfg.layers`` pre-norm blocks.

    Relation descriptions go through the same blocks but look up their tokens
    in a separate ``rel_emb`` table.
    """

    def __init__(self, cfg: EncoderConfig, vocab: Vocabulary, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.params = init_encoder_params(cfg, len(vocab), rng)
        # starts as a copy of the document table so shared words mean the same thing
        self.params["rel_emb"] = Parameter(self.params["tok_emb"].data.copy(), "rel_emb")

    def body(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """Run the transformer blocks on ``x`` of shape [batch, n, d]."""
        cfg, p = self.cfg, self.params
        b, n, d = x.shape
        h_, dh = cfg.heads, cfg.dim // cfg.heads
        for i in range(cfg.layers):
            pre = f"layer{i}."
            h = ad.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

            def split(t):
                return ad.transpose(ad.reshape(t, (b, n, h_, dh)), (0, 2, 1, 3))

            q = split(h @ p[pre + "attn.wq"] + p[pre + "attn.bq"])
            k = split(h @ p[pre + "attn.wk"] + p[pre + "attn.bk"])
            v = split(h @ p[pre + "attn.wv"] + p[pre + "attn.bv"])
            att = ad.softmax(ad.scale(q @ ad.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh)))
            o = ad.reshape(ad.transpose(att @ v, (0, 2, 1, 3)), (b, n, d))
            o = o @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            x = x + ad.dropout(o, cfg.dropout, rng)
            h = ad.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            f = ad.relu(h @ p[pre + "ff.w1"] + p[pre + "ff.b1"]) @ p[pre + "ff.w2"] + p[pre + "ff.b2"]
            x = x + ad.dropout(f, cfg.dropout, rng)
        if cfg.layers:
            x = ad.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        return x

    def _embed(self, table: str, ids: np.ndarray) -> Tensor:
        n = ids.shape[-1]
        tok = ad.take_rows(self.params[table], ids.reshape(-1))
        tok = ad.reshape(tok, (*ids.shape, self.cfg.dim))
        return tok + ad.take_rows(self.params["pos_emb"], np.arange(n))

    def encode(self, doc: TokenizedDocument, rng: np.random.Generator | None = None,
               chunked: bool = True) -> Tensor:
        """Contextual embeddings [l x d]; chunks are encoded independently with
        positions restarting at zero, then concatenated."""
        if len(doc) and doc.token_ids.max() >= len(self.vocab):
            raise IngestionError(f"document {doc.title!r}: token id out of vocabulary range")
        if chunked:
            chunks = doc.chunks or chunk_document(doc, self.cfg.max_len).chunks
        else:
            if len(doc) > self.cfg.max_len:
                raise UnsupportedDocumentError(
                    f"document {doc.title!r} has {len(doc)} tokens > max_len {self.cfg.max_len}"
                )
            chunks = [(0, len(doc))]
        outs = []
        for lo, hi in chunks:
            x = self._embed("tok_emb", doc.token_ids[lo:hi][None, :])
            x = ad.dropout(x, self.cfg.dropout, rng)
            outs.append(ad.reshape(self.body(x, rng), (hi - lo, self.cfg.dim)))
        return outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)

    def description_ids(self, description: str) -> np.ndarray:
        words = description.split()
        ids = [self.vocab.cls_id] + [self.vocab.word_id(w) for w in words]
        return np.asarray(ids[: self.cfg.max_len], dtype=np.int64)

    def encode_relations(self, schema, rng: np.random.Generator | None = None) -> Tensor:
        """One row per schema relation: the ``[CLS]`` output of its description.

        Descriptions of equal length are batched together, so no padding is
        ever attended to.
        """
        seqs = []
        for rel in schema.relations:
            if not rel.description or not rel.description.strip():
                raise SchemaError(f"relation {rel.id!r} has no description")
            seqs.append(self.description_ids(rel.description))
        groups: dict[int, list[int]] = {}
        for i, s in enumerate(seqs):
            groups.setdefault(len(s), []).append(i)
        rows: list[Tensor] = []
        order: list[int] = []
        for length in sorted(groups):
            members = groups[length]
            ids = np.stack([seqs[i] for i in members])
            x = ad.dropout(self._embed("rel_emb", ids), self.cfg.dropout, rng)
            out = self.body(x, rng)
            rows.append(ad.reshape(out[:, 0, :], (len(members), self.cfg.dim)))
            order.extend(members)
        table = rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)
        if order != sorted(order):
            table = ad.take_rows(table, np.argsort(order))
        return table
