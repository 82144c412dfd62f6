"""Threshold selection and DocRE scores: micro F1, Ign F1, Macro and Macro@K."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import sigmoid_array
from .corpus import RawDocument

MACRO_BUCKETS = (500, 200, 100)


class UndefinedF1Error(ValueError):
    pass


@dataclass
class PredictionSet:
    """One record per (document, head, tail, relation), NA excluded."""

    doc: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    rel: np.ndarray  # index into relation_ids
    prob: np.ndarray
    gold: np.ndarray  # bool
    titles: list[str]
    relation_ids: list[str]
    names: list[list[set[str]]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.prob)

    @classmethod
    def from_scores(cls, scores, probs: np.ndarray | None = None) -> "PredictionSet":
        """Flatten a :class:`docre.model.Scores`; ``probs`` overrides
        ``sigmoid(logits)`` (e.g. after temperature scaling)."""
        if probs is None:
            probs = sigmoid_array(scores.logits())
        gold = scores.gold()
        cols = [c for c in range(len(scores.relation_ids)) if c != scores.na_column]
        doc_idx = np.concatenate(
            [np.full(len(d.pairs), i) for i, d in enumerate(scores.docs)] or [np.zeros(0)]
        ).astype(np.int64)
        pairs = np.concatenate([d.pairs for d in scores.docs] or [np.zeros((0, 2))]).astype(np.int64)
        n, c = len(pairs), len(cols)
        return cls(
            doc=np.repeat(doc_idx, c),
            head=np.repeat(pairs[:, 0], c),
            tail=np.repeat(pairs[:, 1], c),
            rel=np.tile(np.arange(c), n),
            prob=probs[:, cols].reshape(-1),
            gold=gold[:, cols].reshape(-1) > 0.5,
            titles=[d.title for d in scores.docs],
            relation_ids=[scores.relation_ids[i] for i in cols],
            names=[d.names for d in scores.docs],
        )

    def subset(self, mask: np.ndarray) -> "PredictionSet":
        return PredictionSet(self.doc[mask], self.head[mask], self.tail[mask], self.rel[mask],
                             self.prob[mask], self.gold[mask], self.titles, self.relation_ids,
                             self.names)


def _f1(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f1 = 2.0 * tp / (n_pred + n_gold) if tp else 0.0
    return p, r, f1


def best_threshold(preds: PredictionSet) -> tuple[float, float]:
    """Return ``(theta, f1)`` maximizing micro F1 of the rule ``prob > theta``.

    Candidates are the distinct predicted probabilities; equal F1 values
    resolve to the larger theta.
    """
    if len(preds) == 0 or not preds.gold.any():
        raise UndefinedF1Error("threshold search needs at least one gold positive")
    order = np.argsort(-preds.prob, kind="stable")
    p = preds.prob[order]
    g = preds.gold[order].astype(np.int64)
    n_gold = int(g.sum())
    tp_before = np.concatenate([[0], np.cumsum(g)])
    # first position of each distinct value in descending order = #records strictly above it
    first = np.flatnonzero(np.concatenate([[True], p[1:] != p[:-1]]))
    n_pred = first
    tp = tp_before[first]
    f1 = np.where(tp > 0, 2.0 * tp / (n_pred + n_gold), 0.0)
    best = f1.max()
    # values descend along `first`, so the first maximal entry has the largest theta
    k = int(np.flatnonzero(f1 == best)[0])
    return float(p[first[k]]), float(best)


def build_train_index(docs: Sequence[RawDocument]) -> dict[tuple[str, str], set[str]]:
    """Map (head mention name, tail mention name) to the relation ids seen in training."""
    index: dict[tuple[str, str], set[str]] = {}
    for d in docs:
        for lb in d.labels:
            for nh in d.entity_names(lb.h):
                for nt in d.entity_names(lb.t):
                    index.setdefault((nh, nt), set()).add(lb.r)
    return index


def shared_mask(preds: PredictionSet, index: dict[tuple[str, str], set[str]]) -> np.ndarray:
    """Records whose (head name, tail name, relation) fact appears in ``index``."""
    out = np.zeros(len(preds), dtype=bool)
    if not index or not len(preds):
        return out
    cache: dict[tuple[int, int, int], set[str]] = {}
    for i in range(len(preds)):
        key = (int(preds.doc[i]), int(preds.head[i]), int(preds.tail[i]))
        rels = cache.get(key)
        if rels is None:
            names = preds.names[key[0]]
            rels = set()
            for nh in names[key[1]]:
                for nt in names[key[2]]:
                    rels |= index.get((nh, nt), set())
            cache[key] = rels
        out[i] = preds.relation_ids[int(preds.rel[i])] in rels
    return out


@dataclass
class MicroScores:
    precision: float
    recall: float
    f1: float
    ign_f1: float


def micro_scores(preds: PredictionSet, theta: float,
                 train_index: dict[tuple[str, str], set[str]] | None = None) -> MicroScores:
    predicted = preds.prob > theta
    gold = preds.gold
    p, r, f1 = _f1(int((predicted & gold).sum()), int(predicted.sum()), int(gold.sum()))
    keep = ~shared_mask(preds, train_index or {})
    _, _, ign = _f1(int((predicted & gold & keep).sum()), int((predicted & keep).sum()),
                    int((gold & keep).sum()))
    return MicroScores(p, r, f1, ign)


@dataclass
class MacroScores:
    macro: float
    at: dict[int, float | None]
    per_relation: dict[str, dict[str, float]]


def macro_scores(preds: PredictionSet, theta: float, train_counts: dict[str, int],
                 buckets: Sequence[int] = MACRO_BUCKETS) -> MacroScores:
    """Uniform average of per-relation F1; relations with neither gold nor
    predictions count as 0. Buckets with no relation are reported as None."""
    predicted = preds.prob > theta
    per: dict[str, dict[str, float]] = {}
    f1s = np.zeros(len(preds.relation_ids))
    for k, rid in enumerate(preds.relation_ids):
        m = preds.rel == k
        tp = int((predicted & preds.gold & m).sum())
        p, r, f1 = _f1(tp, int((predicted & m).sum()), int((preds.gold & m).sum()))
        per[rid] = {"precision": p, "recall": r, "f1": f1, "train_count": int(train_counts.get(rid, 0))}
        f1s[k] = f1
    macro = float(f1s.mean()) if len(f1s) else 0.0
    at: dict[int, float | None] = {}
    for b in buckets:
        sel = [k for k, rid in enumerate(preds.relation_ids) if train_counts.get(rid, 0) < b]
        at[b] = float(f1s[sel].mean()) if sel else None
    return MacroScores(macro, at, per)


@dataclass
class EvalReport:
    threshold: float
    precision: float
    recall: float
    f1: float
    ign_f1: float
    macro: float
    macro_at: dict[int, float | None]
    per_relation: dict[str, dict[str, float]]

    def to_json(self) -> dict:
        out = {
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "ign_f1": self.ign_f1,
            "macro": self.macro,
        }
        for b, v in self.macro_at.items():
            out[f"macro@{b}"] = v
        out["per_relation"] = self.per_relation
        return out


def evaluate(preds: PredictionSet, theta: float, train_index=None,
             train_counts: dict[str, int] | None = None) -> EvalReport:
    micro = micro_scores(preds, theta, train_index)
    macro = macro_scores(preds, theta, train_counts or {})
    return EvalReport(theta, micro.precision, micro.recall, micro.f1, micro.ign_f1,
                      macro.macro, macro.at, macro.per_relation)


def write_predictions(preds: PredictionSet, theta: float, path, strip_prob: bool = False) -> int:
    """JSON lines of predicted triples (prob > theta); returns the count."""
    idx = np.flatnonzero(preds.prob > theta)
    with open(path, "w", encoding="utf-8") as fh:
        for i in idx:
            rec = {"title": preds.titles[int(preds.doc[i])], "h_idx": int(preds.head[i]),
                   "t_idx": int(preds.tail[i]), "r": preds.relation_ids[int(preds.rel[i])]}
            if not strip_prob:
                rec["prob"] = float(preds.prob[i])
            fh.write(json.dumps(rec) + "\n")
    return len(idx)
