"""Entity-pair relation scoring with an optional description-similarity term.

The probability of relation r for the ordered pair (h, t) is
``sigmoid(s[r] + lam * s_adapt[r])`` where ``s`` is the bilinear score of the
projected head/tail entities and ``s_adapt`` is the cosine similarity between
a pair embedding and the encoded description of r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass
class HeadConfig:
    hidden: int = 32
    lam: float = 10.0
    prism: bool = True
    na_class: bool = True  # score NA as its own class

    def validate(self) -> None:
        if self.hidden <= 0:
            raise ValueError(f"hidden must be positive, got {self.hidden}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


def init_head_params(cfg: HeadConfig, enc_dim: int, n_classes: int,
                     rng: np.random.Generator) -> dict[str, Parameter]:
    hd = cfg.hidden

    def glorot(fan_in, fan_out, size=None):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=size or (fan_in, fan_out))

    p = {
        "head.w": glorot(enc_dim, hd),
        "head.b": np.zeros(hd),
        "tail.w": glorot(enc_dim, hd),
        "tail.b": np.zeros(hd),
        "bilinear.w": glorot(hd, hd, (n_classes, hd, hd)),
        "bilinear.b": np.zeros(n_classes),
        "pair.w": glorot(2 * hd, enc_dim),
        "pair.b": np.zeros(enc_dim),
    }
    return {k: Parameter(v, k) for k, v in p.items()}


def pool_entity(mentions: Tensor) -> Tensor:
    return ad.logsumexp_rows(mentions)


def project(h: Tensor, params: dict, role: str) -> Tensor:
    if role not in ("head", "tail"):
        raise ValueError(f"role must be 'head' or 'tail', got {role!r}")
    return ad.tanh(h @ params[f"{role}.w"] + params[f"{role}.b"])


def bilinear_score(zh: Tensor, zt: Tensor, params: dict) -> Tensor:
    """Rows are pairs, columns relations (NA included when scored)."""
    return ad.bilinear(zh, zt, params["bilinear.w"], params["bilinear.b"])


def pair_representation(zh: Tensor, zt: Tensor, params: dict) -> Tensor:
    return ad.tanh(ad.concat([zh, zt], axis=1) @ params["pair.w"] + params["pair.b"])


def adaptive_scores(z_pair: Tensor, relation_table: Tensor) -> Tensor:
    return ad.cosine_matrix(z_pair, relation_table)


def combined_logits(s: Tensor, s_adapt: Tensor | None, lam: float) -> Tensor:
    if s_adapt is None:
        return s
    return s + ad.scale(s_adapt, lam)


def combine(s: Tensor, s_adapt: Tensor | None, lam: float) -> Tensor:
    return ad.sigmoid(combined_logits(s, s_adapt, lam))


def loss(probs: Tensor, gold: np.ndarray) -> Tensor:
    """Mean BCE over every pair-relation coordinate."""
    return ad.bce(probs, gold)


def candidate_pairs(n_entities: int) -> np.ndarray:
    pairs = [(h, t) for h in range(n_entities) for t in range(n_entities) if h != t]
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def gold_matrix(labels, n_entities: int, schema) -> tuple[np.ndarray, np.ndarray]:
    """Binary targets for every ordered pair (h != t) and every schema relation.

    The NA column is 1 exactly when the pair has no gold relation.
    """
    pairs = candidate_pairs(n_entities)
    row = {(int(h), int(t)): i for i, (h, t) in enumerate(pairs)}
    y = np.zeros((len(pairs), len(schema)))
    for lb in labels:
        y[row[(lb.h, lb.t)], schema.index[lb.r]] = 1.0
    y[:, schema.na_index] = (y[:, : schema.na_index].sum(axis=1) == 0).astype(np.float64)
    return pairs, y
