"""Calibration errors, temperature scaling and reliability tables.

Every (pair, relation) coordinate is one binary instance: its confidence is the
predicted probability and it is correct when the relation is gold.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .autodiff import sigmoid_array

T_BOUNDS = (0.05, 20.0)


class CalibrationError(ValueError):
    pass


def bin_edges(n_bins: int) -> np.ndarray:
    return np.arange(n_bins + 1) / n_bins


def assign_bins(conf: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin b covers [b/B, (b+1)/B); the last bin also holds 1.0."""
    return np.clip(np.searchsorted(bin_edges(n_bins), conf, side="right") - 1, 0, n_bins - 1)


@dataclass
class BinnedTable:
    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray
    confidence: np.ndarray  # mean confidence, 0 for empty bins
    accuracy: np.ndarray  # mean correctness, 0 for empty bins

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def gap(self) -> float:
        """Count-weighted mean |accuracy - confidence| (the ECE of this table)."""
        n = self.count.sum()
        if n == 0:
            return 0.0
        return float((self.count * np.abs(self.accuracy - self.confidence)).sum() / n)

    def rows(self):
        for i in range(len(self.count)):
            yield self.lo[i], self.hi[i], int(self.count[i]), self.confidence[i], self.accuracy[i]


def binned_table(conf, correct, n_bins: int = 10) -> BinnedTable:
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if n_bins < 1:
        raise CalibrationError(f"need at least one bin, got {n_bins}")
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise CalibrationError("confidences must lie in [0, 1]")
    b = assign_bins(conf, n_bins)
    count = np.bincount(b, minlength=n_bins)
    safe = np.maximum(count, 1)
    edges = bin_edges(n_bins)
    return BinnedTable(
        lo=edges[:-1], hi=edges[1:], count=count,
        confidence=np.bincount(b, weights=conf, minlength=n_bins) / safe,
        accuracy=np.bincount(b, weights=correct, minlength=n_bins) / safe,
    )


def ece(conf, correct, n_bins: int = 10) -> float:
    conf = np.asarray(conf)
    if conf.size == 0:
        raise CalibrationError("ECE of an empty instance list")
    return binned_table(conf, correct, n_bins).gap()


def ace(conf, correct, classes, n_ranges: int = 10) -> float:
    """Adaptive calibration error with equal-population ranges per class.

    Ranges are formed on confidence-sorted instances with ``np.array_split``
    (leading ranges take the remainder); a class with fewer than ``n_ranges``
    instances uses one range per instance.
    """
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    classes = np.asarray(classes)
    if conf.size == 0:
        raise CalibrationError("ACE of an empty instance list")
    if n_ranges < 1:
        raise CalibrationError(f"need at least one range, got {n_ranges}")
    gaps = []
    for k in np.unique(classes):
        m = classes == k
        c, y = conf[m], correct[m]
        order = np.argsort(c, kind="stable")
        for part in np.array_split(order, min(n_ranges, len(order))):
            gaps.append(abs(y[part].mean() - c[part].mean()))
    return float(np.mean(gaps))


# ---------------------------------------------------------------- temperature scaling


def _bce_logits(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


@dataclass
class TemperatureModel:
    kind: str  # "none", "ts" or "cda-ts"
    temperature: float = 1.0
    alpha: float = 0.0
    class_temperatures: np.ndarray | None = None

    def temperatures(self, n_classes: int) -> np.ndarray:
        if self.class_temperatures is not None:
            return self.class_temperatures
        return np.full(n_classes, self.temperature)

    def apply(self, logits: np.ndarray) -> np.ndarray:
        return logits / self.temperatures(logits.shape[1])

    def probabilities(self, logits: np.ndarray) -> np.ndarray:
        return sigmoid_array(self.apply(logits))

    def to_json(self) -> dict:
        out = {"method": self.kind, "temperature": self.temperature}
        if self.kind == "cda-ts":
            out["alpha"] = self.alpha
            out["class_temperatures"] = [float(t) for t in self.class_temperatures]
        return out


def _check_gold(gold: np.ndarray) -> None:
    if gold.size == 0 or gold.min() == gold.max():
        raise CalibrationError("temperature fitting needs both positive and negative dev instances")


def fit_temperature(logits, gold) -> TemperatureModel:
    """Single T in ``T_BOUNDS`` minimizing dev BCE of ``sigmoid(logits / T)``."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(gold, dtype=np.float64)
    _check_gold(y)
    res = minimize_scalar(lambda t: _bce_logits(z / t, y), bounds=T_BOUNDS, method="bounded",
                          options={"xatol": 1e-10})
    t = float(res.x)
    if _bce_logits(z, y) < _bce_logits(z / t, y):
        t = 1.0
    return TemperatureModel("ts", t)


def cda_temperatures(t: float, alpha: float, freqs: np.ndarray) -> np.ndarray:
    f = np.maximum(np.asarray(freqs, dtype=np.float64), 1.0)
    return t * (1.0 + alpha * np.log(f.max() / f))


def fit_cda_temperature(logits, gold, class_freqs) -> TemperatureModel:
    """Per-class temperatures ``T * (1 + alpha * log(f_max / f_k))``.

    ``T`` and ``alpha`` are fit jointly on dev BCE starting from the plain
    TS solution, which the result never does worse than.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(gold, dtype=np.float64)
    freqs = np.maximum(np.asarray(class_freqs, dtype=np.float64), 1.0)
    if freqs.shape != (z.shape[1],):
        raise CalibrationError(f"need one frequency per class, got {freqs.shape} for {z.shape[1]} classes")
    ts = fit_temperature(z, y)
    base = _bce_logits(z / ts.temperature, y)
    spread = float(np.log(freqs.max() / freqs.min()))
    if spread == 0.0:
        return TemperatureModel("cda-ts", ts.temperature, 0.0, cda_temperatures(ts.temperature, 0.0, freqs))
    # keep every class temperature >= T * 0.05
    bounds = [T_BOUNDS, (-0.95 / spread, 10.0)]

    def objective(v):
        return _bce_logits(z / cda_temperatures(v[0], v[1], freqs), y)

    res = minimize(objective, x0=[ts.temperature, 0.0], method="L-BFGS-B", bounds=bounds)
    t, a = float(res.x[0]), float(res.x[1])
    if not objective([t, a]) <= base:
        t, a = ts.temperature, 0.0
    return TemperatureModel("cda-ts", t, a, cda_temperatures(t, a, freqs))


# ---------------------------------------------------------------- reliability by frequency group


def frequency_groups(relation_ids: Sequence[str], na_column: int | None,
                     train_counts: dict[str, int], top: int = 7) -> dict[str, list[int]]:
    """Partition columns into NA, the ``top`` most frequent relations in training
    and the remaining relations (ties broken by schema order)."""
    cols = [c for c in range(len(relation_ids)) if c != na_column]
    ranked = sorted(cols, key=lambda c: (-train_counts.get(relation_ids[c], 0), c))
    head, tail = sorted(ranked[:top]), sorted(ranked[top:])
    groups: dict[str, list[int]] = {"NA": [na_column] if na_column is not None else []}
    groups[f"top-{len(head)}"] = head
    groups[f"bottom-{len(tail)}"] = tail
    return groups


def reliability_table(probs: np.ndarray, gold: np.ndarray, groups: dict[str, list[int]],
                      n_bins: int = 10) -> dict[str, BinnedTable]:
    return {name: binned_table(probs[:, cols].reshape(-1), gold[:, cols].reshape(-1), n_bins)
            for name, cols in groups.items()}


def reliability_csv(tables: dict[str, BinnedTable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "bin_lo", "bin_hi", "count", "confidence", "accuracy"])
    for name, table in tables.items():
        for lo, hi, n, c, a in table.rows():
            w.writerow([name, repr(float(lo)), repr(float(hi)), n, repr(float(c)), repr(float(a))])
    return buf.getvalue()


@dataclass
class CalibrationReport:
    ece: float
    ace: float
    n_bins: int
    instances: int
    groups: dict[str, BinnedTable] = field(default_factory=dict)
    temperature: TemperatureModel | None = None

    def group_gaps(self) -> dict[str, float]:
        return {name: t.gap() for name, t in self.groups.items()}

    def to_json(self) -> dict:
        return {
            "ece": self.ece,
            "ace": self.ace,
            "bins": self.n_bins,
            "instances": self.instances,
            "group_gap": self.group_gaps(),
            "group_count": {name: t.total for name, t in self.groups.items()},
            "temperature": self.temperature.to_json() if self.temperature else None,
        }


def calibration_report(probs: np.ndarray, gold: np.ndarray, groups: dict[str, list[int]],
                       n_bins: int = 10, temperature: TemperatureModel | None = None,
                       mask: np.ndarray | None = None) -> CalibrationReport:
    """ECE/ACE over all coordinates of ``probs`` [instances x classes].

    ``mask`` (same shape) restricts the instance population, e.g. to
    predicted positives.
    """
    classes = np.broadcast_to(np.arange(probs.shape[1]), probs.shape)
    sel = np.ones(probs.shape, dtype=bool) if mask is None else mask
    conf, corr, cls = probs[sel], gold[sel], classes[sel]
    return CalibrationReport(
        ece=ece(conf, corr, n_bins), ace=ace(conf, corr, cls, n_bins), n_bins=n_bins,
        instances=int(conf.size),
        groups=reliability_table(probs, gold, groups, n_bins), temperature=temperature,
    )
