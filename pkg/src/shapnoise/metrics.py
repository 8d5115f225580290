"""Test-set metrics and the coalition utility ``V(S)``."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Coalition, Dataset
from .model import Model, TrainConfig, fit_rows, predict_many


class MetricKind(str, enum.Enum):
    ACCURACY = "accuracy"
    RECALL = "recall"
    SPECIFICITY = "specificity"

    def __str__(self) -> str:
        return self.value


class SingleClassTestSetError(ValueError):
    """Recall or specificity would have a zero denominator."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the positive and negative classes exchanged."""
        return ConfusionCounts(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def confusion_from_predictions(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & truth)),
        tn=int(np.count_nonzero(~pred & ~truth)),
        fp=int(np.count_nonzero(pred & ~truth)),
        fn=int(np.count_nonzero(~pred & truth)),
    )


def confusion(model: Model, test: Dataset) -> ConfusionCounts:
    if test.n == 0:
        raise ValueError("test set is empty")
    return confusion_from_predictions(predict_many(model, test.features), test.labels)


def score(counts: ConfusionCounts, kind: MetricKind | str) -> float:
    kind = MetricKind(kind)
    if kind is MetricKind.ACCURACY:
        if counts.total == 0:
            raise ZeroDivisionError("accuracy of an empty confusion matrix")
        return (counts.tp + counts.tn) / counts.total
    if kind is MetricKind.RECALL:
        if counts.tp + counts.fn == 0:
            raise ZeroDivisionError("recall undefined: test set has no positives")
        return counts.tp / (counts.tp + counts.fn)
    if counts.tn + counts.fp == 0:
        raise ZeroDivisionError("specificity undefined: test set has no negatives")
    return counts.tn / (counts.tn + counts.fp)


def check_test_set(test: Dataset) -> None:
    n_pos, n_neg = test.class_counts()
    if n_pos == 0 or n_neg == 0:
        raise SingleClassTestSetError(
            f"test set must contain both classes (got {n_pos} positive, {n_neg} negative)"
        )


def parse_kinds(kinds: Iterable[MetricKind | str] | MetricKind | str) -> tuple[MetricKind, ...]:
    if isinstance(kinds, (str, MetricKind)):
        kinds = [kinds]
    out = tuple(MetricKind(k) for k in kinds)
    if not out:
        raise ValueError("at least one metric is required")
    if len(set(out)) != len(out):
        raise ValueError("duplicate metric")
    return out


class Utility:
    """``V(S)`` for coalitions ``S`` of ``train``, scored on ``test``.

    Confusion counts are memoized per coalition (keyed by the bitmask of
    canonical positions), so every metric is served from a single fit. Cache
    hits return the stored counts and cannot change a value. Once
    ``cache_size`` entries are stored, new coalitions are still evaluated but
    no longer cached.
    """

    def __init__(
        self,
        train: Dataset,
        test: Dataset,
        config: TrainConfig = TrainConfig(),
        cache_size: int = 1 << 20,
    ):
        if test.n == 0:
            raise ValueError("test set is empty")
        if train.n and train.dim != test.dim:
            raise ValueError(f"train dimension {train.dim} != test dimension {test.dim}")
        check_test_set(test)
        self.train = train
        self.test = test
        self.config = config
        self.cache_size = cache_size
        self._cache: dict[int, ConfusionCounts] = {}
        self._lock = threading.Lock()
        self.n_fits = 0

    @property
    def n_players(self) -> int:
        return self.train.n

    def counts_for_rows(self, rows: np.ndarray, key: int | None = None) -> ConfusionCounts:
        """Confusion counts of the model fitted on canonical positions ``rows``.

        ``key`` must be the bitmask of ``rows`` when given; it enables the cache.
        """
        if key is not None:
            hit = self._cache.get(key)
            if hit is not None:
                return hit
        model = fit_rows(self.train.features, self.train.labels, rows, self.config)
        counts = confusion(model, self.test)
        with self._lock:
            self.n_fits += 1
            if key is not None and len(self._cache) < self.cache_size:
                self._cache.setdefault(key, counts)
        return counts

    def counts_for_mask(self, mask: int) -> ConfusionCounts:
        rows = np.array([i for i in range(self.n_players) if mask >> i & 1], dtype=np.int64)
        return self.counts_for_rows(rows, mask)

    def scores_for_mask(self, mask: int, kinds: Sequence[MetricKind]) -> np.ndarray:
        counts = self.counts_for_mask(mask)
        return np.array([score(counts, k) for k in kinds])

    def mask_of(self, coalition: Coalition | Iterable[int]) -> int:
        ids = coalition.member_ids if isinstance(coalition, Coalition) else coalition
        mask = 0
        for p in self.train.positions(ids):
            mask |= 1 << int(p)
        return mask

    def __call__(self, coalition: Coalition | Iterable[int], kind: MetricKind | str) -> float:
        return score(self.counts_for_mask(self.mask_of(coalition)), kind)


def utility(
    train: Dataset,
    test: Dataset,
    kind: MetricKind | str,
    config: TrainConfig = TrainConfig(),
) -> float:
    """Score on ``test`` of the model fitted on all of ``train``.

    ``train`` is the coalition, already materialized as a dataset.
    """
    return Utility(train, test, config, cache_size=0)(train.ids.tolist(), kind)
