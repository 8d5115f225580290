"""Datasets, coalitions and permutations shared by the valuation engines.

A :class:`Dataset` stores its points column-wise (ids, feature matrix, label
vector) sorted by id. Engines address points by *position* in that canonical
order; everything user-facing is keyed by the caller-supplied integer id.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


class Label(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1

    @classmethod
    def parse(cls, value) -> "Label":
        if isinstance(value, Label):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("pos", "positive", "1"):
                return cls.POSITIVE
            if key in ("neg", "negative", "0"):
                return cls.NEGATIVE
            raise ValueError(f"unknown label {value!r}")
        if value in (0, 1) and not isinstance(value, float):
            return cls(int(value))
        raise ValueError(f"unknown label {value!r}")

    @property
    def short(self) -> str:
        return "pos" if self is Label.POSITIVE else "neg"

    def flipped(self) -> "Label":
        return Label(1 - int(self))


class DatasetError(ValueError):
    """Invalid records passed to :func:`dataset_from_records`."""


@dataclass(frozen=True)
class DataPoint:
    id: int
    features: tuple[float, ...]
    label: Label


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable, id-sorted training or test set.

    Build through :func:`dataset_from_records` (validating) or
    :meth:`Dataset.empty`; the raw constructor assumes its arrays are
    already canonical.
    """

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        for arr in (self.ids, self.features, self.labels):
            arr.setflags(write=False)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(
            np.empty(0, dtype=np.int64),
            np.empty((0, dim), dtype=np.float64),
            np.empty(0, dtype=np.int64),
        )

    @property
    def n(self) -> int:
        return int(self.ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[DataPoint]:
        return iter(self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.labels, other.labels)
            # bitwise: -0.0 vs 0.0 and NaN payloads are not expected here
            and self.features.tobytes() == other.features.tobytes()
        )

    __hash__ = None

    @property
    def points(self) -> list[DataPoint]:
        return [
            DataPoint(int(i), tuple(float(v) for v in x), Label(int(y)))
            for i, x, y in zip(self.ids, self.features, self.labels)
        ]

    def records(self) -> list[tuple[int, list[float], Label]]:
        return [(p.id, list(p.features), p.label) for p in self.points]

    def positions(self, ids: Iterable[int]) -> np.ndarray:
        """Canonical positions of ``ids``; raises ``KeyError`` for unknown ids."""
        ids = np.fromiter((int(i) for i in ids), dtype=np.int64)
        pos = np.searchsorted(self.ids, ids)
        found = pos < self.n
        found[found] = self.ids[pos[found]] == ids[found]
        if not found.all():
            raise KeyError(f"ids not in dataset: {ids[~found].tolist()}")
        return pos

    def label_of(self, id_: int) -> Label:
        return Label(int(self.labels[self.positions([id_])[0]]))

    def subset(self, ids: Iterable[int]) -> "Dataset":
        pos = np.sort(self.positions(ids))
        return Dataset(self.ids[pos].copy(), self.features[pos].copy(), self.labels[pos].copy())

    def coalition(self, ids: Iterable[int] = ()) -> "Coalition":
        ids = frozenset(int(i) for i in ids)
        self.positions(ids)
        return Coalition(ids)

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != self.labels.shape:
            raise ValueError("label vector length does not match dataset")
        return Dataset(self.ids.copy(), self.features.copy(), labels.copy())

    def class_counts(self) -> tuple[int, int]:
        """``(n_positive, n_negative)``."""
        n_pos = int(self.labels.sum())
        return n_pos, self.n - n_pos


def dataset_from_records(records: Sequence[tuple[int, Sequence[float], object]]) -> Dataset:
    """Validate ``(id, features, label)`` records and build a canonical dataset.

    The whole input is rejected on the first bad record, and the error message
    names that record's id.
    """
    if len(records) == 0:
        raise DatasetError("no records given")
    seen: set[int] = set()
    dim = None
    rows = []
    for k, rec in enumerate(records):
        try:
            id_, feats, label = rec
        except (TypeError, ValueError):
            raise DatasetError(f"record #{k} is not an (id, features, label) triple") from None
        if isinstance(id_, bool) or int(id_) != id_:
            raise DatasetError(f"record #{k}: id {id_!r} is not an integer")
        id_ = int(id_)
        if id_ in seen:
            raise DatasetError(f"duplicate id {id_} (record #{k})")
        seen.add(id_)
        feats = [float(v) for v in feats]
        if dim is None:
            dim = len(feats)
            if dim == 0:
                raise DatasetError(f"record id {id_} has no features")
        elif len(feats) != dim:
            raise DatasetError(
                f"dimension mismatch at record id {id_}: got {len(feats)}, expected {dim}"
            )
        if not all(math.isfinite(v) for v in feats):
            raise DatasetError(f"non-finite feature value in record id {id_}")
        try:
            lab = Label.parse(label)
        except ValueError as exc:
            raise DatasetError(f"record id {id_}: {exc}") from None
        rows.append((id_, feats, int(lab)))
    rows.sort(key=lambda r: r[0])
    return Dataset(
        np.array([r[0] for r in rows], dtype=np.int64),
        np.array([r[1] for r in rows], dtype=np.float64).reshape(len(rows), dim),
        np.array([r[2] for r in rows], dtype=np.int64),
    )


@dataclass(frozen=True)
class Coalition:
    member_ids: frozenset[int] = frozenset()

    def __len__(self) -> int:
        return len(self.member_ids)

    def __contains__(self, id_: int) -> bool:
        return id_ in self.member_ids

    def __or__(self, other: "Coalition") -> "Coalition":
        return Coalition(self.member_ids | other.member_ids)

    def sorted_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.member_ids))


@dataclass(frozen=True)
class Permutation:
    order: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if len(set(self.order)) != len(self.order):
            raise ValueError("permutation repeats an id")

    def __len__(self) -> int:
        return len(self.order)

    def position(self, id_: int) -> int:
        try:
            return self.order.index(id_)
        except ValueError:
            raise KeyError(f"id {id_} not in permutation") from None

    def prefixes(self) -> Iterator[Coalition]:
        """Yield the ``N + 1`` prefix coalitions, from empty to full."""
        for k in range(len(self.order) + 1):
            yield Coalition(frozenset(self.order[:k]))


def prefix_coalition(perm: Permutation, id_: int) -> Coalition:
    """Ids strictly before ``id_`` in ``perm``."""
    return Coalition(frozenset(perm.order[: perm.position(id_)]))
