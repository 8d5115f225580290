"""Synthetic embeddings, label-noise injection and SV-based detection reports."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import Dataset, Label
from .shapley import ShapleyVector


class Direction(str, enum.Enum):
    POS_TO_NEG = "pos_to_neg"  # ground truth positive, input label negative
    NEG_TO_POS = "neg_to_pos"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SynthConfig:
    n_positive: int = 100
    n_negative: int = 400
    dim: int = 16
    class_separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.n_positive < 1 or self.n_negative < 1:
            raise ValueError("both classes need at least one training point")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.class_separation >= 0:
            raise ValueError("class_separation must be non-negative")


def synth_gaussian(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Two unit-variance isotropic Gaussian classes, train and test.

    Class means sit at ``+-class_separation / 2`` along the diagonal direction.
    The test set has twice as many points per class as the training set.
    Within each set, ids are a seeded shuffle, so the id order carries no class
    information.
    """
    root = np.random.SeedSequence(cfg.seed)
    train_seq, test_seq = root.spawn(2)
    direction = np.ones(cfg.dim) / math.sqrt(cfg.dim)
    offset = 0.5 * cfg.class_separation * direction

    def draw(seq, n_pos, n_neg) -> Dataset:
        rng = np.random.default_rng(seq)
        x_pos = rng.standard_normal((n_pos, cfg.dim)) + offset
        x_neg = rng.standard_normal((n_neg, cfg.dim)) - offset
        features = np.vstack([x_pos, x_neg])
        labels = np.r_[np.ones(n_pos, np.int64), np.zeros(n_neg, np.int64)]
        order = rng.permutation(n_pos + n_neg)
        return Dataset(
            np.arange(n_pos + n_neg, dtype=np.int64),
            np.ascontiguousarray(features[order]),
            labels[order],
        )

    train = draw(train_seq, cfg.n_positive, cfg.n_negative)
    test = draw(test_seq, 2 * cfg.n_positive, 2 * cfg.n_negative)
    return train, test


@dataclass(frozen=True)
class NoiseSpec:
    level_positive: float = 0.0
    level_negative: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for lvl in (self.level_positive, self.level_negative):
            if not 0.0 <= lvl < 1.0:
                raise ValueError(f"noise level {lvl} outside [0, 1)")


@dataclass(frozen=True)
class FlipRecord:
    flipped: dict[int, Direction] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.flipped)

    def ids(self, direction: Optional[Direction] = None) -> list[int]:
        return sorted(i for i, d in self.flipped.items() if direction is None or d == direction)

    def reversed(self) -> "FlipRecord":
        swap = {Direction.POS_TO_NEG: Direction.NEG_TO_POS, Direction.NEG_TO_POS: Direction.POS_TO_NEG}
        return FlipRecord({i: swap[d] for i, d in self.flipped.items()})


def n_flips(level: float, class_count: int) -> int:
    # floor; a tiny epsilon keeps products like 0.1 * 400 = 40.00000000000001 / 39.999... exact
    return int(math.floor(level * class_count + 1e-9))


def inject_noise(clean: Dataset, spec: NoiseSpec) -> tuple[Dataset, FlipRecord]:
    """Flip ``floor(level * class_count)`` labels in each class, without replacement."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    labels = clean.labels.copy()
    flipped: dict[int, Direction] = {}
    for label, level, direction in (
        (Label.POSITIVE, spec.level_positive, Direction.POS_TO_NEG),
        (Label.NEGATIVE, spec.level_negative, Direction.NEG_TO_POS),
    ):
        members = np.flatnonzero(clean.labels == int(label))
        k = n_flips(level, members.shape[0])
        chosen = np.sort(rng.choice(members, size=k, replace=False)) if k else members[:0]
        labels[chosen] = 1 - int(label)
        flipped.update({int(clean.ids[p]): direction for p in chosen})
    return clean.with_labels(labels), FlipRecord(dict(sorted(flipped.items())))


def apply_flips(data: Dataset, record: FlipRecord) -> Dataset:
    """Flip exactly the recorded ids, checking each against its recorded direction.

    ``apply_flips(noisy, record.reversed())`` recovers the clean dataset.
    """
    labels = data.labels.copy()
    ids = list(record.flipped)
    for p, id_ in zip(data.positions(ids), ids):
        want = Label.POSITIVE if record.flipped[id_] is Direction.POS_TO_NEG else Label.NEGATIVE
        if labels[p] != int(want):
            raise ValueError(f"id {id_} is not labelled {want.short}; record inconsistent")
        labels[p] = 1 - labels[p]
    return data.with_labels(labels)


@dataclass(frozen=True)
class Ranking:
    """Training ids in ascending SV order, ties broken by ascending id."""

    order: tuple[int, ...]
    values: dict[int, float] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.order)

    def bottom(self, fraction: float) -> list[int]:
        return list(self.order[: bottom_size(fraction, len(self.order))])


def bottom_size(fraction: float, n: int) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("bottom_fraction must be in (0, 1]")
    return int(math.floor(fraction * n + 1e-9))


def rank_by_value(sv: ShapleyVector) -> Ranking:
    order = sorted(sv.values, key=lambda i: (sv.values[i], i))
    return Ranking(tuple(order), dict(sv.values))


@dataclass(frozen=True)
class DetectionReport:
    bottom_fraction: float
    bottom_size: int
    captured_pos_truth: float
    captured_neg_truth: float
    captured_total: float
    n_pos_truth: int
    n_neg_truth: int
    vacuous_pos_truth: bool
    vacuous_neg_truth: bool

    @property
    def vacuous(self) -> bool:
        return self.vacuous_pos_truth and self.vacuous_neg_truth

    def capture(self, direction: Direction) -> float:
        if direction is Direction.POS_TO_NEG:
            return self.captured_pos_truth
        return self.captured_neg_truth


def detection_report(ranking: Ranking, record: FlipRecord, bottom_fraction: float) -> DetectionReport:
    """Share of flipped ids landing in the ``bottom_fraction`` lowest-valued slice.

    A direction with no flips reports 1.0 and sets its vacuous flag.
    """
    size = bottom_size(bottom_fraction, len(ranking))
    bottom = set(ranking.order[:size])

    def share(ids: list[int]) -> tuple[float, bool]:
        if not ids:
            return 1.0, True
        return sum(i in bottom for i in ids) / len(ids), False

    pos_ids = record.ids(Direction.POS_TO_NEG)
    neg_ids = record.ids(Direction.NEG_TO_POS)
    cap_pos, vac_pos = share(pos_ids)
    cap_neg, vac_neg = share(neg_ids)
    cap_total, _ = share(record.ids())
    return DetectionReport(
        bottom_fraction=bottom_fraction,
        bottom_size=size,
        captured_pos_truth=cap_pos,
        captured_neg_truth=cap_neg,
        captured_total=cap_total,
        n_pos_truth=len(pos_ids),
        n_neg_truth=len(neg_ids),
        vacuous_pos_truth=vac_pos,
        vacuous_neg_truth=vac_neg,
    )


class MappingRow(NamedTuple):
    rank: int
    id: int
    sv: float
    input_label: Label
    ground_truth_label: Label


def class_mapping_table(ranking: Ranking, noisy: Dataset, clean: Dataset) -> list[MappingRow]:
    """Rank-ordered rows pairing each point's SV with its input and true labels."""
    if not np.array_equal(noisy.ids, clean.ids) or set(ranking.order) != set(noisy.ids.tolist()):
        raise ValueError("ranking, noisy and clean datasets must share the same ids")
    pos = noisy.positions(ranking.order)
    return [
        MappingRow(
            rank,
            id_,
            float(ranking.values.get(id_, math.nan)),
            Label(int(noisy.labels[p])),
            Label(int(clean.labels[p])),
        )
        for rank, (id_, p) in enumerate(zip(ranking.order, pos))
    ]


def mean_value_by_label(sv: ShapleyVector, data: Dataset) -> dict[Label, float]:
    """Mean SV of points grouped by their label in ``data``."""
    vals = sv.as_array()
    labels = data.labels[data.positions(sv.ids)]
    return {
        lab: float(vals[labels == int(lab)].mean()) if (labels == int(lab)).any() else math.nan
        for lab in (Label.POSITIVE, Label.NEGATIVE)
    }
