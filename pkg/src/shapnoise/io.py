"""CSV and manifest serialization used by the command-line front end.

Dataset files have the header ``id,label,f0,...,f{d-1}``, with labels written
as ``pos``/``neg``. Floats are written with 17 significant digits, so a file
read back reproduces the dataset bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

from .core import Dataset, DatasetError, Label, dataset_from_records
from .harness import DetectionReport, Direction, FlipRecord, MappingRow
from .shapley import ShapleyRun, ShapleyVector

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA = "shapnoise.manifest/1"


class CsvFormatError(DatasetError):
    pass


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(path: Path, data: Dataset) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(data.dim)])
        for id_, x, y in zip(data.ids, data.features, data.labels):
            w.writerow([int(id_), Label(int(y)).short] + [fmt(v) for v in x])


def read_dataset(path: Path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    dim = len(header) - 2
    expected = ["id", "label"] + [f"f{j}" for j in range(dim)]
    if dim < 1 or header != expected:
        raise CsvFormatError(f"{path}:1: header must be id,label,f0,...; got {','.join(header)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            id_ = int(row[0])
        except ValueError:
            raise CsvFormatError(f"{path}:{lineno}: column 'id': not an integer: {row[0]!r}") from None
        try:
            label = Label.parse(row[1])
        except ValueError:
            raise CsvFormatError(f"{path}:{lineno}: column 'label': expected pos/neg, got {row[1]!r}") from None
        feats = []
        for j, cell in enumerate(row[2:]):
            try:
                feats.append(float(cell))
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: column 'f{j}': not a number: {cell!r}") from None
        records.append((id_, feats, label))
    if not records:
        raise CsvFormatError(f"{path}: no data rows")
    try:
        return dataset_from_records(records)
    except DatasetError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


def sha256_of(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_values(path: Path, sv: ShapleyVector, data: Dataset) -> None:
    """``id,sv,input_label`` in id order."""
    labels = data.labels[data.positions(sv.ids)]
    _write_rows(
        path,
        ["id", "sv", "input_label"],
        ([i, fmt(v), Label(int(y)).short] for (i, v), y in zip(sv.values.items(), labels)),
    )


def read_values(path: Path) -> dict[int, float]:
    with Path(path).open(newline="") as fh:
        return {int(r["id"]): float(r["sv"]) for r in csv.DictReader(fh)}


def write_trace(path: Path, run: ShapleyRun, track_ids: Sequence[int]) -> None:
    cols = [run.ids.index(i) for i in track_ids]
    _write_rows(
        path,
        ["permutation_count"] + [f"sv_{i}" for i in track_ids],
        ([int(k)] + [fmt(v) for v in run.trace[c, cols]] for c, k in enumerate(run.checkpoints)),
    )


def write_flips(path: Path, record: FlipRecord) -> None:
    _write_rows(path, ["id", "direction"], ([i, str(d)] for i, d in record.flipped.items()))


def read_flips(path: Path) -> FlipRecord:
    with Path(path).open(newline="") as fh:
        return FlipRecord({int(r["id"]): Direction(r["direction"]) for r in csv.DictReader(fh)})


DETECTION_HEADER = [
    "bottom_fraction",
    "bottom_size",
    "captured_pos_truth",
    "captured_neg_truth",
    "captured_total",
    "n_pos_truth",
    "n_neg_truth",
    "vacuous_pos_truth",
    "vacuous_neg_truth",
]


def write_detection(path: Path, reports: Sequence[DetectionReport]) -> None:
    _write_rows(
        path,
        DETECTION_HEADER,
        (
            [
                fmt(r.bottom_fraction),
                r.bottom_size,
                fmt(r.captured_pos_truth),
                fmt(r.captured_neg_truth),
                fmt(r.captured_total),
                r.n_pos_truth,
                r.n_neg_truth,
                int(r.vacuous_pos_truth),
                int(r.vacuous_neg_truth),
            ]
            for r in reports
        ),
    )


def write_mapping(path: Path, rows: Sequence[MappingRow]) -> None:
    _write_rows(
        path,
        ["rank", "id", "sv", "input_label", "ground_truth_label"],
        ([r.rank, r.id, fmt(r.sv), r.input_label.short, r.ground_truth_label.short] for r in rows),
    )


def read_csv_dicts(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_csv_dicts(path: Path, header: Sequence[str], rows: Iterable[dict]) -> None:
    _write_rows(path, header, ([row[h] for h in header] for row in rows))


def write_manifest(path: Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: Path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{path}: not a shapnoise manifest (schema {data.get('schema')!r})")
    return data
