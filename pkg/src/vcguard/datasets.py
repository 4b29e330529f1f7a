"""Data ingestion and serialization.

Covers the four interchange formats the tooling speaks:

* IDX image/label files (the MNIST container): big-endian, magic
  0x00000803 for images (then N, rows, cols, N*rows*cols unsigned bytes)
  and 0x00000801 for labels (then N, N bytes each in [0, 9]). Pixels are
  scaled to [0, 1] by /255 on load and quantized back by round(x * 255)
  on write. Parsing is bit-exact: any truncation, oversize, or wrong
  magic raises InputError rather than guessing.
* Probability CSV: header "p0,p1,...,p{C-1}", one softmax row per line.
* Report JSON: VcReport objects and sweep-record arrays with fixed field
  names; floats are written with Python's shortest round-trip repr (at
  most 17 significant digits), so reload is bitwise exact.
* Sweep CSV with header "level,accuracy,log_vc,trial".

Also hosts the synthetic Gaussian-blob dataset used as a label-available
stand-in where full-scale image corpora are out of reach.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .metric import ProbabilityMatrix, VcReport, SIMPLEX_ATOL

IDX3_MAGIC = 0x00000803
IDX1_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    """N flat images with pixels in [0, 1] and N integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        imgs = np.asarray(self.images, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if imgs.ndim != 2 or labs.ndim != 1:
            raise InputError("images must be [N x d] and labels 1-D")
        if imgs.shape[0] != labs.size:
            raise InputError(
                f"image count {imgs.shape[0]} does not match label count {labs.size}"
            )
        if imgs.size and (imgs.min() < 0.0 or imgs.max() > 1.0):
            raise InputError("pixel values must lie in [0, 1]")
        if labs.size and labs.min() < 0:
            raise InputError("labels must be non-negative")
        self.images = imgs
        self.labels = labs

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices)
        return LabeledDataset(self.images[idx].copy(), self.labels[idx].copy())


@dataclass(frozen=True)
class SweepRecord:
    """One (perturbation level, accuracy, log VC) observation.

    ``log_vc`` is None when the metric was degenerate on that set; such
    records are kept, never dropped.
    """

    level: float
    accuracy: float
    log_vc: float | None
    trial: int

    def __post_init__(self) -> None:
        if self.level < 0:
            raise InputError("level must be >= 0")


# --- IDX ------------------------------------------------------------------


def _read_header(data: bytes, n_words: int, path) -> tuple[int, ...]:
    need = 4 * n_words
    if len(data) < need:
        raise InputError(
            f"truncated IDX file {path}: header needs {need} bytes, file has {len(data)}"
        )
    return struct.unpack(f">{n_words}I", data[:need])


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX3 image file into an N x (rows*cols) matrix in [0, 1]."""
    data = Path(path).read_bytes()
    magic, n, rows, cols = _read_header(data, 4, path)
    if magic != IDX3_MAGIC:
        raise InputError(
            f"wrong magic 0x{magic:08x} in {path}, expected 0x{IDX3_MAGIC:08x} (IDX3 images)"
        )
    expected = 16 + n * rows * cols
    if len(data) != expected:
        raise InputError(
            f"dimension mismatch in {path}: header promises {n}x{rows}x{cols} "
            f"({expected} bytes), file has {len(data)}"
        )
    pixels = np.frombuffer(data, dtype=np.uint8, offset=16)
    return pixels.reshape(n, rows * cols).astype(np.float64) / 255.0


def idx3_dims(path) -> tuple[int, int, int]:
    """(count, rows, cols) from an IDX3 header without loading the pixels."""
    with open(path, "rb") as fh:
        head = fh.read(16)
    magic, n, rows, cols = _read_header(head, 4, path)
    if magic != IDX3_MAGIC:
        raise InputError(f"wrong magic 0x{magic:08x} in {path}")
    return n, rows, cols


def load_idx_labels(path) -> np.ndarray:
    """Parse an IDX1 label file into an int array with entries in [0, 9]."""
    data = Path(path).read_bytes()
    magic, n = _read_header(data, 2, path)
    if magic != IDX1_MAGIC:
        raise InputError(
            f"wrong magic 0x{magic:08x} in {path}, expected 0x{IDX1_MAGIC:08x} (IDX1 labels)"
        )
    if len(data) != 8 + n:
        raise InputError(
            f"dimension mismatch in {path}: header promises {n} labels, "
            f"file has {len(data) - 8} payload bytes"
        )
    labels = np.frombuffer(data, dtype=np.uint8, offset=8)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise InputError(
            f"label out of range in {path}: byte {int(labels[bad])} at index {bad}"
        )
    return labels.astype(np.int64)


def write_idx_images(images: np.ndarray, path, rows: int | None = None, cols: int | None = None) -> None:
    """Quantize [0, 1] pixels to bytes and write an IDX3 file.

    Without explicit rows/cols the flat width must be a perfect square.
    """
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 2:
        raise InputError("images must be [N x d]")
    d = imgs.shape[1]
    if rows is None or cols is None:
        side = math.isqrt(d)
        if side * side != d:
            raise InputError(
                f"flat width {d} is not square; pass rows and cols explicitly"
            )
        rows = cols = side
    if rows * cols != d:
        raise InputError(f"rows*cols = {rows * cols} does not match flat width {d}")
    quantized = np.rint(np.clip(imgs, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX3_MAGIC, imgs.shape[0], rows, cols))
        fh.write(quantized.tobytes())


def write_idx_labels(labels: np.ndarray, path) -> None:
    labs = np.asarray(labels, dtype=np.int64)
    if labs.ndim != 1 or (labs.size and (labs.min() < 0 or labs.max() > 9)):
        raise InputError("labels must be a 1-D array with entries in [0, 9]")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX1_MAGIC, labs.size))
        fh.write(labs.astype(np.uint8).tobytes())


# --- synthetic data ---------------------------------------------------------


def synth_blobs(n: int, classes: int, dim: int, spread: float, seed: int) -> LabeledDataset:
    """Seeded Gaussian clusters at fixed well-separated centers in [0, 1]^dim.

    Class centers sit on a circle of radius 0.35 in the first two
    coordinates (0.5 elsewhere), so a nearest-center rule is perfect as
    spread -> 0. Classes are balanced; any remainder goes to the lowest
    class indices. Samples are clipped into the unit box.
    """
    if classes < 2 or n < classes:
        raise InputError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    if dim < 2:
        raise InputError(f"dim must be >= 2, got {dim}")
    if spread < 0:
        raise InputError("spread must be >= 0")
    centers = np.full((classes, dim), 0.5)
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers[:, 0] += 0.35 * np.cos(angles)
    centers[:, 1] += 0.35 * np.sin(angles)
    base, rem = divmod(n, classes)
    counts = [base + (1 if k < rem else 0) for k in range(classes)]
    rng = np.random.default_rng(seed)
    images = np.empty((n, dim))
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for k, count in enumerate(counts):
        images[row : row + count] = centers[k] + rng.normal(0.0, spread, size=(count, dim))
        labels[row : row + count] = k
        row += count
    np.clip(images, 0.0, 1.0, out=images)
    return LabeledDataset(images=images, labels=labels)


def blob_centers(classes: int, dim: int) -> np.ndarray:
    """The fixed class centers synth_blobs samples around."""
    centers = np.full((classes, dim), 0.5)
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers[:, 0] += 0.35 * np.cos(angles)
    centers[:, 1] += 0.35 * np.sin(angles)
    return centers


# --- probability CSV --------------------------------------------------------


def read_prob_csv(path) -> ProbabilityMatrix:
    """Read a probability CSV (header p0..p{C-1}) into a validated matrix.

    Errors name the offending 1-based data row: ragged rows, non-numeric
    cells, and rows off the simplex are all rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        expected = [f"p{i}" for i in range(len(header))]
        if header != expected:
            raise InputError(
                f"bad header in {path}: expected {','.join(expected)}, got {','.join(header)}"
            )
        width = len(header)
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=1):
            if len(row) != width:
                raise InputError(
                    f"row {lineno}: expected {width} columns, got {len(row)}"
                )
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise InputError(f"row {lineno}: non-numeric cell ({exc})") from None
            total = math.fsum(values)
            if abs(total - 1.0) > SIMPLEX_ATOL:
                raise InputError(
                    f"row {lineno}: probabilities sum to {total:.8f}, "
                    f"expected 1 within {SIMPLEX_ATOL:g}"
                )
            rows.append(values)
    if not rows:
        raise InputError(f"{path} has a header but no data rows")
    return ProbabilityMatrix(np.asarray(rows, dtype=np.float64))


def write_prob_csv(m: ProbabilityMatrix, path) -> None:
    """Inverse of read_prob_csv; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"p{i}" for i in range(m.n_classes)])
        for row in m.probs:
            writer.writerow([repr(float(v)) for v in row])


# --- report JSON / sweep CSV -------------------------------------------------


def _vc_report_payload(report: VcReport) -> dict:
    payload = {
        "vc": report.vc,
        "included_count": report.included_count,
        "epsilon0": report.config.epsilon0,
        "normalization": report.config.normalization,
    }
    if report.log_vc is not None:
        payload["log_vc"] = report.log_vc
    return payload


def _sweep_payload(records) -> list[dict]:
    return [
        {
            "level": r.level,
            "accuracy": r.accuracy,
            "log_vc": r.log_vc,
            "trial": r.trial,
        }
        for r in records
    ]


def write_report_json(payload, path) -> None:
    """Serialize a VcReport, a SweepRecord list, or a pre-shaped dict/list.

    Field names are fixed: {"vc", "log_vc", "included_count", "epsilon0",
    "normalization"} for reports (log_vc omitted when degenerate) and
    {"level", "accuracy", "log_vc", "trial"} per sweep record.
    """
    if isinstance(payload, VcReport):
        doc = _vc_report_payload(payload)
    elif isinstance(payload, (list, tuple)) and all(
        isinstance(r, SweepRecord) for r in payload
    ):
        doc = _sweep_payload(payload)
    elif isinstance(payload, (dict, list)):
        doc = payload
    else:
        raise InputError(f"cannot serialize {type(payload).__name__} as a report")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, allow_nan=False)
        fh.write("\n")


def write_sweep_csv(records, path) -> None:
    """Sweep records as CSV with header level,accuracy,log_vc,trial."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "accuracy", "log_vc", "trial"])
        for r in records:
            log_cell = "" if r.log_vc is None else repr(float(r.log_vc))
            writer.writerow([repr(float(r.level)), repr(float(r.accuracy)), log_cell, r.trial])


def read_sweep_records(path) -> list[SweepRecord]:
    """Load sweep records from the CSV or JSON shape written by this module."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("[") or stripped.startswith("{"):
        doc = json.loads(text)
        if not isinstance(doc, list):
            raise InputError(f"{path}: expected a JSON array of sweep records")
        try:
            return [
                SweepRecord(
                    level=float(r["level"]),
                    accuracy=float(r["accuracy"]),
                    log_vc=None if r["log_vc"] is None else float(r["log_vc"]),
                    trial=int(r["trial"]),
                )
                for r in doc
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: malformed sweep record ({exc})") from exc
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    if header != ["level", "accuracy", "log_vc", "trial"]:
        raise InputError(
            f"{path}: expected header level,accuracy,log_vc,trial, got {header}"
        )
    records = []
    for lineno, row in enumerate(reader, start=1):
        if len(row) != 4:
            raise InputError(f"{path} row {lineno}: expected 4 columns, got {len(row)}")
        try:
            records.append(
                SweepRecord(
                    level=float(row[0]),
                    accuracy=float(row[1]),
                    log_vc=float(row[2]) if row[2] else None,
                    trial=int(row[3]),
                )
            )
        except ValueError as exc:
            raise InputError(f"{path} row {lineno}: {exc}") from None
    return records
