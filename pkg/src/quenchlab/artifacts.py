"""On-disk formats: CSV tables with fixed schemas and the binary snapshot file."""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import SchemaError

SCHEMAS = {
    "loss_curve_train": ("t", "train_loss", "test_loss", "train_acc", "test_acc"),
    "loss_curve_pspin": ("t", "energy"),
    "msd": ("system", "run_id", "tw", "t", "delta", "D_tw", "delta_over_D"),
    "noise": ("run_id", "tw", "D"),
    "regime_report": ("run_id", "t1", "t2", "collapse_pre", "collapse_post", "late_slope", "plateau_q"),
    "sweep": ("sweep_value", "final_train_loss", "t1", "t2", "collapse_post", "plateau_q"),
}

# columns that are free text; everything else must parse as a float or be empty
TEXT_COLUMNS = {"system", "run_id", "sweep_value"}
REQUIRED_COLUMNS = {"t", "tw", "delta", "energy", "train_loss", "train_acc", "D", "run_id", "system"}

SNAP_MAGIC = b"QLSNAP1"


def fmt(v) -> str:
    """Fixed 17-significant-digit rendering; None and nan become empty fields."""
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        return ""
    return format(x, ".17g")


def write_csv(path, schema: str, rows: Iterable) -> Path:
    header = SCHEMAS[schema]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise SchemaError(f"row has {len(row)} fields, {schema} has {len(header)}", path)
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path, schema: str) -> list[dict]:
    """Parse and validate a CSV against its schema.  Numbers become floats, empty fields None."""
    header = SCHEMAS[schema]
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            got = next(reader)
        except StopIteration:
            raise SchemaError("missing header row", path, 1) from None
        if tuple(got) != header:
            raise SchemaError(f"header {got} does not match {list(header)}", path, 1)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(rec)}", path, lineno)
            row = {}
            for name, raw in zip(header, rec):
                if name in TEXT_COLUMNS:
                    row[name] = raw
                    if name in REQUIRED_COLUMNS and raw == "":
                        raise SchemaError(f"empty {name!r}", path, lineno)
                    continue
                if raw == "":
                    if name in REQUIRED_COLUMNS:
                        raise SchemaError(f"empty required field {name!r}", path, lineno)
                    row[name] = None
                    continue
                try:
                    row[name] = float(raw)
                except ValueError:
                    raise SchemaError(f"field {name!r}={raw!r} is not a number", path, lineno) from None
            rows.append(row)
    return rows


class SnapshotWriter:
    """Streams weight snapshots to the binary snapshot file.

    Layout (little-endian): the 7 magic bytes ``QLSNAP1``, M as uint64, the
    record count as uint64, then per record the iteration as int64 followed
    by M float64 values.  The count is patched on close.
    """

    def __init__(self, path, M: int):
        self.path = Path(path)
        self.M = M
        self.count = 0
        self._f = open(self.path, "wb")
        self._f.write(SNAP_MAGIC + struct.pack("<QQ", M, 0))

    def __call__(self, snap):
        self.write(snap.iteration, snap.w)

    def write(self, iteration: int, w: np.ndarray):
        w = np.asarray(w, dtype="<f8")
        if w.shape != (self.M,):
            raise SchemaError(f"snapshot has shape {w.shape}, file holds M={self.M}", self.path)
        self._f.write(struct.pack("<q", int(iteration)))
        self._f.write(w.tobytes())
        self.count += 1

    def close(self):
        if self._f.closed:
            return
        self._f.seek(len(SNAP_MAGIC) + 8)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_snapshots(path):
    """Memory-mapped ``(iterations, weights)``; weights has shape ``(count, M)``."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(len(SNAP_MAGIC) + 16)
    if head[:len(SNAP_MAGIC)] != SNAP_MAGIC:
        raise SchemaError("not a snapshot file (bad magic)", path, 0)
    M, count = struct.unpack("<QQ", head[len(SNAP_MAGIC):])
    rec = np.dtype([("iteration", "<i8"), ("w", "<f8", (M,))])
    data = np.memmap(path, dtype=rec, mode="r", offset=len(head), shape=(count,))
    return np.asarray(data["iteration"]), data["w"]
