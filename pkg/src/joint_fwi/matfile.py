#!/usr/bin/python3
"""
This module defines functions that save and load experiment artifacts.
- write_matrix: Saves a real or complex matrix in the JFM1 binary format.
- read_matrix: Loads a JFM1 file back into a numpy array.
- write_index_csv: Saves named integer index lists (survey sidecar).
- read_index_csv: Loads the index lists saved by write_index_csv.
- write_rows_csv: Saves a list of dict-records as CSV with a fixed column order.
- write_pgm: Saves an image as plain-text PGM (P2), scaled to 0..255.

JFM1 layout (little-endian): 8-byte magic b"JFIFMAT1", u64 rows, u64 cols,
u8 dtype (0 = f64, 1 = complex f64 interleaved re, im), then the row-major payload.
"""

from joint_fwi.errors import BadFormat

import numpy as np

from pathlib import Path
import csv
import logging
import struct
from typing import Dict, List, Sequence

MAGIC = b"JFIFMAT1"
HEADER = struct.Struct("<QQB")
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


def _ensure_parent(opath: Path) -> None:
    if not opath.parent.is_dir():
        logging.info("%r does not exist. Making directory.", opath.parent)
        opath.parent.mkdir(parents=True, exist_ok=True)


def write_matrix(opath: Path, matrix: np.ndarray) -> None:
    """
    Saves `matrix` to `opath` in JFM1 format. Vectors are stored as one column.

    - opath: Destination file.
    - matrix: Real, boolean or complex array with at most two dimensions.
    """
    opath = Path(opath)
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise BadFormat("JFM1 stores matrices, got ndim=%d" % matrix.ndim)
    code = 1 if np.iscomplexobj(matrix) else 0
    payload = np.ascontiguousarray(matrix, dtype=DTYPES[code])
    _ensure_parent(opath)
    logging.debug("Writing %r matrix to %r", matrix.shape, opath)
    with opath.open("wb") as ofile:
        ofile.write(MAGIC)
        ofile.write(HEADER.pack(matrix.shape[0], matrix.shape[1], code))
        ofile.write(payload.tobytes())


def read_matrix(ipath: Path) -> np.ndarray:
    """
    Loads a JFM1 file as float64 or complex128 array of shape (rows, cols).

    - ipath: Source file.
    """
    raw = Path(ipath).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise BadFormat("%s: missing JFIFMAT1 magic" % ipath)
    try:
        rows, cols, code = HEADER.unpack_from(raw, len(MAGIC))
    except struct.error as err:
        raise BadFormat("%s: truncated header" % ipath) from err
    if code not in DTYPES:
        raise BadFormat("%s: unknown dtype code %d" % (ipath, code))
    offset = len(MAGIC) + HEADER.size
    expected = rows * cols * DTYPES[code].itemsize
    if len(raw) - offset != expected:
        raise BadFormat("%s: payload holds %d bytes, header says %d" % (ipath, len(raw) - offset, expected))
    matrix = np.frombuffer(raw, dtype=DTYPES[code], count=rows * cols, offset=offset)
    return matrix.reshape(rows, cols).astype(np.complex128 if code else np.float64)


def write_index_csv(opath: Path, columns: Dict[str, Sequence[int]]) -> None:
    """
    Saves index lists as columns `name,position,index`.

    - opath: Destination CSV file.
    - columns: e.g. {"src_idx": [...], "rcv_idx": [...]}.
    """
    opath = Path(opath)
    _ensure_parent(opath)
    with opath.open("w", newline="", encoding="utf-8") as ofile:
        writer = csv.writer(ofile, lineterminator="\n")
        writer.writerow(["name", "position", "index"])
        for name, values in columns.items():
            for position, value in enumerate(values):
                writer.writerow([name, position, int(value)])


def read_index_csv(ipath: Path) -> Dict[str, List[int]]:
    """
    Loads index lists saved by write_index_csv.

    - ipath: Source CSV file.
    """
    columns = {}
    with Path(ipath).open(newline="", encoding="utf-8") as ifile:
        for row in csv.DictReader(ifile):
            columns.setdefault(row["name"], []).append(int(row["index"]))
    return columns


def write_rows_csv(opath: Path, rows: List[dict], fieldnames: Sequence[str]) -> None:
    """
    Saves dict-records to `opath`. Floats are written with repr for exact round trips.

    - opath: Destination CSV file.
    - rows: Records; missing fields are left empty.
    - fieldnames: Column order.
    """
    opath = Path(opath)
    _ensure_parent(opath)
    logging.info("Writing %d row(s) to %r", len(rows), opath)
    with opath.open("w", newline="", encoding="utf-8") as ofile:
        writer = csv.DictWriter(ofile, fieldnames=list(fieldnames), restval="", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: repr(float(value)) if isinstance(value, float) else value for key, value in row.items()})


def write_pgm(opath: Path, image: np.ndarray) -> None:
    """
    Saves a real image as plain PGM (P2) with gray levels 0..255.

    - opath: Destination file.
    - image: 2-D real array; rows are written top to bottom.
    """
    opath = Path(opath)
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    span = hi - lo if hi > lo else 1.0
    levels = np.rint(255.0 * (image - lo) / span).astype(int)
    lines = ["P2", "%d %d" % (image.shape[1], image.shape[0]), "255"]
    lines.extend(" ".join(str(level) for level in row) for row in levels)
    _ensure_parent(opath)
    opath.write_text("\n".join(lines) + "\n", encoding="utf-8")
