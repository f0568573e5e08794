"""Reading and writing point sets: x,y CSV files and binary masks.

CSV files carry a header row ``x,y`` and one point per line.  Masks may be
PGM (P2 ascii or P5 binary) or PNG; any nonzero pixel counts as inside, and
pixel (row, col) becomes the point (x=col, y=row).
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .geometry import PointSet


def read_points_csv(path) -> PointSet:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty point file") from None
        if [h.strip().lower() for h in header] != ["x", "y"]:
            raise ValueError(f"{path}: expected header 'x,y', got {header!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected two columns")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric coordinate {row!r}") from None
    if not rows:
        raise ValueError(f"{path}: no points")
    return PointSet(np.asarray(rows, dtype=float), source_id=path.stem)


def write_points_csv(ps: PointSet, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        for x, y in ps.points:
            writer.writerow([repr(float(x)), repr(float(y))])


def load_mask(path) -> PointSet:
    """Extract inside-pixel coordinates (nonzero pixels) from a mask image."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        img = _read_pgm(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            img = np.asarray(im.convert("L"))
    rows, cols = np.nonzero(img)
    if len(rows) == 0:
        raise ValueError(f"{path}: mask has no inside pixels")
    return PointSet(np.column_stack([cols, rows]).astype(float), source_id=path.stem)


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    # header: magic, width, height, maxval, with '#' comments allowed
    pos, fields = 0, []
    while len(fields) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n|\S+)").match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        pos = m.end()
        token = m.group(1)
        if not token.startswith(b"#"):
            fields.append(token)
    magic, width, height, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval <= 0 or maxval > 65535:
        raise ValueError(f"{path}: bad PGM maxval {maxval}")
    if magic == b"P2":
        values = np.array(data[pos:].split(), dtype=int)
        if values.size != width * height:
            raise ValueError(f"{path}: PGM pixel count mismatch")
        return values.reshape(height, width)
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
        return raw.reshape(height, width).astype(int)
    raise ValueError(f"{path}: unsupported PGM magic {magic!r}")
