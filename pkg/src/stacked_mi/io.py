"""CSV reading and writing for completed datasets."""

from __future__ import annotations

import csv
import io
import re
from pathlib import Path
from typing import TextIO

import numpy as np

from stacked_mi.stacking import Dataset, ImputationSet

IMP_COLUMN = ".imp"
_IMP_FILE = re.compile(r"^imp_(\d+)\.csv$")


def _read_rows(handle: TextIO) -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(handle)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValueError("empty CSV") from None
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    return header, rows


def _to_matrix(header: list[str], rows: list[list[str]], source: str) -> np.ndarray:
    out = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{source}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.upper() in {"NA", "NAN"}:
                raise ValueError(f"{source}: missing value at row {i + 2}, column {header[j]!r}")
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise ValueError(f"{source}: non-numeric cell {cell!r} at row {i + 2}") from None
    return out


def read_dataset(source: str | Path | TextIO) -> Dataset:
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            header, rows = _read_rows(fh)
        name = str(source)
    else:
        header, rows = _read_rows(source)
        name = "<stream>"
    if not rows:
        raise ValueError(f"{name}: no data rows")
    return Dataset(_to_matrix(header, rows, name), header)


def format_dataset(data: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(data.column_names)
    for row in data.values:
        writer.writerow([format(float(v), ".17g") for v in row])
    return buf.getvalue()


def write_dataset(data: Dataset, path: str | Path) -> None:
    Path(path).write_text(format_dataset(data))


def read_imputations(path: str | Path) -> ImputationSet:
    """Load from a directory of ``imp_001.csv ...`` or a single CSV with ``.imp``."""
    path = Path(path)
    if path.is_dir():
        found = []
        for child in path.iterdir():
            match = _IMP_FILE.match(child.name)
            if match:
                found.append((int(match.group(1)), child))
        if not found:
            raise ValueError(f"{path}: no imp_###.csv files")
        found.sort()
        numbers = [n for n, _ in found]
        if numbers != list(range(1, len(found) + 1)):
            raise ValueError(f"{path}: imputation files must be numbered 1..m, got {numbers}")
        return ImputationSet([read_dataset(p) for _, p in found])

    with open(path, newline="") as fh:
        header, rows = _read_rows(fh)
    if IMP_COLUMN not in header:
        raise ValueError(f"{path}: expected a {IMP_COLUMN!r} column or a directory of imp_###.csv files")
    values = _to_matrix(header, rows, str(path))
    col = header.index(IMP_COLUMN)
    labels = values[:, col]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{path}: {IMP_COLUMN} must hold integers")
    labels = labels.astype(int)
    m = int(labels.max())
    if labels.min() < 1 or set(labels.tolist()) != set(range(1, m + 1)):
        raise ValueError(f"{path}: {IMP_COLUMN} must cover 1..m")
    names = [h for j, h in enumerate(header) if j != col]
    data = np.delete(values, col, axis=1)
    return ImputationSet([Dataset(data[labels == l], names) for l in range(1, m + 1)])


def write_imputations(imps: ImputationSet, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(imps.m)))
    for l in range(1, imps.m + 1):
        write_dataset(imps[l], directory / f"imp_{l:0{width}d}.csv")
