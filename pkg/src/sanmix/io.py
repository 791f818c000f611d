"""Grouped CSV ingestion, probit preprocessing and table/JSON writers."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .simulate import GroupedDataset


class ParseError(ValueError):
    """Malformed input table; the message names the offending location."""


class PreprocessError(ValueError):
    pass


def load_grouped_csv(path) -> GroupedDataset:
    """Read a CSV whose first column is a group key and the rest are numeric features.

    Groups are ordered by first appearance; rows keep their file order within
    each group.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 ({exc})") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise ParseError(f"{path}: header needs a group column and at least one feature column")
    if not body:
        raise ParseError(f"{path}: no data rows")
    d = len(header) - 1
    keys: list[str] = []
    values = np.empty((len(body), d))
    for r, row in enumerate(body, start=2):
        if len(row) != d + 1:
            raise ParseError(f"{path}: row {r} has {len(row)} fields, expected {d + 1}")
        key = row[0].strip()
        if not key:
            raise ParseError(f"{path}: row {r}, column {header[0]!r}: empty group key")
        for c, cell in enumerate(row[1:], start=1):
            if cell.strip() == "":
                raise ParseError(f"{path}: row {r}, column {header[c]!r}: missing value")
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {header[c]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(val):
                raise ParseError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
            values[r - 2, c - 1] = val
        keys.append(key)
    order = list(dict.fromkeys(keys))
    index = {k: j for j, k in enumerate(order)}
    gid = np.array([index[k] for k in keys])
    perm = np.argsort(gid, kind="stable")
    return GroupedDataset(values[perm], gid[perm], order, [h.strip() for h in header[1:]])


def write_grouped_csv(data: GroupedDataset, path, columns: Optional[Sequence[str]] = None) -> None:
    cols = list(columns or data.columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", *cols])
        for j, row in zip(data.group, data.y):
            w.writerow([data.names[j], *(repr(float(v)) for v in row)])


def probit_preprocess(
    data: GroupedDataset,
    bounds: Optional[Sequence[Optional[tuple[float, float]]]] = None,
    eps: float = 1e-6,
) -> GroupedDataset:
    """Min-max scale every column into (0, 1), then map through the normal quantile.

    ``bounds`` gives (min, max) per column; ``None`` entries use the observed
    range widened by ``eps``. Scaled values are clamped to [eps, 1 - eps].
    """
    y = data.y
    if bounds is None:
        bounds = [None] * data.d
    if len(bounds) != data.d:
        raise PreprocessError("one bounds entry per column required")
    out = np.empty_like(y)
    for c, bd in enumerate(bounds):
        col = y[:, c]
        if col.max() == col.min():
            raise PreprocessError(f"column {c + 1} is constant")
        lo, hi = (col.min() - eps, col.max() + eps) if bd is None else bd
        if not hi > lo:
            raise PreprocessError(f"column {c + 1}: upper bound must exceed lower bound")
        u = np.clip((col - lo) / (hi - lo), eps, 1.0 - eps)
        out[:, c] = special.ndtri(u)
    return GroupedDataset(out, data.group.copy(), list(data.names), list(data.columns))


def filter_groups(data: GroupedDataset, min_size: int = 1, max_size: float = math.inf) -> GroupedDataset:
    """Keep only groups whose size lies in [min_size, max_size]."""
    if min_size > max_size:
        raise ValueError("min_size must not exceed max_size")
    sizes = data.sizes
    keep = np.flatnonzero((sizes >= min_size) & (sizes <= max_size))
    if keep.size == 0:
        raise ValueError(f"no group has a size within [{min_size}, {max_size}]")
    groups = data.groups()
    return GroupedDataset.from_groups([groups[j] for j in keep], [data.names[j] for j in keep], data.columns)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_partition_csv(path, labels, unit_names: Optional[Sequence[str]] = None) -> None:
    labels = np.asarray(labels)
    names = unit_names if unit_names is not None else [str(i + 1) for i in range(labels.size)]
    write_table(path, ["unit", "label"], ((n, int(v) + 1) for n, v in zip(names, labels)))


def write_density_csv(path, grid, values_by_group: dict) -> None:
    grid = np.asarray(grid, dtype=float)
    names = list(values_by_group)
    cols = [np.asarray(values_by_group[n]) for n in names]
    write_table(path, ["grid", *names], ([g, *(c[i] for c in cols)] for i, g in enumerate(grid)))
