"""CSV and JSON readers and writers used by the command line."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .variogram import Location


def read_locations(path) -> list[Location]:
    """Read a ``id,x,y`` CSV file of sites."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "x", "y"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header with columns id,x,y")
        sites = []
        for lineno, row in enumerate(reader, start=2):
            try:
                sites.append(Location(row["id"].strip(), float(row["x"]), float(row["y"])))
            except (TypeError, ValueError) as err:
                raise ValueError(f"{path}:{lineno}: {err}") from None
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: site ids are not unique")
    if len(sites) < 2:
        raise ValueError(f"{path}: at least two sites are required")
    return sites


def write_locations(path, sites) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for s in sites:
            w.writerow([s.id, repr(s.x), repr(s.y)])


def read_data(path, site_ids) -> np.ndarray:
    """Read an ``N x I`` data CSV whose header names the sites.

    Columns are reordered to follow ``site_ids``; missing or non-numeric
    values are errors.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    site_ids = list(site_ids)
    if sorted(header) != sorted(site_ids) or len(set(header)) != len(header):
        missing = sorted(set(site_ids) - set(header))
        extra = sorted(set(header) - set(site_ids))
        raise ValueError(f"{path}: header does not match the sites (missing {missing[:5]}, unknown {extra[:5]})")
    values = np.empty((len(rows), len(header)))
    for n, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}:{n + 2}: expected {len(header)} fields, found {len(row)}")
        try:
            values[n] = [float(v) for v in row]
        except ValueError:
            raise ValueError(f"{path}:{n + 2}: non-numeric or missing value") from None
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: missing values are not supported")
    order = [header.index(s) for s in site_ids]
    return values[:, order]


def write_samples(path, samples: np.ndarray, site_ids, meta: dict) -> Path:
    """Write samples as CSV plus a one-line JSON metadata file; returns the metadata path."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(site_ids))
        for row in samples:
            w.writerow([repr(float(v)) for v in row])
    meta_path = path.with_name(path.name + ".meta.jsonl")
    with meta_path.open("w") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
    return meta_path


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def read_matrix(path) -> np.ndarray:
    """Numeric matrix or vector from a comma- or whitespace-delimited text file."""
    text = Path(path).read_text()
    delimiter = "," if "," in text else None
    try:
        arr = np.loadtxt(path, delimiter=delimiter, ndmin=1)
    except ValueError as err:
        raise ValueError(f"{path}: {err}") from None
    return arr
