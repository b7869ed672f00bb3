"""File formats: JSON specs, adjacency and data CSVs, traces.

All files use 1-based unit labels.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import __version__
from .graph import (
    AdjacencyList,
    NeighborhoodGraph,
    PeriodicSpec,
    periodic_graph,
    seasonal_graph,
    spatial_graph,
    spatiotemporal_graph,
    temporal_graph,
)


def graph_from_dict(data: Mapping) -> NeighborhoodGraph:
    """
    Build a graph from either an explicit ``{"m", "neighbors"}`` object or a
    builder description such as ``{"type": "temporal", "m": 16, "q": 2}``.
    """
    if "neighbors" in data:
        return NeighborhoodGraph.from_dict(data)
    kind = data.get("type")
    m = int(data["m"])
    if kind == "temporal":
        return temporal_graph(m, int(data["q"]))
    if kind == "seasonal":
        return seasonal_graph(m, int(data["q"]), int(data["season"]))
    if kind == "periodic":
        orders = data["orders"]
        return periodic_graph(m, PeriodicSpec(len(orders), tuple(orders)))
    edges = tuple((int(i) - 1, int(j) - 1) for i, j in data.get("edges", ()))
    if kind == "spatial":
        return spatial_graph(AdjacencyList(m, edges))
    if kind == "spatiotemporal":
        return spatiotemporal_graph(AdjacencyList(m, edges), int(data["periods"]), int(data["q"]))
    raise ValueError(f"unknown graph type {kind!r}")


def read_adjacency_csv(path, m: int | None = None) -> AdjacencyList:
    """Two integer columns ``i,j`` (1-based); a header row is optional."""
    edges = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                i, j = int(row[0]), int(row[1])
            except ValueError:
                if edges:
                    raise
                continue  # header
            edges.append((i - 1, j - 1))
    size = m if m is not None else max((max(e) for e in edges), default=-1) + 1
    return AdjacencyList(size, tuple(edges))


def read_series_csv(path) -> np.ndarray:
    """Column ``y`` of a CSV file (or the only column when headerless)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValueError(f"{path}: no data")
    header = [c.strip().lower() for c in rows[0]]
    if "y" in header:
        col = header.index("y")
        body = rows[1:]
    else:
        col = 0
        body = rows
    return np.array([float(r[col]) for r in body])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def spec_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def metadata(seed, spec_obj) -> dict:
    return {"seed": seed, "spec_hash": spec_hash(spec_obj), "version": __version__}


def render_json(payload: Mapping, meta: Mapping) -> str:
    body = {"meta": dict(meta), **_clean(dict(payload))}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def render_csv(rows: Iterable[Mapping], columns: list[str], meta: Mapping) -> str:
    """CSV with ``# key: value`` metadata lines ahead of the header."""
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_json(path, payload: Mapping, meta: Mapping) -> None:
    Path(path).write_text(render_json(payload, meta))


def write_csv(path, rows: Iterable[Mapping], columns: list[str], meta: Mapping) -> None:
    Path(path).write_text(render_csv(rows, columns, meta))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return repr(value) if math.isfinite(value) else ""
    if isinstance(value, np.integer):
        return int(value)
    return value


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
