"""File writers: atomic CSV/bytes output and the GeoJSON risk map."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .ingest import FEATURE_COLUMNS, GridSpec


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x) -> str:
    """Shortest round-trip text for a number; ints stay ints."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_bytes(Path(path), csv_bytes(header, rows))


def export_geojson(path, grid: GridSpec, cell_levels: Sequence[int],
                   cluster_ids: Sequence[int], zscored: np.ndarray) -> dict:
    """Write one square Polygon feature per cell; returns the collection."""
    m = len(grid.cells)
    if len(cell_levels) != m or len(cluster_ids) != m:
        raise ValueError(f"need a level and cluster for each of the {m} cells")
    zscored = np.asarray(zscored, dtype=np.float64)
    features = []
    for cell in grid.cells:
        level = cell_levels[cell.cell_id]
        if level is None:
            raise ValueError(f"missing level for cell {cell.cell_id}")
        x0, y0, x1, y1 = cell.bounds
        # exterior ring, counterclockwise, closed
        ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
        props = {
            "cell_id": cell.cell_id,
            "cluster": int(cluster_ids[cell.cell_id]),
            "level": int(level),
            "city_id": cell.city_id,
        }
        for j, name in enumerate(FEATURE_COLUMNS):
            props[name] = float(zscored[cell.cell_id, j])
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": props,
        })
    collection = {"type": "FeatureCollection", "features": features}
    text = json.dumps(collection, separators=(",", ":"), sort_keys=True)
    atomic_write_bytes(Path(path), text.encode("utf-8"))
    return collection
