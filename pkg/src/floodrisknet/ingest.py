"""Grid construction and assembly of the flood-occurrence (BF) and feature (FR) matrices."""
from __future__ import annotations

import csv
import math
import warnings
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError

FEATURE_COLUMNS = (
    "flood_frequency",
    "flood_intensity",
    "population",
    "building_area",
    "poverty_rate",
    "disability_rate",
    "limited_english_rate",
    "poi_count",
    "building_age",
    "recip_foundation_height",
)
RATE_COLUMNS = frozenset({"poverty_rate", "disability_rate", "limited_english_rate"})

CELLS_HEADER = ("cell_id", "row", "col", "min_x", "min_y", "max_x", "max_y",
                "city_id", "city_population")
OCCURRENCES_HEADER = ("cell_id", "week_index")
FEATURES_HEADER = ("cell_id",) + FEATURE_COLUMNS

DEFAULT_CELL_SIZE = 2000.0


@dataclass
class CellRecord:
    cell_id: int
    row: int
    col: int
    bounds: tuple[float, float, float, float]  # min_x, min_y, max_x, max_y
    city_id: str | None = None
    city_population: float | None = None


@dataclass
class GridSpec:
    cell_size: float
    bbox: tuple[float, float, float, float]
    rows: int
    cols: int
    cells: list[CellRecord] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.cells)

    def validate(self) -> None:
        if self.rows * self.cols < len(self.cells):
            raise SchemaError("grid has more cells than rows*cols")
        ids = sorted(c.cell_id for c in self.cells)
        if ids != list(range(len(ids))):
            raise SchemaError("cell ids must be unique and dense in [0, m)")


def _ceil_div(length: float, size: float) -> int:
    # tolerate float noise such as 4000.0000000001 / 2000
    return max(1, math.ceil(round(length / size, 9)))


def build_grid(bbox, cell_size: float = DEFAULT_CELL_SIZE) -> GridSpec:
    """Tile ``bbox = (min_x, min_y, max_x, max_y)`` row-major from the lower-left corner.

    Partial cells at the right/top edges are kept, so the grid dimensions are
    ceilings of extent / cell_size.
    """
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    min_x, min_y, max_x, max_y = map(float, bbox)
    if not (max_x > min_x and max_y > min_y):
        raise ValueError(f"degenerate bounding box {bbox}")
    cols = _ceil_div(max_x - min_x, cell_size)
    rows = _ceil_div(max_y - min_y, cell_size)
    cells = []
    for r in range(rows):
        for c in range(cols):
            x0 = min_x + c * cell_size
            y0 = min_y + r * cell_size
            cells.append(CellRecord(len(cells), r, c, (x0, y0, x0 + cell_size, y0 + cell_size)))
    return GridSpec(float(cell_size), (min_x, min_y, max_x, max_y), rows, cols, cells)


def assemble_bf(events: Iterable[tuple[int, int]], m: int, d_bf: int) -> np.ndarray:
    """Binary m x d_bf matrix with a 1 wherever at least one event falls in (cell, week)."""
    if d_bf < 1:
        raise ValueError("d_BF must be at least 1")
    bf = np.zeros((m, d_bf))
    for cell, week in events:
        if not 0 <= cell < m:
            raise SchemaError(f"cell index {cell} out of range [0, {m})")
        if not 0 <= week < d_bf:
            raise SchemaError(f"week index {week} out of range [0, {d_bf})")
        bf[cell, week] = 1.0
    return bf


def flood_hazard_features(claims: Iterable[tuple[int, int, float]], m: int) -> np.ndarray:
    """(flood_frequency, flood_intensity) per cell from (cell_id, week, amount) claims.

    Frequency is the number of distinct flood weeks; intensity is the mean
    claim amount per flood event (cell-week). Cells without claims get zeros.
    """
    weeks: list[dict[int, float]] = [dict() for _ in range(m)]
    for cell, week, amount in claims:
        if not 0 <= cell < m:
            raise SchemaError(f"cell index {cell} out of range [0, {m})")
        weeks[cell][week] = weeks[cell].get(week, 0.0) + float(amount)
    out = np.zeros((m, 2))
    for i, w in enumerate(weeks):
        if w:
            out[i, 0] = len(w)
            out[i, 1] = sum(w.values()) / len(w)
    return out


def assemble_fr(table: Mapping[int, Mapping[str, float]], m: int) -> np.ndarray:
    """m x 10 feature matrix in FEATURE_COLUMNS order, with range checks."""
    fr = np.empty((m, len(FEATURE_COLUMNS)))
    for cell in range(m):
        if cell not in table:
            raise SchemaError(f"features missing for cell {cell}")
        row = table[cell]
        for j, name in enumerate(FEATURE_COLUMNS):
            if name not in row:
                raise SchemaError(f"cell {cell}: missing column {name}")
            value = float(row[name])
            if not math.isfinite(value):
                raise SchemaError(f"cell {cell}: {name} is not finite")
            if name in RATE_COLUMNS:
                if not 0.0 <= value <= 1.0:
                    raise SchemaError(f"cell {cell}: {name}={value} outside [0, 1]")
            elif value < 0:
                raise SchemaError(f"cell {cell}: {name}={value} is negative")
            fr[cell, j] = value
    extra = set(table) - set(range(m))
    if extra:
        raise SchemaError(f"features given for unknown cells {sorted(extra)[:5]}")
    return fr


def zscore_standardize(x: np.ndarray) -> np.ndarray:
    """Column z-scores using the population standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("z-score standardization needs at least 2 rows")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    const = sd == 0
    if np.any(const):
        warnings.warn(f"constant feature columns {np.flatnonzero(const).tolist()} set to 0",
                      RuntimeWarning, stacklevel=2)
    out = (x - mu) / np.where(const, 1.0, sd)
    out[:, const] = 0.0
    return out


# ------------------------------------------------------------------ CSV I/O

def _open_rows(path, expected: tuple[str, ...], required: int | None = None):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        need = expected[:required] if required else expected
        if header[:len(need)] != need or any(h not in expected for h in header):
            raise SchemaError(f"{path}: header {','.join(header)!r} does not match "
                              f"{','.join(expected)!r}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            rows.append((lineno, dict(zip(header, (v.strip() for v in rec)))))
    return path, rows


def _num(path, lineno, rec, key, kind=float):
    try:
        return kind(rec[key])
    except (ValueError, KeyError):
        raise SchemaError(f"{path}:{lineno}: bad {key} value {rec.get(key)!r}") from None


def read_cells(path, cell_size: float | None = None) -> GridSpec:
    path, rows = _open_rows(path, CELLS_HEADER, required=7)
    cells = []
    for lineno, rec in rows:
        city = rec.get("city_id") or None
        pop = rec.get("city_population") or None
        cells.append(CellRecord(
            _num(path, lineno, rec, "cell_id", int),
            _num(path, lineno, rec, "row", int),
            _num(path, lineno, rec, "col", int),
            tuple(_num(path, lineno, rec, k) for k in ("min_x", "min_y", "max_x", "max_y")),
            city,
            None if pop is None else _num(path, lineno, rec, "city_population"),
        ))
    if not cells:
        raise SchemaError(f"{path}: no cells")
    cells.sort(key=lambda c: c.cell_id)
    if cell_size is None:
        b = cells[0].bounds
        cell_size = b[2] - b[0]
    grid = GridSpec(
        float(cell_size),
        (min(c.bounds[0] for c in cells), min(c.bounds[1] for c in cells),
         max(c.bounds[2] for c in cells), max(c.bounds[3] for c in cells)),
        max(c.row for c in cells) + 1,
        max(c.col for c in cells) + 1,
        cells,
    )
    grid.validate()
    return grid


def read_occurrences(path) -> list[tuple[int, int]]:
    path, rows = _open_rows(path, OCCURRENCES_HEADER)
    return [(_num(path, n, r, "cell_id", int), _num(path, n, r, "week_index", int))
            for n, r in rows]


def read_features(path, m: int) -> np.ndarray:
    path, rows = _open_rows(path, FEATURES_HEADER)
    table: dict[int, dict[str, float]] = {}
    for lineno, rec in rows:
        cid = _num(path, lineno, rec, "cell_id", int)
        if cid in table:
            raise SchemaError(f"{path}:{lineno}: duplicate cell {cid}")
        table[cid] = {k: _num(path, lineno, rec, k) for k in FEATURE_COLUMNS}
    return assemble_fr(table, m)


def cells_rows(grid: GridSpec):
    for c in grid.cells:
        yield (c.cell_id, c.row, c.col, *c.bounds, c.city_id or "",
               "" if c.city_population is None else c.city_population)
