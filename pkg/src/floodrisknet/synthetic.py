"""Desk-scale synthetic datasets with planted, spatially contiguous risk regimes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ingest import DEFAULT_CELL_SIZE, CellRecord, GridSpec

NOISE_SIGMA = 0.5
RISK_AXIS_SHARE = 0.5  # fraction of the adjacent-centroid gap lying on the risk axis
CITY_TILE = 4  # cities are CITY_TILE x CITY_TILE blocks of cells


@dataclass
class SyntheticData:
    grid: GridSpec
    bf: np.ndarray
    fr: np.ndarray
    labels: np.ndarray
    centroids: np.ndarray  # k x 10, in the latent (pre-transform) feature space

    def __iter__(self):
        return iter((self.grid, self.bf, self.fr, self.labels))


def _grid_for(m: int, cell_size: float) -> GridSpec:
    cols = math.ceil(math.sqrt(m))
    rows = math.ceil(m / cols)
    cells = []
    for i in range(m):
        r, c = divmod(i, cols)
        x0, y0 = c * cell_size, r * cell_size
        cells.append(CellRecord(i, r, c, (x0, y0, x0 + cell_size, y0 + cell_size)))
    return GridSpec(cell_size, (0.0, 0.0, cols * cell_size, rows * cell_size), rows, cols, cells)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def latent_to_features(latent: np.ndarray, flood_weeks: np.ndarray) -> np.ndarray:
    """Map latent scores onto plausible raw feature ranges (monotone per column)."""
    fr = np.empty_like(latent)
    fr[:, 0] = flood_weeks
    fr[:, 1] = 5000.0 * np.exp(0.25 * latent[:, 1])
    fr[:, 2] = 2000.0 * np.exp(0.25 * latent[:, 2])
    fr[:, 3] = 5.0e4 * np.exp(0.25 * latent[:, 3])
    fr[:, 4] = _sigmoid(0.4 * latent[:, 4] - 1.5)
    fr[:, 5] = _sigmoid(0.4 * latent[:, 5] - 2.0)
    fr[:, 6] = _sigmoid(0.4 * latent[:, 6] - 2.5)
    fr[:, 7] = np.round(20.0 * np.exp(0.25 * latent[:, 7]))
    fr[:, 8] = 40.0 * np.exp(0.2 * latent[:, 8])
    fr[:, 9] = 0.5 * np.exp(0.2 * latent[:, 9])
    return fr


def generate_synthetic(seed: int, m: int = 150, d_bf: int = 52, k_planted: int = 3,
                       separation: float = 4.0, spatial_contiguity: bool = True,
                       cell_size: float = DEFAULT_CELL_SIZE) -> SyntheticData:
    """Grid, BF, FR and planted labels with ``k_planted`` regimes.

    Regime k is riskier than regime k-1 along a positive feature direction;
    the remaining spread is orthogonal so the regimes are not collinear.
    Adjacent centroids are ``separation`` apart and each regime floods
    mostly in its own set of weeks.
    """
    if k_planted < 1 or k_planted > m:
        raise ValueError(f"k_planted must be in [1, m={m}], got {k_planted}")
    rng = np.random.default_rng(seed)
    grid = _grid_for(m, cell_size)

    # contiguous stripes: order cells column-major, cut into k runs
    order = sorted(range(m), key=lambda i: (grid.cells[i].col, grid.cells[i].row))
    labels = np.empty(m, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(np.array(order), k_planted)):
        labels[chunk] = k
    if not spatial_contiguity:
        labels = rng.permutation(labels)

    # centroids: a risk axis (positive direction) plus mutually orthogonal offsets,
    # scaled so adjacent regimes are exactly `separation` apart
    direction = np.abs(rng.normal(size=10)) + 0.5
    direction /= np.linalg.norm(direction)
    spread = rng.normal(size=(10, k_planted))
    spread -= direction[:, None] * (direction @ spread)[None, :]
    basis = np.linalg.qr(spread)[0].T[:k_planted]
    along = RISK_AXIS_SHARE * separation
    across = separation * np.sqrt((1.0 - RISK_AXIS_SHARE ** 2) / 2.0)
    offsets = np.arange(k_planted) - (k_planted - 1) / 2.0
    centroids = along * offsets[:, None] * direction[None, :] + across * basis
    latent = centroids[labels] + rng.normal(0.0, NOISE_SIGMA, size=(m, 10))

    # riskier regimes flood more often, each mostly in its own weeks
    week_groups = np.array_split(rng.permutation(d_bf), k_planted)
    probs = np.full((k_planted, d_bf), 0.03)
    for k, weeks in enumerate(week_groups):
        probs[k, weeks] = 0.35 + 0.3 * k / max(k_planted - 1, 1)
    bf = (rng.random((m, d_bf)) < probs[labels]).astype(np.float64)

    fr = latent_to_features(latent, bf.sum(axis=1))

    tiles_x = math.ceil(grid.cols / CITY_TILE)
    tiles_y = math.ceil(grid.rows / CITY_TILE)
    is_city = rng.random(tiles_x * tiles_y) < 0.8
    pops = np.round(np.exp(rng.normal(math.log(40000), 0.6, size=tiles_x * tiles_y)))
    for cell in grid.cells:
        t = (cell.row // CITY_TILE) * tiles_x + cell.col // CITY_TILE
        if is_city[t]:
            cell.city_id = f"city{t:03d}"
            cell.city_population = float(pops[t])
    return SyntheticData(grid, bf, fr, labels, centroids)
