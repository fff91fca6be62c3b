"""Validation statistics: embedding similarity by level, Moran's I, city inequality, Pearson."""
from __future__ import annotations

from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .graph_learner import cosine_numpy
from .ingest import CellRecord, GridSpec


@dataclass
class SimilarityReport:
    matrix: np.ndarray   # cosine similarity in original cell order
    order: np.ndarray    # cell ids sorted by level (stable)
    pair_means: dict[tuple[int, int], float]
    inner_mean: float
    between_mean: float

    def sorted_matrix(self) -> np.ndarray:
        return self.matrix[np.ix_(self.order, self.order)]

    def adjacent_mean(self) -> float:
        levels = sorted({a for a, _ in self.pair_means})
        vals = [self.pair_means[(a, b)] for a, b in zip(levels[:-1], levels[1:])]
        return float(np.mean(vals)) if vals else float("nan")

    def extreme_mean(self) -> float:
        levels = sorted({a for a, _ in self.pair_means})
        return self.pair_means[(levels[0], levels[-1])]


@dataclass
class CityRiskSummary:
    city_id: str
    population: float
    mean_level: float
    inequality: float
    members: int


def embedding_similarity_report(embeddings: np.ndarray, levels: Sequence[int]) -> SimilarityReport:
    emb = np.asarray(embeddings, dtype=np.float64)
    levels = np.asarray(levels)
    if len(levels) != emb.shape[0]:
        raise ValueError(f"{emb.shape[0]} embeddings but {len(levels)} levels")
    if any(lv is None for lv in levels.tolist()):
        raise ValueError("level missing for a cell")
    levels = levels.astype(np.int64)
    sim = cosine_numpy(emb)
    order = np.argsort(levels, kind="stable")
    uniq = np.unique(levels)
    off = ~np.eye(len(levels), dtype=bool)
    pair_means = {}
    for a in uniq:
        ia = levels == a
        for b in uniq[uniq >= a]:
            ib = levels == b
            block = np.outer(ia, ib)
            if a == b and ia.sum() > 1:
                block &= off
            pair_means[(int(a), int(b))] = float(sim[block].mean())
    same = (levels[:, None] == levels[None, :]) & off
    diff = levels[:, None] != levels[None, :]
    inner = float(sim[same].mean()) if same.any() else float("nan")
    between = float(sim[diff].mean()) if diff.any() else float("nan")
    return SimilarityReport(sim, order, pair_means, inner, between)


def rook_adjacency(grid: GridSpec) -> np.ndarray:
    """Binary weights linking cells that share an edge on the grid."""
    pos = {(c.row, c.col): c.cell_id for c in grid.cells}
    w = np.zeros((grid.m, grid.m))
    for (r, c), i in pos.items():
        for nb in ((r + 1, c), (r, c + 1)):
            j = pos.get(nb)
            if j is not None:
                w[i, j] = w[j, i] = 1.0
    return w


def _prepare_weights(weights: np.ndarray, n: int, row_standardize: bool) -> np.ndarray:
    w = np.array(weights, dtype=np.float64)
    if w.shape != (n, n):
        raise ValueError(f"weights shape {w.shape} does not match {n} values")
    np.fill_diagonal(w, 0.0)
    if row_standardize:
        rs = w.sum(axis=1, keepdims=True)
        w = np.divide(w, rs, out=np.zeros_like(w), where=rs != 0)
    if not np.any(w != 0):
        raise ValueError("spatial weights are all zero")
    return w


def _moran(z: np.ndarray, w: np.ndarray, s0: float) -> float:
    return float(len(z) / s0 * (z @ w @ z) / (z @ z))


def global_morans_i(values, weights, row_standardize: bool = False) -> float:
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("Moran's I needs at least 2 cells")
    z = x - x.mean()
    if not np.any(z != 0):
        raise ValueError("values have zero variance")
    w = _prepare_weights(weights, x.size, row_standardize)
    return _moran(z, w, w.sum())


def moran_permutations(values, weights, r: int = 999, seed: int = 0,
                       row_standardize: bool = False) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    global_morans_i(x, weights, row_standardize)  # validates inputs
    w = _prepare_weights(weights, x.size, row_standardize)
    s0 = w.sum()
    z = x - x.mean()
    rng = np.random.default_rng(seed)
    return np.array([_moran(rng.permutation(z), w, s0) for _ in range(r)])


def permutation_pvalue(values, weights, r: int = 999, seed: int = 0,
                       row_standardize: bool = False) -> float:
    """One-sided pseudo p-value (1 + #{I_perm >= I_obs}) / (R + 1)."""
    if r < 1:
        raise ValueError("need at least one permutation")
    observed = global_morans_i(values, weights, row_standardize)
    perms = moran_permutations(values, weights, r, seed, row_standardize)
    return (1 + int(np.sum(perms >= observed))) / (r + 1)


def gini(values) -> float:
    """Mean absolute difference over twice the mean: sum|x_i - x_j| / (2 n^2 mean)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("Gini of an empty set")
    mu = x.mean()
    if mu <= 0:
        raise ValueError("Gini needs a positive mean")
    return float(np.abs(x[:, None] - x[None, :]).sum() / (2 * x.size ** 2 * mu))


def city_risk_summary(cell_levels: Sequence[int], cells: Sequence[CellRecord],
                      min_population: float = 25000) -> list[CityRiskSummary]:
    """Mean level and Gini inequality per city with population >= ``min_population``."""
    members: dict[str, list[int]] = defaultdict(list)
    pops: dict[str, float] = {}
    for cell in cells:
        if cell.city_id is None or cell.city_population is None:
            continue
        members[cell.city_id].append(int(cell_levels[cell.cell_id]))
        pops[cell.city_id] = float(cell.city_population)
    out = []
    for city in sorted(members):
        if pops[city] < min_population:
            continue
        lv = members[city]
        if not lv:
            raise ValueError(f"city {city} has no cells")
        out.append(CityRiskSummary(city, pops[city], float(np.mean(lv)), gini(lv), len(lv)))
    return out


def pearson_correlation(x, y) -> tuple[float, float]:
    """Sample Pearson r and the two-sided p-value of its t statistic (n - 2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("x and y lengths differ")
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise ValueError("zero variance")
    r = float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * df / (1.0 - r * r)
    return r, float(betainc(df / 2.0, 0.5, df / (df + t2)))
