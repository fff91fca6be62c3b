"""Per-cluster hazard/exposure/vulnerability aggregation and ranked risk levels."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .ingest import FEATURE_COLUMNS

HAZARD = ("flood_frequency", "flood_intensity")
EXPOSURE = ("population", "building_area")
VULNERABILITY = ("poverty_rate", "disability_rate", "limited_english_rate",
                 "poi_count", "recip_foundation_height", "building_age")

_IDX = {name: j for j, name in enumerate(FEATURE_COLUMNS)}


@dataclass
class ClusterFeatureSummary:
    means: np.ndarray   # K' x 10 means of min-max scaled features
    counts: np.ndarray  # K' member counts


@dataclass
class RiskLevelTable:
    fh: np.ndarray
    fe: np.ndarray
    fv: np.ndarray
    fr_value: np.ndarray
    level: np.ndarray         # per cluster, 1 = lowest risk
    cell_cluster: np.ndarray
    cell_level: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.level)

    def cluster_rows(self):
        for k in range(self.n_clusters):
            yield (k, float(self.fh[k]), float(self.fe[k]), float(self.fv[k]),
                   float(self.fr_value[k]), int(self.level[k]))

    def cell_rows(self):
        for i, (c, lv) in enumerate(zip(self.cell_cluster, self.cell_level)):
            yield i, int(c), int(lv)


def minmax_scale(x: np.ndarray) -> np.ndarray:
    """Column-wise (x - min) / (max - min) over all cells; constant columns become 0."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    const = span == 0
    if np.any(const):
        warnings.warn(f"constant feature columns {np.flatnonzero(const).tolist()} scaled to 0",
                      RuntimeWarning, stacklevel=2)
    out = (x - lo) / np.where(const, 1.0, span)
    out[:, const] = 0.0
    return out


def cluster_feature_means(scaled: np.ndarray, labels) -> ClusterFeatureSummary:
    """Arithmetic mean per (cluster, feature); sums accumulate in cell order."""
    scaled = np.asarray(scaled, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if labels.size else 0
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise ValueError(f"cluster {int(np.flatnonzero(counts == 0)[0])} has no cells")
    sums = np.zeros((k, scaled.shape[1]))
    np.add.at(sums, labels, scaled)
    return ClusterFeatureSummary(sums / counts[:, None], counts)


def aggregate_risk_components(summary: ClusterFeatureSummary):
    """(FH, FE, FV) per cluster as plain sums of the relevant feature means."""
    def block(names):
        acc = summary.means[:, _IDX[names[0]]].copy()
        for n in names[1:]:
            acc = acc + summary.means[:, _IDX[n]]
        return acc

    return block(HAZARD), block(EXPOSURE), block(VULNERABILITY)


def compute_risk_values(fh, fe, fv) -> np.ndarray:
    return np.asarray(fh) * np.asarray(fe) * np.asarray(fv)


def assign_risk_levels(values) -> np.ndarray:
    """Ascending ranks starting at 1; equal values rank by cluster index."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    levels = np.empty(len(values), dtype=np.int64)
    levels[order] = np.arange(1, len(values) + 1)
    return levels


def rate_clusters(fr_raw: np.ndarray, labels) -> RiskLevelTable:
    labels = np.asarray(labels, dtype=np.int64)
    summary = cluster_feature_means(minmax_scale(fr_raw), labels)
    fh, fe, fv = aggregate_risk_components(summary)
    values = compute_risk_values(fh, fe, fv)
    levels = assign_risk_levels(values)
    return RiskLevelTable(fh, fe, fv, values, levels, labels, levels[labels])
