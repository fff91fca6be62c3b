"""Pipeline stages: files in, artifacts out.

Each stage reads only files (plus the config) and writes its artifacts
atomically into the output directory, so stages can be run one at a time or
chained by ``run_all`` with identical results.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .clustering import ClusterModelConfig, ClusterState, train_clustering
from .errors import SchemaError
from .export import atomic_write_bytes, csv_bytes, export_geojson, write_csv
from .graph_learner import GraphLearnerConfig, edge_list, train_graph_structure
from .ingest import (CELLS_HEADER, FEATURES_HEADER, OCCURRENCES_HEADER, GridSpec,
                     assemble_bf, cells_rows, read_cells, read_features,
                     read_occurrences, zscore_standardize)
from .risk import RiskLevelTable, rate_clusters
from .spatial import (city_risk_summary, embedding_similarity_report, global_morans_i,
                      pearson_correlation, permutation_pvalue)
from .synthetic import generate_synthetic

log = logging.getLogger(__name__)

STAGES = ("synth", "learn-graph", "cluster", "rate", "analyze", "all")

GRAPH_CKPT = "graph.ckpt"
GRAPH_EDGES = "graph_edges.csv"
GRAPH_LOSS = "graph_loss.csv"
CLUSTER_CKPT = "cluster_state.ckpt"
CLUSTERS_CSV = "clusters.csv"
RISK_CSV = "risk_levels.csv"
CELL_LEVELS_CSV = "cell_levels.csv"
GEOJSON = "risk_map.geojson"
REPORT_CSV = "analysis_report.csv"
MANIFEST = "manifest.json"
PLANTED_CSV = "planted_labels.csv"

RISK_HEADER = ("cluster", "FH", "FE", "FV", "FR_value", "level")
CELL_LEVELS_HEADER = ("cell_id", "cluster", "level")
EDGES_HEADER = ("i", "j", "weight")


@dataclass
class PipelineConfig:
    data: str = "."
    cells: str = ""
    occurrences: str = ""
    features: str = ""
    out: str = "out"
    seed: int = 0
    weeks: int = 0  # 0: infer as max week index + 1
    # graph learner
    embedding_layers: int = 2
    knn: int = 10
    temperature: float = 0.5
    mask_prob: float = 0.3
    edge_drop_prob: float = 0.3
    tau: float = 0.99
    encoder_width: int = 64
    projector_width: int = 32
    graph_epochs: int = 500
    graph_lr: float = 1e-2
    threshold: float = 0.0
    # clustering
    k: int = 6
    alpha: float = 0.1
    beta: float = 0.01
    epochs: int = 300
    pretrain_epochs: int = 200
    lr: float = 1e-3
    pretrain_lr: float = 1e-3
    kmeans_restarts: int = 20
    # analysis
    embedding: str = "H"  # H (autoencoder bottleneck) or Z (last GCN layer)
    perms: int = 999
    min_city_pop: float = 25000.0
    row_standardize: bool = False
    # synth
    synth_m: int = 150
    synth_weeks: int = 52
    synth_k: int = 3
    synth_separation: float = 4.0

    def path(self, name: str) -> Path:
        explicit = getattr(self, name)
        return Path(explicit) if explicit else Path(self.data) / f"{name}.csv"

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def graph_config(self) -> GraphLearnerConfig:
        return GraphLearnerConfig(
            embedding_layers=self.embedding_layers, knn_k=self.knn,
            temperature=self.temperature, mask_prob=self.mask_prob,
            edge_drop_prob=self.edge_drop_prob, tau=self.tau,
            encoder_width=self.encoder_width, projector_width=self.projector_width,
            epochs=self.graph_epochs, lr=self.graph_lr, seed=self.seed,
            threshold=self.threshold)

    def cluster_config(self) -> ClusterModelConfig:
        return ClusterModelConfig(
            n_clusters=self.k, alpha=self.alpha, beta=self.beta, epochs=self.epochs,
            pretrain_epochs=self.pretrain_epochs, lr=self.lr, pretrain_lr=self.pretrain_lr,
            seed=self.seed, kmeans_restarts=self.kmeans_restarts)

    def recorded(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out")
        return d


def _coerce(field_type, raw: str):
    if field_type in (bool, "bool"):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if field_type in (int, "int"):
        return int(raw)
    if field_type in (float, "float"):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_config(file_values: dict[str, str] | None = None, overrides: dict | None = None
                 ) -> PipelineConfig:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    values = {}
    for key, raw in (file_values or {}).items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        try:
            values[key] = _coerce(types[key], raw)
        except ValueError as exc:
            raise ValueError(f"config key {key}: {exc}") from None
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = val
    return PipelineConfig(**values)


def config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(cfg.recorded(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_manifest(cfg: PipelineConfig, subcommand: str, outputs: list[str]) -> None:
    import scipy
    import sklearn

    manifest = {
        "subcommand": subcommand,
        "config": cfg.recorded(),
        "config_hash": config_hash(cfg),
        "versions": {
            "floodrisknet": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__,
        },
        "outputs": sorted(outputs),
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(cfg.out_dir / MANIFEST, text.encode("utf-8"))


def require(*paths: Path) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"missing or unreadable input: {p}")


# ------------------------------------------------------------------ loaders

def load_grid(cfg: PipelineConfig) -> GridSpec:
    require(cfg.path("cells"))
    return read_cells(cfg.path("cells"))


def load_bf(cfg: PipelineConfig, m: int) -> np.ndarray:
    require(cfg.path("occurrences"))
    events = read_occurrences(cfg.path("occurrences"))
    weeks = cfg.weeks or (max((w for _, w in events), default=-1) + 1)
    if weeks < 1:
        raise SchemaError(f"{cfg.path('occurrences')}: no flood events and no week count given")
    return assemble_bf(events, m, weeks)


def load_features(cfg: PipelineConfig, m: int) -> np.ndarray:
    require(cfg.path("features"))
    return read_features(cfg.path("features"), m)


def load_graph(cfg: PipelineConfig) -> np.ndarray:
    path = cfg.out_dir / GRAPH_CKPT
    require(path)
    arrays = checkpoint.load(path)
    if "A_star" not in arrays:
        raise SchemaError(f"{path}: no A_star entry")
    return arrays["A_star"]


def load_cluster_state(cfg: PipelineConfig) -> ClusterState:
    path = cfg.out_dir / CLUSTER_CKPT
    require(path)
    return ClusterState.from_arrays(checkpoint.load(path))


def load_cell_levels(cfg: PipelineConfig, m: int) -> tuple[np.ndarray, np.ndarray]:
    import csv

    path = cfg.out_dir / CELL_LEVELS_CSV
    require(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != CELL_LEVELS_HEADER:
            raise SchemaError(f"{path}: unexpected header")
        rows = [tuple(int(v) for v in rec) for rec in reader if rec]
    if sorted(r[0] for r in rows) != list(range(m)):
        raise SchemaError(f"{path}: expected one row per cell 0..{m - 1}")
    rows.sort()
    return (np.array([r[1] for r in rows], dtype=np.int64),
            np.array([r[2] for r in rows], dtype=np.int64))


# ------------------------------------------------------------------ stages

def stage_synth(cfg: PipelineConfig) -> list[str]:
    data = generate_synthetic(cfg.seed, cfg.synth_m, cfg.synth_weeks, cfg.synth_k,
                              cfg.synth_separation)
    out = cfg.out_dir
    write_csv(out / "cells.csv", CELLS_HEADER, cells_rows(data.grid))
    events = [(i, j) for i, j in zip(*np.nonzero(data.bf))]
    write_csv(out / "occurrences.csv", OCCURRENCES_HEADER, events)
    write_csv(out / "features.csv", FEATURES_HEADER,
              ((i, *row) for i, row in enumerate(data.fr.tolist())))
    write_csv(out / PLANTED_CSV, ("cell_id", "label"), enumerate(data.labels.tolist()))
    return ["cells.csv", "occurrences.csv", "features.csv", PLANTED_CSV]


def stage_learn_graph(cfg: PipelineConfig) -> tuple[list[str], np.ndarray]:
    grid = load_grid(cfg)
    bf = load_bf(cfg, grid.m)
    log.info("learning dependence graph: %d cells x %d weeks", *bf.shape)
    result = train_graph_structure(bf, cfg.graph_config())
    out = cfg.out_dir
    checkpoint.save(out / GRAPH_CKPT, {"A_star": result.adjacency, "K_anchor": result.anchor,
                                       **result.params})
    write_csv(out / GRAPH_EDGES, EDGES_HEADER, edge_list(result.adjacency))
    write_csv(out / GRAPH_LOSS, ("epoch", "loss"), enumerate(result.loss_history))
    return [GRAPH_CKPT, GRAPH_EDGES, GRAPH_LOSS], result.adjacency


def stage_cluster(cfg: PipelineConfig) -> tuple[list[str], ClusterState]:
    grid = load_grid(cfg)
    fr = load_features(cfg, grid.m)
    adjacency = load_graph(cfg)
    if adjacency.shape != (grid.m, grid.m):
        raise SchemaError(f"graph is {adjacency.shape} but there are {grid.m} cells")
    log.info("clustering %d cells into K=%d", grid.m, cfg.k)
    result = train_clustering(zscore_standardize(fr), adjacency, cfg.cluster_config())
    state = result.state
    out = cfg.out_dir
    checkpoint.save(out / CLUSTER_CKPT, {**state.arrays(),
                                         **{f"param/{k}": v for k, v in
                                            result.params.state_dict().items()}})
    k = state.n_clusters
    write_csv(out / CLUSTERS_CSV, ("cell_id", "cluster", *[f"z_{j}" for j in range(k)]),
              ((i, int(state.labels[i]), *state.z[i].tolist()) for i in range(grid.m)))
    return [CLUSTER_CKPT, CLUSTERS_CSV], state


def stage_rate(cfg: PipelineConfig) -> tuple[list[str], RiskLevelTable]:
    grid = load_grid(cfg)
    fr = load_features(cfg, grid.m)
    state = load_cluster_state(cfg)
    if state.labels.shape[0] != grid.m:
        raise SchemaError("cluster state does not match the number of cells")
    table = rate_clusters(fr, state.labels)
    out = cfg.out_dir
    write_csv(out / RISK_CSV, RISK_HEADER, table.cluster_rows())
    write_csv(out / CELL_LEVELS_CSV, CELL_LEVELS_HEADER, table.cell_rows())
    export_geojson(out / GEOJSON, grid, table.cell_level.tolist(), table.cell_cluster.tolist(),
                   zscore_standardize(fr))
    return [RISK_CSV, CELL_LEVELS_CSV, GEOJSON], table


def analysis_report_bytes(cfg: PipelineConfig, grid: GridSpec, levels: np.ndarray,
                          adjacency: np.ndarray, embeddings: np.ndarray) -> bytes:
    sim = embedding_similarity_report(embeddings, levels)
    blocks = [csv_bytes(("level_a", "level_b", "mean_similarity"),
                        ((a, b, v) for (a, b), v in sorted(sim.pair_means.items())))]
    try:
        moran = global_morans_i(levels, adjacency, cfg.row_standardize)
        p = permutation_pvalue(levels, adjacency, cfg.perms, cfg.seed, cfg.row_standardize)
        moran_row = [(moran, p)]
    except ValueError as exc:
        log.warning("Moran's I not computed: %s", exc)
        moran_row = [("", "")]
    blocks.append(csv_bytes(("morans_i", "p_value"), moran_row))
    cities = city_risk_summary(levels, grid.cells, cfg.min_city_pop)
    blocks.append(csv_bytes(("city_id", "population", "mean_level", "inequality"),
                            ((c.city_id, c.population, c.mean_level, c.inequality)
                             for c in cities)))
    try:
        r, p = pearson_correlation([c.mean_level for c in cities], [c.inequality for c in cities])
        corr_row = [(r, p)]
    except ValueError as exc:
        log.warning("city correlation not computed: %s", exc)
        corr_row = [("", "")]
    blocks.append(csv_bytes(("pearson_r", "pearson_p"), corr_row))
    return b"\n".join(blocks)


def stage_analyze(cfg: PipelineConfig) -> list[str]:
    grid = load_grid(cfg)
    _, levels = load_cell_levels(cfg, grid.m)
    adjacency = load_graph(cfg)
    state = load_cluster_state(cfg)
    if cfg.embedding.upper() == "Z":
        if state.z_embedding is None:
            raise SchemaError("cluster checkpoint has no Z_embedding entry")
        emb = state.z_embedding
    else:
        emb = state.h
    atomic_write_bytes(cfg.out_dir / REPORT_CSV,
                       analysis_report_bytes(cfg, grid, levels, adjacency, emb))
    return [REPORT_CSV]


def run_all(cfg: PipelineConfig) -> list[str]:
    # each stage re-reads its inputs from disk so `all` equals the stages run separately
    outputs = stage_learn_graph(cfg)[0]
    outputs += stage_cluster(cfg)[0]
    outputs += stage_rate(cfg)[0]
    outputs += stage_analyze(cfg)
    return outputs


def run_pipeline(subcommand: str, cfg: PipelineConfig) -> list[str]:
    if subcommand not in STAGES:
        raise ValueError(f"unknown subcommand {subcommand!r}; choose from {', '.join(STAGES)}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if subcommand == "synth":
        outputs = stage_synth(cfg)
    elif subcommand == "learn-graph":
        outputs = stage_learn_graph(cfg)[0]
    elif subcommand == "cluster":
        outputs = stage_cluster(cfg)[0]
    elif subcommand == "rate":
        outputs = stage_rate(cfg)[0]
    elif subcommand == "analyze":
        outputs = stage_analyze(cfg)
    else:
        outputs = run_all(cfg)
    write_manifest(cfg, subcommand, outputs)
    return outputs
