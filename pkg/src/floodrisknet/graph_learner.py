"""Learn the spatial flood-dependence graph A* from flood occurrence.

A similarity-metric learner (stacked ReLU + row L2-normalised layers) turns
BF into embeddings whose clamped cosine similarities form the learned graph.
The learner is trained by contrasting the learned view with a KNN anchor
view under a shared GCN encoder and MLP projector (NT-Xent), while the
anchor is slowly pulled towards the learned graph.
"""
from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix, Parameter
from .errors import NumericalError
from .optim import Adam

log = logging.getLogger(__name__)

BOOTSTRAP_PERIOD = 10


@dataclass
class GraphLearnerConfig:
    embedding_layers: int = 2
    knn_k: int = 10
    temperature: float = 0.5
    mask_prob: float = 0.3
    edge_drop_prob: float = 0.3
    tau: float = 0.99
    encoder_width: int = 64
    projector_width: int = 32
    epochs: int = 500
    lr: float = 1e-2
    seed: int = 0
    threshold: float = 0.0
    exclude_positive: bool = False  # literal indicator form of the NT-Xent denominator

    def __post_init__(self):
        for name in ("mask_prob", "edge_drop_prob", "tau"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.embedding_layers < 1:
            raise ValueError("embedding_layers must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class AugmentedView:
    adjacency: Matrix
    features: Matrix
    feature_mask: np.ndarray  # 1 x d, 0/1
    edge_mask: np.ndarray     # m x m, symmetric 0/1
    seed: int | None = None


@dataclass
class GraphLearningResult:
    adjacency: np.ndarray
    loss_history: list[float]
    anchor: np.ndarray
    params: dict[str, np.ndarray] = field(default_factory=dict)


# ------------------------------------------------------------------ learner

def embed_for_similarity(bf, omegas: list[Matrix]) -> Matrix:
    e = ad.constant(bf)
    for omega in omegas:
        if omega.shape != (e.cols, e.cols):
            raise ValueError(f"embedding weight {omega.shape} does not fit width {e.cols}")
        e = ad.row_l2_normalize(ad.relu(ad.matmul(e, omega)))
    return e


def learned_adjacency(e: Matrix) -> Matrix:
    s = ad.relu(ad.cosine_similarity_matrix(e))
    return ad.mul(s, 1.0 - np.eye(e.rows))


def cosine_numpy(x: np.ndarray) -> np.ndarray:
    return ad.cosine_similarity_matrix(Matrix(x)).value


def _gram_cosine(x: np.ndarray) -> np.ndarray:
    """Cosine as <x_i, x_j> / (|x_i| |x_j|).

    On 0/1 rows the Gram entries are exact integers, so pairs that tie
    mathematically also tie in floating point and the index tie-break applies.
    """
    gram = x @ x.T
    gram = 0.5 * (gram + gram.T)
    norms = np.sqrt(np.diag(gram).copy())
    denom = norms[:, None] * norms[None, :]
    sim = np.divide(gram, denom, out=np.zeros_like(gram), where=denom > 0)
    return np.clip(sim, -1.0, 1.0)


def build_knn_graph(bf: np.ndarray, k: int) -> np.ndarray:
    """Symmetric top-k cosine graph on BF rows (weights clamped at 0, zero diagonal)."""
    bf = np.asarray(bf, dtype=np.float64)
    m = bf.shape[0]
    if not 1 <= k <= m - 1:
        raise ValueError(f"k must be in [1, {m - 1}], got {k}")
    sim = np.maximum(_gram_cosine(bf), 0.0)
    np.fill_diagonal(sim, -np.inf)
    keep = np.zeros((m, m), dtype=bool)
    # stable sort: among equal similarities the smaller column index wins
    top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    keep[np.arange(m)[:, None], top] = True
    np.fill_diagonal(sim, 0.0)
    knn = np.where(keep, sim, 0.0)
    return np.maximum(knn, knn.T)


def bootstrap_anchor(anchor: np.ndarray, learned: np.ndarray, tau: float) -> np.ndarray:
    anchor = np.asarray(anchor, dtype=np.float64)
    learned = np.asarray(learned, dtype=np.float64)
    if anchor.shape != learned.shape:
        raise ValueError(f"shape mismatch {anchor.shape} vs {learned.shape}")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if tau == 1.0:
        return anchor.copy()
    if tau == 0.0:
        return learned.copy()
    return tau * anchor + (1.0 - tau) * learned


# ------------------------------------------------------------------ views

def augment_view(adjacency, features, p_m: float, p_d: float, seed=None) -> AugmentedView:
    """Drop whole feature columns with prob p_m and undirected edges with prob p_d.

    ``seed`` may be an int or a ``numpy.random.Generator``; the feature mask
    is drawn before the edge mask.
    """
    if not (0.0 <= p_m <= 1.0 and 0.0 <= p_d <= 1.0):
        raise ValueError("probabilities must be in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    adjacency = ad.constant(adjacency)
    features = ad.constant(features)
    m, d = features.shape
    feature_mask = (rng.random((1, d)) >= p_m).astype(np.float64)
    upper = np.triu(rng.random((m, m)) >= p_d, k=1)
    edge_mask = (upper | upper.T).astype(np.float64)
    np.fill_diagonal(edge_mask, 1.0)
    return AugmentedView(
        ad.mul(adjacency, edge_mask),
        ad.mul(features, feature_mask),
        feature_mask,
        edge_mask,
        seed if isinstance(seed, (int, np.integer)) else None,
    )


def normalized_adjacency(a) -> Matrix:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I; differentiable in A."""
    a = ad.constant(a)
    a_hat = ad.add(a, np.eye(a.rows))
    dinv = ad.power(ad.row_sum(a_hat), -0.5)
    return ad.mul(ad.mul(dinv, a_hat), ad.transpose(dinv))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Parameter:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)), name=name)


@dataclass
class ContrastiveNets:
    encoder: list[Parameter]    # theta: two GCN weight matrices
    projector: list[Parameter]  # xi: W1, b1, W2, b2

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d1: int, d2: int) -> "ContrastiveNets":
        return cls(
            [glorot(rng, d_in, d1, "theta0"), glorot(rng, d1, d1, "theta1")],
            [glorot(rng, d1, d2, "xi_w0"), Parameter(np.zeros((1, d2)), "xi_b0"),
             glorot(rng, d2, d2, "xi_w1"), Parameter(np.zeros((1, d2)), "xi_b1")],
        )

    def parameters(self) -> list[Parameter]:
        return self.encoder + self.projector


def contrastive_embed(view: AugmentedView, encoder: list[Matrix], projector: list[Matrix]) -> Matrix:
    """Two GCN layers (ReLU) followed by a two-layer MLP projector."""
    a_norm = normalized_adjacency(view.adjacency)
    h = view.features
    for w in encoder:
        if w.rows != h.cols:
            raise ValueError(f"encoder weight {w.shape} does not fit input width {h.cols}")
        h = ad.relu(ad.matmul(a_norm, ad.matmul(h, w)))
    w0, b0, w1, b1 = projector
    z = ad.relu(ad.add(ad.matmul(h, w0), b0))
    return ad.add(ad.matmul(z, w1), b1)


# ------------------------------------------------------------------ loss

def _directional_terms(sim: Matrix, exclude_positive: bool) -> Matrix:
    """Sum over i of -log(exp(s_ii) / sum_j exp(s_ij)) for a scaled similarity matrix."""
    eye = np.eye(sim.rows)
    if not exclude_positive:
        return ad.scale(ad.total(ad.mul(ad.row_log_softmax(sim), eye)), -1.0)
    shift = sim.value.max(axis=1, keepdims=True)
    denom = ad.row_sum(ad.mul(ad.exp(ad.sub(sim, shift)), 1.0 - eye))
    lse = ad.add(ad.log(denom), shift)
    return ad.sub(ad.total(lse), ad.total(ad.mul(sim, eye)))


def nt_xent_loss(z_k: Matrix, z_l: Matrix, t: float, exclude_positive: bool = False) -> Matrix:
    """Symmetric NT-Xent over cross-view pairs; node i in one view is the positive for node i in the other."""
    z_k, z_l = ad.constant(z_k), ad.constant(z_l)
    if z_k.shape != z_l.shape:
        raise ValueError(f"view shapes differ: {z_k.shape} vs {z_l.shape}")
    n = z_k.rows
    if n < 2:
        raise ValueError("NT-Xent needs at least 2 nodes")
    if not t > 0:
        raise ValueError("temperature must be positive")
    nk, nl = ad.row_l2_normalize(z_k), ad.row_l2_normalize(z_l)
    s_kl = ad.scale(ad.matmul(nk, ad.transpose(nl)), 1.0 / t)
    s_lk = ad.scale(ad.matmul(nl, ad.transpose(nk)), 1.0 / t)
    both = ad.add(_directional_terms(s_kl, exclude_positive),
                  _directional_terms(s_lk, exclude_positive))
    return ad.scale(both, 1.0 / (2 * n))


# ------------------------------------------------------------------ training

def init_omegas(d: int, layers: int) -> list[Parameter]:
    return [Parameter(np.eye(d), name=f"omega{i}") for i in range(layers)]


def train_graph_structure(bf: np.ndarray, config: GraphLearnerConfig | None = None,
                          callback: Callable[[int, np.ndarray, float], None] | None = None
                          ) -> GraphLearningResult:
    """Run the contrastive structure-learning loop and return A* with the loss series.

    ``callback(epoch, learned_adjacency, loss)`` is invoked once per epoch.
    """
    cfg = config or GraphLearnerConfig()
    bf = np.asarray(bf, dtype=np.float64)
    m, d = bf.shape
    if m < 2:
        raise ValueError("graph learning needs at least 2 cells")
    rng = np.random.default_rng(cfg.seed)
    k = min(cfg.knn_k, m - 1)
    anchor = build_knn_graph(bf, k)

    omegas = init_omegas(d, cfg.embedding_layers)
    nets = ContrastiveNets.init(rng, d, cfg.encoder_width, cfg.projector_width)
    opt = Adam(omegas + nets.parameters(), lr=cfg.lr)
    history: list[float] = []

    for epoch in range(cfg.epochs):
        opt.zero_grad()
        learned = learned_adjacency(embed_for_similarity(bf, omegas))
        view_l = augment_view(learned, bf, cfg.mask_prob, cfg.edge_drop_prob, rng)
        view_k = augment_view(anchor, bf, cfg.mask_prob, cfg.edge_drop_prob, rng)
        z_l = contrastive_embed(view_l, nets.encoder, nets.projector)
        z_k = contrastive_embed(view_k, nets.encoder, nets.projector)
        loss = nt_xent_loss(z_k, z_l, cfg.temperature, cfg.exclude_positive)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"graph learner loss is {value} at epoch {epoch}")
        try:
            ad.backprop_gradients(loss)
            opt.step()
        except NumericalError as exc:
            raise NumericalError(f"graph learner diverged at epoch {epoch}: {exc}") from None
        history.append(value)
        if (epoch + 1) % BOOTSTRAP_PERIOD == 0:
            anchor = bootstrap_anchor(anchor, learned.value, cfg.tau)
        if callback is not None:
            callback(epoch, learned.value, value)
        if epoch % 50 == 0:
            log.debug("graph epoch %d loss %.6f", epoch, value)

    adjacency = learned_adjacency(embed_for_similarity(bf, omegas)).value.copy()
    if cfg.threshold > 0:
        adjacency[adjacency < cfg.threshold] = 0.0
    params = {p.name: p.value for p in omegas + nets.parameters()}
    return GraphLearningResult(adjacency, history, anchor, params)


def edge_list(adjacency: np.ndarray):
    """(i, j, weight) for i < j and weight > 0."""
    iu, ju = np.nonzero(np.triu(adjacency, k=1) > 0)
    for i, j in zip(iu.tolist(), ju.tolist()):
        yield i, j, float(adjacency[i, j])
