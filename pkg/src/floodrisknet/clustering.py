"""Deep clustering of grid cells: autoencoder + graph convolution with dual self-training.

The autoencoder captures feature interactions, the GCN propagates over the
learned dependence graph, and the two are fused layer by layer. Training
minimises reconstruction plus two KL terms against a periodically sharpened
target distribution derived from Student-t soft assignments.
"""
from __future__ import annotations

import logging
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from . import autodiff as ad
from .autodiff import Matrix, Parameter
from .errors import NumericalError
from .graph_learner import glorot, normalized_adjacency
from .optim import Adam

log = logging.getLogger(__name__)

FUSION_EPS = 0.5
STUDENT_T_DOF = 1.0
TARGET_PERIOD = 5


@dataclass
class ClusterModelConfig:
    widths: tuple[int, ...] = (10, 64, 32, 16)
    n_clusters: int = 6
    eps: float = FUSION_EPS
    dof: float = STUDENT_T_DOF
    alpha: float = 0.1
    beta: float = 0.01
    pretrain_epochs: int = 200
    epochs: int = 300
    lr: float = 1e-3
    pretrain_lr: float = 1e-3
    target_period: int = TARGET_PERIOD
    seed: int = 0
    kmeans_restarts: int = 20
    literal_half_distance: bool = False  # divide squared distance by 2 instead of dof

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 2:
            raise ValueError("need at least an input and one hidden width")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must be in [0, 1], got {self.eps}")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.target_period < 1:
            raise ValueError("target_period must be >= 1")


@dataclass
class ClusterParams:
    enc_w: list[Parameter]
    enc_b: list[Parameter]
    dec_w: list[Parameter]
    dec_b: list[Parameter]
    gcn_w: list[Parameter]  # one per encoder layer plus the K-wide head
    centers: Parameter | None = None

    @classmethod
    def init(cls, widths: Sequence[int], n_clusters: int, rng: np.random.Generator) -> "ClusterParams":
        enc_w, enc_b, dec_w, dec_b, gcn_w = [], [], [], [], []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            enc_w.append(glorot(rng, a, b, f"enc_w{i}"))
            enc_b.append(Parameter(np.zeros((1, b)), f"enc_b{i}"))
        rev = widths[::-1]
        for i, (a, b) in enumerate(zip(rev[:-1], rev[1:])):
            dec_w.append(glorot(rng, a, b, f"dec_w{i}"))
            dec_b.append(Parameter(np.zeros((1, b)), f"dec_b{i}"))
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            gcn_w.append(glorot(rng, a, b, f"gcn_w{i}"))
        gcn_w.append(glorot(rng, widths[-1], n_clusters, f"gcn_w{len(widths) - 1}"))
        return cls(enc_w, enc_b, dec_w, dec_b, gcn_w)

    def autoencoder(self) -> list[Parameter]:
        return self.enc_w + self.enc_b + self.dec_w + self.dec_b

    def all(self) -> list[Parameter]:
        out = self.autoencoder() + self.gcn_w
        return out + [self.centers] if self.centers is not None else out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.all()}


@dataclass
class ClusterState:
    h: np.ndarray        # bottleneck embedding
    z: np.ndarray        # soft assignment from the GCN head
    q: np.ndarray        # Student-t ancillary distribution
    p: np.ndarray        # target distribution
    centers: np.ndarray
    labels: np.ndarray
    z_embedding: np.ndarray | None = None  # last hidden GCN layer

    @property
    def n_clusters(self) -> int:
        return self.z.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"H": self.h, "Z": self.z, "Q": self.q, "P": self.p, "u": self.centers,
               "s": self.labels.astype(np.float64).reshape(-1, 1)}
        if self.z_embedding is not None:
            out["Z_embedding"] = self.z_embedding
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ClusterState":
        return cls(arrays["H"], arrays["Z"], arrays["Q"], arrays["P"], arrays["u"],
                   arrays["s"].ravel().astype(np.int64), arrays.get("Z_embedding"))


@dataclass
class ClusterResult:
    state: ClusterState
    loss_history: list[dict[str, float]]
    pretrain_history: list[float]
    params: ClusterParams = field(repr=False, default=None)


# ------------------------------------------------------------------ forward passes

def autoencoder_forward(x, params: ClusterParams) -> tuple[list[Matrix], Matrix]:
    """Encoder activations [H0=x, H1, ..., H_L] and the linear-tailed reconstruction."""
    h = ad.constant(x)
    hs = [h]
    for w, b in zip(params.enc_w, params.enc_b):
        if w.rows != h.cols:
            raise ValueError(f"encoder weight {w.shape} does not fit width {h.cols}")
        h = ad.relu(ad.add(ad.matmul(h, w), b))
        hs.append(h)
    out = h
    last = len(params.dec_w) - 1
    for i, (w, b) in enumerate(zip(params.dec_w, params.dec_b)):
        if w.rows != out.cols:
            raise ValueError(f"decoder weight {w.shape} does not fit width {out.cols}")
        out = ad.add(ad.matmul(out, w), b)
        if i < last:
            out = ad.relu(out)
    return hs, out


def reconstruction_loss(x, x_hat) -> Matrix:
    """Sum of squared row residuals over 2N."""
    x, x_hat = ad.constant(x), ad.constant(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    r = ad.sub(x, x_hat)
    return ad.scale(ad.total(ad.mul(r, r)), 1.0 / (2 * x.rows))


def fused_gcn_forward(fr, a_norm, hs: Sequence[Matrix], gcn_w: Sequence[Matrix],
                      eps: float = FUSION_EPS) -> tuple[list[Matrix], Matrix, list[Matrix]]:
    """Graph convolutions whose inputs mix the autoencoder and GCN representations.

    Returns the per-layer GCN outputs [Z0=FR, Z1, ..., Z_L], the head logits
    (normalised adjacency times Z_L times the head weight) and the fused
    inputs actually fed to each hidden layer.
    """
    if len(gcn_w) != len(hs):
        raise ValueError(f"GCN has {len(gcn_w)} weights but autoencoder gives {len(hs)} layers")
    a_norm = ad.constant(a_norm)
    z = ad.constant(fr)
    zs, fused = [z], []
    for l, w in enumerate(gcn_w[:-1]):
        h = hs[l]
        if h.shape != z.shape:
            raise ValueError(f"layer {l}: autoencoder width {h.shape} != GCN width {z.shape}")
        if w.rows != z.cols:
            raise ValueError(f"GCN weight {w.shape} does not fit width {z.cols}")
        mixed = z if l == 0 else ad.add(ad.scale(h, 1.0 - eps), ad.scale(z, eps))
        fused.append(mixed)
        z = ad.relu(ad.matmul(a_norm, ad.matmul(mixed, w)))
        zs.append(z)
    logits = ad.matmul(a_norm, ad.matmul(z, gcn_w[-1]))
    return zs, logits, fused


def cluster_assignment(logits) -> tuple[Matrix, np.ndarray]:
    """Row softmax and hard labels (argmax, first index on ties)."""
    z = ad.row_softmax(ad.constant(logits))
    return z, hard_labels(z.value)


def hard_labels(z: np.ndarray) -> np.ndarray:
    return np.argmax(z, axis=1).astype(np.int64)


def ancillary_distribution(h, centers, dof: float = STUDENT_T_DOF,
                           divisor: float | None = None) -> Matrix:
    """Student-t soft assignment of embedding rows to centres.

    The squared distance is divided by ``divisor`` (default: ``dof``).
    """
    h, centers = ad.constant(h), ad.constant(centers)
    if centers.rows == 0:
        raise ValueError("need at least one cluster centre")
    if centers.cols != h.cols:
        raise ValueError(f"centre width {centers.cols} != embedding width {h.cols}")
    div = dof if divisor is None else divisor
    hh = ad.row_sum(ad.mul(h, h))
    uu = ad.transpose(ad.row_sum(ad.mul(centers, centers)))
    cross = ad.matmul(h, ad.transpose(centers))
    d2 = ad.relu(ad.sub(ad.add(hh, uu), ad.scale(cross, 2.0)))
    kernel = ad.power(ad.add(ad.scale(d2, 1.0 / div), 1.0), -(dof + 1.0) / 2.0)
    return ad.mul(kernel, ad.power(ad.row_sum(kernel), -1.0))


def target_distribution(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    f = q.sum(axis=0)
    empty = np.flatnonzero(f <= 0)
    if empty.size:
        raise ValueError(f"cluster {int(empty[0])} has zero soft frequency")
    w = q * q / f
    return w / w.sum(axis=1, keepdims=True)


def kl_divergence(p: np.ndarray, dist) -> Matrix:
    """KL(P || dist) summed over all entries; P is a constant target."""
    p = np.asarray(p, dtype=np.float64)
    dist = ad.constant(dist)
    if p.shape != dist.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {dist.shape}")
    support = p > 0
    if np.any(support & (dist.value <= 0)):
        raise NumericalError("KL divergence is infinite: zero probability under positive target")
    p_log_p = float(np.sum(p[support] * np.log(p[support])))
    # entries outside the support are shifted by 1 so log stays finite; their weight is 0
    log_dist = ad.log(ad.add(dist, (~support).astype(np.float64)))
    cross = ad.total(ad.mul(log_dist, p))
    return ad.sub(p_log_p, cross)


def clustering_losses(p: np.ndarray, z, q, l_res, alpha: float, beta: float):
    """(L_clu, L_ta, L) with L = L_res + alpha * L_clu + beta * L_ta."""
    l_clu = kl_divergence(p, z)
    l_ta = kl_divergence(p, q)
    total = ad.add(ad.add(l_res, ad.scale(l_clu, alpha)), ad.scale(l_ta, beta))
    return l_clu, l_ta, total


# ------------------------------------------------------------------ training

def kmeans_init_centers(h: np.ndarray, k: int, restarts: int = 20, seed: int = 0) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if k > h.shape[0]:
        raise ValueError(f"K={k} exceeds the number of points {h.shape[0]}")
    km = KMeans(n_clusters=k, n_init=restarts, init="k-means++", random_state=seed)
    km.fit(h)
    return km.cluster_centers_.astype(np.float64)


def _check(value: float, what: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"{what} is {value} at epoch {epoch}")


def pretrain_autoencoder(fr, config: ClusterModelConfig, params: ClusterParams | None = None
                         ) -> tuple[ClusterParams, np.ndarray, list[float]]:
    """Minimise reconstruction loss only; returns params, bottleneck H and loss series."""
    x = np.asarray(fr, dtype=np.float64)
    if params is None:
        params = ClusterParams.init(config.widths, config.n_clusters,
                                    np.random.default_rng(config.seed))
    opt = Adam(params.autoencoder(), lr=config.pretrain_lr)
    history = []
    for epoch in range(config.pretrain_epochs):
        opt.zero_grad()
        _, x_hat = autoencoder_forward(x, params)
        loss = reconstruction_loss(x, x_hat)
        _check(loss.item(), "reconstruction loss", epoch)
        history.append(loss.item())
        ad.backprop_gradients(loss)
        opt.step()
    hs, _ = autoencoder_forward(x, params)
    return params, hs[-1].value.copy(), history


def _drop_empty(state: ClusterState) -> ClusterState:
    used = np.unique(state.labels)
    k = state.z.shape[1]
    if used.size == k:
        return state
    if used.size == 1 and k > 1:
        warnings.warn("all cells collapsed into a single cluster", RuntimeWarning, stacklevel=3)
    else:
        warnings.warn(f"dropping {k - used.size} empty clusters", RuntimeWarning, stacklevel=3)
    remap = np.full(k, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)

    def keep(a):
        a = a[:, used]
        return a / a.sum(axis=1, keepdims=True)

    return ClusterState(state.h, keep(state.z), keep(state.q), keep(state.p),
                        state.centers[used], remap[state.labels], state.z_embedding)


def train_clustering(fr, adjacency: np.ndarray, config: ClusterModelConfig | None = None,
                     callback: Callable[[int, np.ndarray, np.ndarray, np.ndarray], None] | None = None
                     ) -> ClusterResult:
    """Pretrain, initialise centres with k-means, then run dual self-training.

    ``callback(epoch, Z, Q, P)`` sees the distributions used at each epoch.
    """
    cfg = config or ClusterModelConfig()
    x = np.asarray(fr, dtype=np.float64)
    if x.shape[1] != cfg.widths[0]:
        raise ValueError(f"feature width {x.shape[1]} != input width {cfg.widths[0]}")
    a_norm = normalized_adjacency(np.asarray(adjacency, dtype=np.float64)).value
    divisor = 2.0 if cfg.literal_half_distance else None

    params, h, pre_hist = pretrain_autoencoder(x, cfg)
    params.centers = Parameter(
        kmeans_init_centers(h, cfg.n_clusters, cfg.kmeans_restarts, cfg.seed), "u")
    p = target_distribution(ancillary_distribution(h, params.centers.value, cfg.dof, divisor).value)

    opt = Adam(params.all(), lr=cfg.lr)
    history: list[dict[str, float]] = []
    for epoch in range(cfg.epochs):
        opt.zero_grad()
        hs, x_hat = autoencoder_forward(x, params)
        _, logits, _ = fused_gcn_forward(x, a_norm, hs, params.gcn_w, cfg.eps)
        z, _ = cluster_assignment(logits)
        q = ancillary_distribution(hs[-1], params.centers, cfg.dof, divisor)
        if epoch > 0 and epoch % cfg.target_period == 0:
            p = target_distribution(q.value)
        l_res = reconstruction_loss(x, x_hat)
        l_clu, l_ta, loss = clustering_losses(p, z, q, l_res, cfg.alpha, cfg.beta)
        _check(loss.item(), "clustering loss", epoch)
        if callback is not None:
            callback(epoch, z.value, q.value, p)
        history.append({"res": l_res.item(), "clu": l_clu.item(),
                        "ta": l_ta.item(), "total": loss.item()})
        ad.backprop_gradients(loss)
        opt.step()

    hs, _ = autoencoder_forward(x, params)
    zs, logits, _ = fused_gcn_forward(x, a_norm, hs, params.gcn_w, cfg.eps)
    z, labels = cluster_assignment(logits)
    q = ancillary_distribution(hs[-1], params.centers, cfg.dof, divisor).value
    state = ClusterState(hs[-1].value.copy(), z.value.copy(), q.copy(),
                         target_distribution(q), params.centers.value.copy(), labels,
                         zs[-1].value.copy())
    return ClusterResult(_drop_empty(state), history, pre_hist, params)


def sweep_cluster_count(fr, adjacency, ks: Sequence[int], config: ClusterModelConfig | None = None
                        ) -> list[tuple[int, float, float]]:
    """(K, silhouette of H under the hard labels, final loss) for each K."""
    ks = list(ks)
    if not ks:
        raise ValueError("empty cluster-count range")
    base = config or ClusterModelConfig()
    m = np.asarray(fr).shape[0]
    rows = []
    for k in ks:
        if not 2 <= k <= m - 1:
            raise ValueError(f"K={k} outside [2, {m - 1}]")
        cfg = ClusterModelConfig(**{**base.__dict__, "n_clusters": k})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = train_clustering(fr, adjacency, cfg)
        labels = res.state.labels
        sil = (float(silhouette_score(res.state.h, labels))
               if 2 <= np.unique(labels).size <= m - 1 else float("nan"))
        rows.append((k, sil, res.loss_history[-1]["total"] if res.loss_history else float("nan")))
    return rows
