"""Two-branch base prediction network.

Row vectors (a user's ratings over all items) and column vectors (an item's
ratings from all users) are embedded by separate fully connected branches.
A per-label bilinear form scores each (user, item) pair; the softmax of the
scores gives label probabilities, whose negative log is the unary
potential.  Scaled cosine similarities between embeddings give the user,
item and entry similarities that weight the pairwise potential.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .dataio import RowColBatch
from .diffcore import ParamStore, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
COSINE_EPS = 1e-8


@dataclass(frozen=True)
class BranchSpec:
    hidden_sizes: tuple[int, ...] = (512, 128)
    dropout_rate: float = 0.75

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes or any(h <= 0 for h in self.hidden_sizes):
            raise ValueError(f"hidden sizes must be positive, got {self.hidden_sizes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def d(self) -> int:
        return self.hidden_sizes[-1]


@dataclass
class PotentialBundle:
    """Per-node label probabilities, unaries and the node similarity matrix."""

    Q: Tensor
    Phi: Tensor
    S: Tensor
    node_rows: np.ndarray
    node_cols: np.ndarray

    @property
    def K(self) -> int:
        return self.Q.shape[0]


def init_params(n_users: int, n_items: int, p: int, spec: BranchSpec, seed: int = 0) -> ParamStore:
    """Fresh parameters.

    Dense layers carry no bias: each one feeds a batch-norm whose shift
    subsumes it.  Weights are Glorot-uniform.  The decoder is stored as
    standard-normal matrices B̃ and used as B = B̃ / d (see
    :meth:`BaseNetwork.decoder`), so initial scores are O(1) for
    batch-normalised embeddings and an optimizer step of size lr changes
    the scores by O(lr · d) rather than O(lr · d²).
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for branch, width in (("row", n_items), ("col", n_users)):
        fan_in = width
        for k, h in enumerate(spec.hidden_sizes):
            pre = f"{branch}.{k}"
            store.add(f"{pre}.W", dc.glorot_uniform(rng, fan_in, h))
            store.add(f"{pre}.bn_scale", np.ones(h))
            store.add(f"{pre}.bn_shift", np.zeros(h))
            store.add_buffer(f"{pre}.bn_mean", np.zeros(h))
            store.add_buffer(f"{pre}.bn_var", np.ones(h))
            fan_in = h
    d = spec.d
    store.add("decoder.B", rng.standard_normal((p, d, d)))
    return store


def branch_forward(
    x: np.ndarray,
    branch: str,
    spec: BranchSpec,
    store: ParamStore,
    training: bool,
    rng: np.random.Generator | None = None,
    update_stats: bool = True,
) -> Tensor:
    """affine → batch-norm → (ReLU → dropout), the bracket skipped after the last layer."""
    W0 = store[f"{branch}.0.W"]
    if x.ndim != 2 or x.shape[1] != W0.shape[0]:
        raise dc.ShapeError(f"{branch} branch expects width {W0.shape[0]}, got {x.shape}")
    h: Tensor = Tensor(x)
    last = len(spec.hidden_sizes) - 1
    for k in range(len(spec.hidden_sizes)):
        pre = f"{branch}.{k}"
        h = dc.matmul(h, store[f"{pre}.W"])
        h = dc.batchnorm(
            h,
            store[f"{pre}.bn_scale"],
            store[f"{pre}.bn_shift"],
            store.buffers[f"{pre}.bn_mean"],
            store.buffers[f"{pre}.bn_var"],
            training=training,
            update_stats=update_stats,
        )
        if k != last:
            h = dc.relu(h)
            h = dc.dropout(h, spec.dropout_rate, rng, training)
    return h


def bilinear_scores(U: np.ndarray, V: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Scores G[i, j, u] = U_i^T B^u V_j for a full block, shape (n_t, m_t, p)."""
    UB = np.einsum("ia,uab->uib", U, B)
    G = np.empty((U.shape[0], V.shape[0], B.shape[0]))
    for u in range(B.shape[0]):
        G[:, :, u] = UB[u] @ V.T
    return G


def label_probabilities(G):
    """Softmax over the last (label) axis; Tensor inputs must be (K, p)."""
    if isinstance(G, Tensor):
        return dc.softmax_rows(G)
    z = G - G.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def unary_potentials(Q):
    """Φ = −ln Q, with Q floored at 1e-12."""
    if isinstance(Q, Tensor):
        return dc.neg(dc.log(Q, floor=PROB_FLOOR))
    return -np.log(np.maximum(Q, PROB_FLOOR))


def scaled_cosine(X):
    """Pairwise cosine of rows mapped linearly from [-1, 1] to [0, 1]."""
    if isinstance(X, Tensor):
        return dc.add(dc.mul_scalar(dc.cosine_rows(X, COSINE_EPS), 0.5), 0.5)
    norms = np.sqrt((X * X).sum(axis=1))
    if np.any(norms < COSINE_EPS):
        log.info("%d zero-norm embedding(s); their cosine similarities are 0", int((norms < COSINE_EPS).sum()))
    Xn = X / np.maximum(norms, COSINE_EPS)[:, None]
    c = Xn @ Xn.T
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return 0.5 * c + 0.5


def similarities(U, V, node_rows, node_cols):
    """Return ``(S, S_rows, S_cols)``.

    ``S_rows`` / ``S_cols`` are the scaled user / item similarities over the
    embeddings given; ``S[k, l]`` multiplies the user similarity of nodes
    k, l with their item similarity.
    """
    Sr = scaled_cosine(U)
    Sc = scaled_cosine(V)
    if isinstance(Sr, Tensor):
        S = dc.mul(dc.take2d(Sr, node_rows, node_rows), dc.take2d(Sc, node_cols, node_cols))
    else:
        S = Sr[np.ix_(node_rows, node_rows)] * Sc[np.ix_(node_cols, node_cols)]
    return S, Sr, Sc


class BaseNetwork:
    """Parameters plus forward passes of the base prediction network."""

    def __init__(self, store: ParamStore, spec: BranchSpec, n_users: int, n_items: int, p: int):
        self.store = store
        self.spec = spec
        self.n_users = n_users
        self.n_items = n_items
        self.p = p

    @classmethod
    def create(cls, n_users: int, n_items: int, p: int, spec: BranchSpec, seed: int = 0) -> "BaseNetwork":
        return cls(init_params(n_users, n_items, p, spec, seed), spec, n_users, n_items, p)

    def embed(self, batch: RowColBatch, training: bool, rng=None, update_stats: bool = True) -> tuple[Tensor, Tensor]:
        U = branch_forward(batch.dense_rows, "row", self.spec, self.store, training, rng, update_stats)
        V = branch_forward(batch.dense_cols, "col", self.spec, self.store, training, rng, update_stats)
        return U, V

    def bundle(
        self,
        batch: RowColBatch,
        training: bool,
        rng=None,
        update_stats: bool = True,
        node_rows: np.ndarray | None = None,
        node_cols: np.ndarray | None = None,
    ) -> PotentialBundle:
        """Potentials over the given nodes (default: the batch's observed cells)."""
        U, V = self.embed(batch, training, rng, update_stats)
        rows = batch.obs_rows if node_rows is None else node_rows
        cols = batch.obs_cols if node_cols is None else node_cols
        B = dc.mul_scalar(self.store["decoder.B"], 1.0 / self.spec.d)
        G = dc.bilinear_form(dc.take_rows(U, rows), B, dc.take_rows(V, cols))
        Q = label_probabilities(G)
        Phi = unary_potentials(Q)
        S, _, _ = similarities(U, V, rows, cols)
        return PotentialBundle(Q, Phi, S, np.asarray(rows), np.asarray(cols))

    def decoder(self) -> np.ndarray:
        """The effective per-label bilinear matrices B = B̃ / d, shape (p, d, d)."""
        return self.store["decoder.B"].data / self.spec.d

    def recalibrate(self, train_matrix: np.ndarray) -> None:
        """Reset every batch-norm buffer to the statistics of one dropout-free pass.

        Running averages collected under heavy inverted dropout overstate the
        variance that deeper layers see at evaluation time.  Recomputing them
        layer by layer over all users and all items removes that mismatch.
        """
        for branch, x in (("row", train_matrix), ("col", train_matrix.T)):
            h = np.asarray(x, dtype=float)
            last = len(self.spec.hidden_sizes) - 1
            for k in range(last + 1):
                pre = f"{branch}.{k}"
                z = h @ self.store[f"{pre}.W"].data
                mu, var = z.mean(axis=0), z.var(axis=0)
                self.store.buffers[f"{pre}.bn_mean"][:] = mu
                self.store.buffers[f"{pre}.bn_var"][:] = var
                z = (z - mu) / np.sqrt(var + 1e-5) * self.store[f"{pre}.bn_scale"].data + self.store[f"{pre}.bn_shift"].data
                h = np.maximum(z, 0.0) if k != last else z

    def embeddings_eval(self, train_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Evaluation-mode embeddings of every user and every item."""
        U = branch_forward(train_matrix, "row", self.spec, self.store, training=False)
        V = branch_forward(train_matrix.T, "col", self.spec, self.store, training=False)
        return U.data, V.data
