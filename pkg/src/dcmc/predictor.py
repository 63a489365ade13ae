"""Test-time inference, decoding and error metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basenet import BaseNetwork, bilinear_scores, label_probabilities, scaled_cosine, unary_potentials
from .dataio import LabelSet, RatingDataset
from .meanfield import meanfield_stack_factored

WHOLE_MATRIX_LIMIT = 4_000_000
DEFAULT_CHUNK = 512


@dataclass
class PredictionRequest:
    users: np.ndarray
    items: np.ndarray
    chunk_rows: int = 0
    chunk_cols: int = 0
    repeats: int = 1
    mf_in_testing: bool = True
    T: int = 5
    gamma: float = 0.05
    exclude_self: bool = False
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.chunk_rows < 0 or self.chunk_cols < 0:
            raise ValueError("chunk dimensions must be positive (0 selects the default)")


@dataclass
class EvalReport:
    rmse: float
    mae: float
    count: int

    def to_text(self, config: dict | None = None) -> str:
        return json.dumps({"rmse": self.rmse, "mae": self.mae, "count": self.count, "config": config or {}}, sort_keys=True)


def decode_expected(P: np.ndarray, labels: LabelSet) -> np.ndarray:
    """Expected label value under each row (or last axis) of ``P``."""
    return np.asarray(P) @ labels.array


def default_chunks(n: int, m: int) -> tuple[int, int]:
    if n * m <= WHOLE_MATRIX_LIMIT:
        return n, m
    return min(n, DEFAULT_CHUNK), min(m, DEFAULT_CHUNK)


def block_probabilities(
    U: np.ndarray,
    V: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    mf: bool,
    T: int,
    gamma: float,
    exclude_self: bool = False,
    normalize: bool = True,
) -> np.ndarray:
    """Final label distribution for every cell of the block spanned by U × V."""
    Q = label_probabilities(bilinear_scores(U, V, B))
    if not mf or T == 0:
        return Q
    Phi = unary_potentials(Q)
    return meanfield_stack_factored(
        Q, Phi, scaled_cosine(U), scaled_cosine(V), C, gamma, T, exclude_self=exclude_self, normalize=normalize
    )


def predict(net: BaseNetwork, dataset: RatingDataset, request: PredictionRequest, C: np.ndarray) -> np.ndarray:
    """Predicted value of each requested (user, item) pair.

    Rows and columns are randomly partitioned into chunks; every cell of a
    chunk is a node of that chunk's CRF.  With several repeats the
    partitions differ and the per-repeat predictions are averaged.
    """
    n, m = dataset.n_users, dataset.n_items
    if len(request.users) and (request.users.max() >= n or request.items.max() >= m):
        raise IndexError("target outside the matrix")
    labels = dataset.labels
    U, V = net.embeddings_eval(dataset.train_matrix)
    B = net.decoder()
    cr, cc = default_chunks(n, m)
    cr = request.chunk_rows or cr
    cc = request.chunk_cols or cc
    rng = np.random.default_rng(request.seed)
    total = np.zeros(len(request.users))
    for _ in range(request.repeats):
        row_perm = rng.permutation(n) if cr < n else np.arange(n)
        col_perm = rng.permutation(m) if cc < m else np.arange(m)
        row_chunk = np.empty(n, dtype=np.int64)
        row_chunk[row_perm] = np.arange(n) // cr
        col_chunk = np.empty(m, dtype=np.int64)
        col_chunk[col_perm] = np.arange(m) // cc
        row_pos = np.empty(n, dtype=np.int64)
        row_pos[row_perm] = np.arange(n) % cr
        col_pos = np.empty(m, dtype=np.int64)
        col_pos[col_perm] = np.arange(m) % cc
        t_rc = row_chunk[request.users]
        t_cc = col_chunk[request.items]
        for a in np.unique(t_rc):
            rows = row_perm[a * cr : (a + 1) * cr]
            in_a = t_rc == a
            for b in np.unique(t_cc[in_a]):
                cols = col_perm[b * cc : (b + 1) * cc]
                sel = np.flatnonzero(in_a & (t_cc == b))
                P = block_probabilities(
                    U[rows], V[cols], B, C, request.mf_in_testing, request.T, request.gamma,
                    request.exclude_self, request.normalize,
                )
                cell = P[row_pos[request.users[sel]], col_pos[request.items[sel]]]
                total[sel] += decode_expected(cell, labels)
    return total / request.repeats


def evaluate(predictions: np.ndarray, truth: np.ndarray) -> EvalReport:
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if len(truth) == 0:
        raise ValueError("cannot evaluate on an empty split")
    err = predictions - truth
    return EvalReport(float(np.sqrt(np.mean(err * err))), float(np.mean(np.abs(err))), int(len(truth)))


def evaluate_split(net: BaseNetwork, dataset: RatingDataset, split: str, C: np.ndarray, **request_kw) -> EvalReport:
    users, items, truth = dataset.subset(split)
    preds = predict(net, dataset, PredictionRequest(users, items, **request_kw), C)
    return evaluate(preds, truth)


def write_predictions(path: str | Path, dataset: RatingDataset, users, items, preds) -> None:
    with Path(path).open("w") as fh:
        fh.write("user,item,prediction\n")
        for u, i, v in zip(users, items, preds):
            fh.write(f"{dataset.user_ids[u]},{dataset.item_ids[i]},{v:.6f}\n")
