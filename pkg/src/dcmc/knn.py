"""Memory-based k-NN rating prediction with pre-defined or learned similarities."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basenet import BaseNetwork, scaled_cosine
from .dataio import TRAIN, RatingDataset
from .predictor import evaluate

METRICS = ("cosine", "msd", "pearson", "pearson_shrunk")


@dataclass
class SimilarityTable:
    mode: str
    source: str
    matrix: np.ndarray
    support: np.ndarray


def _oriented(dataset: RatingDataset, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Training ratings with the entities being compared along the rows, and their mask."""
    if mode not in ("user", "item"):
        raise ValueError(f"mode must be 'user' or 'item', got {mode!r}")
    R = dataset.train_matrix
    M = (dataset.train_label_matrix >= 0).astype(np.float64)
    return (R, M) if mode == "user" else (R.T.copy(), M.T.copy())


def co_support(dataset: RatingDataset, mode: str) -> np.ndarray:
    _, M = _oriented(dataset, mode)
    return M @ M.T


def compute_metric(
    dataset: RatingDataset,
    mode: str,
    metric: str,
    shrinkage: float = 100.0,
    min_support: int = 1,
) -> SimilarityTable:
    """Pairwise similarity over commonly rated entries of the training split.

    * cosine: Σ x·y / sqrt(Σ x² · Σ y²)
    * msd: 1 / (1 + mean squared difference)
    * pearson: correlation over the common entries (0 when undefined)
    * pearson_shrunk: pearson · support / (support + shrinkage)

    Pairs with fewer than ``min_support`` common entries get similarity 0.
    The diagonal is set to 1, the maximum of every metric.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    R, M = _oriented(dataset, mode)
    support = M @ M.T
    prods = R @ R.T
    sq_x = (R * R) @ M.T  # Σ over common entries of the row entity's squared ratings
    sq_y = sq_x.T
    sim = np.zeros_like(prods)
    with np.errstate(divide="ignore", invalid="ignore"):
        if metric == "cosine":
            den = np.sqrt(sq_x * sq_y)
            ok = den > 0
            sim[ok] = prods[ok] / den[ok]
        elif metric == "msd":
            ok = support > 0
            msd = (sq_x + sq_y - 2.0 * prods)[ok] / support[ok]
            sim[ok] = 1.0 / (1.0 + msd)
        else:
            s_x = R @ M.T
            s_y = s_x.T
            num = support * prods - s_x * s_y
            den_sq = (support * sq_x - s_x * s_x) * (support * sq_y - s_y * s_y)
            ok = den_sq > 0
            sim[ok] = num[ok] / np.sqrt(den_sq[ok])
            if metric == "pearson_shrunk":
                sim = sim * support / (support + shrinkage)
    sim[support < min_support] = 0.0
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return SimilarityTable(mode, metric, sim, support)


def import_learned(net: BaseNetwork, dataset: RatingDataset, mode: str) -> SimilarityTable:
    """Scaled-cosine similarities between the network's user (or item) embeddings."""
    U, V = net.embeddings_eval(dataset.train_matrix)
    E = U if mode == "user" else V
    return SimilarityTable(mode, "learned", scaled_cosine(E), co_support(dataset, mode))


def export_similarity(path: str | Path, table: SimilarityTable) -> None:
    np.savetxt(path, table.matrix, fmt="%.17g", header=f"mode={table.mode} source={table.source} n={table.matrix.shape[0]}")


def load_similarity(path: str | Path, dataset: RatingDataset, mode: str, source: str = "learned") -> SimilarityTable:
    mat = np.loadtxt(path, ndmin=2)
    n = dataset.n_users if mode == "user" else dataset.n_items
    if mat.shape != (n, n):
        raise ValueError(f"similarity matrix {mat.shape} does not match {n} {mode}s")
    return SimilarityTable(mode, source, mat, co_support(dataset, mode))


def _neighbours(dataset: RatingDataset, mode: str):
    """For each target entity (item in user mode), the training raters and their ratings."""
    R, M = _oriented(dataset, mode)
    cols = {}
    for t in range(R.shape[1]):
        who = np.flatnonzero(M[:, t])
        cols[t] = (who, R[who, t])
    return cols


def global_mean(dataset: RatingDataset) -> float:
    _, _, r = dataset.subset(TRAIN)
    return float(r.mean())


def knn_predict(dataset: RatingDataset, table: SimilarityTable, k: int, user: int, item: int) -> float:
    """Similarity-weighted mean over the k most similar neighbours that know the target.

    Neighbours are ranked by decreasing similarity, ties by lower index;
    only positive similarities carry weight.  With no usable neighbour the
    global training mean is returned.  Predictions are clamped to the label
    range.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    R, M = _oriented(dataset, table.mode)
    a, t = (user, item) if table.mode == "user" else (item, user)
    who = np.flatnonzero(M[:, t])
    who = who[who != a]
    sims = table.matrix[a, who]
    order = np.argsort(-sims, kind="stable")[:k]
    num = den = 0.0
    for j in order:
        s = sims[j]
        if s > 0:
            num += s * R[who[j], t]
            den += s
    lo, hi = dataset.labels.values[0], dataset.labels.values[-1]
    pred = num / den if den > 0 else global_mean(dataset)
    return float(min(max(pred, lo), hi))


def knn_predict_many(
    dataset: RatingDataset, table: SimilarityTable, ks, users, items
) -> dict[int, np.ndarray]:
    """Predictions of every (user, item) query for every k, sharing the neighbour ranking."""
    ks = [int(k) for k in ks]
    if min(ks) < 1:
        raise ValueError("k must be >= 1")
    users = np.asarray(users)
    items = np.asarray(items)
    a_all, t_all = (users, items) if table.mode == "user" else (items, users)
    nb = _neighbours(dataset, table.mode)
    mean = global_mean(dataset)
    lo, hi = dataset.labels.values[0], dataset.labels.values[-1]
    out = {k: np.empty(len(users)) for k in ks}
    for t in np.unique(t_all):
        q = np.flatnonzero(t_all == t)
        who, r = nb[int(t)]
        a = a_all[q]
        if len(who) == 0:
            for k in ks:
                out[k][q] = mean
            continue
        sims = table.matrix[np.ix_(a, who)]
        sims = np.where(who[None, :] == a[:, None], -np.inf, sims)  # never one's own rating
        order = np.argsort(-sims, axis=1, kind="stable")
        s_sorted = np.take_along_axis(sims, order, axis=1)
        w = np.where(s_sorted > 0, s_sorted, 0.0)
        num = np.cumsum(w * r[order], axis=1)
        den = np.cumsum(w, axis=1)
        for k in ks:
            j = min(k, len(who)) - 1
            with np.errstate(invalid="ignore", divide="ignore"):
                pred = np.where(den[:, j] > 0, num[:, j] / den[:, j], mean)
            out[k][q] = np.clip(pred, lo, hi)
    return out


def sweep(
    dataset: RatingDataset,
    tables: list[SimilarityTable],
    ks=(10, 30, 50, 100, 150, 200, 250, 300),
    split: str = "test",
) -> list[dict]:
    """RMSE / MAE of k-NN on a split for every (table, k)."""
    users, items, truth = dataset.subset(split)
    rows = []
    for table in tables:
        preds = knn_predict_many(dataset, table, ks, users, items)
        for k in ks:
            rep = evaluate(preds[k], truth)
            rows.append({"source": table.source, "mode": table.mode, "k": int(k), "rmse": rep.rmse, "mae": rep.mae})
    return rows


def write_curves(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("source", "mode", "k", "rmse", "mae"))
        w.writeheader()
        w.writerows(rows)
