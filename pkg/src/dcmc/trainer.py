"""End-to-end training of the base network through the mean-field layers."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .basenet import BaseNetwork, BranchSpec, PotentialBundle
from .config import TrainConfig
from .dataio import RatingDataset, SamplerState, make_batch
from .diffcore import ParamStore, Tensor
from .meanfield import build_compatibility, meanfield_stack
from .predictor import evaluate_split

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "loss", "loss_pred", "loss_sim", "val_rmse", "val_mae", "wall_clock")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossReport:
    L: float
    L_p: float
    L_s: float
    c: int
    n_pairs: int


def prediction_loss(P, true_labels) -> Tensor:
    """Mean negative log-probability of the true labels; 0 for an empty batch."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    c = len(true_labels)
    if c == 0:
        return Tensor(0.0)
    picked = dc.pick(dc.as_tensor(P), true_labels)
    return dc.mul_scalar(dc.sum(dc.log(picked, floor=1e-12)), -1.0 / c)


def ground_truth_similarity(a, b, sigma2: float):
    """Gaussian similarity exp(−(a − b)² / σ²) of two rating values (broadcasts)."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.exp(-((a - b) ** 2) / sigma2)


def pair_mask(c: int) -> np.ndarray:
    """Unordered pairs of distinct nodes: the strict upper triangle."""
    return np.triu(np.ones((c, c), dtype=bool), k=1)


def similarity_loss(S_pred, S_true: np.ndarray) -> Tensor:
    """Mean squared error over unordered pairs of distinct observed nodes."""
    c = S_true.shape[0]
    if c < 2:
        return Tensor(0.0)
    return dc.mse(dc.as_tensor(S_pred), Tensor(S_true), mask=pair_mask(c))


def batch_loss(
    net: BaseNetwork,
    batch,
    cfg: TrainConfig,
    C: np.ndarray,
    training: bool = True,
    rng: np.random.Generator | None = None,
    update_stats: bool = True,
) -> tuple[Tensor, LossReport, PotentialBundle, Tensor]:
    """Forward pass and combined loss L = L_p + β L_s on a batch's observed cells."""
    bundle = net.bundle(batch, training=training, rng=rng, update_stats=update_stats)
    if cfg.mf_in_training:
        P = meanfield_stack(
            bundle.Q, bundle.S, bundle.Phi, C, cfg.gamma, cfg.T,
            exclude_self=cfg.exclude_self_messages, normalize=cfg.normalize_messages,
        )
    else:
        P = bundle.Q
    Lp = prediction_loss(P, batch.obs_labels)
    r = np.asarray(cfg.labels)[batch.obs_labels]
    gt = ground_truth_similarity(r[:, None], r[None, :], cfg.sigma2)
    Ls = similarity_loss(bundle.S, gt)
    L = dc.add(Lp, dc.mul_scalar(Ls, cfg.beta))
    c = batch.c
    report = LossReport(L.item(), Lp.item(), Ls.item(), c, c * (c - 1) // 2)
    return L, report, bundle, P


@dataclass
class TrainResult:
    net: BaseNetwork
    best_store: ParamStore
    best_epoch: int
    best_val_rmse: float
    history: list[dict] = field(default_factory=list)

    def best_net(self) -> BaseNetwork:
        return BaseNetwork(self.best_store, self.net.spec, self.net.n_users, self.net.n_items, self.net.p)


def seeds(root: int) -> dict[str, int]:
    """Independent child seeds for every random subsystem."""
    names = ("init", "sampler", "dropout", "chunking")
    children = np.random.SeedSequence(root).spawn(len(names))
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def train(dataset: RatingDataset, cfg: TrainConfig, log_path: str | Path | None = None, progress: bool = False) -> TrainResult:
    if len(dataset.indices("train")) == 0:
        raise ValueError("the training split is empty")
    labels = cfg.label_set
    if labels != dataset.labels:
        raise ValueError("config labels differ from the dataset's label set")
    sd = seeds(cfg.seed)
    spec = BranchSpec(cfg.hidden_sizes, cfg.dropout)
    net = BaseNetwork.create(dataset.n_users, dataset.n_items, labels.p, spec, seed=sd["init"])
    C = build_compatibility(labels, cfg.tau)
    sampler = SamplerState(dataset.n_users, dataset.n_items, seed=sd["sampler"])
    drop_rng = np.random.default_rng(sd["dropout"])
    has_val = len(dataset.indices("val")) > 0
    bs_rows, bs_cols = cfg.batch_shape(dataset.n_users, dataset.n_items)

    best_store = net.store.copy()
    best_epoch, best_rmse = 0, np.inf
    history: list[dict] = []
    sums = np.zeros(3)
    n_steps = 0
    start = time.perf_counter()
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
    try:
        while sampler.epoch < cfg.epochs:
            epoch = sampler.epoch
            lr = cfg.lr_at(epoch)
            rows, cols, ended = sampler.draw(bs_rows, bs_cols)
            batch = make_batch(dataset, rows, cols)
            if batch.c > 0:
                net.store.zero_grad()
                try:
                    L, rep, _, _ = batch_loss(net, batch, cfg, C, training=True, rng=drop_rng)
                    if not np.isfinite(rep.L):
                        raise dc.NonFiniteError("loss")
                    L.backward()
                except dc.NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"non-finite value at step {sampler.steps} (epoch {epoch}, c={batch.c}, lr={lr:g}): {exc}"
                    ) from exc
                dc.adam_step(net.store, net.store.grads(), lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
                sums += (rep.L, rep.L_p, rep.L_s)
                n_steps += 1
            if not ended:
                continue
            row = {"epoch": epoch + 1, "lr": lr}
            row.update(zip(("loss", "loss_pred", "loss_sim"), sums / max(n_steps, 1)))
            sums[:] = 0.0
            n_steps = 0
            last = sampler.epoch >= cfg.epochs
            if has_val and ((epoch + 1) % cfg.val_every == 0 or last):
                if cfg.recalibrate_bn:
                    net.recalibrate(dataset.train_matrix)
                rep_val = evaluate_split(
                    net, dataset, "val", C,
                    mf_in_testing=cfg.mf_in_training, T=cfg.T, gamma=cfg.gamma,
                    exclude_self=cfg.exclude_self_messages, normalize=cfg.normalize_messages,
                    chunk_rows=cfg.chunk_rows, chunk_cols=cfg.chunk_cols, seed=sd["chunking"],
                )
                row["val_rmse"], row["val_mae"] = rep_val.rmse, rep_val.mae
                if rep_val.rmse < best_rmse:
                    best_rmse, best_epoch = rep_val.rmse, epoch + 1
                    best_store = net.store.copy()
            else:
                row["val_rmse"] = row["val_mae"] = float("nan")
            row["wall_clock"] = time.perf_counter() - start
            history.append(row)
            if writer is not None:
                writer.writerow(row)
                fh.flush()
            if progress:
                log.info(
                    "epoch %d lr %.2e loss %.4f (pred %.4f sim %.4f) val rmse %.4f",
                    row["epoch"], lr, row["loss"], row["loss_pred"], row["loss_sim"], row["val_rmse"],
                )
    finally:
        if fh is not None:
            fh.close()
    if not has_val:
        if cfg.recalibrate_bn:
            net.recalibrate(dataset.train_matrix)
        best_store, best_epoch = net.store.copy(), cfg.epochs
    return TrainResult(net, best_store, best_epoch, float(best_rmse), history)


def toy_dataset(labels, n_users: int = 5, n_items: int = 6, n_observed: int = 12, seed: int = 0) -> RatingDataset:
    """Small random matrix with ``n_observed`` training entries."""
    rng = np.random.default_rng(seed)
    cells = rng.choice(n_users * n_items, size=n_observed, replace=False)
    return RatingDataset(n_users, n_items, cells // n_items, cells % n_items, rng.integers(0, labels.p, n_observed), labels)


def gradcheck_report(
    dataset: RatingDataset,
    cfg: TrainConfig,
    h: float = 1e-4,
    tol: float = 1e-4,
    max_samples: int | None = 40,
    batch_rows: int | None = None,
    batch_cols: int | None = None,
) -> dict:
    """Finite-difference check of the full loss on one batch, dropout off.

    Batch-norm runs in training mode (batch statistics) without touching
    the running buffers, so every loss evaluation is the same function.
    """
    sd = seeds(cfg.seed)
    spec = BranchSpec(cfg.hidden_sizes, 0.0)
    net = BaseNetwork.create(dataset.n_users, dataset.n_items, cfg.label_set.p, spec, seed=sd["init"])
    rng = np.random.default_rng(sd["sampler"])
    rows = np.sort(rng.permutation(dataset.n_users)[: batch_rows or dataset.n_users])
    cols = np.sort(rng.permutation(dataset.n_items)[: batch_cols or dataset.n_items])
    batch = make_batch(dataset, rows, cols)
    if batch.c == 0:
        raise ValueError("the checked batch has no observed entries")
    C = build_compatibility(cfg.label_set, cfg.tau)

    def loss_fn(store: ParamStore) -> Tensor:
        return batch_loss(net, batch, cfg, C, training=True, rng=None, update_stats=False)[0]

    return dc.grad_check(loss_fn, net.store, h=h, tol=tol, max_samples=max_samples, seed=cfg.seed)


def evaluate_model(net: BaseNetwork, dataset: RatingDataset, cfg: TrainConfig, split: str = "test", mf_in_testing: bool | None = None):
    """EvalReport of ``net`` on a split with the inference settings of ``cfg``."""
    C = build_compatibility(cfg.label_set, cfg.tau)
    return evaluate_split(
        net, dataset, split, C,
        mf_in_testing=cfg.mf_in_testing if mf_in_testing is None else mf_in_testing,
        T=cfg.T, gamma=cfg.gamma,
        exclude_self=cfg.exclude_self_messages, normalize=cfg.normalize_messages,
        chunk_rows=cfg.chunk_rows, chunk_cols=cfg.chunk_cols, repeats=cfg.repeats,
        seed=seeds(cfg.seed)["chunking"],
    )


def ablation_cells(with_mf: BaseNetwork, without_mf: BaseNetwork, dataset: RatingDataset, cfg: TrainConfig) -> dict:
    """Test RMSE / MAE of two trained models, each evaluated with and without mean-field."""
    out = {}
    for mf_train, net in ((False, without_mf), (True, with_mf)):
        for mf_test in (False, True):
            rep = evaluate_model(net, dataset, cfg, "test", mf_test)
            key = f"train_{'with' if mf_train else 'without'}/test_{'with' if mf_test else 'without'}"
            out[key] = {"rmse": rep.rmse, "mae": rep.mae}
    return out


def ablation_matrix(dataset: RatingDataset, cfg: TrainConfig, progress: bool = False) -> dict:
    """Test RMSE / MAE for mean-field on or off in training, crossed with on or off at test time.

    Both models share the seed and split.  Keys look like ``"train_with/test_without"``.
    """
    nets = {mf: train(dataset, cfg.replace(mf_in_training=mf), progress=progress).best_net() for mf in (False, True)}
    return ablation_cells(nets[True], nets[False], dataset, cfg)
