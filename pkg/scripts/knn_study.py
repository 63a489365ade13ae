"""k-NN with learned versus pre-defined similarities on a scarce ML-100K subsample.

    python scripts/knn_study.py [--keep 0.2] [--checkpoint runs/scarce.ck] [--out runs/knn_curves.csv]

Keeps a fraction of the training entries, trains the preset on what is left
(unless ``--checkpoint`` points at such a model), then sweeps k for the
four pre-defined metrics and the learned similarities in both modes.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from _common import DEFAULT_DATA, load_ml100k, setup_logging

from dcmc import diffcore as dc
from dcmc import knn
from dcmc.basenet import BaseNetwork, BranchSpec
from dcmc.config import TrainConfig, resolve
from dcmc.dataio import subsample_train
from dcmc.trainer import train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", default=str(DEFAULT_DATA))
    parser.add_argument("--keep", type=float, default=0.2)
    parser.add_argument("--checkpoint", help="reuse a model trained on the same subsample")
    parser.add_argument("--ks", default="10,30,50,100,150,200,250,300")
    parser.add_argument("--out", default="runs/knn_curves.csv")
    args = parser.parse_args()
    setup_logging()

    dataset = subsample_train(load_ml100k(args.data), args.keep, seed=0)
    if args.checkpoint and Path(args.checkpoint).exists():
        store, header = dc.load(args.checkpoint)
        cfg = TrainConfig(**header["config"])
        net = BaseNetwork(store, BranchSpec(cfg.hidden_sizes, cfg.dropout), dataset.n_users, dataset.n_items, cfg.label_set.p)
    else:
        cfg = resolve("movielens")
        res = train(dataset, cfg, progress=True)
        net = res.best_net()
        if args.checkpoint:
            dc.save(args.checkpoint, res.best_store, {"config": cfg.to_dict(), "keep": args.keep})

    ks = [int(k) for k in args.ks.split(",")]
    rows = []
    for mode in ("user", "item"):
        tables = [knn.compute_metric(dataset, mode, m) for m in knn.METRICS]
        tables.append(knn.import_learned(net, dataset, mode))
        rows += knn.sweep(dataset, tables, ks)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    knn.write_curves(out, rows)
    for row in rows:
        print(f"{row['mode']:5s} {row['source']:15s} k={row['k']:4d} rmse {row['rmse']:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
