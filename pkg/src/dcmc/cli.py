"""Command-line entry point: ``dcmc <subcommand> [flags]``.

Configuration is resolved as preset, then ``--config`` file, then explicit
flags.  Usage errors exit with status 2, runtime failures with status 1.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path


from . import diffcore as dc
from . import knn
from .basenet import BaseNetwork, BranchSpec
from .config import PRESETS, TrainConfig, coerce_value, load_config_file, resolve
from .dataio import RatingDataset, load_manifest, load_mat_split, load_movielens_triplets, split, subsample_train
from .meanfield import build_compatibility
from .predictor import PredictionRequest, evaluate_split, predict, write_predictions
from .trainer import ablation_matrix, gradcheck_report, toy_dataset, train

log = logging.getLogger("dcmc")

# flag name -> TrainConfig field
CONFIG_FLAGS = {
    "seed": "seed",
    "beta": "beta",
    "gamma": "gamma",
    "T": "T",
    "tau": "tau",
    "sigma2": "sigma2",
    "epochs": "epochs",
    "lr": "lr",
    "batch_rows": "batch_rows",
    "batch_cols": "batch_cols",
    "mf_train": "mf_in_training",
    "mf_test": "mf_in_testing",
    "chunk_rows": "chunk_rows",
    "chunk_cols": "chunk_cols",
    "repeats": "repeats",
}


class UsageError(Exception):
    pass


def _on_off(text: str) -> bool:
    low = text.lower()
    if low in ("on", "true", "1", "yes"):
        return True
    if low in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="flat key=value file; flags override it")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config field")
    g.add_argument("--seed", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--T", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--sigma2", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-rows", type=int)
    g.add_argument("--batch-cols", type=int)
    g.add_argument("--mf-train", type=_on_off, metavar="on|off")
    g.add_argument("--mf-test", type=_on_off, metavar="on|off")
    g.add_argument("--chunk-rows", type=int)
    g.add_argument("--chunk-cols", type=int)
    g.add_argument("--repeats", type=int)
    g.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for bitwise reproducibility")


def _add_data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="ratings file")
    p.add_argument(
        "--format", default="triplets", choices=("triplets", "manifest", "mat"),
        help="triplets: 'user item rating' lines split by the config; manifest: lines with a split column; "
        "mat: MATLAB file with M/Otraining/Otest",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcmc", description="Deep CRF matrix completion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="epoch log CSV (default: <out>.log.csv)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="report path (default: stdout)")

    p = sub.add_parser("predict", help="write predictions for the test split as CSV")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="2x2 report: MF in training x MF at test time")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--out", help="report path (default: stdout)")

    p = sub.add_parser("knn", help="k-NN RMSE curves with pre-defined and learned similarities")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--metric", default=",".join(knn.METRICS), help="comma-separated metrics, or 'none'")
    p.add_argument("--k", type=_int_list, default=[10, 30, 50, 100, 150, 200, 250, 300])
    p.add_argument("--mode", choices=("user", "item"), default="user")
    p.add_argument("--shrinkage", type=float, default=100.0)
    p.add_argument("--min-support", type=int, default=1)
    p.add_argument("--learned", help="checkpoint whose embeddings provide learned similarities")
    p.add_argument("--similarity", help="exported similarity matrix to include as 'learned'")
    p.add_argument("--keep", type=float, default=1.0, help="fraction of training entries to retain")
    p.add_argument("--out", required=True, help="curve CSV")

    p = sub.add_parser("export-sim", help="export learned user and item similarity matrices")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output prefix; writes <out>.user.txt and <out>.item.txt")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    _add_data_flags(p, required=False)
    _add_config_flags(p)
    p.add_argument("--toy", action="store_true", help="5 x 6 toy matrix with 12 observed entries")
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=40, help="coordinates probed per parameter")

    p = sub.add_parser("sweep-hyper", help="grid over beta, gamma or T with validation and test RMSE")
    _add_data_flags(p)
    _add_config_flags(p)
    p.add_argument("--grid", required=True, choices=("beta", "gamma", "T"))
    p.add_argument("--values", required=True, type=_float_list)
    p.add_argument("--out", required=True, help="result CSV")
    return parser


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def resolve_config(args: argparse.Namespace, base: dict | None = None) -> TrainConfig:
    """Preset, config file, then flags; any problem is a usage error."""
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = dict(base or {})
        for item in args.set:
            if "=" not in item:
                raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = coerce_value(key.strip(), value)
        for flag, field in CONFIG_FLAGS.items():
            value = getattr(args, flag, None)
            if value is not None:
                overrides[field] = value
        return resolve(args.preset, file_values, overrides)
    except (KeyError, ValueError, TypeError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def load_dataset(args: argparse.Namespace, cfg: TrainConfig) -> RatingDataset:
    labels = cfg.label_set
    if args.format == "manifest":
        return load_manifest(args.data, labels)
    if args.format == "mat":
        return load_mat_split(args.data, labels, val_fraction=cfg.split_val, seed=cfg.split_seed)
    raw = load_movielens_triplets(args.data, labels)
    return split(raw, (cfg.split_train, cfg.split_val, cfg.split_test), seed=cfg.split_seed)


def checkpoint_header(cfg: TrainConfig, dataset: RatingDataset, **extra) -> dict:
    return {"config": cfg.to_dict(), "n_users": dataset.n_users, "n_items": dataset.n_items, **extra}


def load_model(path: str) -> tuple[BaseNetwork, TrainConfig, dict]:
    store, header = dc.checkpoint.load(path)
    try:
        cfg = TrainConfig(**header["config"])
        n_users, n_items = int(header["n_users"]), int(header["n_items"])
    except (KeyError, TypeError) as exc:
        raise dc.CheckpointError(f"{path}: header lacks model metadata ({exc})") from exc
    net = BaseNetwork(store, BranchSpec(cfg.hidden_sizes, cfg.dropout), n_users, n_items, cfg.label_set.p)
    return net, cfg, header


def _model_and_data(args) -> tuple[BaseNetwork, TrainConfig, RatingDataset]:
    net, saved, _ = load_model(args.checkpoint)
    # the saved config defines the model and split; flags may change inference settings
    cfg = resolve_config(args, base=saved.to_dict())
    dataset = load_dataset(args, cfg)
    if (dataset.n_users, dataset.n_items) != (net.n_users, net.n_items):
        raise ValueError(
            f"checkpoint expects {net.n_users} x {net.n_items}, data is {dataset.n_users} x {dataset.n_items}"
        )
    return net, cfg, dataset


def inference_kwargs(cfg: TrainConfig, mf: bool | None = None) -> dict:
    from .trainer import seeds

    return dict(
        mf_in_testing=cfg.mf_in_testing if mf is None else mf,
        T=cfg.T,
        gamma=cfg.gamma,
        exclude_self=cfg.exclude_self_messages,
        normalize=cfg.normalize_messages,
        chunk_rows=cfg.chunk_rows,
        chunk_cols=cfg.chunk_cols,
        repeats=cfg.repeats,
        seed=seeds(cfg.seed)["chunking"],
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    dataset = load_dataset(args, cfg)
    log_path = args.log or f"{args.out}.log.csv"
    res = train(dataset, cfg, log_path=log_path, progress=args.verbose)
    header = checkpoint_header(cfg, dataset, best_epoch=res.best_epoch, best_val_rmse=res.best_val_rmse)
    dc.checkpoint.save(args.out, res.best_store, header)
    log.info("wrote %s (best epoch %d, val rmse %.4f) and %s", args.out, res.best_epoch, res.best_val_rmse, log_path)
    return 0


def cmd_eval(args) -> int:
    net, cfg, dataset = _model_and_data(args)
    C = build_compatibility(dataset.labels, cfg.tau)
    report = evaluate_split(net, dataset, args.split, C, **inference_kwargs(cfg))
    _emit(report.to_text({"split": args.split, **cfg.to_dict()}), args.out)
    return 0


def cmd_predict(args) -> int:
    net, cfg, dataset = _model_and_data(args)
    C = build_compatibility(dataset.labels, cfg.tau)
    users, items, _ = dataset.subset(args.split)
    preds = predict(net, dataset, PredictionRequest(users, items, **inference_kwargs(cfg)), C)
    write_predictions(args.out, dataset, users, items, preds)
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    dataset = load_dataset(args, cfg)
    table = ablation_matrix(dataset, cfg, progress=args.verbose)
    _emit(json.dumps(table, sort_keys=True, indent=1), args.out)
    return 0


def cmd_knn(args) -> int:
    cfg = resolve_config(args)
    dataset = load_dataset(args, cfg)
    if args.keep < 1.0:
        dataset = subsample_train(dataset, args.keep, seed=cfg.split_seed)
    metrics = [] if args.metric == "none" else [m.strip() for m in args.metric.split(",") if m.strip()]
    bad = [m for m in metrics if m not in knn.METRICS]
    if bad:
        raise UsageError(f"unknown metric(s) {bad}; choose from {knn.METRICS}")
    if not args.k or min(args.k) < 1:
        raise UsageError("--k values must be >= 1")
    tables = [knn.compute_metric(dataset, args.mode, m, args.shrinkage, args.min_support) for m in metrics]
    if args.learned:
        net, _, _ = load_model(args.learned)
        tables.append(knn.import_learned(net, dataset, args.mode))
    if args.similarity:
        tables.append(knn.load_similarity(args.similarity, dataset, args.mode))
    if not tables:
        raise UsageError("nothing to evaluate: give --metric, --learned or --similarity")
    knn.write_curves(args.out, knn.sweep(dataset, tables, args.k))
    return 0


def cmd_export_sim(args) -> int:
    net, _, dataset = _model_and_data(args)
    for mode in ("user", "item"):
        knn.export_similarity(f"{args.out}.{mode}.txt", knn.import_learned(net, dataset, mode))
    return 0


def cmd_gradcheck(args) -> int:
    if args.toy:
        cfg = resolve_config(args, base=dict(hidden_sizes=(8, 4), T=3, beta=1.5, gamma=0.05))
        dataset = toy_dataset(cfg.label_set, seed=cfg.seed)
    elif args.data:
        cfg = resolve_config(args)
        dataset = load_dataset(args, cfg)
    else:
        raise UsageError("gradcheck needs --toy or --data")
    rep = gradcheck_report(dataset, cfg, h=args.h, tol=args.tol, max_samples=args.samples)
    for name, err in sorted(rep["per_param"].items()):
        print(f"{name:24s} {err:.3e}")
    status = "PASS" if rep["passed"] else "FAIL"
    print(f"{status} max relative error {rep['max_rel_err']:.3e} (tol {rep['tol']:g})")
    return 0 if rep["passed"] else 1


def cmd_sweep_hyper(args) -> int:
    base = resolve_config(args)
    dataset = load_dataset(args, base)
    rows = []
    for value in args.values:
        value = int(value) if args.grid == "T" else float(value)
        cfg = base.replace(**{args.grid: value})
        res = train(dataset, cfg, progress=args.verbose)
        net = res.best_net()
        C = build_compatibility(dataset.labels, cfg.tau)
        val = evaluate_split(net, dataset, "val", C, **inference_kwargs(cfg))
        test = evaluate_split(net, dataset, "test", C, **inference_kwargs(cfg))
        rows.append({"param": args.grid, "value": value, "val_rmse": val.rmse, "test_rmse": test.rmse, "test_mae": test.mae})
        log.info("%s=%g val %.4f test %.4f", args.grid, value, val.rmse, test.rmse)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("param", "value", "val_rmse", "test_rmse", "test_mae"))
        w.writeheader()
        w.writerows(rows)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
    "knn": cmd_knn,
    "export-sim": cmd_export_sim,
    "gradcheck": cmd_gradcheck,
    "sweep-hyper": cmd_sweep_hyper,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    guard = contextlib.nullcontext()
    if args.deterministic:
        from threadpoolctl import threadpool_limits

        guard = threadpool_limits(limits=1)
    try:
        with guard:
            return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dcmc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"dcmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
