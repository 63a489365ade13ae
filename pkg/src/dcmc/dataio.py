"""Rating datasets, splits and row/column mini-batch sampling."""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}
SPLIT_CODES = {v: k for k, v in SPLIT_NAMES.items()}


class DataFormatError(ValueError):
    pass


class LabelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class LabelSet:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("a label set needs at least two values")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("label values must be strictly increasing")

    @classmethod
    def arange(cls, start: float, stop: float, step: float = 1.0) -> "LabelSet":
        n = int(round((stop - start) / step)) + 1
        return cls(tuple(start + i * step for i in range(n)))

    @property
    def p(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def index_of(self, value: float) -> int:
        arr = self.array
        i = int(np.argmin(np.abs(arr - value)))
        if abs(arr[i] - value) > 1e-9:
            raise LabelDomainError(f"rating {value!r} is not in the label set {self.values}")
        return i


@dataclass
class RatingDataset:
    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    label_idx: np.ndarray
    labels: LabelSet
    split: np.ndarray = None
    user_ids: list = field(default=None, repr=False)
    item_ids: list = field(default=None, repr=False)

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.label_idx = np.asarray(self.label_idx, dtype=np.int64)
        if self.split is None:
            self.split = np.full(len(self.users), TRAIN, dtype=np.int8)
        self.split = np.asarray(self.split, dtype=np.int8)
        if self.user_ids is None:
            self.user_ids = list(range(self.n_users))
        if self.item_ids is None:
            self.item_ids = list(range(self.n_items))
        self.validate()

    def validate(self) -> None:
        n = len(self.users)
        if not (len(self.items) == len(self.label_idx) == len(self.split) == n):
            raise ValueError("triplet arrays have inconsistent lengths")
        if n:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValueError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValueError("item index out of range")
            if self.label_idx.min() < 0 or self.label_idx.max() >= self.labels.p:
                raise ValueError("label index out of range")
            keys = self.users * self.n_items + self.items
            if len(np.unique(keys)) != n:
                raise ValueError("more than one triplet for a (user, item) pair")

    def __len__(self) -> int:
        return len(self.users)

    @property
    def ratings(self) -> np.ndarray:
        return self.labels.array[self.label_idx]

    def indices(self, split: int | str) -> np.ndarray:
        code = SPLIT_CODES[split] if isinstance(split, str) else split
        return np.flatnonzero(self.split == code)

    def subset(self, split: int | str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(users, items, ratings)`` of one split."""
        ix = self.indices(split)
        return self.users[ix], self.items[ix], self.ratings[ix]

    @cached_property
    def train_matrix(self) -> np.ndarray:
        """n_users × n_items ratings of the training split, 0 elsewhere."""
        m = np.zeros((self.n_users, self.n_items))
        u, i, r = self.subset(TRAIN)
        m[u, i] = r
        return m

    @cached_property
    def train_label_matrix(self) -> np.ndarray:
        """Label index of each training entry, -1 for every other cell."""
        m = np.full((self.n_users, self.n_items), -1, dtype=np.int64)
        ix = self.indices(TRAIN)
        m[self.users[ix], self.items[ix]] = self.label_idx[ix]
        return m

    def with_split(self, split: np.ndarray) -> "RatingDataset":
        return dataclasses.replace(self, split=np.asarray(split, dtype=np.int8))


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------


def _dense_ids(raw: Sequence[str]) -> tuple[dict, list]:
    uniq = set(raw)
    try:
        ordered = sorted(uniq, key=lambda s: (float(s), s))
    except ValueError:
        ordered = sorted(uniq)
    return {k: i for i, k in enumerate(ordered)}, ordered


def parse_triplets(lines, labels: LabelSet, source: str = "<input>") -> tuple[list, list, list]:
    """Parse ``user item rating [timestamp]`` lines, last duplicate wins."""
    seen: dict[tuple[str, str], int] = {}
    users, items, lab = [], [], []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split(",") if ("," in text and not any(c in text for c in " \t")) else text.split()
        if len(parts) not in (3, 4):
            raise DataFormatError(f"{source}:{lineno}: expected 3 or 4 fields, got {len(parts)}")
        u, i, r = parts[0], parts[1], parts[2]
        try:
            value = float(r)
        except ValueError as exc:
            raise DataFormatError(f"{source}:{lineno}: rating {r!r} is not a number") from exc
        try:
            li = labels.index_of(value)
        except LabelDomainError as exc:
            raise LabelDomainError(f"{source}:{lineno}: {exc}") from None
        key = (u, i)
        if key in seen:
            warnings.warn(f"{source}:{lineno}: duplicate entry for user {u} item {i}; keeping the last one")
            lab[seen[key]] = li
            continue
        seen[key] = len(users)
        users.append(u)
        items.append(i)
        lab.append(li)
    return users, items, lab


def load_movielens_triplets(
    path: str | Path,
    labels: LabelSet,
    n_users: int | None = None,
    n_items: int | None = None,
) -> RatingDataset:
    """Load a MovieLens-style triplet file.

    Raw ids are remapped to dense 0-based indices in sorted id order (numeric
    order when every id parses as a number).  ``n_users`` / ``n_items`` may
    enlarge the matrix beyond the ids present in the file.
    """
    path = Path(path)
    with path.open() as fh:
        raw_u, raw_i, lab = parse_triplets(fh, labels, source=str(path))
    umap, uids = _dense_ids(raw_u)
    imap, iids = _dense_ids(raw_i)
    nu = max(len(uids), n_users or 0)
    ni = max(len(iids), n_items or 0)
    if nu == 0 or ni == 0:
        raise DataFormatError(f"{path}: no triplets and no matrix dimensions declared")
    uids = uids + [f"#{k}" for k in range(len(uids), nu)]
    iids = iids + [f"#{k}" for k in range(len(iids), ni)]
    return RatingDataset(
        n_users=nu,
        n_items=ni,
        users=np.array([umap[u] for u in raw_u], dtype=np.int64),
        items=np.array([imap[i] for i in raw_i], dtype=np.int64),
        label_idx=np.array(lab, dtype=np.int64),
        labels=labels,
        user_ids=uids,
        item_ids=iids,
    )


def load_manifest(path: str | Path, labels: LabelSet) -> RatingDataset:
    """Read a split manifest written by :func:`write_manifest`."""
    path = Path(path)
    raw_u, raw_i, lab, tags = [], [], [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 4 or parts[3] not in SPLIT_CODES:
                raise DataFormatError(f"{path}:{lineno}: expected 'user item rating split'")
            raw_u.append(parts[0])
            raw_i.append(parts[1])
            lab.append(labels.index_of(float(parts[2])))
            tags.append(SPLIT_CODES[parts[3]])
    umap, uids = _dense_ids(raw_u)
    imap, iids = _dense_ids(raw_i)
    return RatingDataset(
        n_users=len(uids),
        n_items=len(iids),
        users=[umap[u] for u in raw_u],
        items=[imap[i] for i in raw_i],
        label_idx=lab,
        labels=labels,
        split=tags,
        user_ids=uids,
        item_ids=iids,
    )


def write_manifest(dataset: RatingDataset, path: str | Path) -> None:
    """One ``user item rating split`` line per triplet, raw ids, file order."""
    r = dataset.ratings
    with Path(path).open("w") as fh:
        for k in range(len(dataset)):
            fh.write(
                f"{dataset.user_ids[dataset.users[k]]} {dataset.item_ids[dataset.items[k]]} "
                f"{r[k]:g} {SPLIT_NAMES[int(dataset.split[k])]}\n"
            )


def load_mat_split(path: str | Path, labels: LabelSet, val_fraction: float = 0.05, seed: int = 0) -> RatingDataset:
    """Load a ``.mat`` file holding ``M``, ``Otraining`` and ``Otest``.

    This is the layout of the commonly distributed Flixster / Douban /
    YahooMusic benchmark splits.  MATLAB v7.3 (HDF5) files are read with
    h5py, older ones with scipy.  A ``val_fraction`` of the training entries
    is moved to the validation split.
    """
    path = Path(path)
    arrays = {}
    try:
        import h5py

        with h5py.File(path, "r") as f:
            for key in ("M", "Otraining", "Otest"):
                arrays[key] = np.asarray(f[key]).T  # HDF5 stores MATLAB arrays transposed
    except OSError:
        from scipy.io import loadmat

        mat = loadmat(path)
        for key in ("M", "Otraining", "Otest"):
            v = mat[key]
            arrays[key] = v.toarray() if hasattr(v, "toarray") else np.asarray(v)
    M, otr, ote = arrays["M"], arrays["Otraining"], arrays["Otest"]
    if not (M.shape == otr.shape == ote.shape):
        raise DataFormatError(f"{path}: M, Otraining and Otest shapes differ")
    tr_u, tr_i = np.nonzero(otr)
    te_u, te_i = np.nonzero(ote)
    users = np.concatenate([tr_u, te_u])
    items = np.concatenate([tr_i, te_i])
    lab = np.array([labels.index_of(v) for v in M[users, items]], dtype=np.int64)
    split = np.concatenate([np.full(len(tr_u), TRAIN), np.full(len(te_u), TEST)]).astype(np.int8)
    rng = np.random.default_rng(seed)
    n_val = int(round(val_fraction * len(tr_u)))
    split[rng.permutation(len(tr_u))[:n_val]] = VAL
    return RatingDataset(M.shape[0], M.shape[1], users, items, lab, labels, split)


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


def split(dataset: RatingDataset, fractions: tuple[float, float, float] = (0.75, 0.05, 0.20), seed: int = 0) -> RatingDataset:
    """Assign every triplet to train / val / test by a seeded permutation."""
    f = np.asarray(fractions, dtype=np.float64)
    if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n = len(dataset)
    n_train = int(round(f[0] * n))
    n_val = min(int(round(f[1] * n)), n - n_train)
    perm = np.random.default_rng(seed).permutation(n)
    tags = np.full(n, TEST, dtype=np.int8)
    tags[perm[:n_train]] = TRAIN
    tags[perm[n_train : n_train + n_val]] = VAL
    return dataset.with_split(tags)


def subsample_train(dataset: RatingDataset, keep: float, seed: int = 0) -> RatingDataset:
    """Keep a random ``keep`` fraction of the training entries; the rest are dropped.

    Validation and test entries are untouched.
    """
    tr = dataset.indices(TRAIN)
    rng = np.random.default_rng(seed)
    kept = rng.permutation(tr)[: int(round(keep * len(tr)))]
    mask = dataset.split != TRAIN
    mask[kept] = True
    return RatingDataset(
        dataset.n_users,
        dataset.n_items,
        dataset.users[mask],
        dataset.items[mask],
        dataset.label_idx[mask],
        dataset.labels,
        dataset.split[mask],
        dataset.user_ids,
        dataset.item_ids,
    )


# --------------------------------------------------------------------------
# mini-batches
# --------------------------------------------------------------------------


@dataclass
class RowColBatch:
    row_indices: np.ndarray
    col_indices: np.ndarray
    dense_rows: np.ndarray
    dense_cols: np.ndarray
    obs_rows: np.ndarray
    obs_cols: np.ndarray
    obs_labels: np.ndarray

    @property
    def c(self) -> int:
        return len(self.obs_rows)

    @property
    def observed_cells(self) -> list[tuple[int, int, int]]:
        return list(zip(self.obs_rows.tolist(), self.obs_cols.tolist(), self.obs_labels.tolist()))


class SamplerState:
    """Independently shuffled row and column orderings.

    Each ordering is consumed without replacement; when one runs out it is
    reshuffled and the epoch counter advances (once per call, even if both
    run out together).  The final batch of an ordering may be short.
    """

    def __init__(self, n_rows: int, n_cols: int, seed: int = 0):
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.rng = np.random.default_rng(seed)
        self.row_order = self.rng.permutation(n_rows)
        self.col_order = self.rng.permutation(n_cols)
        self.row_pos = 0
        self.col_pos = 0
        self.epoch = 0
        self.steps = 0

    def draw(self, batch_rows: int, batch_cols: int) -> tuple[np.ndarray, np.ndarray, bool]:
        if batch_rows > self.n_rows or batch_cols > self.n_cols:
            raise ValueError("batch larger than the matrix")
        rows = self.row_order[self.row_pos : self.row_pos + batch_rows]
        cols = self.col_order[self.col_pos : self.col_pos + batch_cols]
        self.row_pos += len(rows)
        self.col_pos += len(cols)
        ended = False
        if self.row_pos >= self.n_rows:
            self.row_order = self.rng.permutation(self.n_rows)
            self.row_pos = 0
            ended = True
        if self.col_pos >= self.n_cols:
            self.col_order = self.rng.permutation(self.n_cols)
            self.col_pos = 0
            ended = True
        if ended:
            self.epoch += 1
        self.steps += 1
        return rows, cols, ended


def make_batch(dataset: RatingDataset, rows: np.ndarray, cols: np.ndarray) -> RowColBatch:
    R = dataset.train_matrix
    sub = dataset.train_label_matrix[np.ix_(rows, cols)]
    orow, ocol = np.nonzero(sub >= 0)
    return RowColBatch(
        row_indices=np.asarray(rows),
        col_indices=np.asarray(cols),
        dense_rows=R[rows],
        dense_cols=R[:, cols].T.copy(),
        obs_rows=orow,
        obs_cols=ocol,
        obs_labels=sub[orow, ocol],
    )


def next_batch(dataset: RatingDataset, batch_rows: int, batch_cols: int, state: SamplerState) -> RowColBatch:
    rows, cols, _ = state.draw(batch_rows, batch_cols)
    return make_batch(dataset, rows, cols)
