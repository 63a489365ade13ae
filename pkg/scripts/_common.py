"""Helpers shared by the experiment scripts."""
from __future__ import annotations

import logging
import sys
from pathlib import Path

from dcmc.dataio import LabelSet, load_movielens_triplets, split

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_DATA = ROOT / "data" / "ml-100k" / "u.data"


def setup_logging() -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)


def load_ml100k(path: str | Path = DEFAULT_DATA, seed: int = 0):
    """The seeded 75/5/20 split of ML-100K."""
    path = Path(path)
    if not path.is_file():
        raise SystemExit(f"{path} not found; run scripts/fetch_ml100k.py first")
    return split(load_movielens_triplets(path, LabelSet((1, 2, 3, 4, 5))), (0.75, 0.05, 0.20), seed=seed)
