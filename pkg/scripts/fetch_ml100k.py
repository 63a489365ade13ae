"""Fetch the MovieLens-100K ratings file into data/ml-100k/u.data.

Tries the GroupLens archive first.  When that host is unreachable, the same
100,000 ratings are recovered from the RecBole wheel on PyPI, which bundles
them as a tab-separated ``.inter`` file in the original line order.

    python scripts/fetch_ml100k.py [--out data/ml-100k/u.data] [--wheel recbole-1.2.1-py3-none-any.whl]
"""
from __future__ import annotations

import argparse
import hashlib
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL_SPEC = "recbole==1.2.1"
INTER = "recbole/dataset_example/ml-100k/ml-100k.inter"
EXPECTED_MD5 = "6e47046882bad158b0efbb84cd5cb987"


def from_grouplens(timeout: float = 20.0) -> bytes:
    with urllib.request.urlopen(GROUPLENS, timeout=timeout) as resp:
        blob = resp.read()
    with zipfile.ZipFile(io.BytesIO(blob)) as z:
        return z.read("ml-100k/u.data")


def from_wheel(wheel: str | None = None) -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        if wheel is None:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", "--no-deps", "-d", tmp, WHEEL_SPEC],
                check=True,
                stdout=subprocess.DEVNULL,
            )
            wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as z:
            text = z.read(INTER).decode("utf-8")
    lines = text.splitlines()[1:]  # drop the typed header
    return ("\n".join(lines) + "\n").encode("utf-8")


def check(blob: bytes) -> None:
    rows = [line.split("\t") for line in blob.decode("utf-8").splitlines()]
    users = {r[0] for r in rows}
    items = {r[1] for r in rows}
    if (len(rows), len(users), len(items)) != (100_000, 943, 1682):
        raise SystemExit(f"unexpected contents: {len(rows)} ratings, {len(users)} users, {len(items)} items")
    digest = hashlib.md5(blob).hexdigest()
    if digest != EXPECTED_MD5:
        print(f"warning: md5 {digest} differs from {EXPECTED_MD5}; counts are correct", file=sys.stderr)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "ml-100k" / "u.data"))
    parser.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = parser.parse_args()
    if args.wheel:
        blob, source = from_wheel(args.wheel), args.wheel
    else:
        blob, source = fetch()
    check(blob)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(blob)
    print(f"wrote {out} from {source}")
    return 0


def fetch() -> tuple[bytes, str]:
    try:
        return from_grouplens(), "grouplens"
    except Exception as exc:  # noqa: BLE001
        print(f"GroupLens unavailable ({exc}); using the PyPI wheel", file=sys.stderr)
        return from_wheel(), WHEEL_SPEC


if __name__ == "__main__":
    sys.exit(main())
