"""Training configuration, dataset presets and the flat ``key=value`` format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .dataio import LabelSet

FIVE_STAR = (1.0, 2.0, 3.0, 4.0, 5.0)
HALF_STAR = tuple(0.5 * k for k in range(1, 11))
HUNDRED = tuple(float(k) for k in range(1, 101))


@dataclass
class TrainConfig:
    beta: float = 1.5
    gamma: float = 0.05
    T: int = 5
    tau: float = 12.0
    sigma2: float = 3.5
    labels: tuple[float, ...] = FIVE_STAR
    dropout: float = 0.75
    hidden_sizes: tuple[int, ...] = (512, 128)
    epochs: int = 300
    lr: float = 0.01
    lr_decay: float = 0.5
    lr_decay_every: int = 25
    batch_rows: int = 192
    batch_cols: int = 0  # 0: match the matrix aspect ratio, see batch_shape
    seed: int = 0
    mf_in_training: bool = True
    mf_in_testing: bool = True
    exclude_self_messages: bool = False
    normalize_messages: bool = True
    recalibrate_bn: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_every: int = 1
    chunk_rows: int = 0
    chunk_cols: int = 0
    repeats: int = 1
    split_train: float = 0.75
    split_val: float = 0.05
    split_test: float = 0.20
    split_seed: int = 0

    def __post_init__(self):
        self.labels = tuple(float(v) for v in self.labels)
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.beta < 0:
            problems.append("beta must be >= 0")
        if self.gamma < 0:
            problems.append("gamma must be >= 0")
        if self.T < 0:
            problems.append("T must be >= 0")
        if self.tau <= 0:
            problems.append("tau must be > 0")
        if self.sigma2 <= 0:
            problems.append("sigma2 must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if self.repeats < 1:
            problems.append("repeats must be >= 1")
        if self.batch_rows < 1 or self.batch_cols < 0:
            problems.append("batch_rows must be >= 1 and batch_cols >= 0")
        if problems:
            raise ValueError("; ".join(problems))
        LabelSet(self.labels)

    @property
    def label_set(self) -> LabelSet:
        return LabelSet(self.labels)

    def batch_shape(self, n_rows: int, n_cols: int) -> tuple[int, int]:
        """Rows and columns per mini-batch for an ``n_rows × n_cols`` matrix.

        With ``batch_cols = 0`` the column count follows the matrix aspect
        ratio, so both orderings run out after about the same number of steps
        and an epoch covers the largest share of entries for its batch size.
        """
        rows = min(self.batch_rows, n_rows)
        cols = self.batch_cols or max(1, round(rows * n_cols / n_rows))
        return rows, min(cols, n_cols)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS: dict[str, dict] = {
    "movielens": dict(labels=FIVE_STAR, tau=12.0, sigma2=3.5),
    "douban": dict(labels=FIVE_STAR, tau=12.0, sigma2=3.5),
    "flixster": dict(labels=HALF_STAR, tau=12.0, sigma2=3.5),
    "yahoomusic": dict(labels=HUNDRED, tau=100.0, sigma2=3000.0),
}


def _coerce(f: dataclasses.Field, text: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    text = text.strip()
    if kind.startswith("tuple"):
        parts = [p for p in text.replace(",", " ").split() if p]
        conv = int if "int" in kind else float
        return tuple(conv(p) for p in parts)
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"{f.name}: expected on/off, got {text!r}")
    if kind == "int":
        return int(text)
    return float(text)


FIELDS = {f.name: f for f in fields(TrainConfig)}


def coerce_value(key: str, text: str):
    if key not in FIELDS:
        raise KeyError(f"unknown config key {key!r}")
    return _coerce(FIELDS[key], text)


def parse_config_text(text: str) -> dict:
    """Parse flat ``key=value`` lines (``#`` comments allowed)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce_value(key, value)
    return out


def load_config_file(path: str | Path) -> dict:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for name, value in cfg.to_dict().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            value = "on" if value else "off"
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def resolve(preset: str | None = None, file_values: dict | None = None, overrides: dict | None = None) -> TrainConfig:
    """Preset, then config file, then explicit overrides (last wins)."""
    values: dict = {}
    if preset:
        if preset not in PRESETS:
            raise KeyError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    values.update(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig(**values)
