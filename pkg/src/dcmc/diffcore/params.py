"""Named parameter storage and the Adam update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


@dataclass
class ParamStore:
    """Trainable tensors plus non-trainable buffers (batch-norm statistics).

    Insertion order is preserved and is the serialisation order.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    adam: dict[str, AdamState] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, op=name)
        self.params[name] = t
        self.adam[name] = AdamState(np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.array(value, dtype=np.float64)
        return self.buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients, with zeros for parameters the loss did not reach."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.params.items()
        }

    def n_values(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self.params.items():
            out.params[name] = Tensor(t.data.copy(), requires_grad=True, op=name)
            st = self.adam[name]
            out.adam[name] = AdamState(st.m.copy(), st.v.copy(), st.t)
        for name, b in self.buffers.items():
            out.buffers[name] = b.copy()
        return out

    def load_values(self, other: "ParamStore") -> None:
        """Overwrite values (not optimizer state) in place from ``other``."""
        for name, t in self.params.items():
            t.data[...] = other.params[name].data
        for name, b in self.buffers.items():
            b[...] = other.buffers[name]


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Bias-corrected Adam, applied in place to every parameter of ``store``."""
    missing = [n for n in store.params if n not in grads]
    if missing:
        raise KeyError(f"no gradient for trainable parameter(s): {missing}")
    for name, t in store.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != t.data.shape:
            raise ShapeError(f"gradient for {name}: {g.shape} != {t.data.shape}")
        st = store.adam[name]
        st.t += 1
        st.m *= beta1
        st.m += (1.0 - beta1) * g
        st.v *= beta2
        st.v += (1.0 - beta2) * g * g
        m_hat = st.m / (1.0 - beta1**st.t)
        v_hat = st.v / (1.0 - beta2**st.t)
        t.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return store


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))
