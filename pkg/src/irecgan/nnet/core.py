"""Parameter containers, gradient tapes and elementwise primitives."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterable, Iterator

import numpy as np

DTYPE = np.float64


class ParamSet:
    """Ordered mapping of parameter name to a float64 array.

    Shapes are fixed at creation; updates must write in place.
    """

    def __init__(self, params: Iterable[tuple[str, np.ndarray]] = ()):
        self._params: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, value in params:
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        arr = np.ascontiguousarray(value, dtype=DTYPE).copy()
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite values")
        self._params[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value) -> None:
        arr = self._params[name]
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != arr.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {value.shape} vs {arr.shape}"
            )
        arr[...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def copy(self) -> "ParamSet":
        return ParamSet((k, v) for k, v in self._params.items())

    def assign(self, other: "ParamSet") -> None:
        for name, value in other.items():
            self[name] = value

    def num_values(self) -> int:
        return sum(v.size for v in self._params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self._params.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for arr in self._params.values():
            arr[...] = vec[i:i + arr.size].reshape(arr.shape)
            i += arr.size

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._params.values())


class GradientTape:
    """Per-parameter gradient accumulators matching a :class:`ParamSet`."""

    def __init__(self, params: ParamSet):
        self.grads: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, np.zeros_like(value)) for name, value in params.items()
        )

    def zero(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def add(self, name: str, value) -> None:
        g = self.grads[name]
        g += value

    def items(self):
        return self.grads.items()

    def scale(self, factor: float) -> None:
        for g in self.grads.values():
            g *= factor

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads.values()])

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.08) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``.

    Raises ``ValueError`` on empty or non-finite input. ``-inf`` entries are
    allowed as masks as long as each row has a finite entry.
    """
    x = np.asarray(logits, dtype=DTYPE)
    if x.size == 0 or x.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    if np.any(np.isnan(x)) or np.any(x == np.inf):
        raise ValueError("softmax input contains NaN or +inf")
    m = np.max(x, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("softmax row has no finite entry")
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    x = np.asarray(logits, dtype=DTYPE)
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x) -> np.ndarray:
    """log(sigmoid(x)) without overflow."""
    x = np.asarray(x, dtype=DTYPE)
    return -np.logaddexp(0.0, -x)


def softmax_xent_grad(logits: np.ndarray, target: int) -> np.ndarray:
    """Gradient of ``-log softmax(logits)[target]`` with respect to the logits."""
    g = softmax(logits)
    g[target] -= 1.0
    return g
