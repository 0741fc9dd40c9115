"""Stacked gated recurrent cell with batched forward and BPTT."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import GradientTape, ParamSet, uniform_init


class RecurrentState:
    """Hidden vectors for every layer of a stacked cell, batched along axis 0."""

    __slots__ = ("layers",)

    def __init__(self, layers: list[np.ndarray]):
        self.layers = layers

    @property
    def hidden(self) -> np.ndarray:
        return self.layers[-1]

    @classmethod
    def zeros(cls, num_layers: int, batch: int, hidden_dim: int) -> "RecurrentState":
        return cls([np.zeros((batch, hidden_dim)) for _ in range(num_layers)])

    def take(self, idx) -> "RecurrentState":
        return RecurrentState([h[idx] for h in self.layers])

    def copy(self) -> "RecurrentState":
        return RecurrentState([h.copy() for h in self.layers])

    def __len__(self) -> int:
        return self.layers[0].shape[0]


@dataclass
class _LayerCache:
    x: np.ndarray
    h0: np.ndarray
    hs: np.ndarray
    zs: np.ndarray
    rs: np.ndarray
    ns: np.ndarray


@dataclass
class SequenceCache:
    mask: np.ndarray
    layers: list[_LayerCache]


class GRU:
    """A stack of ``num_layers`` gated cells stored under ``prefix`` in a ParamSet."""

    def __init__(self, prefix: str, input_dim: int, hidden_dim: int, num_layers: int = 1):
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        self.prefix = prefix
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers

    def names(self, layer: int) -> tuple[str, str, str]:
        p = f"{self.prefix}.l{layer}"
        return f"{p}.W", f"{p}.U", f"{p}.b"

    def init_params(self, params: ParamSet, rng: np.random.Generator, scale: float) -> None:
        H = self.hidden_dim
        for layer in range(self.num_layers):
            din = self.input_dim if layer == 0 else H
            w, u, b = self.names(layer)
            params.add(w, uniform_init(rng, (din, 3 * H), scale))
            params.add(u, uniform_init(rng, (H, 3 * H), scale))
            params.add(b, np.zeros(3 * H))

    def zero_state(self, batch: int) -> RecurrentState:
        return RecurrentState.zeros(self.num_layers, batch, self.hidden_dim)

    def forward(self, params: ParamSet, x: np.ndarray, mask: np.ndarray,
                h0: RecurrentState | None = None):
        """Run the stack over ``x`` of shape (B, T, E).

        Returns the top-layer states (B, T, H) and a cache for :meth:`backward`.
        """
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ValueError(
                f"expected input of shape (B, T, {self.input_dim}), got {x.shape}"
            )
        B, T, _ = x.shape
        mask = np.ascontiguousarray(mask, dtype=np.float64)
        if h0 is None:
            h0 = self.zero_state(B)
        caches = []
        inp = x
        for layer in range(self.num_layers):
            w, u, b = self.names(layer)
            W, U, bias = params[w], params[u], params[b]
            xw = np.ascontiguousarray(inp @ W + bias)
            start = np.ascontiguousarray(h0.layers[layer])
            hs, zs, rs, ns = kernels.gru_forward(xw, mask, start, U)
            caches.append(_LayerCache(inp, start, hs, zs, rs, ns))
            inp = hs
        return inp, SequenceCache(mask, caches)

    def backward(self, params: ParamSet, cache: SequenceCache | None,
                 dhs: np.ndarray, tape: GradientTape) -> np.ndarray:
        """Accumulate parameter gradients into ``tape``; return d(loss)/d(x)."""
        if cache is None:
            raise RuntimeError("backward called without a recorded forward pass")
        grad = np.ascontiguousarray(dhs, dtype=np.float64)
        for layer in range(self.num_layers - 1, -1, -1):
            c = cache.layers[layer]
            w, u, b = self.names(layer)
            W, U = params[w], params[u]
            dpre, dU, _ = kernels.gru_backward(
                cache.mask, c.h0, U, c.hs, c.zs, c.rs, c.ns, grad
            )
            B, T, H3 = dpre.shape
            flat = dpre.reshape(B * T, H3)
            tape.add(w, c.x.reshape(B * T, -1).T @ flat)
            tape.add(u, dU)
            tape.add(b, flat.sum(axis=0))
            grad = np.ascontiguousarray(dpre @ W.T)
        return grad

    def step(self, params: ParamSet, state: RecurrentState, x: np.ndarray) -> RecurrentState:
        """Advance every batch row by one input vector (B, E)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input (B, {self.input_dim}), got {x.shape}")
        if len(state.layers) != self.num_layers or state.layers[0].shape[1] != self.hidden_dim:
            raise ValueError("recurrent state does not match the cell configuration")
        B = x.shape[0]
        ones = np.ones((B, 1))
        new = []
        inp = x[:, None, :]
        for layer in range(self.num_layers):
            w, u, b = self.names(layer)
            xw = np.ascontiguousarray(inp @ params[w] + params[b])
            hs, _, _, _ = kernels.gru_forward(
                xw, ones, np.ascontiguousarray(state.layers[layer]), params[u]
            )
            new.append(hs[:, 0, :])
            inp = hs
        return RecurrentState(new)


def rnn_step(params: ParamSet, cell: GRU, state: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Single-example, single-layer convenience wrapper: returns the new hidden vector."""
    state = np.asarray(state, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if state.shape != (cell.hidden_dim,) and cell.num_layers == 1:
        raise ValueError(f"state has shape {state.shape}, expected ({cell.hidden_dim},)")
    if x.shape != (cell.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({cell.input_dim},)")
    out = cell.step(params, RecurrentState([state[None, :]]), x[None, :])
    return out.hidden[0]


def forward_sequence(params: ParamSet, cell: GRU, inputs, h0=None) -> list[np.ndarray]:
    """Unbatched forward over a list of embedded vectors; returns each new state."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or len(inputs) == 0:
        raise ValueError("inputs must be a non-empty (T, E) sequence")
    start = None if h0 is None else RecurrentState([np.asarray(h0, float)[None, :]])
    hs, _ = cell.forward(params, inputs[None], np.ones((1, len(inputs))), start)
    return list(hs[0])
