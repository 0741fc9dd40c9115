from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nnet import GRU, GradientTape, ParamSet, RecurrentState
from ..nnet import checkpoint


@dataclass(frozen=True)
class ModelDims:
    n_items: int
    embedding_dim: int = 16
    hidden_dim: int = 32
    layers: int = 1
    init_scale: float = 0.08


class RecurrentModel:
    """Shared plumbing: an item embedding feeding a recurrent state over clicks.

    The state used at step ``t`` summarizes clicks ``0..t-1``; the state at
    step 0 is the zero vector.
    """

    kind = "model"

    def __init__(self, dims: ModelDims, params: ParamSet, emb_rows: int):
        self.dims = dims
        self.params = params
        self.emb_rows = emb_rows
        self.cell = GRU(f"{self.kind}.gru", dims.embedding_dim, dims.hidden_dim, dims.layers)

    def new_tape(self) -> GradientTape:
        return GradientTape(self.params)

    @property
    def emb(self) -> np.ndarray:
        return self.params[f"{self.kind}.emb"]

    def zero_state(self, batch: int) -> RecurrentState:
        return self.cell.zero_state(batch)

    def advance(self, state: RecurrentState, clicks) -> RecurrentState:
        clicks = np.asarray(clicks, dtype=np.int64)
        return self.cell.step(self.params, state, self.emb[clicks])

    def step_states(self, clicks: np.ndarray, mask: np.ndarray):
        """States at every step plus one past the end: (B, L+1, H) and the cache."""
        hs, cache = self.cell.forward(self.params, self.emb[clicks], mask)
        B, L, H = hs.shape
        states = np.zeros((B, L + 1, H))
        states[:, 1:] = hs
        return states, cache

    def backprop_states(self, cache, dstates: np.ndarray, clicks: np.ndarray,
                        tape: GradientTape) -> None:
        """Push d(loss)/d(states) (B, L+1, H) through the cell into the embedding."""
        dx = self.cell.backward(self.params, cache, dstates[:, 1:], tape)
        emb_grad = tape[f"{self.kind}.emb"]
        np.add.at(emb_grad, clicks.reshape(-1), dx.reshape(-1, dx.shape[-1]))

    def check_items(self, items) -> None:
        items = np.asarray(items)
        if items.size and (items.min() < 0 or items.max() >= self.dims.n_items):
            raise ValueError(f"unknown item id in {items.tolist()}")

    def copy(self):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = self.params.copy()
        return clone

    def save(self, path) -> None:
        checkpoint.save(path, self.params.items())

    def load_arrays(self, arrays) -> None:
        for name in self.params:
            self.params[name] = arrays[name]
