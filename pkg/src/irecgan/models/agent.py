"""Recommendation agent: softmax policy over all items from a recurrent state."""
from __future__ import annotations

import numpy as np

from ..nnet import GradientTape, ParamSet, RecurrentState, log_softmax, softmax, uniform_init
from .base import ModelDims, RecurrentModel
from .batch import Batch


def _as_hidden(state) -> np.ndarray:
    if isinstance(state, RecurrentState):
        return state.hidden
    h = np.asarray(state, dtype=np.float64)
    return h[None, :] if h.ndim == 1 else h


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise indices of the k largest scores; ties go to the lower id."""
    scores = np.atleast_2d(scores)
    n = scores.shape[1]
    ids = np.broadcast_to(np.arange(n), scores.shape)
    order = np.lexsort((ids, -scores), axis=1)
    return order[:, :k]


def sample_slates(probs: np.ndarray, k: int, rng: np.random.Generator,
                  test: bool = False) -> np.ndarray:
    """Draw k distinct items per row without replacement, proportional to ``probs``.

    Uses the Gumbel-top-k construction, which has the same distribution over
    ordered slates as drawing one item at a time and renormalizing. In test
    mode the k most probable items are returned.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if k > probs.shape[1]:
        raise ValueError(f"k={k} exceeds the number of items {probs.shape[1]}")
    if test:
        return top_k(probs, k)
    with np.errstate(divide="ignore"):
        logp = np.log(probs)
    g = logp + rng.gumbel(size=probs.shape)
    return np.argsort(-g, axis=1, kind="stable")[:, :k]


def sample_slate(probs, k: int, rng: np.random.Generator, test: bool = False) -> list[int]:
    return sample_slates(np.asarray(probs)[None, :], k, rng, test)[0].tolist()


class AgentModel(RecurrentModel):
    kind = "agent"

    def __init__(self, dims: ModelDims, slate_size: int = 10,
                 rng: np.random.Generator | None = None, params: ParamSet | None = None):
        if not 1 <= slate_size <= dims.n_items:
            raise ValueError("slate_size must lie in [1, n_items]")
        self.slate_size = slate_size
        E, H, n = dims.embedding_dim, dims.hidden_dim, dims.n_items
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = ParamSet()
            s = dims.init_scale
            params.add("agent.emb", uniform_init(rng, (n, E), s))
            super().__init__(dims, params, n)
            self.cell.init_params(params, rng, s)
            params.add("agent.Wa", uniform_init(rng, (n, H), s))
            params.add("agent.ba", np.zeros(n))
        else:
            super().__init__(dims, params, n)

    def logits(self, state) -> np.ndarray:
        h = _as_hidden(state)
        return h @ self.params["agent.Wa"].T + self.params["agent.ba"]

    def policy(self, state) -> np.ndarray:
        """Inclusion probabilities over all items, (B, n)."""
        return softmax(self.logits(state))

    def policy_probs(self, state) -> np.ndarray:
        return self.policy(state)[0]

    def recommend(self, state, k: int, rng=None, test: bool = True) -> np.ndarray:
        return sample_slates(self.policy(state), k, rng, test=test)

    def loss_and_grad(self, batch: Batch, returns: np.ndarray,
                      tape: GradientTape | None = None):
        """REINFORCE surrogate ``-mean_b sum_t R_t log pi(c_t | s_t)``.

        Its gradient is the negated policy-gradient estimate.
        """
        if tape is None:
            tape = self.new_tape()
        Wa = self.params["agent.Wa"]
        B, L = batch.clicks.shape
        R = np.asarray(returns, dtype=float) * batch.mask
        S, cache = self.step_states(batch.clicks, batch.mask)
        Ss = S[:, :L]
        logits = Ss @ Wa.T + self.params["agent.ba"]
        logp = log_softmax(logits)
        chosen = np.take_along_axis(logp, batch.clicks[..., None], axis=-1)[..., 0]
        loss = -np.sum(R * chosen) / B
        dlog = np.exp(logp) * (R / B)[..., None]
        np.put_along_axis(
            dlog, batch.clicks[..., None],
            np.take_along_axis(dlog, batch.clicks[..., None], axis=-1) - (R / B)[..., None],
            axis=-1,
        )
        tape.add("agent.Wa", np.einsum("bln,blh->nh", dlog, Ss))
        tape.add("agent.ba", dlog.sum(axis=(0, 1)))
        dS = np.zeros_like(S)
        dS[:, :L] = dlog @ Wa
        self.backprop_states(cache, dS, batch.clicks, tape)
        return float(loss), tape

    def click_log_probs(self, batch: Batch) -> np.ndarray:
        """log pi(c_t in a_t | s_t) for every step, (B, L)."""
        S, _ = self.step_states(batch.clicks, batch.mask)
        logp = log_softmax(S[:, : batch.max_len] @ self.params["agent.Wa"].T + self.params["agent.ba"])
        return np.take_along_axis(logp, batch.clicks[..., None], axis=-1)[..., 0]
