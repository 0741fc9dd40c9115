"""Recurrent trajectory discriminator with a relaxed preferred-item choice."""
from __future__ import annotations

import numpy as np

from ..env import Trajectory
from ..nnet import GradientTape, ParamSet, log_sigmoid, sigmoid, softmax, uniform_init
from .base import ModelDims, RecurrentModel
from .batch import Batch, scatter_rows


class DiscriminatorModel(RecurrentModel):
    """Scores how likely a trajectory came from real logs.

    At each step the preferred item of the slate is a temperature softmax
    over ``(Wd s + bd) . e(item)``; the step term is
    ``e(preferred) . e(click) * (wp * reward + bp)`` and the output is the
    sigmoid of the mean step term.
    """

    kind = "disc"

    def __init__(self, dims: ModelDims, rng: np.random.Generator | None = None,
                 temperature: float = 0.1, params: ParamSet | None = None):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        E, H, n = dims.embedding_dim, dims.hidden_dim, dims.n_items
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = ParamSet()
            s = dims.init_scale
            params.add("disc.emb", uniform_init(rng, (n, E), s))
            super().__init__(dims, params, n)
            self.cell.init_params(params, rng, s)
            params.add("disc.Wd", uniform_init(rng, (E, H), s))
            params.add("disc.bd", np.zeros(E))
            params.add("disc.wp", uniform_init(rng, (1,), s))
            params.add("disc.bp", np.zeros(1))
        else:
            super().__init__(dims, params, n)
        self.temperature = temperature

    def _forward(self, batch: Batch):
        P = self.params
        E = P["disc.emb"]
        B, L, K = batch.slates.shape
        S, cache = self.step_states(batch.clicks, batch.mask)
        Ss = S[:, :L]
        pref = Ss @ P["disc.Wd"].T + P["disc.bd"]  # (B, L, E)
        cand = E[batch.slates]
        z = np.einsum("blke,ble->blk", cand, pref) / self.temperature
        z = np.where(batch.slate_mask, z, -np.inf)
        z[batch.mask == 0] = 0.0
        alpha = softmax(z)
        ehat = np.einsum("blk,blke->ble", alpha, cand)
        ec = E[batch.clicks]
        g = np.sum(ehat * ec, axis=-1)
        u = P["disc.wp"][0] * batch.rewards + P["disc.bp"][0]
        x = g * u * batch.mask
        logit = x.sum(axis=1) / batch.lengths
        return logit, (S, cache, pref, cand, alpha, ehat, ec, g, u)

    def logits(self, batch: Batch) -> np.ndarray:
        return self._forward(batch)[0]

    def score_batch(self, batch: Batch) -> np.ndarray:
        return sigmoid(self.logits(batch))

    def score(self, trajectory: Trajectory) -> float:
        """D(tau) in (0, 1)."""
        return float(self.score_batch(Batch.from_trajectories([trajectory]))[0])

    def loss_and_grad(self, batch: Batch, labels: np.ndarray,
                      weights: np.ndarray | None = None,
                      tape: GradientTape | None = None):
        """Binary cross-entropy with label 1 for real trajectories.

        ``weights`` rescale each trajectory's term; the default is a plain
        mean over the batch.
        """
        if tape is None:
            tape = self.new_tape()
        P = self.params
        B, L, K = batch.slates.shape
        y = np.asarray(labels, dtype=float)
        wts = np.full(B, 1.0 / B) if weights is None else np.asarray(weights, dtype=float)
        logit, (S, cache, pref, cand, alpha, ehat, ec, g, u) = self._forward(batch)
        loss = -np.sum(wts * (y * log_sigmoid(logit) + (1 - y) * log_sigmoid(-logit)))

        dlogit = wts * (sigmoid(logit) - y)
        dx = (dlogit / batch.lengths)[:, None] * batch.mask
        dg = dx * u
        du = dx * g
        tape.add("disc.wp", np.array([np.sum(du * batch.rewards)]))
        tape.add("disc.bp", np.array([np.sum(du)]))
        dE = tape["disc.emb"]
        dehat = dg[..., None] * ec
        scatter_rows(dE, batch.clicks, dg[..., None] * ehat)
        dcand = alpha[..., None] * dehat[:, :, None, :]
        dalpha = np.einsum("ble,blke->blk", dehat, cand)
        dz = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
        dz = np.where(batch.slate_mask, dz, 0.0) / self.temperature
        dpref = np.einsum("blk,blke->ble", dz, cand)
        dcand += dz[..., None] * pref[:, :, None, :]
        scatter_rows(dE, batch.slates, dcand)
        Ss = S[:, :L]
        tape.add("disc.Wd", np.einsum("ble,blh->eh", dpref, Ss))
        tape.add("disc.bd", dpref.sum(axis=(0, 1)))
        dS = np.zeros_like(S)
        dS[:, :L] = dpref @ P["disc.Wd"]
        self.backprop_states(cache, dS, batch.clicks, tape)
        return float(loss), tape
