"""User behavior model: click choice over a slate plus stop symbol, and reward."""
from __future__ import annotations

import numpy as np

from ..env import Trajectory
from ..nnet import GradientTape, ParamSet, RecurrentState, log_sigmoid, log_softmax, sigmoid, uniform_init
from .base import ModelDims, RecurrentModel
from .batch import Batch, scatter_rows


def _as_hidden(state) -> np.ndarray:
    if isinstance(state, RecurrentState):
        return state.hidden
    h = np.asarray(state, dtype=np.float64)
    return h[None, :] if h.ndim == 1 else h


class UserModel(RecurrentModel):
    """Recurrent user simulator.

    Click logits over the slate and the stop symbol are
    ``(Wc s + bc) . e(item)``; the reward probability for the clicked item is
    ``sigmoid((Wr s + br) . e(click))``. The stop symbol owns the last
    embedding row.
    """

    kind = "user"

    def __init__(self, dims: ModelDims, rng: np.random.Generator | None = None,
                 lambda_p: float = 1.0, params: ParamSet | None = None):
        E, H = dims.embedding_dim, dims.hidden_dim
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = ParamSet()
            s = dims.init_scale
            params.add("user.emb", uniform_init(rng, (dims.n_items + 1, E), s))
            super().__init__(dims, params, dims.n_items + 1)
            self.cell.init_params(params, rng, s)
            params.add("user.Wc", uniform_init(rng, (E, H), s))
            params.add("user.bc", np.zeros(E))
            params.add("user.Wr", uniform_init(rng, (E, H), s))
            params.add("user.br", np.zeros(E))
        else:
            super().__init__(dims, params, dims.n_items + 1)
        self.lambda_p = lambda_p

    @property
    def end_id(self) -> int:
        return self.dims.n_items

    # -- per-step quantities ----------------------------------------------------

    def click_logits(self, state, slates, slate_mask=None) -> np.ndarray:
        """(B, K+1) logits; the last column is the stop symbol."""
        h = _as_hidden(state)
        slates = np.asarray(slates, dtype=np.int64)
        if slates.ndim == 1:
            slates = slates[None, :]
        E = self.emb
        q = h @ self.params["user.Wc"].T + self.params["user.bc"]
        items = np.einsum("bke,be->bk", E[slates], q)
        end = q @ E[self.end_id]
        logits = np.concatenate([items, end[:, None]], axis=1)
        if slate_mask is not None:
            logits[:, :-1] = np.where(slate_mask, logits[:, :-1], -np.inf)
        return logits

    def click_distribution(self, state, slate) -> np.ndarray:
        """Probabilities over ``slate`` followed by the stop symbol."""
        slate = np.asarray(slate, dtype=np.int64)
        if slate.size == 0:
            raise ValueError("slate must be non-empty")
        self.check_items(slate)
        logits = self.click_logits(state, slate[None, :])
        return np.exp(log_softmax(logits))[0]

    def reward_logit(self, state, clicks) -> np.ndarray:
        h = _as_hidden(state)
        clicks = np.atleast_1d(np.asarray(clicks, dtype=np.int64))
        rv = h @ self.params["user.Wr"].T + self.params["user.br"]
        return np.sum(rv * self.emb[clicks], axis=1)

    def reward_prob(self, state, click) -> float:
        if click == self.end_id:
            raise ValueError("the stop symbol has no reward")
        self.check_items([click])
        return float(sigmoid(self.reward_logit(state, [click]))[0])

    def item_scores(self, state) -> np.ndarray:
        """Click logits against every real item, (B, n)."""
        h = _as_hidden(state)
        q = h @ self.params["user.Wc"].T + self.params["user.bc"]
        return q @ self.emb[: self.dims.n_items].T

    # -- objective ----------------------------------------------------------------

    def loss_and_grad(self, batch: Batch, weights: np.ndarray | None = None,
                      tape: GradientTape | None = None, lambda_p: float | None = None):
        """Weighted negative log-likelihood and its gradient.

        ``weights`` (B, L) scales each step's click and reward terms; the stop
        symbol term of a terminated trajectory takes the weight of its last
        step. All-ones weights give the plain maximum-likelihood objective.
        The loss is averaged over trajectories.
        """
        lam = self.lambda_p if lambda_p is None else lambda_p
        if tape is None:
            tape = self.new_tape()
        P = self.params
        E = P["user.emb"]
        Wc, bc, Wr, br = P["user.Wc"], P["user.bc"], P["user.Wr"], P["user.br"]
        B, L, K = batch.slates.shape
        w = batch.mask if weights is None else np.asarray(weights, dtype=float) * batch.mask
        live = batch.mask > 0
        endv = E[self.end_id]

        S, cache = self.step_states(batch.clicks, batch.mask)
        Q = S @ Wc.T + bc  # (B, L+1, E)
        Qs = Q[:, :L]
        cand = E[batch.slates]  # (B, L, K, E)
        logits = np.concatenate(
            [np.einsum("blke,ble->blk", cand, Qs), (Qs @ endv)[..., None]], axis=-1
        )
        cmask = np.concatenate([batch.slate_mask, np.ones((B, L, 1), bool)], axis=-1)
        cmask &= live[..., None]
        cmask[..., -1] = True
        logits = np.where(cmask, logits, -np.inf)
        logp = log_softmax(logits)
        prob = np.exp(logp)
        bi, ti = np.nonzero(live)
        click_ll = np.zeros((B, L))
        click_ll[bi, ti] = logp[bi, ti, batch.pos[bi, ti]]

        ec = E[batch.clicks]
        Rv = S[:, :L] @ Wr.T + br
        rl = np.sum(Rv * ec, axis=-1)
        r = batch.rewards
        rew_ll = np.where(live, r * log_sigmoid(rl) + (1.0 - r) * log_sigmoid(-rl), 0.0)

        tb = np.nonzero(batch.terminated)[0]
        tt = batch.lengths[tb]
        QT = Q[tb, tt]
        slT = batch.slates[tb, tt - 1]
        mT = batch.slate_mask[tb, tt - 1]
        logitsT = np.concatenate(
            [np.einsum("bke,be->bk", E[slT], QT), (QT @ endv)[:, None]], axis=-1
        )
        logitsT[:, :K] = np.where(mT, logitsT[:, :K], -np.inf)
        logpT = log_softmax(logitsT)
        wT = w[tb, tt - 1]
        endT_ll = logpT[:, K]

        total = np.sum(w * (click_ll + lam * rew_ll)) + np.sum(wT * endT_ll)
        loss = -total / B

        # backward
        dE = tape["user.emb"]
        dlog = prob * (w / B)[..., None]
        dlog[bi, ti, batch.pos[bi, ti]] -= w[bi, ti] / B
        dlog = np.where(cmask, dlog, 0.0)
        dQ = np.zeros_like(Q)
        dQ[:, :L] = np.einsum("blk,blke->ble", dlog[..., :K], cand) + dlog[..., K, None] * endv
        scatter_rows(dE, batch.slates, dlog[..., :K, None] * Qs[:, :, None, :])
        dE[self.end_id] += np.einsum("bl,ble->e", dlog[..., K], Qs)

        if len(tb):
            pT = np.exp(logpT)
            dlT = pT * (wT / B)[:, None]
            dlT[:, K] -= wT / B
            dlT[:, :K] = np.where(mT, dlT[:, :K], 0.0)
            dQ[tb, tt] += np.einsum("bk,bke->be", dlT[:, :K], E[slT]) + dlT[:, K, None] * endv
            scatter_rows(dE, slT, dlT[:, :K, None] * QT[:, None, :])
            dE[self.end_id] += dlT[:, K] @ QT

        drl = -(w * lam / B) * (r - sigmoid(rl))
        drl = np.where(live, drl, 0.0)
        dRv = drl[..., None] * ec
        scatter_rows(dE, batch.clicks, drl[..., None] * Rv)
        dS = dQ @ Wc
        dS[:, :L] += dRv @ Wr
        tape.add("user.Wc", np.einsum("ble,blh->eh", dQ, S))
        tape.add("user.bc", dQ.sum(axis=(0, 1)))
        tape.add("user.Wr", np.einsum("ble,blh->eh", dRv, S[:, :L]))
        tape.add("user.br", dRv.sum(axis=(0, 1)))
        self.backprop_states(cache, dS, batch.clicks, tape)
        return float(loss), tape

    def nll(self, trajectory: Trajectory) -> float:
        """Negative log-likelihood of one trajectory."""
        loss, _ = self.loss_and_grad(Batch.from_trajectories([trajectory]))
        return loss

    def mean_nll(self, trajectories) -> float:
        loss, _ = self.loss_and_grad(Batch.from_trajectories(trajectories))
        return loss
