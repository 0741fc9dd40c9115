"""Score-weighted gradients for the user model, agent and discriminator."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..models import AgentModel, Batch, DiscriminatorModel, UserModel


def _score_arrays(batch: Batch, scores) -> list[np.ndarray]:
    if scores is None:
        raise ValueError("missing sequence generation scores")
    if len(scores) != batch.size:
        raise ValueError(f"got {len(scores)} scores for {batch.size} trajectories")
    out = []
    for b, s in enumerate(scores):
        if s is None:
            raise ValueError(f"trajectory {b} has no sequence generation score")
        q = np.asarray(getattr(s, "q", s), dtype=float)
        if len(q) != batch.lengths[b]:
            raise ValueError(f"score length {len(q)} != trajectory length {batch.lengths[b]}")
        out.append(q)
    return out


def offline_scores(batch: Batch) -> list[np.ndarray]:
    """q = 1 at every step (the value used for logged trajectories)."""
    return [np.ones(n) for n in batch.lengths]


def user_adv_update(user: UserModel, batch: Batch, scores, tape=None):
    """Score-weighted likelihood gradient for the user model.

    Every step's click and reward log-likelihood is multiplied by its score;
    with all scores equal to one this is the maximum-likelihood gradient.
    Returns ``(loss, tape)``.
    """
    q = _score_arrays(batch, scores)
    return user.loss_and_grad(batch, weights=batch.step_weights(q), tape=tape)


def agent_seq_return(score, gamma: float) -> np.ndarray:
    """Discounted suffix sums of the per-step scores."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    q = np.asarray(getattr(score, "q", score), dtype=float)
    out = np.empty_like(q)
    acc = 0.0
    for t in range(len(q) - 1, -1, -1):
        acc = q[t] + gamma * acc
        out[t] = acc
    return out


def agent_returns(q, rewards, gamma: float, lambda_r: float) -> np.ndarray:
    """R_t = sum_{t' >= t} gamma^(t'-t) q_t' (1 + lambda_r r_t')."""
    q = np.asarray(q, dtype=float)
    r = np.asarray(rewards, dtype=float)
    return agent_seq_return(q * (1.0 + lambda_r * r), gamma)


def weighted_scores(batch: Batch, scores, w: float) -> list[np.ndarray]:
    """Scale generated trajectories' scores by ``w``; logged ones stay at 1."""
    if w <= 0:
        raise ValueError("w must be positive")
    q = _score_arrays(batch, scores)
    return [qi * w if batch.generated[b] else qi for b, qi in enumerate(q)]


def return_matrix(batch: Batch, scores, gamma: float, lambda_r: float,
                  w: float = 1.0) -> np.ndarray:
    """(B, L) agent returns, zero on padding."""
    q = weighted_scores(batch, scores, w)
    R = np.zeros(batch.clicks.shape)
    for b, qi in enumerate(q):
        n = len(qi)
        R[b, :n] = agent_returns(qi, batch.rewards[b, :n], gamma, lambda_r)
    return R


def agent_total_update(agent: AgentModel, batch: Batch, scores, gamma: float,
                       lambda_r: float, w: float = 1.0, baseline: bool = False,
                       tape=None):
    """Policy gradient on clicked items with score-rescaled returns.

    Returns ``(loss, tape, mean_return)``. With ``baseline`` the mean return
    over real steps is subtracted first.
    """
    R = return_matrix(batch, scores, gamma, lambda_r, w)
    live = batch.mask > 0
    mean_ret = float(R[live].mean())
    if baseline:
        R = np.where(live, R - mean_ret, 0.0)
    loss, tape = agent.loss_and_grad(batch, R, tape=tape)
    return loss, tape, mean_ret


def disc_update(disc: DiscriminatorModel, real: Sequence, fake: Sequence,
                weights=None, tape=None):
    """Cross-entropy step data for the discriminator (real = 1, generated = 0).

    Returns ``(loss, tape, accuracy)``.
    """
    trajs = list(real) + list(fake)
    labels = np.concatenate([np.ones(len(real)), np.zeros(len(fake))])
    batch = Batch.from_trajectories(trajs)
    loss, tape = disc.loss_and_grad(batch, labels, weights=weights, tape=tape)
    pred = disc.score_batch(batch) > 0.5
    acc = float(np.mean(pred == (labels > 0.5)))
    return loss, tape, acc
