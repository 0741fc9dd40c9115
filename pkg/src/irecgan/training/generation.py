"""Interactive sequence generation between the user model and the agent."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..env import SessionStep, Trajectory
from ..models import AgentModel, Batch, DiscriminatorModel, UserModel, sample_slates
from ..nnet import RecurrentState, log_softmax, sigmoid


def _stack_states(states: list[RecurrentState], rows: list[tuple[int, int]]) -> RecurrentState:
    """Gather row ``b`` of the state list entry ``t`` for every (t, b) pair."""
    layers = len(states[0].layers)
    out = []
    for layer in range(layers):
        out.append(np.stack([states[t].layers[layer][b] for t, b in rows]))
    return RecurrentState(out)


def prefix_states(model, batch: Batch) -> list[RecurrentState]:
    """Full (all-layer) recurrent state before each step and after the last.

    Entry ``t`` holds, for every row, the state after consuming clicks
    ``0..t-1`` (rows shorter than ``t`` keep their final state).
    """
    B, L = batch.clicks.shape
    state = model.zero_state(B)
    out = [state]
    for t in range(L):
        nxt = model.advance(state, batch.clicks[:, t])
        live = batch.mask[:, t][:, None] > 0
        state = RecurrentState([np.where(live, n, o) for n, o in zip(nxt.layers, state.layers)])
        out.append(state)
    return out


def rollout(user: UserModel, agent: AgentModel, hu: RecurrentState, ha: RecurrentState,
            start: np.ndarray, budget: np.ndarray, rng: np.random.Generator,
            test: bool = False):
    """Continue B sessions in lockstep.

    ``start[b]`` is the step index of the first generated step (the stop
    symbol is unavailable at step 0, so every session has a click);
    ``budget[b]`` caps how many steps may still be generated. Returns per-row
    step lists and whether each row ended on the stop symbol.
    """
    B = len(start)
    k = agent.slate_size
    steps: list[list[SessionStep]] = [[] for _ in range(B)]
    ended = np.zeros(B, dtype=bool)
    alive = np.nonzero(budget > 0)[0]
    t_rel = 0
    while len(alive):
        su = hu.take(alive)
        sa = ha.take(alive)
        probs = agent.policy(sa)
        slates = sample_slates(probs, k, rng, test=test)
        logits = user.click_logits(su, slates)
        first = (start[alive] + t_rel) == 0
        logits[first, -1] = -np.inf
        p = np.exp(log_softmax(logits))
        if test:
            choice = np.argmax(p, axis=1)
        else:
            u = rng.random(len(alive))
            choice = (np.cumsum(p, axis=1) > (u * p.sum(axis=1))[:, None]).argmax(axis=1)
        stop = choice == k
        cont_rows = ~stop
        ended[alive[stop]] = True
        idx = alive[cont_rows]
        if len(idx) == 0:
            break
        keep = np.nonzero(cont_rows)[0]
        sl = slates[keep]
        clicks = sl[np.arange(len(idx)), choice[keep]]
        su = su.take(keep)
        rp = sigmoid(user.reward_logit(su, clicks))
        if test:
            rewards = (rp >= 0.5).astype(float)
        else:
            rewards = (rng.random(len(idx)) < rp).astype(float)
        for j, b in enumerate(idx):
            steps[b].append(SessionStep(tuple(int(x) for x in sl[j]), int(clicks[j]), float(rewards[j])))
        nu = user.advance(su, clicks)
        na = agent.advance(sa.take(keep), clicks)
        for layer in range(len(hu.layers)):
            hu.layers[layer][idx] = nu.layers[layer]
        for layer in range(len(ha.layers)):
            ha.layers[layer][idx] = na.layers[layer]
        t_rel += 1
        still = np.array([len(steps[b]) < budget[b] for b in idx], dtype=bool)
        alive = idx[still]
    return steps, ended


def generate_batch(user: UserModel, agent: AgentModel, count: int, t_max: int,
                   rng: np.random.Generator, test: bool = False) -> list[Trajectory]:
    """Generate ``count`` complete sessions; each ends on the stop symbol or at ``t_max``."""
    hu = user.zero_state(count)
    ha = agent.zero_state(count)
    steps, ended = rollout(user, agent, hu, ha, np.zeros(count, dtype=np.int64),
                           np.full(count, t_max), rng, test=test)
    return [Trajectory(s, "generated", bool(e)) for s, e in zip(steps, ended)]


def generate_trajectory(user: UserModel, agent: AgentModel, t_max: int,
                        rng: np.random.Generator) -> Trajectory:
    return generate_batch(user, agent, 1, t_max, rng)[0]


@dataclass
class RolloutScore:
    """Per-step sequence generation scores of one trajectory."""

    q: np.ndarray

    def __len__(self) -> int:
        return len(self.q)


def score_batch(user: UserModel, agent: AgentModel, disc: DiscriminatorModel,
                trajectories: Sequence[Trajectory], n_rollouts: int, t_max: int,
                rng: np.random.Generator, chunk: int = 512) -> list[RolloutScore]:
    """Monte-Carlo sequence generation scores for a list of trajectories.

    For a prefix ending at step ``t`` before the last step, the score is the
    mean discriminator output over ``n_rollouts`` completions sampled from
    the user model and agent; at the last step it is the discriminator output
    of the trajectory itself. Offline trajectories score 1 everywhere.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    out: list[RolloutScore | None] = [None] * len(trajectories)
    gen_idx = [i for i, t in enumerate(trajectories) if t.provenance == "generated"]
    for i, t in enumerate(trajectories):
        if t.provenance != "generated":
            out[i] = RolloutScore(np.ones(len(t)))
    if not gen_idx:
        return out
    gen = [trajectories[i] for i in gen_idx]
    final = np.array([disc.score(t) for t in gen])
    batch = Batch.from_trajectories(gen)
    su = prefix_states(user, batch)
    sa = prefix_states(agent, batch)
    rows = []  # (traj index in gen, t)
    for b, traj in enumerate(gen):
        for t in range(len(traj) - 1):
            rows.append((b, t))
    sums = np.zeros((len(gen), batch.max_len))
    if rows:
        rep = [(t + 1, b) for b, t in rows for _ in range(n_rollouts)]
        owner = [(b, t) for b, t in rows for _ in range(n_rollouts)]
        hu = _stack_states(su, rep)
        ha = _stack_states(sa, rep)
        start = np.array([t + 1 for _, t in owner])
        budget = np.array([t_max - (t + 1) for _, t in owner])
        cont, ended = rollout(user, agent, hu, ha, start, budget, rng)
        completions = [
            Trajectory(list(gen[b].steps[: t + 1]) + cont[j], "generated", bool(ended[j]))
            for j, (b, t) in enumerate(owner)
        ]
        scores = np.concatenate([
            disc.score_batch(Batch.from_trajectories(completions[s:s + chunk]))
            for s in range(0, len(completions), chunk)
        ])
        for j, (b, t) in enumerate(owner):
            sums[b, t] += scores[j]
    for b, traj in enumerate(gen):
        q = np.empty(len(traj))
        q[:-1] = sums[b, : len(traj) - 1] / n_rollouts
        q[-1] = final[b]
        out[gen_idx[b]] = RolloutScore(q)
    return out


def mc_rollout_score(user, agent, disc, trajectory: Trajectory, n_rollouts: int,
                     rng: np.random.Generator, t_max: int = 40) -> RolloutScore:
    return score_batch(user, agent, disc, [trajectory], n_rollouts, t_max, rng)[0]
