"""Online coverage, cumulative reward and reranking precision."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..env import DEFAULT_T_MAX, SimulatorSpec, Trajectory, run_sessions
from ..models import AgentModel, Batch, UserModel, sample_slates, top_k


# -- recommenders -----------------------------------------------------------------

class Recommender:
    """Produces slates for sessions run in lockstep against the simulator."""

    name = "recommender"

    def session_fns(self, count: int, k: int, rng: np.random.Generator):
        """Return ``(slate_fn, observe)`` for :func:`irecgan.env.run_sessions`."""
        raise NotImplementedError


class _Recurrent(Recommender):
    def __init__(self, model):
        self.model = model

    def scores(self, state) -> np.ndarray:
        raise NotImplementedError

    def slates(self, state, k, rng) -> np.ndarray:
        return top_k(self.scores(state), k)

    def session_fns(self, count, k, rng):
        model = self.model
        state = model.zero_state(count)

        def slate_fn(states, idx, t):
            return self.slates(state.take(idx), k, rng)

        def observe(idx, clicks):
            nxt = model.advance(state.take(idx), clicks)
            for layer in range(len(state.layers)):
                state.layers[layer][idx] = nxt.layers[layer]

        return slate_fn, observe


class AgentRecommender(_Recurrent):
    """Top-k of the agent policy (or a sampled slate with ``test=False``)."""

    name = "agent"

    def __init__(self, agent: AgentModel, test: bool = True):
        super().__init__(agent)
        self.test = test

    def scores(self, state):
        return self.model.logits(state)

    def slates(self, state, k, rng):
        return sample_slates(self.model.policy(state), k, rng, test=self.test)


class UserRerankRecommender(_Recurrent):
    """Ranks every item by the user model's click logit."""

    name = "user"

    def scores(self, state):
        return self.model.item_scores(state)


class RandomRecommender(Recommender):
    name = "random"

    def session_fns(self, count, k, rng):
        def slate_fn(states, idx, t):
            n = self.n_items
            return np.argsort(rng.random((len(idx), n)), axis=1, kind="stable")[:, :k]
        return slate_fn, None

    def __init__(self, n_items: int):
        self.n_items = n_items


class OracleRecommender(Recommender):
    """Top-k by ground-truth reward in the current true state (``worst=True`` gives bottom-k)."""

    name = "oracle"

    def __init__(self, spec: SimulatorSpec, worst: bool = False):
        self.spec = spec
        self.worst = worst

    def session_fns(self, count, k, rng):
        spec = self.spec

        def slate_fn(states, idx, t):
            out = []
            for s in states:
                order = spec.ranking(int(s))
                out.append(order[-k:] if self.worst else order[:k])
            return np.stack(out)

        return slate_fn, None


class FixedRecommender(Recommender):
    name = "fixed"

    def __init__(self, items: Sequence[int]):
        self.items = np.asarray(items, dtype=np.int64)

    def session_fns(self, count, k, rng):
        if len(self.items) != k:
            raise ValueError("fixed slate size does not match k")
        return (lambda states, idx, t: np.tile(self.items, (len(idx), 1))), None


def as_recommender(model) -> Recommender:
    if isinstance(model, Recommender):
        return model
    if isinstance(model, AgentModel):
        return AgentRecommender(model)
    if isinstance(model, UserModel):
        return UserRerankRecommender(model)
    raise TypeError(f"cannot build a recommender from {type(model).__name__}")


# -- coverage and reward ----------------------------------------------------------

@dataclass
class CoverageReport:
    r_values: list[int]
    coverage: dict[int, float]
    model: str
    episodes: int
    steps: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for r, c in self.coverage.items():
            if not 0.0 <= c <= 1.0 + 1e-12:
                raise ValueError(f"coverage@{r}={c} outside [0, 1]")


def simulate(spec: SimulatorSpec, recommender, episodes: int, rng: np.random.Generator,
             t_max: int = DEFAULT_T_MAX, k: int | None = None, on_step=None) -> list[Trajectory]:
    """Run ``episodes`` sessions; ``on_step(states, slates)`` sees every step."""
    rec = as_recommender(recommender)
    k = spec.k if k is None else k
    fn, observe = rec.session_fns(episodes, k, rng)

    def slate_fn(states, idx, t):
        slates = np.asarray(fn(states, idx, t), dtype=np.int64)
        if on_step is not None:
            on_step(states, slates)
        return slates

    return run_sessions(spec, slate_fn, episodes, t_max, rng, observe=observe)


def coverage_at_r(spec: SimulatorSpec, recommender, r, k: int | None = None,
                  episodes: int = 1000, rng: np.random.Generator | None = None,
                  t_max: int = DEFAULT_T_MAX) -> CoverageReport:
    """Share of the true top-r items present in the recommended top-k, pooled over all steps.

    ``r`` may be a single value or a list; one simulation serves all of them.
    """
    r_values = [int(r)] if np.isscalar(r) else [int(x) for x in r]
    k = spec.k if k is None else k
    if not 1 <= k <= spec.n:
        raise ValueError(f"k={k} must lie in [1, n={spec.n}]")
    for rv in r_values:
        if not 1 <= rv <= spec.n:
            raise ValueError(f"r={rv} must lie in [1, n={spec.n}]")
    rng = np.random.default_rng(0) if rng is None else rng
    hits = {rv: 0 for rv in r_values}
    total_steps = [0]
    n = spec.n

    def on_step(states, slates):
        total_steps[0] += len(states)
        chosen = np.zeros((len(states), n), dtype=bool)
        np.put_along_axis(chosen, slates, True, axis=1)
        for j, s in enumerate(states):
            order = spec.ranking(int(s))
            for rv in r_values:
                hits[rv] += int(chosen[j, order[:rv]].sum())

    simulate(spec, recommender, episodes, rng, t_max, k, on_step)
    T = total_steps[0]
    cov = {rv: hits[rv] / (T * rv) for rv in r_values}
    name = getattr(as_recommender(recommender), "name", "model")
    return CoverageReport(r_values, cov, name, episodes, T)


def avg_cumulative_reward(spec: SimulatorSpec, recommender, episodes: int = 1000,
                          rng: np.random.Generator | None = None,
                          t_max: int = DEFAULT_T_MAX) -> float:
    """Mean undiscounted reward per simulated session."""
    rng = np.random.default_rng(0) if rng is None else rng
    trajs = simulate(spec, recommender, episodes, rng, t_max)
    return float(np.mean([sum(t.rewards) for t in trajs]))


# -- reranking precision ----------------------------------------------------------

class RandomReranker:
    """Scores recorded slates with i.i.d. uniform noise."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng


def _step_scores(model, batch: Batch) -> np.ndarray:
    """(B, L, K) model scores of each recorded slate item."""
    if isinstance(model, RandomReranker):
        return model.rng.random(batch.slates.shape)
    if callable(getattr(model, "slate_scores", None)):
        return model.slate_scores(batch)
    S, _ = model.step_states(batch.clicks, batch.mask)
    S = S[:, : batch.max_len]
    if isinstance(model, UserModel):
        q = S @ model.params["user.Wc"].T + model.params["user.bc"]
        return np.einsum("blke,ble->blk", model.emb[batch.slates], q)
    if isinstance(model, AgentModel):
        logits = S @ model.params["agent.Wa"].T + model.params["agent.ba"]
        return np.take_along_axis(logits, batch.slates, axis=-1)
    raise TypeError(f"cannot rerank with {type(model).__name__}")


def precision_at_k(model, sessions: Sequence[Trajectory], k: int,
                   min_candidates: int | None = None) -> float:
    """Fraction of steps whose clicked item is in the model's top-k rerank of the slate.

    Only steps whose slate has more than ``min_candidates`` items count
    (default ``k``). Returns nan when no step qualifies. Ties go to the
    earlier slate position.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    threshold = k if min_candidates is None else min_candidates
    hits = total = 0
    for s in range(0, len(sessions), 256):
        batch = Batch.from_trajectories(sessions[s:s + 256])
        scores = np.where(batch.slate_mask, _step_scores(model, batch), -np.inf)
        # rank of the clicked position = number of items strictly ahead of it
        clicked = np.take_along_axis(scores, batch.pos[..., None], axis=-1)
        K = scores.shape[-1]
        earlier = np.arange(K)[None, None, :] < batch.pos[..., None]
        ahead = (scores > clicked) | ((scores == clicked) & earlier)
        rank = np.sum(ahead & batch.slate_mask, axis=-1)
        ncand = batch.slate_mask.sum(axis=-1)
        ok = (batch.mask > 0) & (ncand > threshold)
        hits += int(np.sum((rank < k) & ok))
        total += int(np.sum(ok))
    return hits / total if total else float("nan")
