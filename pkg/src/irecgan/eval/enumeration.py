"""Exact enumeration of short sessions for the value-estimation bias audit.

A session process pairs a *world* (the simulator, possibly with shifted
rewards, or a history-based user model) with an *agent* (a learned policy or
a logging policy). Hidden simulator state is tracked as an unnormalized mass
vector, so the recursion branches only over observable events: the slate
(as a set), the click or stop, and the binary reward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations
from math import comb

import numpy as np

from ..env import INITIAL_STATE, LoggingPolicy, SimulatorSpec
from ..models import AgentModel, UserModel
from ..nnet import log_softmax, sigmoid

MAX_NODES = 1_000_000


class EnumerationTooLarge(ValueError):
    def __init__(self, estimate: float, limit: int = MAX_NODES):
        super().__init__(f"sequence space too large to enumerate: ~{estimate:.3g} nodes "
                         f"(limit {limit})")
        self.estimate = estimate


def shifted_reward(r: np.ndarray, shift: float) -> np.ndarray:
    """Probability after adding ``shift`` to the log-odds of ``r``."""
    r = np.asarray(r, dtype=float)
    if shift == 0.0:
        return r.copy()
    e = np.exp(shift)
    return r * e / (1.0 - r + r * e)


# -- worlds -------------------------------------------------------------------------

class SimulatorWorld:
    """The ground-truth simulator; with ``reward_shift`` it becomes a perturbed copy.

    Clicks always follow the true rewards; the continuation draw uses the
    (shifted) reward and the session ends right after a zero reward.
    """

    stop_symbol = False

    def __init__(self, spec: SimulatorSpec, reward_shift: float = 0.0):
        self.spec = spec
        self.reward_shift = float(reward_shift)
        self.rewards = shifted_reward(spec.reward, self.reward_shift)  # (m, n)
        self.latent = spec.m

    def initial(self):
        vec = np.zeros(self.spec.m)
        vec[INITIAL_STATE] = 1.0
        return None, vec

    def clicks(self, hidden, vec, slate, t):
        """[(click or None for stop, mass vector)] for one slate."""
        r = self.spec.reward[:, list(slate)]  # (m, k)
        tot = r.sum(axis=1, keepdims=True)
        p = np.where(tot > 0, r / np.where(tot > 0, tot, 1.0), 1.0 / len(slate))
        return [(c, vec * p[:, j]) for j, c in enumerate(slate)]

    def reward_vector(self, hidden, click) -> np.ndarray:
        return self.rewards[:, click]

    def after(self, hidden, vec_c, click, reward):
        rv = self.rewards[:, click]
        w = vec_c * (rv if reward else 1.0 - rv)
        return None, w @ self.spec.transition[:, click, :], reward == 0

    def advance_hidden(self, hidden, click):
        return None


class ModelUserWorld:
    """A learned user model; the stop symbol is unavailable at step 0."""

    stop_symbol = True
    latent = 1

    def __init__(self, user: UserModel, reward_shift: float = 0.0):
        self.user = user
        self.reward_shift = float(reward_shift)

    def initial(self):
        return self.user.zero_state(1), np.ones(1)

    def clicks(self, hidden, vec, slate, t):
        logits = self.user.click_logits(hidden, np.asarray(slate)[None, :])
        if t == 0:
            logits[:, -1] = -np.inf
        p = np.exp(log_softmax(logits))[0]
        out = [(c, vec * p[j]) for j, c in enumerate(slate)]
        out.append((None, vec * p[-1]))
        return out

    def reward_vector(self, hidden, click) -> np.ndarray:
        logit = self.user.reward_logit(hidden, [click])[0] + self.reward_shift
        return np.array([float(sigmoid(logit))])

    def advance_hidden(self, hidden, click):
        return self.user.advance(hidden, [click])

    def after(self, hidden_next, vec_c, click, reward, rv):
        return hidden_next, vec_c * (rv if reward else 1.0 - rv), False


class BeliefUserWorld:
    """History-based user whose probabilities are the simulator's exact predictive ones.

    It filters a normalized belief over hidden states from the observed
    history and expresses the next-click distribution (with the stop symbol
    taking the mass of sessions the simulator would have ended) as plain
    probabilities. Used as an independent check of :class:`SimulatorWorld`.
    """

    stop_symbol = True
    latent = 1

    def __init__(self, spec: SimulatorSpec):
        self.spec = spec

    def initial(self):
        b = np.zeros(self.spec.m)
        b[INITIAL_STATE] = 1.0
        return (b, False), np.ones(1)

    def clicks(self, hidden, vec, slate, t):
        belief, ended = hidden
        if ended:
            return [(c, vec * 0.0) for c in slate] + [(None, vec * 1.0)]
        r = self.spec.reward[:, list(slate)]
        tot = r.sum(axis=1, keepdims=True)
        p = np.where(tot > 0, r / np.where(tot > 0, tot, 1.0), 1.0 / len(slate))
        marg = belief @ p
        out = [(c, vec * marg[j]) for j, c in enumerate(slate)]
        out.append((None, vec * 0.0))
        return out

    def _posterior(self, hidden, slate, click):
        belief, _ = hidden
        r = self.spec.reward[:, list(slate)]
        tot = r.sum(axis=1, keepdims=True)
        p = np.where(tot > 0, r / np.where(tot > 0, tot, 1.0), 1.0 / len(slate))
        post = belief * p[:, list(slate).index(click)]
        return post / post.sum()

    def reward_vector(self, hidden, click, slate=None) -> np.ndarray:
        post = self._posterior(hidden, slate, click)
        return np.array([float(post @ self.spec.reward[:, click])])

    def step_hidden(self, hidden, slate, click, reward):
        post = self._posterior(hidden, slate, click)
        rv = self.spec.reward[:, click]
        w = post * (rv if reward else 1.0 - rv)
        if w.sum() <= 0:
            return (post, True)
        nxt = (w / w.sum()) @ self.spec.transition[:, click, :]
        return (nxt, reward == 0)


# -- agents -------------------------------------------------------------------------

def slate_set_distribution(probs: np.ndarray, k: int) -> dict[tuple, float]:
    """P(set) for k draws without replacement proportional to ``probs``."""
    probs = np.asarray(probs, dtype=float)
    n = len(probs)
    out = {}
    for subset in combinations(range(n), k):
        total = 0.0
        for order in permutations(subset):
            p, left = 1.0, 1.0
            for i in order:
                if left <= 0:
                    p = 0.0
                    break
                p *= probs[i] / left
                left -= probs[i]
            total += p
        if total > 0:
            out[subset] = total
    return out


class ModelAgentProcess:
    """A learned agent; its slate depends only on the observed clicks."""

    def __init__(self, agent: AgentModel, k: int | None = None):
        self.agent = agent
        self.k = agent.slate_size if k is None else k

    def initial(self):
        return self.agent.zero_state(1)

    def slates(self, hidden, world):
        probs = self.agent.policy(hidden)[0]
        return list(slate_set_distribution(probs, self.k).items())

    def advance(self, hidden, click):
        return self.agent.advance(hidden, [click])

    @property
    def n_slates(self) -> int:
        return comb(self.agent.dims.n_items, self.k)


class LoggingAgentProcess:
    """A logging policy; its slate depends on the hidden simulator state."""

    def __init__(self, policy: LoggingPolicy, spec: SimulatorSpec):
        self.policy = policy
        self.spec = spec
        table: dict[tuple, np.ndarray] = {}
        for s in range(spec.m):
            for slate, p in policy.slate_distribution(spec, s).items():
                table.setdefault(slate, np.zeros(spec.m))[s] += p
        self.table = sorted(table.items())

    def initial(self):
        return None

    def slates(self, hidden, world):
        if getattr(world, "latent", None) != self.spec.m or not isinstance(world, SimulatorWorld):
            raise ValueError("a logging policy needs the simulator's hidden state")
        return self.table

    def advance(self, hidden, click):
        return None

    @property
    def n_slates(self) -> int:
        return len(self.table)


# -- enumeration ----------------------------------------------------------------------

@dataclass
class EnumeratedDistribution:
    """Exact probabilities of complete sessions and of every step prefix.

    ``prefixes`` maps (previous full steps, (slate, click)) to the pair
    (probability, probability-weighted expected reward of that click).
    """

    sequences: dict = field(default_factory=dict)
    prefixes: dict = field(default_factory=dict)
    horizon: int = 0

    def total(self) -> float:
        return float(sum(self.sequences.values()))

    def prob(self, key) -> float:
        return self.sequences.get(key, 0.0)

    def prefix_prob(self, key) -> float:
        v = self.prefixes.get(key)
        return v[0] if v else 0.0

    def prefix_reward(self, key) -> float:
        """Expected reward of the prefix's click given the prefix (nan if unreachable)."""
        v = self.prefixes.get(key)
        if not v or v[0] <= 0:
            return float("nan")
        return v[1] / v[0]

    def tv_distance(self, counts: dict) -> float:
        """Total variation against empirical counts keyed like ``sequences``."""
        n = sum(counts.values())
        keys = set(self.sequences) | set(counts)
        return 0.5 * sum(abs(self.sequences.get(k, 0.0) - counts.get(k, 0) / n) for k in keys)


def estimate_nodes(n_slates: int, k: int, horizon: int) -> float:
    branch = n_slates * (k + 1) * 2
    return float(sum(branch ** t for t in range(1, horizon + 1)))


def enumerate_distribution(world, agent, horizon: int,
                           max_nodes: int = MAX_NODES) -> EnumeratedDistribution:
    """Exact distribution of sessions truncated at ``horizon`` steps."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    k = agent.k if hasattr(agent, "k") else agent.spec.k
    est = estimate_nodes(agent.n_slates, k, horizon)
    if est > max_nodes:
        raise EnumerationTooLarge(est, max_nodes)
    out = EnumeratedDistribution(horizon=horizon)
    seqs, prefs = out.sequences, out.prefixes
    belief_user = isinstance(world, BeliefUserWorld)

    def add(d, key, v):
        d[key] = d.get(key, 0.0) + v

    def rec(t, history, wh, vec, ah):
        for slate, ps in agent.slates(ah, world):
            vec_a = vec * ps
            if not np.any(vec_a > 0):
                continue
            for click, vec_c in world.clicks(wh, vec_a, slate, t):
                mass = float(vec_c.sum())
                if mass <= 0.0:
                    continue
                if click is None:
                    add(seqs, history, mass)
                    continue
                if belief_user:
                    rv = world.reward_vector(wh, click, slate)
                else:
                    rv = world.reward_vector(wh, click)
                pkey = (history, (slate, click))
                old = prefs.get(pkey, (0.0, 0.0))
                prefs[pkey] = (old[0] + mass, old[1] + float(vec_c @ rv))
                ah_next = agent.advance(ah, click)
                if isinstance(world, ModelUserWorld):
                    wh_next = world.advance_hidden(wh, click)
                for reward in (1, 0):
                    if isinstance(world, SimulatorWorld):
                        _, vec_next, ended = world.after(wh, vec_c, click, reward)
                        wh_r = None
                    elif isinstance(world, ModelUserWorld):
                        wh_r, vec_next, ended = world.after(wh_next, vec_c, click, reward, rv)
                    else:
                        p = rv[0] if reward else 1.0 - rv[0]
                        vec_next = vec_c * p
                        wh_r = world.step_hidden(wh, slate, click, reward)
                        ended = False
                    m = float(vec_next.sum())
                    if m <= 0.0:
                        continue
                    hist = history + ((slate, click, reward),)
                    if ended or t + 1 == horizon:
                        add(seqs, hist, m)
                    else:
                        rec(t + 1, hist, wh_r, vec_next, ah_next)

    wh0, vec0 = world.initial()
    rec(0, (), wh0, vec0, agent.initial())
    return out
