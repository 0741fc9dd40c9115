"""Exact audit of the mixed generated/offline value estimate and its bias terms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..env import LoggingPolicy, SimulatorSpec, Trajectory
from ..models import AgentModel, Batch, DiscriminatorModel, UserModel
from .enumeration import (EnumeratedDistribution, LoggingAgentProcess, ModelAgentProcess,
                          ModelUserWorld, SimulatorWorld, enumerate_distribution)


@dataclass
class BiasReport:
    """Exact bias terms of the value estimate on an enumerable toy problem.

    ``delta`` is the expected reward-model error over target-policy prefixes;
    ``delta1``/``delta2`` map each prefix to its distribution-ratio deviation
    (nan where the reference probability is zero).
    """

    lambda1: float
    w: float
    true_value: float
    estimate: float
    decomposed_estimate: float
    delta: float
    delta1: dict = field(repr=False)
    delta2: dict = field(repr=False)
    terms: dict = field(default_factory=dict)

    def summary(self) -> dict:
        d1 = np.array([v for v in self.delta1.values() if np.isfinite(v)])
        d2 = np.array([v for v in self.delta2.values() if np.isfinite(v)])
        return {
            "lambda1": self.lambda1,
            "w": self.w,
            "true_value": self.true_value,
            "estimate": self.estimate,
            "decomposed_estimate": self.decomposed_estimate,
            "delta": self.delta,
            "delta1_max_abs": float(np.max(np.abs(d1))) if d1.size else 0.0,
            "delta2_max_abs": float(np.max(np.abs(d2))) if d2.size else 0.0,
            **self.terms,
        }


def _world(user, reward_shift: float, spec: SimulatorSpec):
    if isinstance(user, UserModel):
        return ModelUserWorld(user, reward_shift)
    if user is None or isinstance(user, SimulatorSpec):
        return SimulatorWorld(spec if user is None else user, reward_shift)
    return user


def _agent(agent, spec: SimulatorSpec):
    if isinstance(agent, AgentModel):
        return ModelAgentProcess(agent)
    if isinstance(agent, LoggingPolicy):
        return LoggingAgentProcess(agent, spec)
    return agent


def audit_from_distributions(P_pi: EnumeratedDistribution, P_data: EnumeratedDistribution,
                             P_g: EnumeratedDistribution, lambda1: float,
                             w: float = 1.0) -> BiasReport:
    """Value estimate, its decomposition and the bias terms from exact prefix tables.

    The estimate weights generated prefixes by ``w * P_data / (P_data + P_g)``
    with the user model's expected reward, and offline prefixes by the true
    reward. The decomposition rewrites it as the true value plus a
    reward-error term, an offline-gap term and a mixing term.
    """
    if not 0.0 < lambda1 <= 1.0:
        raise ValueError("lambda1 must lie in (0, 1]")
    lambda2 = 1.0 - lambda1
    keys = sorted(set(P_pi.prefixes) | set(P_data.prefixes) | set(P_g.prefixes), key=repr)
    direct = 0.0
    true_value = 0.0
    t_reward = t_offline = t_mix = 0.0
    delta_num = delta_den = 0.0
    d1, d2 = {}, {}
    for key in keys:
        pp, pd, pg = P_pi.prefix_prob(key), P_data.prefix_prob(key), P_g.prefix_prob(key)
        r = P_pi.prefix_reward(key) if pp > 0 else P_data.prefix_reward(key)
        rhat = P_g.prefix_reward(key)
        if pg > 0:
            direct += lambda1 * pg * (w * pd / (pd + pg)) * rhat
        if pd > 0:
            direct += lambda2 * pd * r
        if pp > 0:
            true_value += pp * r
        H = pg * pd / (pg + pd) if (pg > 0 and pd > 0) else 0.0
        if H > 0:
            t_reward += w * lambda1 * H * (rhat - r)
        if pd > 0 or pp > 0:
            t_offline += lambda2 * (pd - pp) * r
            t_mix -= (lambda1 * pp - w * lambda1 * H) * r
        if pp > 0 and pg > 0:
            delta_num += pp * (rhat - r)
            delta_den += pp
        d1[key] = 1.0 - pp / pg if pg > 0 else float("nan")
        d2[key] = 1.0 - pp / pd if pd > 0 else float("nan")
    decomposed = true_value + t_reward + t_offline + t_mix
    terms = {
        "reward_error_term": t_reward,
        "offline_gap_term": t_offline,
        "mixing_term": t_mix,
    }
    return BiasReport(lambda1, w, true_value, direct, decomposed,
                      delta_num / delta_den if delta_den > 0 else 0.0, d1, d2, terms)


def bias_audit(spec: SimulatorSpec, user, agent, logging_policy: LoggingPolicy,
               horizon: int = 3, lambda1: float = 0.5, w: float = 1.0,
               reward_shift: float = 0.0) -> BiasReport:
    """Enumerate the target, offline and generated processes and audit the estimate.

    ``user`` is a :class:`UserModel`, ``None`` (the simulator itself) or a
    prepared world; ``agent`` is an :class:`AgentModel` or a logging policy.
    ``reward_shift`` adds a constant to the user's reward log-odds.
    """
    sim = SimulatorWorld(spec)
    target = _agent(agent, spec)
    P_pi = enumerate_distribution(sim, target, horizon)
    P_data = enumerate_distribution(sim, LoggingAgentProcess(logging_policy, spec), horizon)
    P_g = enumerate_distribution(_world(user, reward_shift, spec), target, horizon)
    return audit_from_distributions(P_pi, P_data, P_g, lambda1, w)


def identity_audit(spec: SimulatorSpec, policy: LoggingPolicy, horizon: int = 3,
                   lambda1: float = 0.5, w: float = 2.0) -> BiasReport:
    """User model = simulator and agent = logging policy."""
    return bias_audit(spec, None, policy, policy, horizon, lambda1, w)


# -- optimal discriminator check ----------------------------------------------------

def optimal_discriminator(p_data, p_g) -> np.ndarray:
    p_data = np.asarray(p_data, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    return p_data / (p_data + p_g)


def optimal_discriminator_check(sequences: list[Trajectory], p_data, p_g,
                                disc: DiscriminatorModel) -> float:
    """max |D(tau) - P_data / (P_data + P_g)| over the enumerated sequences."""
    target = optimal_discriminator(p_data, p_g)
    scores = disc.score_batch(Batch.from_trajectories(sequences))
    return float(np.max(np.abs(scores - target)))


def fit_discriminator(disc: DiscriminatorModel, sequences: list[Trajectory], p_data, p_g,
                      steps: int = 2000, lr: float = 1e-2, batch: int = 64,
                      rng: np.random.Generator | None = None, exact: bool = False) -> list[float]:
    """Train ``disc`` on samples from the two sequence distributions.

    With ``exact`` each step uses the expected cross-entropy under both
    distributions instead of a sampled minibatch. Returns the loss per step.
    """
    from ..nnet import Adam

    rng = np.random.default_rng(0) if rng is None else rng
    p_data = np.asarray(p_data, dtype=float)
    p_g = np.asarray(p_g, dtype=float)
    opt = Adam(disc.params, lr=lr)
    losses = []
    if exact:
        trajs = list(sequences) * 2
        labels = np.concatenate([np.ones(len(sequences)), np.zeros(len(sequences))])
        weights = np.concatenate([p_data, p_g]) / 2.0
        full = Batch.from_trajectories(trajs)
    for _ in range(steps):
        if exact:
            loss, tape = disc.loss_and_grad(full, labels, weights=weights)
        else:
            real = rng.choice(len(sequences), size=batch, p=p_data)
            fake = rng.choice(len(sequences), size=batch, p=p_g)
            trajs = [sequences[i] for i in real] + [sequences[i] for i in fake]
            labels = np.concatenate([np.ones(batch), np.zeros(batch)])
            loss, tape = disc.loss_and_grad(Batch.from_trajectories(trajs), labels)
        opt.step(disc.params, tape)
        losses.append(loss)
    return losses
