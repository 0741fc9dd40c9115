"""Ground-truth recommendation MDP, logging policies and session logs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .nnet import checkpoint

INITIAL_STATE = 0
DEFAULT_T_MAX = 40


@dataclass(frozen=True, eq=False)
class SimulatorSpec:
    m: int
    n: int
    k: int
    transition: np.ndarray  # (m, n, m): P(s' | item, s)
    reward: np.ndarray  # (m, n): r(item | s) in [0, 1]
    seed: int = 0

    def __post_init__(self):
        if self.k > self.n:
            raise ValueError(f"slate size k={self.k} exceeds item count n={self.n}")
        if self.transition.shape != (self.m, self.n, self.m):
            raise ValueError("transition tensor must have shape (m, n, m)")
        if self.reward.shape != (self.m, self.n):
            raise ValueError("reward matrix must have shape (m, n)")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1")
        self.transition.setflags(write=False)
        self.reward.setflags(write=False)

    def ranking(self, state: int) -> np.ndarray:
        """Items sorted by descending true reward; ties by ascending id."""
        return np.lexsort((np.arange(self.n), -self.reward[state]))

    def to_arrays(self) -> list[tuple[str, np.ndarray]]:
        lo, hi = self.seed & 0xFFFFFFFF, self.seed >> 32
        meta = np.array([self.m, self.n, self.k, lo, hi], dtype=np.float64)
        return [("sim.meta", meta), ("sim.transition", self.transition),
                ("sim.reward", self.reward)]

    @classmethod
    def from_arrays(cls, arrays) -> "SimulatorSpec":
        m, n, k, lo, hi = (int(v) for v in arrays["sim.meta"])
        return cls(m, n, k, np.array(arrays["sim.transition"]),
                   np.array(arrays["sim.reward"]), seed=lo | (hi << 32))

    def save(self, path) -> None:
        checkpoint.save(path, self.to_arrays())

    @classmethod
    def load(cls, path) -> "SimulatorSpec":
        return cls.from_arrays(checkpoint.load(path))


def new_simulator(m: int, n: int, k: int, seed: int) -> SimulatorSpec:
    """Random MDP: Dirichlet(1) transition rows, rewards uniform on [0, 1]."""
    if m < 2:
        raise ValueError("need at least 2 states (state 0 is the session start)")
    if k < 1 or n < 1:
        raise ValueError("n and k must be positive")
    if k > n:
        raise ValueError(f"slate size k={k} exceeds item count n={n}")
    rng = np.random.default_rng(seed)
    raw = rng.random((m, n, m))
    transition = raw / raw.sum(axis=2, keepdims=True)
    reward = rng.random((m, n))
    return SimulatorSpec(m, n, k, transition, reward, seed=seed)


@dataclass(frozen=True)
class SessionStep:
    slate: tuple[int, ...]
    click: int
    reward: float

    def __post_init__(self):
        if self.click not in self.slate:
            raise ValueError(f"click {self.click} is not in slate {self.slate}")


@dataclass
class Trajectory:
    steps: list[SessionStep]
    provenance: str = "offline"
    terminated: bool = True

    def __post_init__(self):
        if self.provenance not in ("offline", "generated"):
            raise ValueError(f"bad provenance {self.provenance!r}")
        if not self.steps:
            raise ValueError("trajectory needs at least one step")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def clicks(self) -> list[int]:
        return [s.click for s in self.steps]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def key(self) -> tuple:
        """Order-free identity: slates as sorted tuples."""
        return tuple((tuple(sorted(s.slate)), s.click, int(s.reward)) for s in self.steps)


# -- environment dynamics -------------------------------------------------------

def _categorical(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise inverse-CDF draws; ``cum`` is (B, K) cumulative, unnormalized."""
    target = u * cum[:, -1]
    idx = (cum > target[:, None]).argmax(axis=1)
    return idx


def env_step_batch(spec: SimulatorSpec, states: np.ndarray, slates: np.ndarray,
                   rng: np.random.Generator):
    """Vectorized :func:`env_step` over B sessions.

    Returns ``(clicks, continues, rewards, next_states)``.
    """
    states = np.asarray(states, dtype=np.int64)
    slates = np.asarray(slates, dtype=np.int64)
    B = len(states)
    u = rng.random((B, 3))
    r = spec.reward[states[:, None], slates]
    tot = r.sum(axis=1)
    weights = np.where(tot[:, None] > 0, r, 1.0)
    pos = _categorical(np.cumsum(weights, axis=1), u[:, 0])
    clicks = slates[np.arange(B), pos]
    p_cont = spec.reward[states, clicks]
    cont = u[:, 1] < p_cont
    trans = spec.transition[states, clicks]
    nxt = _categorical(np.cumsum(trans, axis=1), u[:, 2])
    return clicks, cont, cont.astype(np.float64), nxt


def _check_slate(spec: SimulatorSpec, slate) -> np.ndarray:
    slate = np.asarray(slate, dtype=np.int64)
    if slate.ndim != 1 or len(slate) != spec.k:
        raise ValueError(f"slate must contain exactly k={spec.k} items")
    if len(set(slate.tolist())) != len(slate):
        raise ValueError(f"slate has duplicate items: {slate.tolist()}")
    if slate.min() < 0 or slate.max() >= spec.n:
        raise ValueError("slate contains unknown item ids")
    return slate


def env_step(spec: SimulatorSpec, state: int, slate, rng: np.random.Generator):
    """One interaction: ``(click, continue, reward, next_state)``.

    The click is drawn proportionally to true reward within the slate
    (uniformly when all are zero); a Bernoulli(r(click|s)) trial decides
    whether the session continues, and the reward is 1 exactly when it does.
    """
    slate = _check_slate(spec, slate)
    c, cont, rew, nxt = env_step_batch(spec, np.array([state]), slate[None, :], rng)
    return int(c[0]), bool(cont[0]), float(rew[0]), int(nxt[0])


def click_distribution(spec: SimulatorSpec, state: int, slate) -> np.ndarray:
    r = spec.reward[state, np.asarray(slate)]
    tot = r.sum()
    if tot <= 0:
        return np.full(len(r), 1.0 / len(r))
    return r / tot


# -- logging policies -----------------------------------------------------------

@dataclass
class LoggingPolicy:
    kind: str = "random"
    mix_prob: float = 0.5
    band: tuple[float, float] = (0.2, 0.5)
    _bands: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("random", "max", "mix"):
            raise ValueError(f"unknown logging policy {self.kind!r}")
        if not 0.0 <= self.mix_prob <= 1.0:
            raise ValueError("mix_prob must lie in [0, 1]")

    def mix_support(self, spec: SimulatorSpec, state: int) -> tuple[int, np.ndarray]:
        """Top item and the quantile band used by the mixed policy."""
        key = (spec, state)
        if key not in self._bands:
            self._bands[key] = mix_band(spec, state, self.band)
        return self._bands[key]

    def slate_distribution(self, spec: SimulatorSpec, state: int) -> dict[tuple, float]:
        """Exact distribution over slates as sorted item tuples."""
        k = spec.k
        if self.kind == "max":
            return {tuple(sorted(spec.ranking(state)[:k].tolist())): 1.0}
        if self.kind == "random":
            from itertools import combinations
            from math import comb

            p = 1.0 / comb(spec.n, k)
            return {c: p for c in combinations(range(spec.n), k)}
        top, band = self.mix_support(spec, state)
        base = {int(top): self.mix_prob}
        for b in band:
            base[int(b)] = base.get(int(b), 0.0) + (1.0 - self.mix_prob) / len(band)
        return _redraw_set_distribution(base, k)


def mix_band(spec: SimulatorSpec, state: int, band=(0.2, 0.5)) -> tuple[int, np.ndarray]:
    order = spec.ranking(state)
    n = spec.n
    frac = np.arange(n) / max(n - 1, 1)
    lo, hi = band
    in_band = np.nonzero((frac >= lo - 1e-12) & (frac <= hi + 1e-12))[0]
    in_band = in_band[in_band > 0]
    ranks = list(in_band)
    # widen downward (then upward) when the band cannot fill a slate
    nxt = (ranks[-1] + 1) if ranks else 1
    prev = (ranks[0] - 1) if ranks else 0
    while len(ranks) + 1 < spec.k:
        if nxt < n:
            ranks.append(nxt)
            nxt += 1
        elif prev >= 1:
            ranks.insert(0, prev)
            prev -= 1
        else:
            break
    return int(order[0]), order[np.array(ranks, dtype=np.int64)]


def _redraw_set_distribution(base: dict[int, float], k: int) -> dict[tuple, float]:
    """Set distribution of k slot draws from ``base`` with redraw on duplicates."""
    out: dict[tuple, float] = {}

    def rec(chosen: tuple, prob: float):
        if len(chosen) == k:
            key = tuple(sorted(chosen))
            out[key] = out.get(key, 0.0) + prob
            return
        rest = {i: p for i, p in base.items() if i not in chosen}
        tot = sum(rest.values())
        for i, p in rest.items():
            if p > 0:
                rec(chosen + (i,), prob * p / tot)

    rec((), 1.0)
    return out


def logging_actions(policy: LoggingPolicy, spec: SimulatorSpec, states,
                    rng: np.random.Generator) -> np.ndarray:
    """Batched slates (B, k) for the given states."""
    states = np.asarray(states, dtype=np.int64)
    B, k, n = len(states), spec.k, spec.n
    if policy.kind == "random":
        keys = rng.random((B, n))
        return np.argsort(keys, axis=1, kind="stable")[:, :k]
    if policy.kind == "max":
        return np.stack([spec.ranking(s)[:k] for s in states]) if B else np.zeros((0, k), np.int64)
    out = np.empty((B, k), dtype=np.int64)
    for b, s in enumerate(states):
        top, band = policy.mix_support(spec, int(s))
        chosen: list[int] = []
        while len(chosen) < k:
            if rng.random() < policy.mix_prob:
                item = top
            else:
                item = int(band[rng.integers(len(band))])
            if item not in chosen:
                chosen.append(item)
        out[b] = chosen
    return out


def logging_action(policy: LoggingPolicy, spec: SimulatorSpec, state: int,
                   rng: np.random.Generator) -> list[int]:
    if not 0 <= state < spec.m:
        raise ValueError(f"invalid state {state}")
    return logging_actions(policy, spec, [state], rng)[0].tolist()


def run_sessions(spec: SimulatorSpec, slate_fn, count: int, t_max: int,
                 rng: np.random.Generator, provenance: str = "offline",
                 observe=None) -> list[Trajectory]:
    """Roll out ``count`` sessions in lockstep from the initial state.

    ``slate_fn(states, alive_idx, t)`` returns (len(alive_idx), k) slates;
    ``observe(alive_idx, clicks)`` lets a recurrent recommender update.
    """
    states = np.full(count, INITIAL_STATE, dtype=np.int64)
    alive = np.arange(count)
    steps: list[list[SessionStep]] = [[] for _ in range(count)]
    terminated = np.zeros(count, dtype=bool)
    for t in range(t_max):
        if len(alive) == 0:
            break
        slates = np.asarray(slate_fn(states[alive], alive, t), dtype=np.int64)
        clicks, cont, rewards, nxt = env_step_batch(spec, states[alive], slates, rng)
        for j, i in enumerate(alive):
            steps[i].append(SessionStep(tuple(int(x) for x in slates[j]), int(clicks[j]),
                                        float(rewards[j])))
        if observe is not None:
            observe(alive, clicks)
        states[alive] = nxt
        terminated[alive[~cont]] = True
        alive = alive[cont]
    return [Trajectory(s, provenance, bool(term)) for s, term in zip(steps, terminated)]


def generate_offline(spec: SimulatorSpec, policy: LoggingPolicy, count: int,
                     t_max: int = DEFAULT_T_MAX,
                     rng: np.random.Generator | None = None) -> list[Trajectory]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    return run_sessions(
        spec, lambda states, idx, t: logging_actions(policy, spec, states, rng),
        count, t_max, rng,
    )


# -- persistence ----------------------------------------------------------------

class SessionFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def trajectory_to_json(traj: Trajectory) -> str:
    obj = {
        "steps": [{"slate": list(s.slate), "click": s.click, "reward": float(s.reward)}
                  for s in traj.steps],
        "provenance": traj.provenance,
        "terminated": traj.terminated,
    }
    return json.dumps(obj, separators=(",", ":"))


def trajectory_from_json(line: str) -> Trajectory:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "steps" not in obj:
        raise ValueError("record must be an object with a 'steps' list")
    steps = []
    for st in obj["steps"]:
        slate = st["slate"]
        if not isinstance(slate, list) or not all(isinstance(x, int) for x in slate):
            raise ValueError("slate must be a list of integers")
        click = st["click"]
        if not isinstance(click, int):
            raise ValueError("click must be an integer")
        steps.append(SessionStep(tuple(slate), click, float(st["reward"])))
    return Trajectory(steps, obj.get("provenance", "offline"), bool(obj.get("terminated", True)))


def save_sessions(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for traj in trajectories:
            fh.write(trajectory_to_json(traj))
            fh.write("\n")


def load_sessions(path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(trajectory_from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise SessionFormatError(lineno, str(exc)) from None
    return out


def session_stats(trajectories: Sequence[Trajectory]) -> dict:
    lengths = np.array([len(t) for t in trajectories], dtype=float)
    return {
        "count": len(trajectories),
        "mean_length": float(lengths.mean()) if len(lengths) else 0.0,
        "mean_reward": float(np.mean([sum(t.rewards) for t in trajectories])) if trajectories else 0.0,
    }
