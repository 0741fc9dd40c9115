"""Seed-replicated desk studies: offline training comparison and online alternation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import LoggingPolicy, generate_offline, new_simulator
from .eval.metrics import avg_cumulative_reward, coverage_at_r
from .models import ModelDims
from .seeding import derive_rng, derive_seed
from .training import OnlineSchedule, Trainer, TrainSchedule, online_learning_loop


@dataclass
class StudySetup:
    m: int = 10
    n: int = 50
    k: int = 10
    embedding: int = 16
    hidden: int = 32
    layers: int = 1
    policy: str = "mix"
    size: int = 2000
    t_max: int = 40
    reward_episodes: int = 10000
    coverage_episodes: int = 2000
    schedule: TrainSchedule = field(default_factory=TrainSchedule)

    @property
    def dims(self) -> ModelDims:
        return ModelDims(self.n, self.embedding, self.hidden, self.layers)


@dataclass
class SeedResult:
    seed: int
    reward: dict
    coverage1: dict
    seconds: float


def _schedule_for(method: str, schedule: TrainSchedule) -> TrainSchedule:
    if method in ("LSTM", "PG", "PGU"):
        return TrainSchedule(**{**schedule.as_dict(), "d_steps": 0})
    return schedule


def simulation_seed(seed: int, setup: StudySetup,
                    methods: Sequence[str] = ("PG", "LSTM", "IRecGAN")) -> SeedResult:
    """Train each method on one seed's logs; report agent reward and user coverage@1.

    The user model of the adversarial run is reported as ``LSTMD``; the two
    names share one training loop and differ only in which model is scored.
    """
    t0 = time.perf_counter()
    spec = new_simulator(setup.m, setup.n, setup.k, derive_seed(seed, "simulator"))
    data = generate_offline(spec, LoggingPolicy(setup.policy), setup.size, setup.t_max,
                            derive_rng(seed, "gen_data"))
    reward, cov = {}, {}
    for method in methods:
        tr = Trainer(method, _schedule_for(method, setup.schedule), setup.dims, setup.k, data, seed)
        tr.run()
        if tr.agent is not None:
            reward[method] = avg_cumulative_reward(spec, tr.agent, setup.reward_episodes,
                                                   derive_rng(seed, "eval_reward"), setup.t_max)
        if tr.user is not None:
            name = "LSTMD" if method == "IRecGAN" else method
            rep = coverage_at_r(spec, tr.user, 1, setup.k, setup.coverage_episodes,
                                derive_rng(seed, "eval_coverage"), setup.t_max)
            cov[name] = rep.coverage[1]
    return SeedResult(seed, reward, cov, time.perf_counter() - t0)


def simulation_study(seeds: Sequence[int], setup: StudySetup | None = None,
                     methods: Sequence[str] = ("PG", "LSTM", "IRecGAN"),
                     on_result=None) -> list[SeedResult]:
    setup = StudySetup() if setup is None else setup
    out = []
    for seed in seeds:
        res = simulation_seed(seed, setup, methods)
        out.append(res)
        if on_result is not None:
            on_result(res)
    return out


def sign_agreement(results: Sequence[SeedResult], metric: str, better: str,
                   worse: str) -> tuple[int, float, float]:
    """Seeds where ``better >= worse`` and the two seed-averaged values."""
    a = np.array([getattr(r, metric)[better] for r in results])
    b = np.array([getattr(r, metric)[worse] for r in results])
    return int(np.sum(a >= b)), float(a.mean()), float(b.mean())


def online_study(seeds: Sequence[int], setup: StudySetup | None = None,
                 online: OnlineSchedule | None = None,
                 methods: Sequence[str] = ("PG-online", "PG-online&offline", "LSTM-offline",
                                           "IRecGAN"),
                 on_row=None) -> dict:
    """Final-iteration coverage@1 per seed and method."""
    setup = StudySetup() if setup is None else setup
    online = OnlineSchedule(iterations=10, eval_episodes=2000) if online is None else online
    finals: dict = {}
    for seed in seeds:
        spec = new_simulator(setup.m, setup.n, setup.k, derive_seed(seed, "simulator"))
        rows = online_learning_loop(spec, setup.schedule, online, setup.dims, seed, methods,
                                    on_row=on_row)
        last = {r["method"]: r["coverage@1"] for r in rows if r["iteration"] == online.iterations}
        finals[seed] = last
    return finals
