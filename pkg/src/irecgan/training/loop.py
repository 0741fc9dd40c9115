"""Pretraining, the adversarial epoch loop and the online/offline alternation."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..env import SimulatorSpec, Trajectory, run_sessions
from ..models import (AgentModel, Batch, DiscriminatorModel, ModelDims, UserModel, sample_slates,
                      top_k)
from ..nnet import Adam, checkpoint
from ..seeding import derive_rng
from .generation import generate_batch, score_batch
from .updates import agent_total_update, disc_update, offline_scores, user_adv_update

METHODS = ("LSTM", "LSTMD", "PG", "PGU", "IRecGAN")
ONLINE_METHODS = ("PG-online", "PG-online&offline", "LSTM-offline", "IRecGAN")
METRIC_COLUMNS = ("epoch", "u_loss", "a_return_mean", "d_loss", "d_accuracy", "mean_q",
                  "mean_gen_length", "wall_ms")


@dataclass
class TrainSchedule:
    epochs: int = 50
    r_steps: int = 1
    d_steps: int = 1
    d_inner_epochs: int = 5
    m_batch: int = 32
    n_rollouts: int = 8
    gamma: float = 0.9
    lambda_r: float = 3.0
    lambda1: float = 1.0 / 11.0
    lambda2: float = 10.0 / 11.0
    w: float = 1.0
    baseline: bool = False
    minibatch: int = 64
    lr: float = 1e-3
    d_lr: float = 1e-2
    u_pretrain_epochs: int = 10
    a_pretrain_epochs: int = 10
    d_pretrain_epochs: int = 3
    t_max: int = 40

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if abs(self.lambda1 + self.lambda2 - 1.0) > 1e-9:
            raise ValueError("lambda1 + lambda2 must equal 1")
        if not 0.0 < self.lambda1 <= 1.0:
            raise ValueError("lambda1 must lie in (0, 1]")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        if self.w <= 0:
            raise ValueError("w must be positive")
        for name in ("epochs", "r_steps", "d_steps", "d_inner_epochs", "u_pretrain_epochs",
                     "a_pretrain_epochs", "d_pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("m_batch", "minibatch", "t_max"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0 or self.d_lr <= 0:
            raise ValueError("learning rates must be positive")

    @property
    def offline_per_refill(self) -> int:
        """floor(lambda2 / lambda1 * m) logged trajectories per generated batch."""
        return int(np.floor(self.lambda2 / self.lambda1 * self.m_batch + 1e-9))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReplayBuffers:
    """Simulated (generated) and real (logged) trajectory pools."""

    B_s: list = field(default_factory=list)
    B_r: list = field(default_factory=list)

    def refill_generated(self, trajs: Sequence[Trajectory]) -> None:
        if any(t.provenance != "generated" for t in trajs):
            raise ValueError("B_s only holds generated trajectories")
        self.B_s = list(trajs)

    def refill_offline(self, trajs: Sequence[Trajectory]) -> None:
        if any(t.provenance != "offline" for t in trajs):
            raise ValueError("B_r only holds offline trajectories")
        self.B_r = list(trajs)

    def clean(self) -> bool:
        return (all(t.provenance == "generated" for t in self.B_s)
                and all(t.provenance == "offline" for t in self.B_r))


def draw_offline(data: Sequence[Trajectory], count: int, rng: np.random.Generator) -> list:
    """Uniform draw without replacement; wraps to a fresh permutation when exhausted."""
    if not data:
        raise ValueError("offline data is empty")
    idx: list[int] = []
    while len(idx) < count:
        idx.extend(rng.permutation(len(data))[: count - len(idx)].tolist())
    return [data[i] for i in idx]


def minibatches(items: Sequence, size: int, rng: np.random.Generator):
    order = rng.permutation(len(items))
    for s in range(0, len(items), size):
        yield [items[i] for i in order[s:s + size]]


def _nanmean(values) -> float:
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


class Trainer:
    """Runs one method end to end: pretraining followed by training epochs.

    Everything random in epoch ``e`` draws from a stream derived from
    ``(seed, "train_epoch", e)``, so a resumed run only needs model
    parameters, optimizer moments and the epoch counter.
    """

    def __init__(self, method: str, schedule: TrainSchedule, dims: ModelDims,
                 slate_size: int, offline: Sequence[Trajectory], seed: int,
                 lambda_p: float = 1.0, disc_temperature: float = 0.1):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        if method in ("LSTM", "PG", "PGU") and schedule.d_steps > 0:
            raise ValueError(f"method {method} has no discriminator; set d_steps = 0")
        self.method = method
        self.schedule = schedule
        self.dims = dims
        self.seed = seed
        self.offline = list(offline)
        self.epoch = 0
        self.pretrained = False
        self.buffers = ReplayBuffers()
        self.user = self.agent = self.disc = None
        self.opt: dict[str, Adam] = {}
        lr = schedule.lr
        if method != "PG":
            self.user = UserModel(dims, derive_rng(seed, "init", "user"), lambda_p=lambda_p)
            self.opt["user"] = Adam(self.user.params, lr=lr)
        if method != "LSTM":
            self.agent = AgentModel(dims, slate_size, derive_rng(seed, "init", "agent"))
            self.opt["agent"] = Adam(self.agent.params, lr=lr)
        if method in ("LSTMD", "IRecGAN"):
            self.disc = DiscriminatorModel(dims, derive_rng(seed, "init", "disc"),
                                           temperature=disc_temperature)
            self.opt["disc"] = Adam(self.disc.params, lr=schedule.d_lr)

    @property
    def adversarial(self) -> bool:
        return self.disc is not None

    @property
    def generative(self) -> bool:
        return self.user is not None and self.agent is not None

    # -- single updates -----------------------------------------------------------

    def _user_step(self, trajs, scores) -> float:
        batch = Batch.from_trajectories(trajs)
        loss, tape = user_adv_update(self.user, batch, scores)
        self.opt["user"].step(self.user.params, tape)
        return loss

    def _agent_step(self, trajs, scores) -> float:
        s = self.schedule
        batch = Batch.from_trajectories(trajs)
        _, tape, ret = agent_total_update(self.agent, batch, scores, s.gamma, s.lambda_r,
                                          s.w, s.baseline)
        self.opt["agent"].step(self.agent.params, tape)
        return ret

    def _disc_epochs(self, real, fake, epochs: int, rng) -> tuple[list, list]:
        losses, accs = [], []
        s = self.schedule
        pool = [(t, 1) for t in real] + [(t, 0) for t in fake]
        for _ in range(epochs):
            for mb in minibatches(pool, s.minibatch, rng):
                r = [t for t, y in mb if y]
                f = [t for t, y in mb if not y]
                loss, tape, acc = disc_update(self.disc, r, f)
                self.opt["disc"].step(self.disc.params, tape)
                losses.append(loss)
                accs.append(acc)
        return losses, accs

    def offline_user_epoch(self, data, rng) -> float:
        losses = []
        for mb in minibatches(data, self.schedule.minibatch, rng):
            batch = Batch.from_trajectories(mb)
            losses.append(self._user_step(mb, offline_scores(batch)))
        return _nanmean(losses)

    def offline_agent_epoch(self, data, rng) -> float:
        rets = []
        for mb in minibatches(data, self.schedule.minibatch, rng):
            batch = Batch.from_trajectories(mb)
            rets.append(self._agent_step(mb, offline_scores(batch)))
        return _nanmean(rets)

    # -- pipeline -----------------------------------------------------------------

    def _require_data(self) -> None:
        if not self.offline:
            raise ValueError("offline data is empty")

    def pretrain(self) -> None:
        """Pretrain the user model and agent on logged data, then the discriminator."""
        self._require_data()
        s = self.schedule
        if self.user is not None:
            for e in range(s.u_pretrain_epochs):
                self.offline_user_epoch(self.offline, derive_rng(self.seed, "pretrain_user", e))
        if self.agent is not None:
            for e in range(s.a_pretrain_epochs):
                self.offline_agent_epoch(self.offline, derive_rng(self.seed, "pretrain_agent", e))
        if self.adversarial:
            rng = derive_rng(self.seed, "pretrain_disc")
            fake = generate_batch(self.user, self.agent, s.m_batch, s.t_max, rng)
            real = draw_offline(self.offline, s.m_batch, rng)
            self.buffers.refill_generated(fake)
            self.buffers.refill_offline(real)
            self._disc_epochs(real, fake, s.d_pretrain_epochs, rng)
        self.pretrained = True

    def train_epoch(self) -> dict:
        if not self.pretrained:
            raise RuntimeError("call pretrain() before train_epoch()")
        self._require_data()
        s = self.schedule
        t0 = time.perf_counter()
        rng = derive_rng(self.seed, "train_epoch", self.epoch)
        u_losses, a_rets, d_losses, d_accs, qs, gen_lens = [], [], [], [], [], []
        if self.method in ("LSTM", "PG"):
            # same offline draw per refill as the generative methods, minus generated data
            for _ in range(s.r_steps):
                real = draw_offline(self.offline, s.offline_per_refill, rng)
                self.buffers.refill_offline(real)
                if self.method == "LSTM":
                    u_losses.append(self.offline_user_epoch(real, rng))
                else:
                    a_rets.append(self.offline_agent_epoch(real, rng))
        else:
            for _ in range(s.r_steps):
                fake = generate_batch(self.user, self.agent, s.m_batch, s.t_max, rng)
                gen_lens.extend(len(t) for t in fake)
                if self.adversarial:
                    scores = [sc.q for sc in score_batch(self.user, self.agent, self.disc, fake,
                                                        s.n_rollouts, s.t_max, rng)]
                else:
                    scores = [np.ones(len(t)) for t in fake]
                qs.extend(np.concatenate(scores).tolist())
                real = draw_offline(self.offline, s.offline_per_refill, rng)
                self.buffers.refill_generated(fake)
                self.buffers.refill_offline(real)
                pool = [(t, q) for t, q in zip(fake, scores)]
                pool += [(t, np.ones(len(t))) for t in real]
                for mb in minibatches(pool, s.minibatch, rng):
                    trajs = [t for t, _ in mb]
                    sc = [q for _, q in mb]
                    u_losses.append(self._user_step(trajs, sc))
                    a_rets.append(self._agent_step(trajs, sc))
            for _ in range(s.d_steps):
                fake = generate_batch(self.user, self.agent, s.m_batch, s.t_max, rng)
                real = draw_offline(self.offline, s.m_batch, rng)
                self.buffers.refill_generated(fake)
                self.buffers.refill_offline(real)
                dl, da = self._disc_epochs(real, fake, s.d_inner_epochs, rng)
                d_losses.extend(dl)
                d_accs.extend(da)
        self.epoch += 1
        for name, model in self.models().items():
            if not model.params.all_finite():
                raise FloatingPointError(f"non-finite parameters in {name} after epoch {self.epoch}")
        return {
            "epoch": self.epoch,
            "u_loss": _nanmean(u_losses),
            "a_return_mean": _nanmean(a_rets),
            "d_loss": _nanmean(d_losses),
            "d_accuracy": _nanmean(d_accs),
            "mean_q": _nanmean(qs),
            "mean_gen_length": _nanmean(gen_lens),
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }

    def run(self, epochs: int | None = None, on_epoch=None) -> list[dict]:
        if not self.pretrained:
            self.pretrain()
        target = self.schedule.epochs if epochs is None else epochs
        rows = []
        while self.epoch < target:
            row = self.train_epoch()
            rows.append(row)
            if on_epoch is not None:
                on_epoch(self, row)
        return rows

    # -- persistence ----------------------------------------------------------------

    def models(self) -> dict:
        out = {}
        for name in ("user", "agent", "disc"):
            model = getattr(self, name)
            if model is not None:
                out[name] = model
        return out

    def state_arrays(self) -> list:
        d = self.dims
        k = self.agent.slate_size if self.agent is not None else 0
        arrays = [
            ("trainer.meta", np.array([float(self.epoch), float(self.pretrained)])),
            ("trainer.dims", np.array([d.n_items, d.embedding_dim, d.hidden_dim, d.layers, k,
                                       METHODS.index(self.method),
                                       self.disc.temperature if self.disc else 0.0], dtype=float)),
        ]
        for name, model in self.models().items():
            arrays.extend(model.params.items())
            arrays.extend(self.opt[name].state_arrays(f"opt.{name}"))
        return arrays

    def save(self, path) -> None:
        checkpoint.save(path, self.state_arrays())

    def load_state(self, arrays) -> None:
        meta = arrays["trainer.meta"]
        self.epoch = int(meta[0])
        self.pretrained = bool(meta[1])
        for name, model in self.models().items():
            model.load_arrays(arrays)
            self.opt[name].load_state_arrays(f"opt.{name}", arrays)

    def load(self, path) -> None:
        self.load_state(checkpoint.load(path))


def models_from_checkpoint(arrays) -> dict:
    """Rebuild whichever of user/agent/disc a trainer checkpoint contains."""
    if "trainer.dims" not in arrays:
        raise ValueError("not a trainer checkpoint (missing trainer.dims)")
    meta = arrays["trainer.dims"]
    n, E, H, layers, k = (int(v) for v in meta[:5])
    dims = ModelDims(n, E, H, layers)
    out = {}
    if "user.emb" in arrays:
        out["user"] = UserModel(dims)
        out["user"].load_arrays(arrays)
    if "agent.emb" in arrays:
        out["agent"] = AgentModel(dims, k)
        out["agent"].load_arrays(arrays)
    if "disc.emb" in arrays:
        out["disc"] = DiscriminatorModel(dims, temperature=float(meta[6]))
        out["disc"].load_arrays(arrays)
    return out


def checkpoint_method(arrays) -> str:
    return METHODS[int(arrays["trainer.dims"][5])]


# -- recommenders used during evaluation and online collection --------------------

def agent_slate_fn(agent: AgentModel, count: int, k: int, rng, test: bool):
    """slate_fn/observe pair for :func:`run_sessions` driven by the agent."""
    state = agent.zero_state(count)

    def slate_fn(states, idx, t):
        return sample_slates(agent.policy(state.take(idx)), k, rng, test=test)

    def observe(idx, clicks):
        nxt = agent.advance(state.take(idx), clicks)
        for layer in range(len(state.layers)):
            state.layers[layer][idx] = nxt.layers[layer]

    return slate_fn, observe


def user_slate_fn(user: UserModel, count: int, k: int):
    """Rerank every item by the user model's click logit and take the top k."""
    state = user.zero_state(count)

    def slate_fn(states, idx, t):
        return top_k(user.item_scores(state.take(idx)), k)

    def observe(idx, clicks):
        nxt = user.advance(state.take(idx), clicks)
        for layer in range(len(state.layers)):
            state.layers[layer][idx] = nxt.layers[layer]

    return slate_fn, observe


def collect_sessions(spec: SimulatorSpec, model, count: int, t_max: int, rng,
                     test: bool = False) -> list[Trajectory]:
    """Interact with the simulator; logged as offline (real) data."""
    if isinstance(model, AgentModel):
        fn, obs = agent_slate_fn(model, count, spec.k, rng, test)
    elif isinstance(model, UserModel):
        fn, obs = user_slate_fn(model, count, spec.k)
    else:
        raise TypeError("model must be an AgentModel or UserModel")
    return run_sessions(spec, fn, count, t_max, rng, observe=obs)


# -- online/offline alternation ---------------------------------------------------

@dataclass
class OnlineSchedule:
    iterations: int = 20
    sequences_per_iteration: int = 200
    online_epochs: int = 1
    offline_epochs: int = 3
    adversarial_epochs: int = 2
    eval_episodes: int = 200

    def __post_init__(self):
        for name in ("iterations", "sequences_per_iteration", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("online_epochs", "offline_epochs", "adversarial_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


class OnlineLearner:
    """One method of the online study; all methods share initial weights per seed."""

    def __init__(self, method: str, spec: SimulatorSpec, schedule: TrainSchedule,
                 online: OnlineSchedule, dims: ModelDims, seed: int, lambda_p: float = 1.0):
        if method not in ONLINE_METHODS:
            raise ValueError(f"unknown online method {method!r}; expected one of {ONLINE_METHODS}")
        self.method = method
        self.spec = spec
        self.schedule = schedule
        self.online = online
        self.seed = seed
        self.pool: list[Trajectory] = []
        self.iteration = 0
        inner = {"PG-online": "PG", "PG-online&offline": "PG", "LSTM-offline": "LSTM",
                 "IRecGAN": "IRecGAN"}[method]
        sched = schedule
        if inner != "IRecGAN" and schedule.d_steps:
            sched = TrainSchedule(**{**schedule.as_dict(), "d_steps": 0})
        self.trainer = Trainer(inner, sched, dims, spec.k, [], seed, lambda_p)

    @property
    def recommender(self):
        return self.trainer.user if self.method == "LSTM-offline" else self.trainer.agent

    def iterate(self) -> list[Trajectory]:
        """One online stage followed by one offline stage; returns the new sequences."""
        s, o, tr = self.schedule, self.online, self.trainer
        rng = derive_rng(self.seed, "online", self.method, self.iteration)
        fresh = collect_sessions(self.spec, self.recommender, o.sequences_per_iteration,
                                 s.t_max, rng, test=self.method == "LSTM-offline")
        self.pool.extend(fresh)
        if self.method != "LSTM-offline":
            for _ in range(o.online_epochs):
                tr.offline_agent_epoch(fresh, rng)
        if self.method == "PG-online&offline":
            for _ in range(o.offline_epochs):
                tr.offline_agent_epoch(self.pool, rng)
        elif self.method == "LSTM-offline":
            for _ in range(o.offline_epochs):
                tr.offline_user_epoch(self.pool, rng)
        elif self.method == "IRecGAN":
            tr.offline = self.pool
            for _ in range(o.offline_epochs):
                tr.offline_user_epoch(self.pool, rng)
            if not tr.pretrained:
                tr.pretrained = True
                fake = generate_batch(tr.user, tr.agent, s.m_batch, s.t_max, rng)
                real = draw_offline(self.pool, s.m_batch, rng)
                tr._disc_epochs(real, fake, s.d_pretrain_epochs, rng)
            for _ in range(o.adversarial_epochs):
                tr.train_epoch()
        self.iteration += 1
        return fresh


def online_learning_loop(spec: SimulatorSpec, schedule: TrainSchedule, online: OnlineSchedule,
                         dims: ModelDims, seed: int, methods: Sequence[str] = ONLINE_METHODS,
                         lambda_p: float = 1.0, on_row=None) -> list[dict]:
    """Alternate online collection and offline reuse; coverage@1/@10 per iteration."""
    from ..eval.metrics import coverage_at_r

    rows = []
    r_values = sorted({1, min(10, spec.k)})
    for method in methods:
        learner = OnlineLearner(method, spec, schedule, online, dims, seed, lambda_p)
        for it in range(online.iterations):
            learner.iterate()
            rec = learner.recommender
            row = {"method": method, "iteration": it + 1, "pool_size": len(learner.pool)}
            rep = coverage_at_r(spec, rec, r_values, spec.k, online.eval_episodes,
                                derive_rng(seed, "online_eval", it), t_max=schedule.t_max)
            for r in r_values:
                row[f"coverage@{r}"] = rep.coverage[r]
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows
