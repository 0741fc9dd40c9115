"""Acceptance criteria 1-9; each test prints one PASS/FAIL line.

Run alone with ``python3 -m pytest tests/test_acceptance.py -v`` (or
``python3 tests/test_acceptance.py``); the lines are repeated in the
terminal summary.
"""
import csv
import io
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from irecgan.cli import main as cli_main  # noqa: E402
from irecgan.env import (  # noqa: E402
    LoggingPolicy,
    SessionStep,
    Trajectory,
    click_distribution,
    env_step_batch,
    new_simulator,
)
from irecgan.eval import (  # noqa: E402
    ModelAgentProcess,
    ModelUserWorld,
    enumerate_distribution,
    fit_discriminator,
    identity_audit,
    optimal_discriminator_check,
)
from irecgan.experiments import StudySetup, online_study, sign_agreement, simulation_study  # noqa: E402
from irecgan.models import AgentModel, Batch, DiscriminatorModel, ModelDims, UserModel  # noqa: E402
from irecgan.nnet import checkpoint  # noqa: E402
from irecgan.training import (  # noqa: E402
    OnlineSchedule,
    generate_batch,
    return_matrix,
    score_batch,
)

from _util import (  # noqa: E402
    directional_fd_error,
    forced_stop_user,
    random_trajectories,
    run_bandit,
    tv_from_counts,
)

DESK = ModelDims(50, 16, 32)


# -- 1. gradient correctness --------------------------------------------------------

def test_criterion_1_gradients(verdict):
    t0 = time.perf_counter()
    worst = {"user": 0.0, "disc": 0.0, "agent": 0.0}
    for draw in range(10):
        rng = np.random.default_rng(1000 + draw)
        trajs = random_trajectories(50, 10, 6, rng, max_len=6)
        gen = [Trajectory(t.steps, "generated", t.terminated) for t in trajs[:3]] + trajs[3:]
        batch = Batch.from_trajectories(gen)
        q = [rng.random(len(t)) for t in gen]

        user = UserModel(ModelDims(50, 16, 32, init_scale=0.5), rng)
        wts = batch.step_weights(q)
        _, tape = user.loss_and_grad(batch, weights=wts)
        worst["user"] = max(worst["user"], directional_fd_error(
            lambda: user.loss_and_grad(batch, weights=wts)[0], user.params, tape, rng))

        disc = DiscriminatorModel(ModelDims(50, 16, 32, init_scale=0.5), rng)
        y = np.array([0, 0, 0, 1, 1, 1], float)
        _, tape = disc.loss_and_grad(batch, y)
        worst["disc"] = max(worst["disc"], directional_fd_error(
            lambda: disc.loss_and_grad(batch, y)[0], disc.params, tape, rng))

        agent = AgentModel(ModelDims(50, 16, 32, init_scale=0.5), 10, rng)
        R = return_matrix(batch, q, 0.9, 3.0, w=1.0)
        _, tape = agent.loss_and_grad(batch, R)
        worst["agent"] = max(worst["agent"], directional_fd_error(
            lambda: agent.loss_and_grad(batch, R)[0], agent.params, tape, rng))
    secs = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and secs < 60
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    verdict(1, ok, f"max relative FD error {detail} (<= 1e-4) in {secs:.1f}s")


# -- 2. simulator fidelity ----------------------------------------------------------

def test_criterion_2_simulator(verdict):
    t0 = time.perf_counter()
    spec = new_simulator(10, 50, 10, seed=2024)
    rng = np.random.default_rng(7)
    N = 100_000
    worst_tv = 0.0
    for case in range(5):
        state = int(rng.integers(spec.m))
        slate = rng.choice(spec.n, spec.k, replace=False)
        clicks, _, _, _ = env_step_batch(spec, np.full(N, state), np.tile(slate, (N, 1)), rng)
        pos = np.searchsorted(np.sort(slate), clicks)
        counts = np.bincount(np.argsort(slate)[pos], minlength=spec.k).astype(float)
        worst_tv = max(worst_tv, tv_from_counts(click_distribution(spec, state, slate), counts))
    row_err = float(np.max(np.abs(spec.transition.sum(axis=2) - 1)))
    secs = time.perf_counter() - t0
    ok = worst_tv <= 0.01 and row_err <= 1e-12 and secs < 60
    verdict(2, ok, f"click TV {worst_tv:.4f} (<= 0.01), row-sum error {row_err:.1e} in {secs:.1f}s")


# -- 3. rollout scores --------------------------------------------------------------

def test_criterion_3_rollout_scores(verdict):
    rng = np.random.default_rng(3)
    dims = ModelDims(20, 8, 8)
    user = UserModel(dims, rng)
    agent = AgentModel(dims, 4, rng)
    disc = DiscriminatorModel(ModelDims(20, 8, 8, init_scale=1.0), rng, temperature=0.5)
    gen = generate_batch(user, agent, 30, 10, rng)
    scores = score_batch(user, agent, disc, gen, 4, 10, rng)
    boundary = all(s.q[-1] == disc.score(t) for s, t in zip(scores, gen))

    stopper = forced_stop_user(dims)
    steps = [SessionStep((0, 1, 2, 3), i % 4, float(i % 2)) for i in range(6)]
    traj = Trajectory(steps, "generated", True)
    q = score_batch(stopper, agent, disc, [traj], 4, 40, rng)[0].q
    det_err = max(abs(q[t] - disc.score(Trajectory(steps[: t + 1], "generated")))
                  for t in range(len(steps)))

    target = max(gen, key=len)
    var = {}
    for N in (4, 64):
        vals = [score_batch(user, agent, disc, [target], N, 10, np.random.default_rng(10_000 * N + i))[0].q[0]
                for i in range(100)]
        var[N] = float(np.var(vals))
    ok = boundary and det_err <= 1e-12 and var[64] < var[4]
    verdict(3, ok, f"boundary bit-equal={boundary}, deterministic completion error {det_err:.1e}, "
                   f"var(q) N=4 {var[4]:.2e} > N=64 {var[64]:.2e}")


# -- 4. oracle equivalence on the toy problem ---------------------------------------

def test_criterion_4_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    spec = new_simulator(3, 4, 2, seed=11)
    rep = identity_audit(spec, LoggingPolicy("random"), horizon=3, lambda1=0.5, w=2.0)
    s = rep.summary()
    bias = max(abs(rep.delta), s["delta1_max_abs"], s["delta2_max_abs"])
    value_err = abs(rep.estimate - rep.true_value)

    # concentrated random models so 1e5 samples resolve the distribution
    rng = np.random.default_rng(4)
    dims = ModelDims(4, 4, 4)
    user, agent = UserModel(dims, rng), AgentModel(dims, 2, rng)
    for model in (user, agent):
        for name in model.params:
            model.params[name] = rng.uniform(-3.0, 3.0, model.params[name].shape)
    P_g = enumerate_distribution(ModelUserWorld(user), ModelAgentProcess(agent), 3)
    samples = generate_batch(user, agent, 100_000, 3, np.random.default_rng(5))
    tv = P_g.tv_distance(Counter(t.key() for t in samples))
    secs = time.perf_counter() - t0
    ok = bias <= 1e-9 and value_err <= 1e-9 and tv <= 0.02 and secs < 120
    verdict(4, ok, f"max |bias term| {bias:.1e}, |estimate - V| {value_err:.1e}, "
                   f"sampler TV {tv:.4f} (<= 0.02) in {secs:.1f}s")


# -- 5. optimal discriminator -------------------------------------------------------

def test_criterion_5_optimal_discriminator(verdict):
    seqs = [Trajectory([SessionStep((0, 1), 0, 1.0), SessionStep((0, 1), 1, 1.0)]),
            Trajectory([SessionStep((2, 3), 3, 0.0)])]
    p_data, p_g = [0.8, 0.2], [0.2, 0.8]
    disc = DiscriminatorModel(ModelDims(4, 8, 8), np.random.default_rng(0))
    fit_discriminator(disc, seqs, p_data, p_g, steps=2000, lr=1e-2, batch=64,
                      rng=np.random.default_rng(1))
    dev = optimal_discriminator_check(seqs, p_data, p_g, disc)
    verdict(5, dev < 0.1, f"max |D - D*| = {dev:.4f} (< 0.1) after 2000 steps")


# -- 6. bandit ----------------------------------------------------------------------

def test_criterion_6_bandit(verdict):
    finals = [run_bandit(seed, 2000)[-1] for seed in range(5)]
    wins = sum(p > 0.9 for p in finals)
    verdict(6, wins == 5, f"P(best arm) {', '.join(f'{p:.3f}' for p in finals)}; {wins}/5 seeds > 0.9")


# -- 7. simulation-study trend --------------------------------------------------------

STUDY_SEEDS = (101, 102, 103, 104, 105)


@pytest.mark.slow
def test_criterion_7_simulation_trend(verdict):
    t0 = time.perf_counter()
    results = simulation_study(STUDY_SEEDS, StudySetup(),
                               on_result=lambda r: print(f"seed {r.seed}: reward {r.reward} "
                                                         f"coverage@1 {r.coverage1} ({r.seconds:.0f}s)"))
    a_wins, irecgan, pg = sign_agreement(results, "reward", "IRecGAN", "PG")
    b_wins, lstmd, lstm = sign_agreement(results, "coverage1", "LSTMD", "LSTM")
    secs = time.perf_counter() - t0
    ok = a_wins >= 4 and b_wins >= 4 and irecgan >= pg and lstmd >= lstm and secs < 1800
    verdict(7, ok, f"(a) reward IRecGAN {irecgan:.3f} vs PG {pg:.3f}, {a_wins}/5 seeds; "
                   f"(b) coverage@1 LSTMD {lstmd:.3f} vs LSTM {lstm:.3f}, {b_wins}/5 seeds; "
                   f"{secs / 60:.1f} min")


# -- 8. online-learning trend ---------------------------------------------------------

@pytest.mark.slow
def test_criterion_8_online_trend(verdict):
    t0 = time.perf_counter()
    finals = online_study((201, 202, 203), StudySetup(),
                          OnlineSchedule(iterations=10, eval_episodes=2000))
    wins = sum(f["IRecGAN"] >= f["PG-online"] for f in finals.values())
    rl = ("PG-online", "PG-online&offline", "IRecGAN")
    below = sum(f["LSTM-offline"] < max(f[m] for m in rl) for f in finals.values())
    secs = time.perf_counter() - t0
    ok = wins >= 2 and below >= 2 and secs < 1800
    table = "; ".join(f"seed {s}: " + ", ".join(f"{m} {v:.3f}" for m, v in f.items())
                      for s, f in finals.items())
    verdict(8, ok, f"IRecGAN >= PG-online in {wins}/3 seeds, LSTM-offline below best RL in "
                   f"{below}/3 seeds; {secs / 60:.1f} min [{table}]")


# -- 9. determinism and persistence ---------------------------------------------------

SMALL = ["--set", "simulator.m=4", "--set", "simulator.n=20", "--set", "simulator.k=4",
         "--set", "data.size=60", "--set", "schedule.epochs=4", "--set", "schedule.m_batch=8",
         "--set", "schedule.n_rollouts=2", "--set", "schedule.u_pretrain_epochs=1",
         "--set", "schedule.a_pretrain_epochs=1", "--set", "schedule.d_pretrain_epochs=1",
         "--set", "train.checkpoint_every=2", "--threads", "1"]


def _metrics_without_wall(path: Path) -> str:
    rows = list(csv.reader(open(path, newline="")))
    keep = [i for i, c in enumerate(rows[0]) if c != "wall_ms"]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows([[r[i] for i in keep] for r in rows])
    return buf.getvalue()


def test_criterion_9_determinism(verdict, tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli_main(["gen-data", "--out", str(out), *SMALL]) == 0
        assert cli_main(["train", "--out", str(out), *SMALL]) == 0
        runs.append(out)
    a, b = runs
    same_sessions = (a / "sessions.jsonl").read_bytes() == (b / "sessions.jsonl").read_bytes()
    same_metrics = _metrics_without_wall(a / "metrics.csv") == _metrics_without_wall(b / "metrics.csv")
    ck = sorted(p.name for p in (a / "checkpoints").iterdir())
    same_ckpt = all((a / "checkpoints" / n).read_bytes() == (b / "checkpoints" / n).read_bytes()
                    for n in ck) and (a / "model.bin").read_bytes() == (b / "model.bin").read_bytes()

    arrays = checkpoint.load(a / "model.bin")
    checkpoint.save(tmp_path / "copy.bin", arrays.items())
    roundtrip = (tmp_path / "copy.bin").read_bytes() == (a / "model.bin").read_bytes()

    # interrupt after 2 epochs, then resume to 4
    c = tmp_path / "c"
    c.mkdir()
    (c / "sessions.jsonl").write_bytes((a / "sessions.jsonl").read_bytes())
    short = [x if x != "schedule.epochs=4" else "schedule.epochs=2" for x in SMALL]
    assert cli_main(["train", "--out", str(c), *short]) == 0
    assert cli_main(["train", "--out", str(c), "--resume", "--force", *SMALL]) == 0
    resumed = _metrics_without_wall(c / "metrics.csv") == _metrics_without_wall(a / "metrics.csv")
    resumed_model = (c / "model.bin").read_bytes() == (a / "model.bin").read_bytes()
    ok = all([same_sessions, same_metrics, same_ckpt, roundtrip, resumed, resumed_model])
    verdict(9, ok, f"sessions {same_sessions}, metrics (wall_ms excluded) {same_metrics}, "
                   f"checkpoints {same_ckpt} ({len(ck)} files), round-trip {roundtrip}, "
                   f"resume metrics {resumed}, resume model {resumed_model}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
