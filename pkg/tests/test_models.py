import math

import numpy as np
import pytest

from irecgan.env import LoggingPolicy, SessionStep, Trajectory, generate_offline
from irecgan.models import (
    AgentModel,
    Batch,
    DiscriminatorModel,
    ModelDims,
    UserModel,
    sample_slate,
    sample_slates,
    top_k,
)
from irecgan.nnet import Adam

from _util import directional_fd_error, random_trajectories


def _zero(model):
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    return model


def _one_step(slate=tuple(range(10)), click=0, reward=1.0, terminated=True):
    return Trajectory([SessionStep(slate, click, reward)], "offline", terminated)


# -- user model -------------------------------------------------------------------

def test_user_click_distribution_constructed():
    user = _zero(UserModel(ModelDims(3, 3, 2)))
    user.params["user.bc"] = np.array([1.0, 0.0, 0.0])
    emb = np.zeros((4, 3))
    emb[0, 0] = math.log(2)
    user.params["user.emb"] = emb
    p = user.click_distribution(user.zero_state(1), [0, 1])
    assert np.allclose(p, [0.5, 0.25, 0.25], atol=1e-12)


def test_user_zero_params_uniform():
    user = _zero(UserModel(ModelDims(20, 4, 5)))
    p = user.click_distribution(user.zero_state(1), list(range(10)))
    assert np.allclose(p, 1 / 11, atol=1e-15)


def test_user_reward_probability_constructed():
    user = _zero(UserModel(ModelDims(3, 3, 2)))
    user.params["user.br"] = np.array([1.0, 0.0, 0.0])
    emb = np.zeros((4, 3))
    emb[2, 0] = math.log(3)
    user.params["user.emb"] = emb
    assert abs(user.reward_prob(user.zero_state(1), 2) - 0.75) < 1e-12
    with pytest.raises(ValueError):
        user.reward_prob(user.zero_state(1), 3)


def test_user_nll_hand_value():
    user = _zero(UserModel(ModelDims(20, 4, 5)))
    nll = user.nll(_one_step())
    assert abs(nll - (math.log(11) + math.log(2) + math.log(11))) < 1e-12
    # a horizon-capped session has no stop term
    nll = user.nll(_one_step(terminated=False))
    assert abs(nll - (math.log(11) + math.log(2))) < 1e-12


def test_user_rejects_unknown_items():
    user = UserModel(ModelDims(5, 4, 4))
    with pytest.raises(ValueError):
        user.click_distribution(user.zero_state(1), [0, 9])
    with pytest.raises(ValueError):
        user.click_distribution(user.zero_state(1), [])


def test_user_unit_weights_equal_plain_loss(rng):
    user = UserModel(ModelDims(12, 5, 6), rng)
    batch = Batch.from_trajectories(random_trajectories(12, 4, 6, rng))
    a, ta = user.loss_and_grad(batch)
    b, tb = user.loss_and_grad(batch, weights=np.ones_like(batch.mask))
    assert a == b and np.array_equal(ta.flat(), tb.flat())


def test_user_gradient_fd(rng):
    user = UserModel(ModelDims(12, 5, 6, layers=2, init_scale=0.3), rng, lambda_p=0.7)
    trajs = random_trajectories(12, 4, 5, rng)
    batch = Batch.from_trajectories(trajs)
    w = rng.random(batch.mask.shape)
    _, tape = user.loss_and_grad(batch, weights=w)
    err = directional_fd_error(lambda: user.loss_and_grad(batch, weights=w)[0],
                               user.params, tape, rng)
    assert err < 1e-5


def test_user_loss_decreases(rng, desk_spec):
    data = generate_offline(desk_spec, LoggingPolicy("mix"), 64, 40, rng)
    user = UserModel(ModelDims(50, 16, 32), rng)
    opt = Adam(user.params, lr=1e-2)
    batch = Batch.from_trajectories(data)
    first = user.loss_and_grad(batch)[0]
    for _ in range(50):
        _, tape = user.loss_and_grad(batch)
        opt.step(user.params, tape)
    assert user.loss_and_grad(batch)[0] < first


# -- agent ------------------------------------------------------------------------

def test_agent_zero_params_uniform():
    agent = _zero(AgentModel(ModelDims(7, 3, 4), 3))
    assert np.allclose(agent.policy(agent.zero_state(1)), 1 / 7, atol=1e-15)


def test_agent_slate_size_validation():
    with pytest.raises(ValueError):
        AgentModel(ModelDims(4, 3, 3), 5)
    with pytest.raises(ValueError):
        AgentModel(ModelDims(4, 3, 3), 0)


def test_sample_slate_full_is_permutation(rng):
    s = sample_slate(np.full(6, 1 / 6), 6, rng)
    assert sorted(s) == list(range(6))


def test_sample_slates_first_slot_frequencies(rng):
    p = np.array([0.1, 0.2, 0.3, 0.4])
    slates = sample_slates(np.tile(p, (100_000, 1)), 2, rng)
    freq = np.bincount(slates[:, 0], minlength=4) / 100_000
    assert np.max(np.abs(freq - p)) < 0.01
    # second slot follows the renormalized draw
    second = np.bincount(slates[slates[:, 0] == 3, 1], minlength=4)
    expect = np.array([0.1, 0.2, 0.3, 0.0]) / 0.6
    assert np.max(np.abs(second / second.sum() - expect)) < 0.01


def test_sample_slates_never_picks_zero_probability(rng):
    p = np.array([0.5, 0.5, 0.0, 0.0])
    slates = sample_slates(np.tile(p, (1000, 1)), 2, rng)
    assert set(slates.ravel().tolist()) == {0, 1}


def test_test_mode_top_k():
    p = np.array([[0.1, 0.4, 0.1, 0.4]])
    assert top_k(p, 2).tolist() == [[1, 3]]
    assert sample_slates(p, 3, None, test=True).tolist() == [[1, 3, 0]]
    with pytest.raises(ValueError):
        sample_slates(p, 5, None)


def test_agent_gradient_fd(rng):
    agent = AgentModel(ModelDims(12, 5, 6, layers=2, init_scale=0.3), 4, rng)
    batch = Batch.from_trajectories(random_trajectories(12, 4, 5, rng))
    R = rng.normal(size=batch.mask.shape)
    _, tape = agent.loss_and_grad(batch, R)
    err = directional_fd_error(lambda: agent.loss_and_grad(batch, R)[0], agent.params, tape, rng)
    assert err < 1e-5


def test_agent_log_probs_match_policy(rng):
    agent = AgentModel(ModelDims(8, 4, 5, init_scale=0.5), 3, rng)
    traj = random_trajectories(8, 3, 1, rng, max_len=3)[0]
    lp = agent.click_log_probs(Batch.from_trajectories([traj]))[0]
    state = agent.zero_state(1)
    for t, step in enumerate(traj.steps):
        assert abs(lp[t] - math.log(agent.policy(state)[0, step.click])) < 1e-12
        state = agent.advance(state, [step.click])


# -- discriminator ----------------------------------------------------------------

def test_disc_zero_params_half():
    disc = _zero(DiscriminatorModel(ModelDims(10, 4, 5)))
    assert disc.score(_one_step(slate=(0, 1, 2))) == 0.5


def test_disc_zero_params_pair_loss():
    disc = _zero(DiscriminatorModel(ModelDims(10, 4, 5)))
    batch = Batch.from_trajectories([_one_step(slate=(0, 1, 2)), _one_step(slate=(3, 4, 5), click=4)])
    loss, _ = disc.loss_and_grad(batch, np.array([1.0, 0.0]), weights=np.ones(2))
    assert abs(loss - 2 * math.log(2)) < 1e-12


def test_disc_scalar_recompute(rng):
    disc = DiscriminatorModel(ModelDims(8, 4, 5, init_scale=0.5), rng, temperature=0.1)
    traj = random_trajectories(8, 3, 1, rng, max_len=4)[0]
    P = disc.params
    E = P["disc.emb"]
    state = disc.zero_state(1)
    total = 0.0
    for step in traj.steps:
        pref = P["disc.Wd"] @ state.hidden[0] + P["disc.bd"]
        z = np.array([E[i] @ pref for i in step.slate]) / 0.1
        a = np.exp(z - z.max())
        a /= a.sum()
        ehat = sum(ai * E[i] for ai, i in zip(a, step.slate))
        total += (ehat @ E[step.click]) * (P["disc.wp"][0] * step.reward + P["disc.bp"][0])
        state = disc.advance(state, [step.click])
    expect = 1 / (1 + math.exp(-total / len(traj)))
    assert abs(disc.score(traj) - expect) < 1e-10


def test_disc_gradient_fd(rng):
    disc = DiscriminatorModel(ModelDims(12, 5, 6, layers=2, init_scale=0.5), rng, temperature=0.5)
    batch = Batch.from_trajectories(random_trajectories(12, 4, 6, rng))
    y = np.array([1, 0, 1, 0, 1, 0], float)
    _, tape = disc.loss_and_grad(batch, y)
    err = directional_fd_error(lambda: disc.loss_and_grad(batch, y)[0], disc.params, tape, rng)
    assert err < 1e-5


def test_disc_temperature_validation():
    with pytest.raises(ValueError):
        DiscriminatorModel(ModelDims(4), temperature=0.0)


def test_disc_loss_decreases_on_separable_batch(rng):
    real = [Trajectory([SessionStep((0, 1), 0, 1.0)] * 3) for _ in range(8)]
    fake = [Trajectory([SessionStep((2, 3), 3, 0.0)] * 3, "generated") for _ in range(8)]
    batch = Batch.from_trajectories(real + fake)
    y = np.r_[np.ones(8), np.zeros(8)]
    disc = DiscriminatorModel(ModelDims(4, 4, 4), rng)
    opt = Adam(disc.params, lr=1e-2)
    first = disc.loss_and_grad(batch, y)[0]
    for _ in range(100):
        _, tape = disc.loss_and_grad(batch, y)
        opt.step(disc.params, tape)
    last = disc.loss_and_grad(batch, y)[0]
    assert last < 0.5 * first
    s = disc.score_batch(batch)
    assert np.all(s[:8] > 0.5) and np.all(s[8:] < 0.5)


def test_model_copy_is_independent(rng):
    user = UserModel(ModelDims(5, 3, 3), rng)
    clone = user.copy()
    clone.params["user.bc"][0] = 5.0
    assert user.params["user.bc"][0] == 0.0


def test_batch_step_weights_validation():
    batch = Batch.from_trajectories([_one_step(), Trajectory([SessionStep((0, 1), 1, 1.0)] * 2)])
    w = batch.step_weights([[0.5], [0.2, 0.3]])
    assert w.tolist() == [[0.5, 0.0], [0.2, 0.3]]
    with pytest.raises(ValueError):
        batch.step_weights([[0.5, 0.1], [0.2, 0.3]])
    with pytest.raises(ValueError):
        Batch.from_trajectories([])
