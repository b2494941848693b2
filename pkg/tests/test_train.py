import numpy as np
import pytest
from dataclasses import replace

from conftest import central_difference, pretrained_pair, random_mlp
from psrlcert import env
from psrlcert.nn import AdamState, Layer, MlpParams, TrainingFault, dumps_params, forward, init_mlp, optimize_step
from psrlcert.train import (VARIANTS, AdvState, ReplayBuffer, TrainConfig, TrainLog, adv_train, adv_update,
                            bound_supervised_loss, composite_td_loss, double_q_targets, fgsm_random_start,
                            greedy_rollout_reward, radial_composite_loss, ramp_eps, supervised_frames,
                            supervised_loss, td_loss, train_g_supervised, train_pipeline, variant_losses)
from psrlcert.bounds import BoxBounds

OBS, FEAT, ACTIONS, BATCH = 6, 4, 3, 8


def tiny_config(**kw):
    base = dict(dqn_steps=300, learning_starts=50, g_steps=200, adv_steps=200, log_every=50,
                q_hidden=(16,), g_hidden=(16,), buffer_size=500)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def nets(rng):
    g = random_mlp(rng, [OBS, 10, FEAT])
    q = random_mlp(rng, [FEAT, 10, ACTIONS])
    return g, q


@pytest.fixture
def batch(rng):
    return dict(o=rng.uniform(0.2, 0.8, (BATCH, OBS)), f=rng.normal(size=(BATCH, FEAT)),
                a=rng.integers(ACTIONS, size=BATCH).astype(float), r=rng.normal(size=BATCH),
                no=rng.uniform(0.2, 0.8, (BATCH, OBS)), nf=rng.normal(size=(BATCH, FEAT)),
                d=(rng.random(BATCH) < 0.25).astype(float))


def adv_state(g, q, rng):
    return AdvState(AdamState(), AdamState(), random_mlp(rng, g.sizes), random_mlp(rng, q.sizes))


def assert_grads_equal(a, b):
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)


# ------------------------------------------------------------ config ----

def test_defaults_match_the_reference_setup():
    cfg = TrainConfig()
    assert (cfg.buffer_size, cfg.batch, cfg.discount, cfg.lr) == (10_000, 32, 0.8, 1e-3)
    assert cfg.target_eps == pytest.approx(3 / 255)
    assert cfg.ramp_fraction == pytest.approx(25_000 / 40_000)


@pytest.mark.parametrize("bad", [dict(variant="pgd"), dict(norm="l1"), dict(kappa=1.5), dict(kappa=-0.1)])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_ramp_is_linear_then_flat():
    cfg = TrainConfig(adv_steps=40_000)
    assert cfg.ramp_steps == 25_000
    target = 3 / 255
    for t, want in [(0, 0.0), (12_500, target / 2), (25_000, target), (30_000, target), (39_999, target)]:
        assert ramp_eps(cfg, t) == pytest.approx(want, abs=1e-15)
    values = [ramp_eps(cfg, t) for t in range(0, 40_000, 97)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_replay_buffer_overwrites_oldest():
    buf = ReplayBuffer(3, x=())
    for v in range(5):
        buf.push(x=v)
    assert len(buf) == 3
    assert sorted(buf.cols["x"]) == [2, 3, 4]
    sample = buf.sample(np.random.default_rng(0), 100)["x"]
    assert set(sample) <= {2, 3, 4}


def test_train_log_csv_columns():
    log_ = TrainLog()
    log_.add(phase="dqn", step=10, td_loss=0.125)
    log_.add(phase="final", step=0, eval_reward=3.0)
    lines = log_.to_csv().splitlines()
    assert lines[0] == "phase,step,td_loss,adv_loss,sup_loss,eps,eval_reward"
    assert lines[1] == "dqn,10,0.125,,,,"
    assert lines[2] == "final,0,,,,,3"


# ---------------------------------------------------------- targets ----

def linear(weights, biases=None):
    w = np.asarray(weights, dtype=float)
    return MlpParams([Layer(w, np.zeros(len(w)) if biases is None else np.asarray(biases, float))])


def test_double_q_uses_online_argmax_and_target_value():
    online = linear([[1.0, 0.0], [0.0, 0.0]])      # prefers action 0 at feature (1, 0)
    target = linear([[0.2, 0.0], [5.0, 0.0]])      # would pick action 1 (value 5)
    nf = np.array([[1.0, 0.0], [1.0, 0.0]])
    y = double_q_targets(online, target, nf, np.array([1.0, 1.0]), np.array([0.0, 1.0]), 0.8)
    np.testing.assert_allclose(y, [1.0 + 0.8 * 0.2, 1.0])


def test_one_step_bellman_target():
    q = linear([[0.5, -1.0], [2.0, 0.25]], [0.1, -0.3])
    nf = np.array([[0.4, 1.2]])
    values = q.layers[0].weights @ nf[0] + q.layers[0].biases
    y = double_q_targets(q, q, nf, np.array([0.7]), np.array([0.0]), 0.8)
    assert y[0] == pytest.approx(0.7 + 0.8 * values.max(), abs=1e-14)


def test_tabular_mdp_converges_to_closed_form():
    # state 0: action 0 -> state 1 with reward 1, action 1 -> state 0 with reward 0
    # state 1: both actions stay with reward 0.5
    gamma = 0.8
    v1 = 0.5 / (1 - gamma)
    q00 = 1 + gamma * v1
    exact = np.array([[q00, gamma * q00], [v1, v1]])
    eye = np.eye(2)
    f = np.array([eye[0], eye[0], eye[1], eye[1]])
    acts = np.array([0, 1, 0, 1])
    nf = np.array([eye[1], eye[0], eye[1], eye[1]])
    r = np.array([1.0, 0.0, 0.5, 0.5])
    d = np.zeros(4)
    q = init_mlp([2, 2], np.random.default_rng(0))
    q_target, opt = q.copy(), AdamState(lr=0.05)
    for k in range(4000):
        y = double_q_targets(q, q_target, nf, r, d, gamma)
        _, grads = td_loss(q, f, acts, y)
        q = optimize_step(q, grads, opt)
        if k % 20 == 0:
            q_target = q.copy()
    np.testing.assert_allclose(forward(q, eye), exact, atol=1e-2)


def test_td_loss_gradient_matches_finite_differences(rng, nets):
    _, q = nets
    f = rng.normal(size=(5, FEAT))
    acts = rng.integers(ACTIONS, size=5)
    y = rng.normal(size=5)
    _, grads = td_loss(q, f, acts, y)
    num = central_difference(lambda x: td_loss(q, x, acts, y)[0], f)
    np.testing.assert_allclose(grads.inputs, num, atol=1e-6)


# ----------------------------------------------------------- mixing ----

def nominal_gradients(variant, g, q, batch, st, cfg):
    """The update each variant reduces to when the adversarial weight is zero."""
    acts = batch["a"].astype(int)
    if variant == "psrl_at":
        y = double_q_targets(q, st.q_target, batch["nf"], batch["r"], batch["d"], cfg.discount)
        _, gq = td_loss(q, batch["f"], acts, y)
        _, gg = supervised_loss(g, batch["o"], batch["f"])
        return [(gg, gq)]
    best = np.argmax(forward(q, forward(g, batch["no"])), axis=1)
    future = forward(st.q_target, forward(st.g_target, batch["no"]))[np.arange(BATCH), best]
    y = batch["r"] + cfg.discount * (1 - batch["d"]) * future
    _, gg, gq = composite_td_loss(g, q, batch["o"], acts, y)
    stages = [(gg, gq)]
    if variant == "psrl_hybrid":
        stages.append((supervised_loss(g, batch["o"], batch["f"])[1], None))
    return stages


@pytest.mark.parametrize("variant", VARIANTS[1:])
def test_zero_kappa_is_the_nominal_update(variant, rng, nets, batch):
    g, q = nets
    st = adv_state(g, q, rng)
    cfg = TrainConfig(variant=variant)
    stages = variant_losses(variant, g, q, batch, 0.05, 0.0, st, cfg, np.random.default_rng(1))
    want = nominal_gradients(variant, g, q, batch, st, cfg)
    assert len(stages) == len(want)
    for stage, (gg, gq) in zip(stages, want):
        assert_grads_equal(stage["gg"], gg)
        if gq is None:
            assert stage["gq"] is None
        else:
            assert_grads_equal(stage["gq"], gq)


@pytest.mark.parametrize("variant", VARIANTS[1:])
def test_gradients_are_affine_in_kappa(variant, rng, nets, batch):
    g, q = nets
    st = adv_state(g, q, rng)
    cfg = TrainConfig(variant=variant)

    def run(kappa):
        return variant_losses(variant, g, q, batch, 0.05, kappa, st, cfg, np.random.default_rng(7))

    s0, s1, sk = run(0.0), run(1.0), run(0.3)
    for a, b, c in zip(s0, s1, sk):
        assert c["loss"] == pytest.approx(0.7 * a["loss"] + 0.3 * b["loss"], rel=1e-12)
        for key in ("gg", "gq"):
            if c[key] is None:
                continue
            for x, y, z in zip(a[key].arrays(), b[key].arrays(), c[key].arrays()):
                np.testing.assert_allclose(z, 0.7 * x + 0.3 * y, rtol=1e-12, atol=1e-15)


def test_radial_term_vanishes_at_zero_eps(rng, nets):
    g, q = nets
    obs = rng.uniform(0, 1, (20, OBS))
    values = forward(q, forward(g, obs))
    top2 = np.sort(values, axis=1)[:, -2:]
    assert np.all(top2[:, 1] > top2[:, 0])  # strict argmax
    loss, gg, gq = radial_composite_loss(g, q, BoxBounds(obs, obs), np.argmax(values, axis=1))
    assert loss == 0.0
    assert all(np.all(a == 0) for a in gg.arrays() + gq.arrays())


def test_radial_term_positive_for_wide_box(rng, nets):
    g, q = nets
    obs = rng.uniform(0, 1, (20, OBS))
    nominal = np.argmax(forward(q, forward(g, obs)), axis=1)
    loss, _, _ = radial_composite_loss(g, q, BoxBounds(obs - 1, obs + 1), nominal)
    assert loss > 0


def test_bound_loss_is_twice_supervised_loss_on_a_point(rng, nets, batch):
    g, _ = nets
    l_sup, gs = supervised_loss(g, batch["o"], batch["f"])
    l_bnd, gb = bound_supervised_loss(g, BoxBounds(batch["o"], batch["o"]), batch["f"])
    assert l_bnd == pytest.approx(2 * l_sup, rel=1e-12)
    for a, b in zip(gs.arrays(), gb.arrays()):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-10, atol=1e-14)


def test_fgsm_steps_eps_sign_from_the_random_start(rng, nets):
    g, q = nets
    obs = rng.uniform(0.3, 0.7, (4, OBS))
    eps = 0.05
    out = fgsm_random_start(g, q, obs, eps, np.random.default_rng(3))

    start = np.clip(obs + np.random.default_rng(3).uniform(-eps, eps, obs.shape), 0, 1)
    expected = np.empty_like(obs)
    for i in range(len(obs)):
        clean = forward(q, forward(g, obs[i]))
        w = np.exp(clean - clean.max())
        w /= w.sum()
        grad = central_difference(lambda x: float(w @ forward(q, forward(g, x))), start[i])
        assert np.all(np.abs(grad) > 1e-6)
        expected[i] = np.clip(obs[i] + np.clip(start[i] - obs[i] - eps * np.sign(grad), -eps, eps), 0, 1)
    np.testing.assert_allclose(out, expected, atol=1e-15)
    assert np.max(np.abs(out - obs)) <= eps + 1e-15


def test_fgsm_at_zero_eps_is_identity(rng, nets):
    g, q = nets
    obs = rng.uniform(0, 1, (3, OBS))
    np.testing.assert_array_equal(fgsm_random_start(g, q, obs, 0.0, rng), obs)


def test_non_finite_loss_raises_training_fault(rng, nets, batch):
    g, q = nets
    batch["r"][0] = np.nan
    with pytest.raises(TrainingFault):
        adv_update("psrl_at", g, q, batch, 0.01, adv_state(g, q, rng), TrainConfig(variant="psrl_at"), rng)


# ----------------------------------------------------------- loops ----

@pytest.mark.parametrize("variant", VARIANTS[1:])
def test_optimizer_steps_per_minibatch(variant):
    cfg = tiny_config(variant=variant, adv_steps=120)
    rng = np.random.default_rng(0)
    pre = env.get_preset("highway")
    g = init_mlp([pre.obs_dim, 16, pre.feature_dim], rng)
    q = init_mlp([pre.feature_dim, 16, env.N_ACTIONS], rng)
    counters = {}
    adv_train(g, q, pre, cfg, counters=counters)
    assert counters["minibatches"] > 0
    per = 2 if variant == "psrl_hybrid" else 1
    assert counters["optimizer_steps"] == per * counters["minibatches"]


def test_vanilla_adv_phase_is_a_no_op(rng):
    pre = env.get_preset("highway")
    g = init_mlp([pre.obs_dim, 8, pre.feature_dim], rng)
    q = init_mlp([pre.feature_dim, 8, env.N_ACTIONS], rng)
    assert adv_train(g, q, pre, tiny_config()) == (g, q)


def test_l2_stores_clean_and_noisy_frames(rng):
    o = rng.uniform(0, 1, 5000)
    cfg = TrainConfig(norm="l2", sigma=0.05)
    frames = supervised_frames(o, cfg, rng)
    assert len(frames) == 2
    np.testing.assert_array_equal(frames[0], o)
    noise = frames[1] - o
    assert abs(noise.std() - 0.05) < 0.003
    assert abs(noise.mean()) < 0.003
    assert len(supervised_frames(o, TrainConfig(), rng)) == 1


def test_pipeline_is_bit_reproducible():
    cfg = tiny_config(variant="psrl_hybrid")
    (p1, log1), (p2, log2) = train_pipeline("highway", cfg), train_pipeline("highway", cfg)
    assert dumps_params(p1.g) == dumps_params(p2.g)
    assert dumps_params(p1.q) == dumps_params(p2.q)
    assert log1.to_csv() == log2.to_csv()
    p3, _ = train_pipeline("highway", replace(cfg, seed=1))
    assert dumps_params(p3.q) != dumps_params(p1.q)


def test_pipeline_log_has_every_phase():
    _, log_ = train_pipeline("highway", tiny_config(variant="radial"))
    phases = {r["phase"] for r in log_.rows}
    assert phases == {"dqn", "g", "adv_radial", "final"}


def test_g_learns_constant_default_features_without_traffic():
    empty = env.register(replace(env.get_preset("highway"), name="highway-empty", other_count=0))
    try:
        q = init_mlp([empty.feature_dim, 8, env.N_ACTIONS], np.random.default_rng(0))
        g = train_g_supervised(q, empty, TrainConfig(g_steps=3000, g_hidden=(32,)))
        for seed in range(5):
            s = env.reset(empty, seed)
            pred = forward(g, env.observe(s))
            np.testing.assert_allclose(pred[2:], empty.default_feature, atol=0.05)
    finally:
        del env.PRESETS["highway-empty"]


def test_held_out_error_decreases():
    q = init_mlp([8, 16, env.N_ACTIONS], np.random.default_rng(0))
    checkpoints = []
    train_g_supervised(q, "highway", TrainConfig(g_steps=6000, log_every=1000), checkpoints=checkpoints)
    assert len(checkpoints) == 6
    smooth = np.convolve(checkpoints, np.ones(2) / 2, mode="valid")
    assert np.all(np.diff(smooth) < 0), checkpoints
    assert checkpoints[-1] < 0.5 * checkpoints[0]


def test_ddqn_beats_random_policy():
    _, q = pretrained_pair(0)
    pre = env.get_preset("highway")
    seeds = range(1000, 1020)
    learned = greedy_rollout_reward(lambda s: int(np.argmax(forward(q, env.state_features(s)))), pre, seeds)
    rng = np.random.default_rng(0)
    random = greedy_rollout_reward(lambda s: int(rng.integers(env.N_ACTIONS)), pre, seeds)
    assert learned.mean() >= 3 * random.mean()
