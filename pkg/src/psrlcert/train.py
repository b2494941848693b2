"""Training for partially-supervised policies.

The pipeline has three phases:

1. :func:`train_q_ddqn` learns Q on the *true* state features with double DQN.
2. :func:`train_g_supervised` regresses the observation model ``g`` onto the
   true features along rollouts of the learned policy.
3. :func:`adv_train` fine-tunes with one of the robust variants
   (``at``, ``radial``, ``psrl_at``, ``psrl_hybrid``). Each variant mixes its
   nominal loss and adversarial loss with weights ``1 - kappa`` and ``kappa``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import env
from .bounds import BoxBounds, ibp_backward, ibp_forward, perturbation_box
from .nn import (AdamState, GradientSet, MlpParams, TrainingFault, backward, forward, forward_trace,
                 init_mlp, optimize_step)
from .policy import PsrlPolicy

log = logging.getLogger(__name__)

VARIANTS = ("vanilla", "at", "radial", "psrl_at", "psrl_hybrid")


@dataclass(frozen=True)
class TrainConfig:
    buffer_size: int = 10_000
    batch: int = 32
    discount: float = 0.8
    lr: float = 1e-3
    q_hidden: tuple[int, ...] = (64, 64)
    g_hidden: tuple[int, ...] = (128, 64)
    # double DQN on true features
    dqn_steps: int = 20_000
    learning_starts: int = 500
    explore_start: float = 1.0
    explore_end: float = 0.05
    explore_fraction: float = 0.5
    target_sync: int = 50
    # supervised g
    g_steps: int = 20_000
    g_random_start: float = 1.0
    g_random_end: float = 0.1
    # adversarial fine-tuning
    adv_steps: int = 5000
    target_eps: float = 3 / 255
    ramp_fraction: float = 25_000 / 40_000
    kappa: float = 0.5
    adv_explore: float = 0.05
    variant: str = "vanilla"
    norm: str = "linf"
    sigma: float = 0.05
    seed: int = 0
    log_every: int = 1000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.norm not in ("linf", "l2"):
            raise ValueError("norm must be 'linf' or 'l2'")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")

    @property
    def ramp_steps(self) -> int:
        return max(int(round(self.ramp_fraction * self.adv_steps)), 1)


def ramp_eps(cfg: TrainConfig, t: int) -> float:
    return cfg.target_eps * min(1.0, t / cfg.ramp_steps)


def linear_schedule(start: float, end: float, duration: int, t: int) -> float:
    if duration <= 0:
        return end
    return start + (end - start) * min(1.0, t / duration)


class ReplayBuffer:
    """Fixed-size ring buffer of named numpy columns."""

    def __init__(self, size: int, **shapes):
        self.size = size
        self.cols = {k: np.zeros((size,) + tuple(s)) for k, s in shapes.items()}
        self.n = 0
        self.head = 0

    def push(self, **row):
        for k, v in row.items():
            self.cols[k][self.head] = v
        self.head = (self.head + 1) % self.size
        self.n = min(self.n + 1, self.size)

    def __len__(self):
        return self.n

    def sample(self, rng: np.random.Generator, batch: int) -> dict[str, np.ndarray]:
        idx = rng.integers(0, self.n, size=batch)
        return {k: v[idx] for k, v in self.cols.items()}


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    FIELDS = ("phase", "step", "td_loss", "adv_loss", "sup_loss", "eps", "eval_reward")

    def add(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return "%.10g" % v
            return str(v)

        lines = [",".join(self.FIELDS)]
        for r in self.rows:
            lines.append(",".join(fmt(r.get(k)) for k in self.FIELDS))
        return "\n".join(lines) + "\n"


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise TrainingFault("non-finite loss")


def greedy_rollout_reward(choose, preset: env.ScenarioPreset, seeds, horizon: int | None = None) -> np.ndarray:
    horizon = horizon or preset.horizon
    totals = []
    for seed in seeds:
        _, rewards = env.rollout(env.reset(preset, seed), choose, horizon)
        totals.append(sum(rewards))
    return np.array(totals)


# ---------------------------------------------------------------- losses ----

def td_loss(q: MlpParams, feats: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Mean squared TD error; returns ``(loss, GradientSet)`` incl. input grads."""
    trace = forward_trace(q, feats)
    pred = trace[-1][np.arange(len(actions)), actions]
    err = pred - targets
    loss = float(np.mean(err ** 2))
    up = np.zeros_like(trace[-1])
    up[np.arange(len(actions)), actions] = 2.0 * err / len(actions)
    return loss, backward(q, feats, up, trace)


def double_q_targets(q: MlpParams, q_target: MlpParams, next_feats: np.ndarray, rewards: np.ndarray,
                     done: np.ndarray, discount: float) -> np.ndarray:
    """``r + discount * Q_target(s', argmax_a Q(s', a))`` (zero future value when done)."""
    best = np.argmax(forward(q, next_feats), axis=1)
    future = forward(q_target, next_feats)[np.arange(len(best)), best]
    return rewards + discount * (1.0 - done) * future


def composite_td_loss(g: MlpParams, q: MlpParams, obs, actions, targets):
    """TD loss of ``q(g(o))``; returns ``(loss, grad_g, grad_q)``."""
    g_trace = forward_trace(g, obs)
    loss, gq = td_loss(q, g_trace[-1], actions, targets)
    gg = backward(g, obs, gq.inputs, g_trace)
    return loss, gg, gq


def supervised_loss(g: MlpParams, obs, feats):
    """Mean over the batch of ``||g(o) - s||^2``."""
    trace = forward_trace(g, obs)
    err = trace[-1] - feats
    loss = float(np.mean(np.sum(err ** 2, axis=1)))
    return loss, backward(g, obs, 2.0 * err / len(obs), trace)


def bound_supervised_loss(g: MlpParams, box: BoxBounds, feats):
    """Mean of ``||g_lb - s||^2 + ||g_ub - s||^2`` with IBP bounds of ``g`` on ``box``."""
    out, tape = ibp_forward(g, box)
    el, eu = out.lower - feats, out.upper - feats
    loss = float(np.mean(np.sum(el ** 2 + eu ** 2, axis=1)))
    n = len(feats)
    grads, _, _ = ibp_backward(g, tape, 2.0 * el / n, 2.0 * eu / n)
    return loss, grads


def _hinge_grads(lower: np.ndarray, upper: np.ndarray, nominal: np.ndarray):
    """Hinge ``sum_{a != a*} max(0, ub_a - lb_{a*})`` averaged over the batch."""
    n, _ = lower.shape
    rows = np.arange(n)
    margin = upper - lower[rows, nominal][:, None]
    margin[rows, nominal] = -np.inf
    active = margin > 0
    loss = float(np.sum(np.where(active, margin, 0.0)) / n)
    d_upper = active / n
    d_lower = np.zeros_like(lower)
    d_lower[rows, nominal] = -active.sum(axis=1) / n
    return loss, d_lower, d_upper


def radial_composite_loss(g: MlpParams, q: MlpParams, box: BoxBounds, nominal: np.ndarray):
    """Hinge over IBP bounds of the full composite; returns ``(loss, grad_g, grad_q)``."""
    feat_box, g_tape = ibp_forward(g, box)
    q_box, q_tape = ibp_forward(q, feat_box)
    loss, dl, du = _hinge_grads(q_box.lower, q_box.upper, nominal)
    gq, dfl, dfu = ibp_backward(q, q_tape, dl, du)
    gg, _, _ = ibp_backward(g, g_tape, dfl, dfu)
    return loss, gg, gq


def radial_q_loss(q: MlpParams, feat_box: BoxBounds, nominal: np.ndarray):
    """The same hinge for ``q`` alone, with the feature box held constant."""
    q_box, q_tape = ibp_forward(q, feat_box)
    loss, dl, du = _hinge_grads(q_box.lower, q_box.upper, nominal)
    gq, _, _ = ibp_backward(q, q_tape, dl, du)
    return loss, gq


def fgsm_random_start(g: MlpParams, q: MlpParams, obs: np.ndarray, eps: float,
                      rng: np.random.Generator) -> np.ndarray:
    """One signed-gradient step from a random start, descending ``sum_a softmax(Q(o))_a Q(o+d, a)``."""
    if eps == 0:
        return obs.copy()
    q_clean = forward(q, forward(g, obs))
    z = np.exp(q_clean - q_clean.max(axis=1, keepdims=True))
    weights = z / z.sum(axis=1, keepdims=True)
    delta = rng.uniform(-eps, eps, size=obs.shape)
    start = np.clip(obs + delta, 0.0, 1.0)
    grad = objective_input_grad(g, q, start, weights)
    delta = np.clip(start - obs - eps * np.sign(grad), -eps, eps)
    return np.clip(obs + delta, 0.0, 1.0)


def objective_input_grad(g: MlpParams, q: MlpParams, obs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``obs`` of ``sum_a weights_a * Q(g(obs), a)``."""
    g_trace = forward_trace(g, obs)
    gq = backward(q, g_trace[-1], weights)
    return backward(g, obs, gq.inputs, g_trace).inputs


# -------------------------------------------------------------- training ----

def _episode_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 31 - 1))


def train_q_ddqn(preset: env.ScenarioPreset | str, cfg: TrainConfig, log_: TrainLog | None = None) -> MlpParams:
    """Double DQN on true state features."""
    preset = env.get_preset(preset) if isinstance(preset, str) else preset
    rng = np.random.default_rng([cfg.seed, 1])
    dim = preset.feature_dim
    q = init_mlp([dim, *cfg.q_hidden, env.N_ACTIONS], rng)
    q_target = q.copy()
    opt = AdamState(lr=cfg.lr)
    buf = ReplayBuffer(cfg.buffer_size, f=(dim,), a=(), r=(), nf=(dim,), d=())
    s = env.reset(preset, _episode_seed(rng))
    updates = 0
    losses = []
    explore_steps = int(cfg.explore_fraction * cfg.dqn_steps)
    for t in range(cfg.dqn_steps):
        f = env.state_features(s)
        if rng.random() < linear_schedule(cfg.explore_start, cfg.explore_end, explore_steps, t):
            a = int(rng.integers(env.N_ACTIONS))
        else:
            a = int(np.argmax(forward(q, f)))
        out = env.step(s, a)
        buf.push(f=f, a=a, r=out.reward, nf=env.state_features(out.next), d=float(out.unsafe))
        s = out.next
        if out.unsafe or s.step_count >= preset.horizon:
            s = env.reset(preset, _episode_seed(rng))
        if t >= cfg.learning_starts:
            b = buf.sample(rng, cfg.batch)
            acts = b["a"].astype(int)
            y = double_q_targets(q, q_target, b["nf"], b["r"], b["d"], cfg.discount)
            loss, grads = td_loss(q, b["f"], acts, y)
            _check_finite(loss)
            q = optimize_step(q, grads, opt)
            losses.append(loss)
            updates += 1
            if updates % cfg.target_sync == 0:
                q_target = q.copy()
            if log_ is not None and updates % cfg.log_every == 0:
                log_.add(phase="dqn", step=t + 1, td_loss=float(np.mean(losses)))
                losses = []
    if log_ is not None:
        r = greedy_rollout_reward(lambda st: int(np.argmax(forward(q, env.state_features(st)))),
                                  preset, range(10_000, 10_010))
        log_.add(phase="dqn", step=cfg.dqn_steps, eval_reward=float(r.mean()))
    return q


def _noisy(obs: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return obs + sigma * rng.standard_normal(obs.shape)


def supervised_frames(o: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Frames stored for one visited state: the clean one, plus a noisy copy in l2 mode."""
    if cfg.norm == "l2":
        return [o, _noisy(o, cfg.sigma, rng)]
    return [o]


def train_g_supervised(q: MlpParams, preset: env.ScenarioPreset | str, cfg: TrainConfig,
                       log_: TrainLog | None = None, checkpoints: list | None = None) -> MlpParams:
    """Regress ``g(observe(s))`` onto ``state_features(s)`` along randomised rollouts of ``q``.

    With ``norm == 'l2'`` every visited frame is stored twice, clean and with
    Gaussian noise of scale ``sigma``. If ``checkpoints`` is a list, the
    held-out MSE is appended to it every ``log_every`` updates.
    """
    preset = env.get_preset(preset) if isinstance(preset, str) else preset
    rng = np.random.default_rng([cfg.seed, 2])
    g = init_mlp([preset.obs_dim, *cfg.g_hidden, preset.feature_dim], rng)
    opt = AdamState(lr=cfg.lr)
    buf = ReplayBuffer(cfg.buffer_size, o=(preset.obs_dim,), f=(preset.feature_dim,))
    held_out = _held_out_set(q, preset) if (checkpoints is not None or log_ is not None) else None
    s = env.reset(preset, _episode_seed(rng))
    losses = []
    for t in range(cfg.g_steps):
        f = env.state_features(s)
        o = env.observe(s)
        for obs in supervised_frames(o, cfg, rng):
            buf.push(o=obs, f=f)
        if rng.random() < linear_schedule(cfg.g_random_start, cfg.g_random_end, cfg.g_steps, t):
            a = int(rng.integers(env.N_ACTIONS))
        else:
            a = int(np.argmax(forward(q, f)))
        out = env.step(s, a)
        s = out.next
        if out.unsafe or s.step_count >= preset.horizon:
            s = env.reset(preset, _episode_seed(rng))
        if len(buf) >= cfg.batch:
            b = buf.sample(rng, cfg.batch)
            loss, grads = supervised_loss(g, b["o"], b["f"])
            _check_finite(loss)
            g = optimize_step(g, grads, opt)
            losses.append(loss)
            if (t + 1) % cfg.log_every == 0:
                mse = _held_out_mse(g, held_out) if held_out is not None else None
                if checkpoints is not None:
                    checkpoints.append(mse)
                if log_ is not None:
                    log_.add(phase="g", step=t + 1, sup_loss=float(np.mean(losses)), eval_reward=None)
                losses = []
    return g


def _held_out_set(q: MlpParams, preset: env.ScenarioPreset, episodes: int = 5):
    obs, feats = [], []
    for seed in range(20_000, 20_000 + episodes):
        states, _ = env.rollout(env.reset(preset, seed),
                                lambda st: int(np.argmax(forward(q, env.state_features(st)))),
                                preset.horizon)
        obs.extend(env.observe(st) for st in states)
        feats.extend(env.state_features(st) for st in states)
    return np.array(obs), np.array(feats)


def _held_out_mse(g: MlpParams, data) -> float:
    obs, feats = data
    return float(np.mean(np.sum((forward(g, obs) - feats) ** 2, axis=1)))


@dataclass
class AdvStepResult:
    g: MlpParams
    q: MlpParams
    td_loss: float
    adv_loss: float
    sup_loss: float
    optimizer_steps: int


@dataclass
class AdvState:
    """Optimizer state and target networks carried across adversarial updates."""

    g_opt: AdamState
    q_opt: AdamState
    g_target: MlpParams
    q_target: MlpParams


def variant_losses(variant: str, g: MlpParams, q: MlpParams, batch: dict, eps: float, kappa: float,
                   st: AdvState, cfg: TrainConfig, rng: np.random.Generator):
    """Loss terms and mixed gradients of one update for ``variant``.

    Returns a list of update stages; each stage is a dict with the combined
    gradients (``gg`` for g, ``gq`` for q, either may be None) and the loss
    terms that produced them.
    """
    obs = batch["o"]
    if cfg.norm == "l2":
        obs = _noisy(obs, cfg.sigma, rng)
    acts = batch["a"].astype(int)
    box = _input_box(obs, eps)
    nominal = np.argmax(forward(q, forward(g, obs)), axis=1)

    def composite_targets():
        nf_online = forward(g, batch["no"])
        best = np.argmax(forward(q, nf_online), axis=1)
        future = forward(st.q_target, forward(st.g_target, batch["no"]))[np.arange(len(best)), best]
        return batch["r"] + cfg.discount * (1.0 - batch["d"]) * future

    def mix(nom: GradientSet, adv: GradientSet) -> GradientSet:
        return nom.scaled(1.0 - kappa) + adv.scaled(kappa)

    stages = []
    if variant == "at":
        y = composite_targets()
        adv_obs = fgsm_random_start(g, q, obs, eps, rng)
        l_nom, gg_n, gq_n = composite_td_loss(g, q, obs, acts, y)
        l_adv, gg_a, gq_a = composite_td_loss(g, q, adv_obs, acts, y)
        stages.append(dict(gg=mix(gg_n, gg_a), gq=mix(gq_n, gq_a), td=l_nom, adv=l_adv, sup=0.0,
                           loss=(1 - kappa) * l_nom + kappa * l_adv))
    elif variant in ("radial", "psrl_hybrid"):
        y = composite_targets()
        l_nom, gg_n, gq_n = composite_td_loss(g, q, obs, acts, y)
        l_adv, gg_a, gq_a = radial_composite_loss(g, q, box, nominal)
        stages.append(dict(gg=mix(gg_n, gg_a), gq=mix(gq_n, gq_a), td=l_nom, adv=l_adv, sup=0.0,
                           loss=(1 - kappa) * l_nom + kappa * l_adv))
        if variant == "psrl_hybrid":
            stages.append(_psrl_g_stage(g, obs, box, batch["f"], kappa, mix))
    elif variant == "psrl_at":
        y = double_q_targets(q, st.q_target, batch["nf"], batch["r"], batch["d"], cfg.discount)
        l_nom, gq_n = td_loss(q, batch["f"], acts, y)
        feat_box = ibp_forward(g, box)[0]
        l_adv, gq_a = radial_q_loss(q, feat_box, nominal)
        g_stage = _psrl_g_stage(g, obs, box, batch["f"], kappa, mix)
        stages.append(dict(gg=g_stage["gg"], gq=mix(gq_n, gq_a), td=l_nom, adv=l_adv, sup=g_stage["sup"],
                           loss=(1 - kappa) * l_nom + kappa * l_adv + g_stage["loss"]))
    else:
        raise ValueError(f"no adversarial update for variant {variant!r}")
    return stages


def _psrl_g_stage(g, obs, box, feats, kappa, mix):
    l_sup, gs_n = supervised_loss(g, obs, feats)
    l_bnd, gs_a = bound_supervised_loss(g, box, feats)
    return dict(gg=mix(gs_n, gs_a), gq=None, td=0.0, adv=0.0,
                sup=(1 - kappa) * l_sup + kappa * l_bnd,
                loss=(1 - kappa) * l_sup + kappa * l_bnd)


def adv_update(variant: str, g: MlpParams, q: MlpParams, batch: dict, eps: float, st: AdvState,
               cfg: TrainConfig, rng: np.random.Generator) -> AdvStepResult:
    """One minibatch of adversarial fine-tuning; the hybrid variant takes two optimizer steps."""
    td = adv = sup = 0.0
    steps = 0
    if variant == "psrl_hybrid":
        first = variant_losses("radial", g, q, batch, eps, cfg.kappa, st, cfg, rng)[0]
        _check_finite(first["loss"])
        g = optimize_step(g, first["gg"], st.g_opt)
        q = optimize_step(q, first["gq"], st.q_opt)
        steps += 1
        obs = batch["o"] if cfg.norm == "linf" else _noisy(batch["o"], cfg.sigma, rng)
        second = _psrl_g_stage(g, obs, _input_box(obs, eps), batch["f"], cfg.kappa,
                               lambda n, a: n.scaled(1.0 - cfg.kappa) + a.scaled(cfg.kappa))
        _check_finite(second["loss"])
        g = optimize_step(g, second["gg"], st.g_opt)
        steps += 1
        td, adv, sup = first["td"], first["adv"], second["sup"]
    else:
        (stage,) = variant_losses(variant, g, q, batch, eps, cfg.kappa, st, cfg, rng)
        _check_finite(stage["loss"])
        if stage["gg"] is not None:
            g = optimize_step(g, stage["gg"], st.g_opt)
        if stage["gq"] is not None:
            q = optimize_step(q, stage["gq"], st.q_opt)
        steps += 1
        td, adv, sup = stage["td"], stage["adv"], stage["sup"]
    return AdvStepResult(g, q, td, adv, sup, steps)


def _input_box(obs, eps):
    return perturbation_box(obs, eps) if eps > 0 else BoxBounds(obs, obs)


def adv_train(g: MlpParams, q: MlpParams, preset: env.ScenarioPreset | str, cfg: TrainConfig,
              log_: TrainLog | None = None, counters: dict | None = None) -> tuple[MlpParams, MlpParams]:
    """Adversarial fine-tuning of a pretrained ``(g, q)`` pair for ``cfg.variant``."""
    preset = env.get_preset(preset) if isinstance(preset, str) else preset
    if cfg.variant == "vanilla":
        return g, q
    rng = np.random.default_rng([cfg.seed, 3, VARIANTS.index(cfg.variant)])
    st = AdvState(AdamState(lr=cfg.lr), AdamState(lr=cfg.lr), g.copy(), q.copy())
    dim, odim = preset.feature_dim, preset.obs_dim
    buf = ReplayBuffer(cfg.buffer_size, o=(odim,), f=(dim,), a=(), r=(), no=(odim,), nf=(dim,), d=())
    s = env.reset(preset, _episode_seed(rng))
    acc = {"td": [], "adv": [], "sup": []}
    updates = 0
    for t in range(cfg.adv_steps):
        o = env.observe(s)
        if rng.random() < cfg.adv_explore:
            a = int(rng.integers(env.N_ACTIONS))
        else:
            a = int(np.argmax(forward(q, forward(g, o))))
        out = env.step(s, a)
        buf.push(o=o, f=env.state_features(s), a=a, r=out.reward, no=env.observe(out.next),
                 nf=env.state_features(out.next), d=float(out.unsafe))
        s = out.next
        if out.unsafe or s.step_count >= preset.horizon:
            s = env.reset(preset, _episode_seed(rng))
        if len(buf) < max(cfg.batch, cfg.learning_starts // 5):
            continue
        batch = buf.sample(rng, cfg.batch)
        eps = ramp_eps(cfg, t)
        res = adv_update(cfg.variant, g, q, batch, eps, st, cfg, rng)
        g, q = res.g, res.q
        updates += 1
        if counters is not None:
            counters["optimizer_steps"] = counters.get("optimizer_steps", 0) + res.optimizer_steps
            counters["minibatches"] = counters.get("minibatches", 0) + 1
        acc["td"].append(res.td_loss)
        acc["adv"].append(res.adv_loss)
        acc["sup"].append(res.sup_loss)
        if updates % cfg.target_sync == 0:
            st.g_target, st.q_target = g.copy(), q.copy()
        if log_ is not None and updates % cfg.log_every == 0:
            log_.add(phase=f"adv_{cfg.variant}", step=t + 1, td_loss=float(np.mean(acc["td"])),
                     adv_loss=float(np.mean(acc["adv"])), sup_loss=float(np.mean(acc["sup"])), eps=eps)
            acc = {k: [] for k in acc}
    return g, q


def train_pipeline(preset: env.ScenarioPreset | str, cfg: TrainConfig,
                   pretrained: tuple[MlpParams, MlpParams] | None = None) -> tuple[PsrlPolicy, TrainLog]:
    """DDQN, then supervised g, then the configured adversarial variant.

    ``pretrained`` skips the first two phases, so several variants can share
    one nominal model.
    """
    preset = env.get_preset(preset) if isinstance(preset, str) else preset
    log_ = TrainLog()
    if pretrained is None:
        q = train_q_ddqn(preset, cfg, log_)
        g = train_g_supervised(q, preset, cfg, log_)
    else:
        g, q = pretrained
    g, q = adv_train(g, q, preset, cfg, log_)
    pol = PsrlPolicy(g, q)
    r = greedy_rollout_reward(lambda st: int(np.argmax(pol.q_values(env.observe(st)))),
                              preset, range(10_000, 10_010))
    log_.add(phase="final", step=0, eval_reward=float(r.mean()))
    return pol, log_


def with_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    return replace(cfg, variant=variant)
