"""Attacks and metrics for trained policies.

PGD here is a falsifier for certificates: at a certified budget it must
never drive the true state into an unsafe one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import env
from .bounds import composite_feature_bounds
from .nn import backward, forward, forward_trace
from .policy import PsrlPolicy, argmax_lowest
from .smoothing import SmoothedPredictor, SmoothingConfig


@dataclass(frozen=True)
class AttackConfig:
    eps: float
    norm: str = "linf"
    pgd_steps: int = 20
    step_size: float | None = None  # defaults to eps / 8
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.norm not in ("linf", "l2"):
            raise ValueError("norm must be 'linf' or 'l2'")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.eps / 8


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def _objective_and_grad(p: PsrlPolicy, x: np.ndarray, weights: np.ndarray):
    g_trace = forward_trace(p.g, x)
    q_trace = forward_trace(p.q, g_trace[-1])
    value = float(weights @ q_trace[-1])
    gq = backward(p.q, g_trace[-1], weights, q_trace)
    grad = backward(p.g, x, gq.inputs, g_trace).inputs
    return value, grad


def _project(delta: np.ndarray, o: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.norm == "linf":
        delta = np.clip(delta, -cfg.eps, cfg.eps)
    else:
        n = np.linalg.norm(delta)
        if n > cfg.eps:
            delta = delta * (cfg.eps / n)
    # keep the perturbed frame a valid image; shrinking toward o stays inside the ball
    return np.clip(o + delta, 0.0, 1.0) - o


def _random_start(rng: np.random.Generator, o: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.norm == "linf":
        d = rng.uniform(-cfg.eps, cfg.eps, size=o.shape)
    else:
        d = rng.standard_normal(o.shape)
        d *= cfg.eps * rng.random() ** (1.0 / o.size) / max(np.linalg.norm(d), 1e-300)
    return _project(d, o, cfg)


def pgd_attack(p: PsrlPolicy, o: np.ndarray, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Projected gradient descent on ``sum_a softmax(Q(o))_a Q(o + d, a)``.

    The first restart starts at ``o``, the others at random points of the
    ball. Among the final iterates, one that changes the action is preferred,
    then the lowest objective.
    """
    o = np.asarray(o, dtype=np.float64)
    if cfg.eps == 0:
        return o.copy()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    clean_q = p.q_values(o)
    weights = _softmax(clean_q)
    nominal = argmax_lowest(clean_q)
    best, best_key = o.copy(), (1, math.inf)
    for r in range(cfg.restarts):
        delta = np.zeros_like(o) if r == 0 else _random_start(rng, o, cfg)
        for _ in range(cfg.pgd_steps):
            _, grad = _objective_and_grad(p, o + delta, weights)
            if cfg.norm == "linf":
                delta = delta - cfg.alpha * np.sign(grad)
            else:
                n = np.linalg.norm(grad)
                if n == 0:
                    break
                delta = delta - cfg.alpha * grad / n
            delta = _project(delta, o, cfg)
        x = o + delta
        value, _ = _objective_and_grad(p, x, weights)
        key = (int(argmax_lowest(p.q_values(x)) == nominal), value)
        if key < best_key:
            best, best_key = x, key
    return best


class SmoothedPolicy:
    """Acts on the median of ``g`` under Gaussian input noise (the policy certified for l2)."""

    def __init__(self, p: PsrlPolicy, cfg: SmoothingConfig = SmoothingConfig()):
        self.policy = p
        self.cfg = cfg

    def features(self, o: np.ndarray) -> np.ndarray:
        return SmoothedPredictor(self.policy.g, o, self.cfg).median

    def act(self, o: np.ndarray) -> int:
        return argmax_lowest(forward(self.policy.q, self.features(o)))


@dataclass
class AttackedRollout:
    unsafe_reached: bool
    states: list
    actions: list[int]
    rewards: list[float]


def attacked_rollout(p: PsrlPolicy, preset: env.ScenarioPreset | str | None, seed: int, cfg: AttackConfig,
                     steps: int | None = None, s0=None, smoothing: SmoothingConfig | None = None,
                     model=env) -> AttackedRollout:
    """Roll out with every observation attacked by PGD.

    ``steps`` transitions are taken (default: the preset's evaluation
    horizon). A certificate over ``T`` states covers ``T - 1`` transitions.
    In l2 mode the actions come from the smoothed policy, the one the l2
    certificate is about; PGD still follows the gradient of the raw composite.
    Any other ``model`` (with ``observe``, ``is_unsafe`` and ``successors``)
    needs ``s0`` and ``steps``; it follows the first successor and earns no reward.
    """
    if model is env:
        preset = env.get_preset(preset) if isinstance(preset, str) else preset
        steps = preset.horizon if steps is None else steps
        s = env.reset(preset, seed) if s0 is None else s0
    else:
        if s0 is None or steps is None:
            raise ValueError("a custom model needs s0 and steps")
        s = s0
    smoothed = SmoothedPolicy(p, smoothing or SmoothingConfig()) if cfg.norm == "l2" else None
    states, actions, rewards = [s], [], []
    unsafe = model.is_unsafe(s)
    for t in range(steps):
        if unsafe:
            break
        rng = np.random.default_rng([cfg.seed, seed, t])
        x = pgd_attack(p, model.observe(s), cfg, rng)
        a = smoothed.act(x) if smoothed is not None else argmax_lowest(p.q_values(x))
        if model is env:
            out = env.step(s, a)
            s, r, unsafe = out.next, out.reward, out.unsafe
        else:
            s = model.successors(s, a)[0]
            r, unsafe = 0.0, model.is_unsafe(s)
        states.append(s)
        actions.append(a)
        rewards.append(r)
    return AttackedRollout(unsafe, states, actions, rewards)


@dataclass
class EvalReport:
    mean_reward: float
    sem_reward: float
    false_action_rate: float
    avg_err: float
    avg_err_ub: float
    avg_err_lb: float
    episodes: int
    attack_success_rate: float | None = None
    rewards: list[float] = field(default_factory=list, repr=False)

    CSV_FIELDS = ("episodes", "mean_reward", "sem_reward", "false_action_rate", "avg_err", "avg_err_ub",
                  "avg_err_lb", "attack_success_rate")

    def csv_row(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            return str(v) if isinstance(v, int) else "%.10g" % v
        return ",".join(fmt(getattr(self, k)) for k in self.CSV_FIELDS)

    def summary(self) -> str:
        lines = ["eval v1"] + [f"{k} = {v}" for k, v in zip(self.CSV_FIELDS, self.csv_row().split(","))]
        return "\n".join(lines) + "\n"


def sem(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(v.std(ddof=1) / math.sqrt(v.size))


def error_bounds(lower: np.ndarray, upper: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Least and greatest mean squared error of any point in ``[lower, upper]`` against ``target``."""
    far = np.maximum((lower - target) ** 2, (upper - target) ** 2)
    near = np.where((target >= lower) & (target <= upper), 0.0,
                    np.minimum((lower - target) ** 2, (upper - target) ** 2))
    return float(near.mean()), float(far.mean())


def evaluate(p: PsrlPolicy, preset: env.ScenarioPreset | str, seeds, eps_for_mse: float = 1 / 255,
             horizon: int | None = None, features=env.state_features) -> EvalReport:
    """Nominal-rollout metrics over ``seeds``.

    ``avg_err`` is the feature MSE of ``g`` along the nominal path;
    ``avg_err_lb``/``avg_err_ub`` bound that MSE over every perturbation of
    size ``eps_for_mse`` using the certified feature box.
    """
    preset = env.get_preset(preset) if isinstance(preset, str) else preset
    horizon = preset.horizon if horizon is None else horizon
    totals, errs, lbs, ubs = [], [], [], []
    mismatches = steps = 0
    for seed in seeds:
        s = env.reset(preset, seed)
        total = 0.0
        for _ in range(horizon):
            o = env.observe(s)
            truth = features(s)
            pred = forward(p.g, o)
            a = argmax_lowest(forward(p.q, pred))
            mismatches += a != argmax_lowest(forward(p.q, truth))
            steps += 1
            errs.append(float(np.mean((pred - truth) ** 2)))
            box = composite_feature_bounds(p.g, o, eps_for_mse)
            lo, hi = error_bounds(box.lower, box.upper, truth)
            lbs.append(lo)
            ubs.append(hi)
            out = env.step(s, a)
            total += out.reward
            s = out.next
            if out.unsafe:
                break
        totals.append(total)
    return EvalReport(float(np.mean(totals)), sem(totals), mismatches / max(steps, 1),
                      float(np.mean(errs)), float(np.mean(ubs)), float(np.mean(lbs)), len(totals),
                      rewards=totals)


def attack_success_rate(p: PsrlPolicy, preset, seeds, cfg: AttackConfig, steps: int | None = None) -> float:
    """Fraction of attacked rollouts that reach an unsafe state."""
    seeds = list(seeds)
    hits = sum(attacked_rollout(p, preset, s, cfg, steps).unsafe_reached for s in seeds)
    return hits / len(seeds)
