"""Tiny analytic models for checking the certifier against closed forms.

``LineWorld`` always shows the same one-pixel observation. Choosing the
designated ``unsafe_action`` crashes; everything else is harmless. With the
policy from :func:`line_policy` the adversarial action becomes reachable
exactly when the budget reaches ``|2*o - 1| / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Layer, MlpParams
from .policy import PsrlPolicy


@dataclass(frozen=True)
class ToyState:
    depth: int = 0
    crashed: bool = False


@dataclass
class LineWorld:
    obs: float = 0.7
    unsafe_action: int | None = 0
    branching: int = 1

    def observe(self, s: ToyState) -> np.ndarray:
        return np.array([self.obs])

    def is_unsafe(self, s: ToyState) -> bool:
        return s.crashed

    def successors(self, s: ToyState, a: int) -> list[ToyState]:
        nxt = ToyState(s.depth + 1, s.crashed or a == self.unsafe_action)
        return [nxt] * self.branching


def identity_g(dim: int = 1) -> MlpParams:
    return MlpParams([Layer(np.eye(dim), np.zeros(dim))])


def line_policy() -> PsrlPolicy:
    """Q = (1 - x, x): action 0 is preferred only when x < 1/2."""
    q = MlpParams([Layer(np.array([[-1.0], [1.0]]), np.array([1.0, 0.0]))])
    return PsrlPolicy(identity_g(), q)


def fan_policy(n_actions: int = 5, spacing: float = 0.02) -> PsrlPolicy:
    """Action 0 is nominal; action i joins the certified set once eps >= i*spacing (at x = 0.5)."""
    w = np.ones((n_actions, 1))
    w[0, 0] = 0.0
    b = np.array([1.0] + [0.5 - spacing * i for i in range(1, n_actions)])
    return PsrlPolicy(identity_g(), MlpParams([Layer(w, b)]))
