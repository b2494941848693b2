"""The composite policy ``argmax_a Q(g(o), a)`` and its certified action sets."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bounds import BoxBounds, composite_feature_bounds, crown_bounds, ibp_bounds, perturbation_box
from .nn import MlpParams, ShapeError, forward
from .smoothing import SmoothedPredictor, SmoothingConfig, SmoothingRangeError

ActionSet = frozenset


@dataclass(frozen=True)
class EpsGrid:
    """Budgets ``k * step`` for ``k = 0..max_index``."""

    step: Fraction = Fraction(1, 255)
    max_index: int = 255

    def __post_init__(self):
        if self.step <= 0 or self.max_index < 1:
            raise ValueError("grid step must be positive and the grid non-trivial")

    @classmethod
    def for_norm(cls, norm: str) -> "EpsGrid":
        # the l2 certificate is capped at 20/255
        return cls(Fraction(1, 255), 255 if norm == "linf" else 20)

    def value(self, k: int) -> float:
        return float(k * self.step)

    @property
    def cap(self) -> float:
        return self.value(self.max_index)

    def label(self, k: int) -> str:
        """Budget as a fraction over the step's denominator, e.g. ``"6/255"``."""
        return f"{k * self.step.numerator}/{self.step.denominator}"


@dataclass
class PsrlPolicy:
    g: MlpParams
    q: MlpParams

    def __post_init__(self):
        if self.g.out_dim != self.q.in_dim:
            raise ShapeError(f"g outputs {self.g.out_dim} features but q takes {self.q.in_dim}")

    @property
    def action_count(self) -> int:
        return self.q.out_dim

    @property
    def obs_dim(self) -> int:
        return self.g.in_dim

    def q_values(self, o: np.ndarray) -> np.ndarray:
        return forward(self.q, forward(self.g, o))


def argmax_lowest(values: np.ndarray) -> int:
    """Index of the largest value; exact ties go to the lowest index."""
    return int(np.argmax(values))


def act(p: PsrlPolicy, o: np.ndarray) -> int:
    return argmax_lowest(p.q_values(o))


def q_bounds_from_feature_box(q: MlpParams, feat: BoxBounds) -> BoxBounds:
    """Per-action Q intervals; CROWN intersected with IBP."""
    return crown_bounds(q, feat).intersect(ibp_bounds(q, feat))


def action_set_from_q_bounds(qb: BoxBounds) -> ActionSet:
    """Actions whose upper bound reaches the best lower bound (ties included)."""
    best_lower = np.max(qb.lower)
    return ActionSet(int(a) for a in np.flatnonzero(qb.upper >= best_lower))


def _sets_from_batch(qb: BoxBounds) -> list[ActionSet]:
    best = qb.lower.max(axis=-1, keepdims=True)
    hits = qb.upper >= best
    return [ActionSet(int(a) for a in np.flatnonzero(row)) for row in hits]


@dataclass
class Certifier:
    """Certified action sets for one observation over many budgets.

    The l2 path draws the smoothing samples once and reuses them for every
    budget; the l_inf path evaluates budgets in batches.
    """

    policy: PsrlPolicy
    o: np.ndarray
    norm: str = "linf"
    smoothing: SmoothingConfig | None = None

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        self.o = np.asarray(self.o, dtype=np.float64)
        self._smoothed = None
        if self.norm == "l2":
            self._smoothed = SmoothedPredictor(self.policy.g, self.o, self.smoothing or SmoothingConfig())

    def feature_bounds(self, eps: float) -> BoxBounds:
        if eps < 0:
            raise ValueError("eps must be non-negative")
        if self._smoothed is not None:
            return self._smoothed.bounds(eps)
        return composite_feature_bounds(self.policy.g, self.o, eps)

    def action_set(self, eps: float) -> ActionSet:
        return action_set_from_q_bounds(q_bounds_from_feature_box(self.policy.q, self.feature_bounds(eps)))

    def action_sets(self, eps_values) -> list[ActionSet]:
        eps_values = [float(e) for e in eps_values]
        if self._smoothed is not None:
            out = []
            for e in eps_values:
                try:
                    out.append(self.action_set(e))
                except SmoothingRangeError:
                    # beyond the resolvable range nothing is certified: every action is possible
                    out.append(ActionSet(range(self.policy.action_count)))
            return out
        feats = composite_feature_bounds(self.policy.g, self.o, np.array(eps_values))
        return _sets_from_batch(q_bounds_from_feature_box(self.policy.q, feats))

    def coarse_sets(self, eps_values) -> list[ActionSet] | None:
        """Cheap supersets of :meth:`action_sets` from plain IBP (None for l2)."""
        if self._smoothed is not None:
            return None
        box = perturbation_box(self.o, np.array([float(e) for e in eps_values]))
        return _sets_from_batch(ibp_bounds(self.policy.q, ibp_bounds(self.policy.g, box)))


def cert_action_set(p: PsrlPolicy, o: np.ndarray, eps: float, norm: str = "linf",
                    cfg: SmoothingConfig | None = None) -> ActionSet:
    return Certifier(p, o, norm, cfg).action_set(eps)


@dataclass
class ScanResult:
    robust_index: int
    action_next: ActionSet
    # certified set at robust_index + 1 (None when the grid was exhausted)
    next_set: ActionSet | None


def robust_epsilon_scan(p: PsrlPolicy, o: np.ndarray, current_set: ActionSet, grid: EpsGrid,
                        start: int, *, norm: str = "linf", smoothing: SmoothingConfig | None = None,
                        certifier: Certifier | None = None, chunk: int = 1, max_chunk: int = 64) -> ScanResult:
    """Largest grid index at which the certified set is still ``current_set``.

    Scans upward from ``start`` in chunks that double in size. Sets are
    accumulated as a running union, so the reported sets are nested even if
    a bound method is not monotone. Budgets whose IBP superset adds nothing to
    the union skip the tighter bound. Pass a prepared ``certifier`` to reuse
    its cached smoothing samples.
    """
    cert = certifier if certifier is not None else Certifier(p, o, norm, smoothing)
    acc = ActionSet(current_set)
    k = start
    while k < grid.max_index:
        upto = min(k + chunk, grid.max_index)
        idx = list(range(k + 1, upto + 1))
        coarse = cert.coarse_sets(grid.value(j) for j in idx)
        need = idx if coarse is None else [j for j, c in zip(idx, coarse) if not c <= acc]
        for j, s in zip(need, cert.action_sets(grid.value(j) for j in need) if need else ()):
            grown = acc | s
            if grown != acc:
                return ScanResult(j - 1, ActionSet(grown - acc), ActionSet(grown))
        k = upto
        chunk = min(2 * chunk, max_chunk)
    return ScanResult(grid.max_index, ActionSet(), None)
