"""Tree-based adversarial safety certification.

Starting from the nominal trajectory, the search raises the perturbation
budget one grid step at a time. Each node remembers the largest budget for
which its certified action set stays unchanged (``robust_index``); the
smallest such value over the tree (``max_safety_index`` of the root) is the
budget currently proven safe. Nodes sitting exactly at that budget gain the
actions that become possible one step higher, and the new subtrees are grown
depth first. Reaching an unsafe state ends the search with the last proven
budget.

The dynamics are supplied by a *model*: any object with ``observe(state)``,
``is_unsafe(state)`` and ``successors(state, action)``. The :mod:`psrlcert.env`
module itself is such a model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

from . import env as lane_env
from .policy import ActionSet, Certifier, EpsGrid, PsrlPolicy, robust_epsilon_scan
from .smoothing import SmoothingConfig

# stands for "255.0, or any sufficiently large number" in grid units
SENTINEL_INDEX = 255 * 255


@dataclass(eq=False)
class CertNode:
    state: Any
    depth: int
    action: int | None = None  # edge label from the parent
    outcome: int = 0  # index into successors(parent, action)
    children: list["CertNode"] = field(default_factory=list)
    action_taken: ActionSet = ActionSet()
    robust_index: int = 0
    action_next: ActionSet = ActionSet()
    max_safety_index: int = SENTINEL_INDEX
    _cert: Certifier | None = field(default=None, repr=False)
    _next_set: ActionSet | None = field(default=None, repr=False)

    def walk(self):
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children))


def update_max_safety(root: CertNode) -> int:
    """Post-order min of each node's robust index and its children's values."""
    order = list(root.walk())
    for n in reversed(order):
        m = n.robust_index if n.children else min(n.robust_index, SENTINEL_INDEX)
        for c in n.children:
            m = min(m, c.max_safety_index)
        n.max_safety_index = m
    return root.max_safety_index


@dataclass
class Certificate:
    eps_index: int
    grid: EpsGrid
    norm: str
    horizon: int
    nodes_explored: int
    truncated: bool
    nodes_per_depth: list[int]
    wall_time: float = 0.0
    # the search stopped because a reachable unsafe state was found one step higher
    stopped_by_unsafe: bool = False
    # the unperturbed policy itself reaches an unsafe state, so no budget is safe
    nominal_unsafe: bool = False

    @property
    def eps_safety(self) -> float:
        return self.grid.value(self.eps_index)

    @property
    def label(self) -> str:
        return self.grid.label(self.eps_index)

    def to_report(self, include_timing: bool = False) -> str:
        lines = [
            "certificate v1",
            f"eps_safety = {self.label}",
            f"norm = {self.norm}",
            f"horizon = {self.horizon}",
            f"nodes_explored = {self.nodes_explored}",
            f"nodes_per_depth = {' '.join(str(n) for n in self.nodes_per_depth)}",
            f"truncated = {str(self.truncated).lower()}",
            f"stopped_by_unsafe = {str(self.stopped_by_unsafe).lower()}",
            f"nominal_unsafe = {str(self.nominal_unsafe).lower()}",
            f"grid_cap = {self.grid.label(self.grid.max_index)}",
        ]
        if include_timing:
            lines.append(f"wall_time_s = {self.wall_time:.3f}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    lines = text.strip().split("\n")
    if not lines or lines[0] != "certificate v1":
        raise ValueError("not a certificate report")
    out = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        out[key] = value
    return out


class UnsafeReached(Exception):
    def __init__(self, node: CertNode):
        super().__init__(f"unsafe state at depth {node.depth}")
        self.node = node


class BudgetExhausted(Exception):
    pass


class TreeSearch:
    """Mutable search state shared by the tree operations."""

    def __init__(self, policy: PsrlPolicy, s0, horizon: int, grid: EpsGrid = EpsGrid(),
                 node_budget: int = 500, norm: str = "linf",
                 smoothing: SmoothingConfig | None = None, model=lane_env):
        if horizon < 1:
            raise ValueError("verification horizon must be at least 1")
        if node_budget < horizon + 1:
            raise ValueError("node budget must exceed the horizon")
        self.policy = policy
        self.horizon = horizon
        self.grid = grid
        self.node_budget = node_budget
        self.norm = norm
        self.smoothing = smoothing
        self.model = model
        self.nodes = 0
        self.grown: list[CertNode] = []  # call trace of grow_tree, for inspection
        self.root = self._new_node(s0, 0)

    @property
    def leaf_depth(self) -> int:
        # a T-step horizon holds states at depths 0..T-1
        return self.horizon - 1

    def _new_node(self, state, depth: int, action: int | None = None, outcome: int = 0) -> CertNode:
        if self.nodes >= self.node_budget:
            raise BudgetExhausted()
        self.nodes += 1
        return CertNode(state, depth, action, outcome)

    def _certifier(self, node: CertNode) -> Certifier:
        if node._cert is None:
            node._cert = Certifier(self.policy, self.model.observe(node.state), self.norm, self.smoothing)
        return node._cert

    def _scan(self, node: CertNode, k: int) -> None:
        res = robust_epsilon_scan(self.policy, None, node.action_taken, self.grid, k,
                                  certifier=self._certifier(node))
        node.robust_index = res.robust_index
        node.action_next = res.action_next
        node._next_set = res.next_set
        if res.next_set is None:
            node._cert = None  # never scanned again

    def establish(self, node: CertNode, k: int) -> None:
        """Certify a fresh node at budget index ``k``."""
        if node.depth >= self.leaf_depth:
            node.action_taken = ActionSet()
            node.robust_index = self.grid.max_index
            node.action_next = ActionSet()
        else:
            node.action_taken = self._certifier(node).action_set(self.grid.value(k))
            self._scan(node, k)
        node.max_safety_index = node.robust_index

    def add_children(self, node: CertNode, actions) -> list[CertNode]:
        kids = []
        for a in sorted(actions):
            for i, s in enumerate(self.model.successors(node.state, a)):
                child = self._new_node(s, node.depth + 1, a, i)
                node.children.append(child)
                kids.append(child)
                if self.model.is_unsafe(s):
                    raise UnsafeReached(child)
        return kids

    def _expand_depth_first(self, kids: list[CertNode], k: int) -> None:
        stack = list(reversed(kids))
        while stack:
            n = stack.pop()
            self.establish(n, k)
            if n.depth < self.leaf_depth:
                stack.extend(reversed(self.add_children(n, n.action_taken)))

    def build_nominal(self) -> None:
        if self.model.is_unsafe(self.root.state):
            raise UnsafeReached(self.root)
        self._expand_depth_first([self.root], 0)

    def grow_tree(self, node: CertNode, k: int) -> None:
        """Add the actions that become possible at ``k + 1`` below ``node``."""
        self.grown.append(node)
        new = node.action_next
        node.action_taken = node._next_set if node._next_set is not None else node.action_taken
        self._scan(node, k + 1)
        node.max_safety_index = node.robust_index
        kids = self.add_children(node, new)
        self._expand_depth_first(kids, k + 1)

    def tree_expand(self, node: CertNode, k: int) -> None:
        if node.max_safety_index > k:
            return
        for child in list(node.children):
            self.tree_expand(child, k)
            if child.depth >= self.leaf_depth:
                continue
            if child.robust_index == k:
                self.grow_tree(child, k)

    def per_depth(self) -> list[int]:
        counts = [0] * self.horizon
        for n in self.root.walk():
            counts[n.depth] += 1
        return counts

    def run(self) -> Certificate:
        start = time.perf_counter()

        def done(k: int, truncated: bool = False, unsafe: bool = False, nominal: bool = False) -> Certificate:
            return Certificate(k, self.grid, self.norm, self.horizon, self.nodes, truncated,
                               self.per_depth(), time.perf_counter() - start, unsafe, nominal)

        try:
            self.build_nominal()
        except UnsafeReached:
            return done(0, unsafe=True, nominal=True)
        except BudgetExhausted:
            return done(0, truncated=True)
        update_max_safety(self.root)
        while True:
            k = self.root.max_safety_index
            if k >= self.grid.max_index:
                return done(self.grid.max_index)
            try:
                self.tree_expand(self.root, k)
                if self.root.robust_index == k and self.root.depth < self.leaf_depth:
                    self.grow_tree(self.root, k)
            except UnsafeReached:
                return done(k, unsafe=True)
            except BudgetExhausted:
                return done(k, truncated=True)
            update_max_safety(self.root)


def certify(policy: PsrlPolicy, s0, horizon: int, grid: EpsGrid = EpsGrid(), node_budget: int = 500,
            norm: str = "linf", smoothing: SmoothingConfig | None = None, model=lane_env) -> Certificate:
    """Largest grid budget under which no unsafe state is reachable within ``horizon`` states."""
    return TreeSearch(policy, s0, horizon, grid, node_budget, norm, smoothing, model).run()
