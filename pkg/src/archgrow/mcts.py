"""Architecture search policies: UCT tree search, greedy and random.

The tree's nodes are model structures and its edges are actions. One search
iteration walks down by UCB1, expands the first unexpanded node it meets,
applies a few random actions from the new child, scores the result by briefly
training a copy on the simulation set, and averages that score into every
edge on the path. The search stops when the wall-clock budget runs out and
returns the root action visited most often.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from archgrow.actions import Action, enumerate_actions, execute
from archgrow.errors import InvalidArgumentError, NumericError, TerminalNodeError
from archgrow.graph import LayerGraph
from archgrow.propagation import evaluate, train_epoch

log = logging.getLogger(__name__)


class ScoreMode(str, Enum):
    ACCURACY = "accuracy"
    LOSS = "loss"


@dataclass
class SearchBudget:
    """Limits for one search.

    ``max_iterations`` replaces the wall clock with a fixed iteration count,
    which makes a search reproducible bit for bit.
    """

    time_limit: float = 10.0
    rollout_depth: int = 2
    exploration: float = math.sqrt(2)
    sim_epochs: int = 10
    sim_lr: float = 0.05
    sim_batch_size: int = 10
    max_iterations: int | None = None

    def __post_init__(self):
        if self.time_limit <= 0 or self.rollout_depth < 0 or self.exploration < 0:
            raise InvalidArgumentError("time_limit > 0, rollout_depth >= 0, exploration >= 0 required")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be at least 1")


@dataclass
class MctsEdge:
    action: Action
    child: MctsNode | None = None
    visits: int = 0
    q: float = 0.0
    scores: list[float] = field(default_factory=list)

    def update(self, s: float):
        self.visits += 1
        self.q += (s - self.q) / self.visits
        self.scores.append(s)


@dataclass
class MctsNode:
    """A model structure; ``edges`` stays ``None`` until the node is expanded."""

    structure: LayerGraph | None
    visits: int = 1
    edges: list[MctsEdge] | None = None

    @property
    def expanded(self) -> bool:
        return self.edges is not None


def ucb_value(q: float, parent_visits: int, edge_visits: int, c: float) -> float:
    if edge_visits == 0:
        return math.inf
    return q + c * math.sqrt(math.log(parent_visits) / edge_visits)


def _select_edge(node: MctsNode, c: float) -> MctsEdge:
    if not node.edges:
        raise TerminalNodeError("node has no actions")
    best, best_val = None, -math.inf
    for e in node.edges:  # strict '>' keeps the first edge on ties
        val = ucb_value(e.q, node.visits, e.visits, c)
        if val > best_val:
            best, best_val = e, val
    return best


def ucb_select(node: MctsNode, c: float = math.sqrt(2)) -> Action:
    """The action maximizing ``Q + c * sqrt(ln N(s) / N(s, a))``; unvisited actions first."""
    return _select_edge(node, c).action


def expand(node: MctsNode, rng) -> None:
    node.edges = [MctsEdge(a, MctsNode(execute(a, node.structure, rng)))
                  for a in enumerate_actions(node.structure)]


def rollout(g: LayerGraph, n: int, rng) -> LayerGraph:
    """Apply ``n`` uniformly random legal actions in sequence."""
    for _ in range(n):
        actions = enumerate_actions(g)
        if not actions:
            break
        g = execute(actions[rng.integers(len(actions))], g, rng)
    return g


def score(g: LayerGraph, simset, sim_epochs: int, mode: ScoreMode | str, rng,
          lr: float = 0.05, batch_size: int = 10) -> float:
    """Train a copy of ``g`` on ``simset`` and rate it in [0, 1].

    Accuracy mode returns simulation-set accuracy; loss mode returns
    ``exp(-loss)``. A copy whose training blows up scores 0.
    """
    mode = ScoreMode(mode)
    if len(simset) == 0:
        raise InvalidArgumentError("simulation set is empty")
    model = g.copy()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(sim_epochs):
                train_epoch(model, simset, lr, batch_size, rng)
            acc, mean_loss = evaluate(model, simset)
    except NumericError:
        return 0.0
    if mode is ScoreMode.ACCURACY:
        return acc
    return math.exp(-mean_loss) if math.isfinite(mean_loss) else 0.0


@dataclass
class SearchRecord:
    iteration: int
    path: str
    score: float
    elapsed: float


@dataclass
class SearchResult:
    action: Action
    root: MctsNode
    records: list[SearchRecord]

    @property
    def iterations(self) -> int:
        return len(self.records)


def best_root_edge(root: MctsNode) -> MctsEdge:
    """Most visited root edge; ties go to the higher mean score, then action order."""
    best = root.edges[0]
    for e in root.edges[1:]:
        if (e.visits, e.q) > (best.visits, best.q):
            best = e
    return best


def run_search(g: LayerGraph, simset, budget: SearchBudget, mode, rng) -> SearchResult:
    """Time-limited UCT search rooted at ``g``; always completes one iteration."""
    root = MctsNode(g)
    expand(root, rng)
    if not root.edges:
        raise TerminalNodeError("no legal action for the current model")
    records = []
    start = time.perf_counter()
    while True:
        node, path = root, []
        while True:
            if not node.expanded:
                expand(node, rng)
            if not node.edges:
                break
            edge = _select_edge(node, budget.exploration)
            path.append((node, edge))
            node = edge.child
            if edge.visits == 0:
                break
        leaf = rollout(node.structure, budget.rollout_depth, rng)
        s = score(leaf, simset, budget.sim_epochs, mode, rng, budget.sim_lr, budget.sim_batch_size)
        for n, e in path:
            n.visits += 1
            e.update(s)
        elapsed = time.perf_counter() - start
        records.append(SearchRecord(len(records) + 1, " | ".join(str(e.action) for _, e in path), s, elapsed))
        if budget.max_iterations is not None:
            if len(records) >= budget.max_iterations:
                break
        elif elapsed >= budget.time_limit:
            break
    if budget.max_iterations is None and elapsed > budget.time_limit * 1.5:
        log.info("search overran its %.1fs budget: %.1fs", budget.time_limit, elapsed)
    return SearchResult(best_root_edge(root).action, root, records)


def search(g: LayerGraph, simset, budget: SearchBudget, mode, rng) -> Action:
    actions = enumerate_actions(g)
    if not actions:
        raise TerminalNodeError("no legal action for the current model")
    if len(actions) == 1:
        return actions[0]
    return run_search(g, simset, budget, mode, rng).action


def greedy_policy(g: LayerGraph, simset, sim_epochs: int, mode, rng,
                  lr: float = 0.05, batch_size: int = 10) -> Action:
    """Score every action once, one step deep, and keep the best (first on ties)."""
    actions = enumerate_actions(g)
    if not actions:
        raise TerminalNodeError("no legal action for the current model")
    if len(actions) == 1:
        return actions[0]
    scores = [score(execute(a, g, rng), simset, sim_epochs, mode, rng, lr, batch_size) for a in actions]
    return actions[int(np.argmax(scores))]


def random_policy(g: LayerGraph, rng) -> Action:
    actions = enumerate_actions(g)
    if not actions:
        raise TerminalNodeError("no legal action for the current model")
    return actions[rng.integers(len(actions))]


def write_search_log(records: list[SearchRecord], path, generation: int | None = None):
    """Append search telemetry rows to a CSV file, writing the header for a new file."""
    new = not Path(path).exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(["generation", "iteration", "path", "score", "elapsed"])
        for r in records:
            w.writerow(["" if generation is None else generation, r.iteration, r.path,
                        f"{r.score:.6f}", f"{r.elapsed:.3f}"])

