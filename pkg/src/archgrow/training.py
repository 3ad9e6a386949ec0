"""Generational training: SGD epochs, then (maybe) one architecture change."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from archgrow.actions import Action, execute
from archgrow.data import Dataset
from archgrow.errors import ArchGrowError, DatasetError, InvalidArgumentError, TrainingError
from archgrow.graph import LayerGraph
from archgrow.mcts import (
    ScoreMode,
    SearchBudget,
    greedy_policy,
    random_policy,
    run_search,
    write_search_log,
)
from archgrow.propagation import evaluate, train_epoch

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "generation", "lr", "train_acc", "train_loss", "test_acc", "action"]


class LrMode(str, Enum):
    PROGRESSIVE = "progressive"
    CONSTANT = "constant"


class Orchestrator(str, Enum):
    CONSTANT = "constant"
    PROGRESS_CHECK = "progress_check"
    OVERFIT = "overfit"


class Policy(str, Enum):
    MCTS = "mcts"
    GREEDY = "greedy"
    RANDOM = "random"


@dataclass
class TrainConfig:
    generations: int = 10
    epochs: int = 50
    lr_max: float = 0.05
    lr_mode: LrMode = LrMode.PROGRESSIVE
    orchestrator: Orchestrator = Orchestrator.PROGRESS_CHECK
    score_mode: ScoreMode = ScoreMode.ACCURACY
    policy: Policy = Policy.MCTS
    budget: SearchBudget = field(default_factory=SearchBudget)
    batch_size: int = 32
    seed: int = 0
    overfit_gap: float = 0.05
    simset_per_class: int = 10
    # the change picked after the last generation would never be trained
    simulate_last: bool = False

    def __post_init__(self):
        self.lr_mode = LrMode(self.lr_mode)
        self.orchestrator = Orchestrator(self.orchestrator)
        self.score_mode = ScoreMode(self.score_mode)
        self.policy = Policy(self.policy)
        if isinstance(self.budget, dict):
            self.budget = SearchBudget(**self.budget)
        if self.generations < 1 or self.epochs < 1 or not self.lr_max > 0:
            raise InvalidArgumentError("generations >= 1, epochs >= 1 and lr_max > 0 required")

    def to_flat(self) -> dict[str, str]:
        """``key -> value`` strings; budget fields are prefixed ``budget.``."""
        out = {}
        for k, v in asdict(self).items():
            if k == "budget":
                out.update({f"budget.{bk}": _fmt(bv) for bk, bv in v.items()})
            else:
                out[k] = _fmt(v)
        return out

    @classmethod
    def from_flat(cls, values: dict[str, str]) -> TrainConfig:
        """Build from ``key -> string`` pairs as written by :meth:`to_flat`; unknown keys raise."""
        top = {f.name: f for f in fields(cls)}
        sub = {f.name: f for f in fields(SearchBudget)}
        kw, bkw = {}, {}
        for key, raw in values.items():
            if key.startswith("budget."):
                name = key.split(".", 1)[1]
                if name not in sub:
                    raise InvalidArgumentError(f"unknown config key {key!r}")
                bkw[name] = _parse(raw, sub[name].default)
            elif key in top and key != "budget":
                kw[key] = _parse(raw, top[key].default)
            else:
                raise InvalidArgumentError(f"unknown config key {key!r}")
        return cls(budget=SearchBudget(**bkw), **kw)


def _fmt(v) -> str:
    if isinstance(v, Enum):
        return v.value
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw: str, default):
    raw = str(raw).strip()
    if raw.lower() == "none":
        return None
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise InvalidArgumentError(f"not a boolean: {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, int) or default is None:
        try:
            return int(raw)
        except ValueError:
            raise InvalidArgumentError(f"not an integer: {raw!r}") from None
    return raw


@dataclass
class EpochRecord:
    epoch: int
    generation: int
    lr: float
    train_acc: float
    train_loss: float
    test_acc: float
    action: str = ""


@dataclass
class GenerationRecord:
    generation: int
    best_test_acc: float
    mean_train_acc: float
    mean_test_acc: float
    simulated: bool = False
    action: str | None = None
    valid_after: bool | None = None
    search_iterations: int = 0


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    generations: list[GenerationRecord] = field(default_factory=list)

    @property
    def simulations(self) -> int:
        return sum(g.simulated for g in self.generations)

    @property
    def actions(self) -> list[str]:
        return [g.action for g in self.generations if g.action]

    @property
    def final_test_acc(self) -> float:
        return self.epochs[-1].test_acc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.epochs:
            w.writerow([r.epoch, r.generation, f"{r.lr:.10g}", f"{r.train_acc:.6f}",
                        f"{r.train_loss:.6f}", f"{r.test_acc:.6f}", r.action])
        return buf.getvalue()


def lr_at(epoch_in_gen: int, epochs: int, lr_max: float, mode: LrMode | str) -> float:
    """Learning rate for an epoch inside a generation.

    Progressive mode is a triangle: it rises linearly from ``lr_max / K`` at
    the first epoch to ``lr_max`` at epoch ``K // 2``, then falls back to
    ``lr_max / K`` at the last epoch.
    """
    if not 0 <= epoch_in_gen < epochs:
        raise InvalidArgumentError(f"epoch {epoch_in_gen} outside generation of {epochs}")
    if LrMode(mode) is LrMode.CONSTANT:
        return lr_max
    floor = lr_max / epochs
    peak = epochs // 2
    if epoch_in_gen <= peak:
        frac = epoch_in_gen / peak if peak else 1.0
    else:
        frac = 1.0 - (epoch_in_gen - peak) / (epochs - 1 - peak)
    return floor + (lr_max - floor) * frac


def should_simulate(orchestrator: Orchestrator | str, history: History, gap: float = 0.05) -> bool:
    """Decide at a generation boundary whether to search for an architecture change."""
    orchestrator = Orchestrator(orchestrator)
    if orchestrator is Orchestrator.CONSTANT:
        return True
    gens = history.generations
    stalled = len(gens) < 2 or gens[-1].best_test_acc <= gens[-2].best_test_acc
    if orchestrator is Orchestrator.PROGRESS_CHECK:
        return stalled
    return stalled or gens[-1].mean_train_acc - gens[-1].mean_test_acc > gap


def stratified_split(ds: Dataset, test_fraction: float, rng) -> tuple[Dataset, Dataset]:
    """Class-stratified train/test split.

    The test size is ``ceil(n * test_fraction)``; per-class shares are
    rounded by largest remainder, so each class is off by less than one sample.
    """
    if not 0 < test_fraction < 1:
        raise InvalidArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    counts = ds.class_counts()
    if (counts == 0).any():
        raise DatasetError(f"classes {np.flatnonzero(counts == 0).tolist()} have no samples")
    n = len(ds)
    n_test = math.ceil(n * test_fraction)
    exact = counts * n_test / n
    per_class = np.floor(exact).astype(np.int64)
    short = n_test - per_class.sum()
    remainder_order = np.argsort(-(exact - per_class), kind="stable")
    per_class[remainder_order[:short]] += 1
    test_idx = []
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        test_idx.append(rng.permutation(members)[:per_class[c]])
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    return ds.subset(np.flatnonzero(mask)), ds.subset(test_idx)


def simset_indices(ds: Dataset, per_class: int, rng) -> np.ndarray:
    counts = ds.class_counts()
    if (counts < per_class).any():
        bad = np.flatnonzero(counts < per_class).tolist()
        raise DatasetError(f"classes {bad} have fewer than {per_class} samples")
    picks = [rng.choice(np.flatnonzero(ds.labels == c), per_class, replace=False)
             for c in range(ds.class_count)]
    return np.sort(np.concatenate(picks))


def make_simset(ds: Dataset, per_class: int, rng) -> Dataset:
    """Small class-balanced subset used to score candidate architectures."""
    return ds.subset(simset_indices(ds, per_class, rng))


def choose_action(model: LayerGraph, simset: Dataset, cfg: TrainConfig, rng):
    """Ask the configured policy for an action.

    Returns ``(action, search_result)``; the result is None unless the policy is MCTS.
    """
    b = cfg.budget
    if cfg.policy is Policy.RANDOM:
        return random_policy(model, rng), None
    if cfg.policy is Policy.GREEDY:
        return greedy_policy(model, simset, b.sim_epochs, cfg.score_mode, rng, b.sim_lr, b.sim_batch_size), None
    result = run_search(model, simset, b, cfg.score_mode, rng)
    return result.action, result


def train(model: LayerGraph, train_set: Dataset, test_set: Dataset,
          simset: Dataset | None = None, cfg: TrainConfig | None = None,
          on_generation=None, search_log=None) -> tuple[LayerGraph, History]:
    """Train ``model`` for ``cfg.generations`` generations of ``cfg.epochs`` epochs.

    After each generation the orchestrator decides whether the policy picks
    an action, which is then applied to the model. ``on_generation(gen,
    model, history)`` is called after every generation, action included.
    Search iterations are appended to the CSV file ``search_log`` if given.
    The input model is not modified.
    """
    cfg = cfg or TrainConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    sgd_rng, policy_rng, build_rng = (np.random.default_rng(s) for s in seeds)
    if simset is None:
        simset = make_simset(train_set, cfg.simset_per_class, build_rng)
    model = model.copy()
    history = History()
    epoch = 0
    for gen in range(cfg.generations):
        try:
            start = len(history.epochs)
            for e in range(cfg.epochs):
                lr = lr_at(e, cfg.epochs, cfg.lr_max, cfg.lr_mode)
                train_acc, train_loss = train_epoch(model, train_set, lr, cfg.batch_size, sgd_rng)
                test_acc, _ = evaluate(model, test_set)
                history.epochs.append(EpochRecord(epoch, gen, lr, train_acc, train_loss, test_acc))
                epoch += 1
            recs = history.epochs[start:]
            rec = GenerationRecord(
                generation=gen,
                best_test_acc=max(r.test_acc for r in recs),
                mean_train_acc=float(np.mean([r.train_acc for r in recs])),
                mean_test_acc=float(np.mean([r.test_acc for r in recs])),
            )
            history.generations.append(rec)
            last = gen == cfg.generations - 1
            if (cfg.simulate_last or not last) and should_simulate(cfg.orchestrator, history, cfg.overfit_gap):
                action, result = choose_action(model, simset, cfg, policy_rng)
                if result is not None and search_log is not None:
                    write_search_log(result.records, search_log, generation=gen)
                model = execute(action, model, build_rng)
                rec.simulated = True
                rec.action = str(action)
                rec.search_iterations = result.iterations if result is not None else 0
                rec.valid_after = not model.validate()
                history.epochs[-1].action = rec.action
                log.info("generation %d: %s (test acc %.4f)", gen, action, recs[-1].test_acc)
        except ArchGrowError as exc:
            raise TrainingError(gen, exc) from exc
        if on_generation is not None:
            on_generation(gen, model, history)
    return model, history
