import numpy as np
import pytest

from archgrow.actions import ActionKind, enumerate_actions, execute
from archgrow.data import Dataset
from archgrow.graph import new_base_model
from archgrow.propagation import backward, forward, forward_pass, loss


def walk_step(g, rng):
    """One random legal mutation: a fair coin picks add or remove, then uniform within."""
    acts = enumerate_actions(g)
    removes = [a for a in acts if a.kind is ActionKind.REMOVE]
    adds = [a for a in acts if a.kind is not ActionKind.REMOVE]
    pool = removes if removes and rng.random() < 0.5 else adds
    return execute(pool[rng.integers(len(pool))], g, rng)


def random_graph(seed, max_hidden=4, steps=None, conv=True, def_neu=5, classes=3, side=5):
    """A base model grown by random actions, keeping at most ``max_hidden`` hidden layers."""
    rng = np.random.default_rng(seed)
    shape = (1, side, side) if conv else (6,)
    g = new_base_model(shape, def_neu, classes, rng)
    steps = rng.integers(1, 2 * max_hidden + 1) if steps is None else steps
    for _ in range(steps):
        acts = enumerate_actions(g)
        if len(g.hidden_ids) >= max_hidden:
            acts = [a for a in acts if a.kind is ActionKind.REMOVE]
        g = execute(acts[rng.integers(len(acts))], g, rng)
    return g


def random_inputs(g, batch, rng):
    return [rng.normal(size=(batch,) + g.layers[i].in_shape) for i in g.inputs]


def blob_dataset(n, classes, shape, seed=0, spread=1.0):
    """Gaussian class blobs; separable enough that a linear model learns them."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    centers = rng.normal(size=(classes,) + tuple(shape)) * 2.0
    x = centers[labels] + spread * rng.normal(size=(n,) + tuple(shape))
    return Dataset([x], labels, classes)


def numeric_grad(g, inputs, labels, layer_id, which, idx, h=1e-5):
    layer = g.layers[layer_id]
    arr = layer.weights if which == 0 else layer.bias
    old = arr.flat[idx]
    arr.flat[idx] = old + h
    up = loss(forward(g, inputs), labels)
    arr.flat[idx] = old - h
    down = loss(forward(g, inputs), labels)
    arr.flat[idx] = old
    return (up - down) / (2 * h)


def max_rel_error(g, inputs, labels, rng, per_array=5):
    grads = backward(g, forward_pass(g, inputs), labels)
    worst = 0.0
    for layer_id, pair in grads.items():
        for which, analytic in enumerate(pair):
            for idx in rng.choice(analytic.size, min(per_array, analytic.size), replace=False):
                num = numeric_grad(g, inputs, labels, layer_id, which, idx)
                ana = analytic.flat[idx]
                denom = max(abs(num), abs(ana), 1e-7)
                worst = max(worst, abs(num - ana) / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


def report(criterion, passed, detail):
    """Record one acceptance line; they are printed together at the end of the run."""
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
