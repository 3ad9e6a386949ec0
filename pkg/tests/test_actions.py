import numpy as np
import pytest

from archgrow.actions import Action, ActionKind, enumerate_actions, execute
from archgrow.errors import StaleActionError, StructuralError
from archgrow.graph import LayerKind, new_base_model
from archgrow.propagation import forward, forward_pass
from archgrow.tensor import InitScheme

from conftest import random_graph


def brute_force_actions(g):
    """Try every (kind, src, dst, init) on a copy and keep what add_layer accepts."""
    found = set()
    ids = sorted(g.layers)
    rng = np.random.default_rng(0)
    for kind, ak in ((LayerKind.DENSE_SEQ, ActionKind.ADD_DENSE_SEQ),
                     (LayerKind.DENSE_RES, ActionKind.ADD_DENSE_RES),
                     (LayerKind.CONV_SEQ, ActionKind.ADD_CONV_SEQ),
                     (LayerKind.CONV_RES, ActionKind.ADD_CONV_RES)):
        inits = list(InitScheme) if kind is LayerKind.DENSE_RES else [None]
        for u in ids:
            for v in ids:
                for init in inits:
                    h = g.copy()
                    try:
                        h.add_layer(kind, u, v, rng, init or InitScheme.RANDOM)
                    except StructuralError:
                        continue
                    if not h.validate():
                        found.add(Action(ak, u, v, init))
    found |= {Action(ActionKind.REMOVE, i) for i in g.hidden_ids}
    return found


def test_base_model_actions(rng):
    g = new_base_model((1, 28, 28), 10, 10, rng)
    acts = enumerate_actions(g)
    strs = [str(a) for a in acts]
    assert "add_dense_seq L0->L1" in strs
    assert "add_conv_seq L0->L1" in strs
    assert not any(a.kind is ActionKind.REMOVE for a in acts)
    res = [a for a in acts if a.kind is ActionKind.ADD_DENSE_RES]
    # the conv input emits 4*28*28 values, so identity (square) is not offered
    assert [a.init for a in res] == [InitScheme.RANDOM, InitScheme.ZERO]
    assert set(acts) == brute_force_actions(g)


def test_dense_base_offers_identity(rng):
    g = new_base_model((5,), 5, 3, rng)
    inits = [a.init for a in enumerate_actions(g) if a.kind is ActionKind.ADD_DENSE_RES]
    assert inits == [InitScheme.RANDOM, InitScheme.ZERO, InitScheme.IDENTITY]


def test_chain_sequential_count(rng):
    g = new_base_model((6,), 6, 3, rng)
    for _ in range(3):
        g.add_layer(LayerKind.DENSE_SEQ, g.layers[g.output].incoming[0], g.output, rng)
    seq = [a for a in enumerate_actions(g) if a.kind is ActionKind.ADD_DENSE_SEQ]
    assert len(seq) == len(g.edges()) == 4
    k = len(g)
    assert len(seq) <= k * (k - 1) // 2


def test_one_remove_per_hidden_layer(rng):
    g = new_base_model((6,), 6, 3, rng)
    g.add_layer(LayerKind.DENSE_SEQ, 0, 1, rng)
    g.add_layer(LayerKind.DENSE_RES, 0, 1, rng)
    removes = [a for a in enumerate_actions(g) if a.kind is ActionKind.REMOVE]
    assert len(removes) == 2


def test_zero_residual_keeps_prediction_scale(rng):
    g = new_base_model((6,), 6, 3, rng)
    x = rng.normal(size=(5, 6))
    new = execute(Action(ActionKind.ADD_DENSE_RES, 0, 1, InitScheme.ZERO), g, rng)
    r = max(new.layers)
    trace = forward_pass(new, [x])
    assert np.array_equal(trace.layers[r].a, np.zeros((5, 6)))
    # output averages the untouched branch with zeros, i.e. halves its input
    out = g.layers[1]
    a0 = forward_pass(g, [x]).layers[0].a
    z = (a0 / 2) @ out.weights + out.bias
    e = np.exp(z - z.max(axis=1, keepdims=True))
    assert np.allclose(trace.probs, e / e.sum(axis=1, keepdims=True), rtol=0, atol=1e-12)


def test_execute_does_not_mutate(rng):
    g = random_graph(2)
    snapshot = (g.edges(), {i: l.weights.copy() for i, l in g.layers.items()})
    for a in enumerate_actions(g):
        execute(a, g, rng)
    assert g.edges() == snapshot[0]
    assert all(np.array_equal(g.layers[i].weights, w) for i, w in snapshot[1].items())


def test_execute_remove_reconnects(rng):
    g = new_base_model((6,), 6, 3, rng)
    h = g.add_layer(LayerKind.DENSE_SEQ, 0, 1, rng)
    new = execute(Action(ActionKind.REMOVE, h), g, rng)
    assert new.edges() == [(0, 1)]


def test_stale_action(rng):
    g = new_base_model((6,), 6, 3, rng)
    h = g.add_layer(LayerKind.DENSE_SEQ, 0, 1, rng)
    gone = execute(Action(ActionKind.REMOVE, h), g, rng)
    with pytest.raises(StaleActionError):
        execute(Action(ActionKind.ADD_DENSE_SEQ, h, 1), gone, rng)
    with pytest.raises(StaleActionError):
        execute(Action(ActionKind.REMOVE, h), gone, rng)


def test_invalid_graph_is_rejected(rng):
    g = new_base_model((6,), 6, 3, rng)
    h = g.add_layer(LayerKind.DENSE_SEQ, 0, 1, rng)
    g.disconnect(h, 1)
    with pytest.raises(StructuralError):
        enumerate_actions(g)


@pytest.mark.parametrize("seed", range(200))
def test_closure(seed):
    g = random_graph(seed, max_hidden=5, side=3)
    rng = np.random.default_rng(seed)
    for a in enumerate_actions(g):
        assert execute(a, g, rng).validate() == [], str(a)


@pytest.mark.parametrize("seed", range(15))
def test_enumeration_matches_brute_force(seed):
    g = random_graph(seed, max_hidden=3, side=3)
    assert set(enumerate_actions(g)) == brute_force_actions(g)


def test_enumeration_is_ordered_and_stable():
    g = random_graph(7, max_hidden=5)
    a = enumerate_actions(g)
    assert a == enumerate_actions(g.copy())
    assert a == sorted(a, key=lambda x: x.sort_key)
    assert len(set(a)) == len(a)


@pytest.mark.parametrize("text", ["add_dense_res zero L3->L7", "remove L3",
                                  "add_conv_seq L0->L12", "add_dense_res identity L1->L2"])
def test_text_round_trip(text):
    assert str(Action.parse(text)) == text


def test_forward_works_after_every_action(rng):
    g = random_graph(4, max_hidden=3)
    for a in enumerate_actions(g):
        new = execute(a, g, rng)
        x = [rng.normal(size=(2,) + new.layers[i].in_shape) for i in new.inputs]
        assert forward(new, x).shape == (2, 3)
