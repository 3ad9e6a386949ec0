import struct

import numpy as np
import pydot
import pytest

from archgrow.errors import ModelLoadError
from archgrow.graph import new_base_model
from archgrow.persist import MAGIC, export_dot, load_model, model_hash, save_model, write_atomic
from archgrow.propagation import forward

from conftest import random_graph, random_inputs


def test_dot_base_model(rng):
    text = export_dot(new_base_model((1, 28, 28), 10, 10, rng))
    (graph,) = pydot.graph_from_dot_data(text)
    assert len(graph.get_nodes()) == 3  # two layers plus the "node" defaults entry
    assert len(graph.get_edges()) == 1
    assert '"L1" [label="L1/output/10"' in text


@pytest.mark.parametrize("seed", range(100))
def test_dot_parses(seed):
    g = random_graph(seed, max_hidden=5)
    (graph,) = pydot.graph_from_dot_data(export_dot(g))
    nodes = {n.get_name().strip('"') for n in graph.get_nodes()} - {"node"}
    assert nodes == {f"L{i}" for i in g.layers}
    edges = {(e.get_source().strip('"'), e.get_destination().strip('"')) for e in graph.get_edges()}
    assert edges == {(f"L{u}", f"L{v}") for u, v in g.edges()}


def test_dot_is_stable():
    g = random_graph(3)
    assert export_dot(g) == export_dot(g.copy())


@pytest.mark.parametrize("seed", range(10))
def test_round_trip(seed):
    g = random_graph(seed)
    h = load_model(save_model(g))
    assert h.edges() == g.edges()
    assert h.inputs == g.inputs and h.output == g.output and h.next_id == g.next_id
    for i, l in g.layers.items():
        assert h.layers[i].kind == l.kind and h.layers[i].init == l.init
        assert h.layers[i].weights.tobytes() == l.weights.tobytes()
        assert h.layers[i].bias.tobytes() == l.bias.tobytes()
    x = random_inputs(g, 3, np.random.default_rng(seed))
    assert forward(h, x).tobytes() == forward(g, x).tobytes()
    assert model_hash(h) == model_hash(g)


def test_truncated():
    buf = save_model(random_graph(1))
    for cut in (1, 100, len(buf) - 5):
        with pytest.raises(ModelLoadError):
            load_model(buf[:-cut])


def test_bad_version():
    buf = bytearray(save_model(random_graph(1)))
    buf[len(MAGIC)] = 9
    with pytest.raises(ModelLoadError, match="version"):
        load_model(bytes(buf))


def test_bad_magic_and_corruption():
    buf = save_model(random_graph(1))
    with pytest.raises(ModelLoadError, match="magic"):
        load_model(b"X" + buf[1:])
    flipped = bytearray(buf)
    flipped[-20] ^= 0xFF
    with pytest.raises(ModelLoadError, match="checksum"):
        load_model(bytes(flipped))


def test_header_layout():
    buf = save_model(random_graph(1))
    assert buf.startswith(MAGIC)
    version, header_len = struct.unpack_from("<BI", buf, len(MAGIC))
    assert version == 1 and header_len < len(buf)


def test_write_atomic(tmp_path):
    p = tmp_path / "x.bin"
    write_atomic(p, b"one")
    write_atomic(p, "two")
    assert p.read_bytes() == b"two"
    assert [q.name for q in tmp_path.iterdir()] == ["x.bin"]
