"""Layer graph: storage, structural rules and base-model construction.

A model is a directed acyclic graph whose nodes are layers. Every layer keeps
its own incoming and outgoing id lists; the graph's edge set is exactly the
union of those lists. Ids are assigned monotonically and never reused.
"""

from __future__ import annotations

import copy
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from archgrow.errors import (
    ForbiddenRemovalError,
    InvalidArgumentError,
    LayerNotFoundError,
    StructuralError,
)
from archgrow.tensor import KERNEL, Activation, InitScheme, init_weights

DEFAULT_CONV_CHANNELS = 4


class LayerKind(str, Enum):
    INPUT = "input"
    OUTPUT = "output"
    DENSE_SEQ = "dense_seq"
    DENSE_RES = "dense_res"
    CONV_SEQ = "conv_seq"
    CONV_RES = "conv_res"

    @property
    def is_conv(self):
        return self in (LayerKind.CONV_SEQ, LayerKind.CONV_RES)

    @property
    def is_residual(self):
        return self in (LayerKind.DENSE_RES, LayerKind.CONV_RES)

    @property
    def is_hidden(self):
        return self not in (LayerKind.INPUT, LayerKind.OUTPUT)


@dataclass
class Layer:
    """One node of the graph.

    ``in_shape`` is ``(features,)`` for dense layers and ``(channels, height,
    width)`` for convolutional ones; ``neurons`` is the unit count of a dense
    layer or the output channel count of a convolutional one.
    """

    id: int
    kind: LayerKind
    in_shape: tuple[int, ...]
    neurons: int
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation
    init: InitScheme | None = None
    incoming: list[int] = field(default_factory=list)
    outgoing: list[int] = field(default_factory=list)

    @property
    def is_conv(self) -> bool:
        return len(self.in_shape) == 3

    @property
    def out_shape(self) -> tuple[int, ...]:
        if self.is_conv:
            return (self.neurons, self.in_shape[1], self.in_shape[2])
        return (self.neurons,)

    @property
    def in_width(self) -> int:
        return math.prod(self.in_shape)

    @property
    def out_width(self) -> int:
        return math.prod(self.out_shape)

    @property
    def fan_in(self) -> int:
        return self.in_shape[0] * KERNEL * KERNEL if self.is_conv else self.in_shape[0]

    @property
    def label(self) -> str:
        return f"L{self.id}"


class LayerGraph:
    """Mutable layer DAG. Copy with :meth:`copy` before speculative edits."""

    def __init__(self, def_neu: int, conv_channels: int = DEFAULT_CONV_CHANNELS):
        if def_neu < 1 or conv_channels < 1:
            raise InvalidArgumentError("def_neu and conv_channels must be positive")
        self.def_neu = def_neu
        self.conv_channels = conv_channels
        self.layers: dict[int, Layer] = {}
        self.inputs: list[int] = []
        self.output: int | None = None
        self.next_id = 0

    def copy(self) -> LayerGraph:
        return copy.deepcopy(self)

    def __getitem__(self, layer_id: int) -> Layer:
        try:
            return self.layers[layer_id]
        except KeyError:
            raise LayerNotFoundError(f"no layer L{layer_id}") from None

    def __contains__(self, layer_id) -> bool:
        return layer_id in self.layers

    def __len__(self):
        return len(self.layers)

    # -- construction primitives ---------------------------------------------

    def _create(self, kind, in_shape, neurons, activation, rng, init=InitScheme.RANDOM):
        layer_id = self.next_id
        self.next_id += 1
        in_shape = tuple(int(s) for s in in_shape)
        fan_in = in_shape[0] * KERNEL * KERNEL if len(in_shape) == 3 else in_shape[0]
        layer = Layer(
            id=layer_id,
            kind=kind,
            in_shape=in_shape,
            neurons=int(neurons),
            weights=init_weights(init, fan_in, neurons, rng),
            bias=np.zeros(neurons),
            activation=activation,
            init=init if kind is LayerKind.DENSE_RES else None,
        )
        self.layers[layer_id] = layer
        return layer

    def add_input(self, shape, rng) -> int:
        """Add an input layer. A 3-tuple shape makes it a 3x3 convolution."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        if len(shape) not in (1, 3) or min(shape) < 1:
            raise InvalidArgumentError(f"input shape must be (features,) or (C, H, W), got {shape}")
        neurons = self.conv_channels if len(shape) == 3 else self.def_neu
        layer = self._create(LayerKind.INPUT, shape, neurons, Activation.RELU, rng)
        self.inputs.append(layer.id)
        return layer.id

    def add_output(self, classes: int, rng, in_width: int | None = None) -> int:
        if self.output is not None:
            raise InvalidArgumentError("graph already has an output layer")
        if classes < 2:
            raise InvalidArgumentError(f"need at least 2 classes, got {classes}")
        width = self.def_neu if in_width is None else in_width
        layer = self._create(LayerKind.OUTPUT, (width,), classes, Activation.SOFTMAX, rng)
        self.output = layer.id
        return layer.id

    def add_dense(self, in_width: int, rng, neurons: int | None = None,
                  kind=LayerKind.DENSE_SEQ, init=InitScheme.RANDOM) -> int:
        """Add an unconnected hidden dense layer (used by model builders)."""
        neurons = self.def_neu if neurons is None else neurons
        return self._create(kind, (in_width,), neurons, Activation.RELU, rng, init).id

    def connect(self, src: int, dst: int):
        a, b = self[src], self[dst]
        if dst in a.outgoing:
            return
        a.outgoing.append(dst)
        b.incoming.append(src)

    def disconnect(self, src: int, dst: int):
        a, b = self[src], self[dst]
        a.outgoing.remove(dst)
        b.incoming.remove(src)

    # -- queries ---------------------------------------------------------------

    @property
    def hidden_ids(self) -> list[int]:
        return sorted(i for i, l in self.layers.items() if l.kind.is_hidden)

    def edges(self) -> list[tuple[int, int]]:
        return sorted((u, v) for u, l in self.layers.items() for v in l.outgoing)

    def descendants(self, src: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self[src].outgoing)
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(self.layers[v].outgoing)
        return seen

    def ancestors(self, dst: int) -> set[int]:
        seen: set[int] = set()
        stack = list(self[dst].incoming)
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(self.layers[v].incoming)
        return seen

    def has_path(self, src: int, dst: int) -> bool:
        return dst in self.descendants(src)

    def path_pairs(self) -> set[tuple[int, int]]:
        """Ordered pairs joined by a directed path of length >= 1."""
        return {(u, v) for u in self.layers for v in self.descendants(u)}

    def topological_order(self) -> list[int]:
        """Kahn's order, smallest id first among ready layers."""
        indeg = {i: len(l.incoming) for i, l in self.layers.items()}
        ready = [i for i, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for v in self.layers[u].outgoing:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(ready, v)
        if len(order) != len(self.layers):
            raise StructuralError("acyclic", "graph contains a cycle")
        return order

    def parameter_count(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers.values())

    # -- mutations -------------------------------------------------------------

    def add_layer(self, kind: LayerKind, src: int, dst: int, rng,
                  init: InitScheme | str = InitScheme.RANDOM) -> int:
        """Insert a hidden layer of ``kind`` between ``src`` and ``dst``; return its id.

        Sequential kinds replace the edge ``src -> dst`` by ``src -> new -> dst``.
        Residual kinds add ``src -> new -> dst`` next to an existing path.
        """
        kind = LayerKind(kind)
        init = InitScheme(init)
        if not kind.is_hidden:
            raise StructuralError("hidden-kind", f"cannot insert a {kind.value} layer")
        a, b = self[src], self[dst]
        if kind.is_residual:
            if not self.has_path(src, dst):
                raise StructuralError("residual-needs-path", f"no path L{src} -> L{dst}")
        elif dst not in a.outgoing:
            raise StructuralError("sequential-needs-edge", f"no edge L{src} -> L{dst}")
        if kind.is_conv:
            if not a.is_conv:
                raise StructuralError("conv-source", f"convolution layer cannot follow dense layer L{src}")
            in_shape = a.out_shape
            neurons = self.conv_channels
            if b.is_conv and b.in_shape != (neurons,) + in_shape[1:]:
                raise StructuralError("conv-shape", f"L{dst} expects {b.in_shape}")
        else:
            if b.is_conv:
                raise StructuralError("conv-source", f"dense layer cannot feed convolution layer L{dst}")
            in_shape = (a.out_width,)
            neurons = self.def_neu
        if kind is not LayerKind.DENSE_RES:
            init = InitScheme.RANDOM
        elif init is InitScheme.IDENTITY and in_shape[0] != neurons:
            raise StructuralError("identity-square", f"identity init needs width {neurons}, L{src} gives {in_shape[0]}")
        layer = self._create(kind, in_shape, neurons, Activation.RELU, rng, init)
        if not kind.is_residual:
            self.disconnect(src, dst)
        self.connect(src, layer.id)
        self.connect(layer.id, dst)
        return layer.id

    def remove_layer(self, layer_id: int):
        """Delete a hidden layer, reconnecting predecessors to successors where needed."""
        layer = self[layer_id]
        if not layer.kind.is_hidden:
            raise ForbiddenRemovalError(f"L{layer_id} is an {layer.kind.value} layer")
        preds, succs = list(layer.incoming), list(layer.outgoing)
        for p in preds:
            self.disconnect(p, layer_id)
        for s in succs:
            self.disconnect(layer_id, s)
        del self.layers[layer_id]
        for p in preds:
            for s in succs:
                if not self.has_path(p, s):
                    self.connect(p, s)

    # -- validation ------------------------------------------------------------

    def validate(self) -> list[str]:
        """All structural-rule violations; an empty list means the graph is valid."""
        problems = []
        for i, l in self.layers.items():
            for v in l.outgoing:
                if v not in self.layers or i not in self.layers[v].incoming:
                    problems.append(f"edge-mirror: L{i} -> L{v} not mirrored")
            for u in l.incoming:
                if u not in self.layers or i not in self.layers[u].outgoing:
                    problems.append(f"edge-mirror: L{u} -> L{i} not mirrored")
            if len(set(l.outgoing)) != len(l.outgoing) or len(set(l.incoming)) != len(l.incoming):
                problems.append(f"edge-mirror: duplicate edge at L{i}")
        if problems:
            return problems

        if not self.inputs:
            problems.append("inputs: graph has no input layer")
        if self.output is None or self.output not in self.layers:
            problems.append("output: graph has no output layer")
            return problems
        out = self.layers[self.output]
        if out.kind is not LayerKind.OUTPUT or out.outgoing:
            problems.append(f"output: L{out.id} must be an output layer with no outgoing edges")
        for i in self.inputs:
            if i not in self.layers or self.layers[i].kind is not LayerKind.INPUT:
                problems.append(f"inputs: L{i} is not an input layer")
            elif self.layers[i].incoming:
                problems.append(f"inputs: L{i} has incoming edges")
        for i, l in self.layers.items():
            if l.kind is LayerKind.INPUT and i not in self.inputs:
                problems.append(f"inputs: L{i} is an unregistered input layer")
            if l.kind is LayerKind.OUTPUT and i != self.output:
                problems.append(f"output: L{i} is a second output layer")
        if problems:
            return problems

        try:
            self.topological_order()
        except StructuralError:
            problems.append("acyclic: graph contains a cycle")
            return problems

        reaches_output = self.ancestors(self.output) | {self.output}
        from_inputs = set(self.inputs)
        for i in self.inputs:
            from_inputs |= self.descendants(i)
            if i not in reaches_output:
                problems.append(f"deadlock: input L{i} has no path to the output")
        for i, l in sorted(self.layers.items()):
            if not l.kind.is_hidden:
                continue
            if not l.outgoing or i not in reaches_output:
                problems.append(f"dead-end: L{i} has no path to the output")
            if not l.incoming or i not in from_inputs:
                problems.append(f"orphan: L{i} is unreachable from every input")

        for i, l in sorted(self.layers.items()):
            for u in l.incoming:
                src = self.layers[u]
                if l.is_conv and l.kind is not LayerKind.INPUT:
                    if not src.is_conv:
                        problems.append(f"conv-order: convolution L{i} fed by dense L{u}")
                    elif src.out_shape != l.in_shape:
                        problems.append(f"shape: L{u} emits {src.out_shape}, L{i} expects {l.in_shape}")
            if l.weights.shape != (l.fan_in, l.neurons) or l.bias.shape != (l.neurons,):
                problems.append(f"shape: L{i} parameters do not match its sizes")
        return problems


def new_base_model(input_shape, def_neu: int, classes: int, rng,
                   conv_channels: int = DEFAULT_CONV_CHANNELS) -> LayerGraph:
    """Smallest model: one input layer wired straight to a softmax output.

    ``input_shape`` is ``(channels, height, width)`` for a convolutional input
    or a feature count for a dense one. The output layer reads ``def_neu``
    features, so the input's activation is resized onto that width.
    """
    g = LayerGraph(def_neu, conv_channels)
    src = g.add_input(input_shape, rng)
    dst = g.add_output(classes, rng)
    g.connect(src, dst)
    return g
