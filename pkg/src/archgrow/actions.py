"""Candidate structural mutations and their execution."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from archgrow.errors import StaleActionError, StructuralError
from archgrow.graph import LayerGraph, LayerKind
from archgrow.tensor import InitScheme


class ActionKind(str, Enum):
    ADD_DENSE_SEQ = "add_dense_seq"
    ADD_DENSE_RES = "add_dense_res"
    ADD_CONV_SEQ = "add_conv_seq"
    ADD_CONV_RES = "add_conv_res"
    REMOVE = "remove"

    @property
    def rank(self):
        return list(ActionKind).index(self)


_LAYER_KIND = {
    ActionKind.ADD_DENSE_SEQ: LayerKind.DENSE_SEQ,
    ActionKind.ADD_DENSE_RES: LayerKind.DENSE_RES,
    ActionKind.ADD_CONV_SEQ: LayerKind.CONV_SEQ,
    ActionKind.ADD_CONV_RES: LayerKind.CONV_RES,
}
_INIT_ORDER = (InitScheme.RANDOM, InitScheme.ZERO, InitScheme.IDENTITY)


@dataclass(frozen=True)
class Action:
    """One mutation. Add actions use ``src``/``dst``; removal uses ``src`` as the layer id."""

    kind: ActionKind
    src: int
    dst: int | None = None
    init: InitScheme | None = None

    @property
    def is_add(self) -> bool:
        return self.kind is not ActionKind.REMOVE

    @property
    def sort_key(self):
        init_rank = _INIT_ORDER.index(self.init) if self.init is not None else -1
        return (self.kind.rank, self.src, -1 if self.dst is None else self.dst, init_rank)

    def __str__(self):
        if self.kind is ActionKind.REMOVE:
            return f"remove L{self.src}"
        init = f" {self.init.value}" if self.init is not None else ""
        return f"{self.kind.value}{init} L{self.src}->L{self.dst}"

    @classmethod
    def parse(cls, text: str) -> Action:
        """Inverse of ``str(action)``."""
        parts = text.split()
        kind = ActionKind(parts[0])
        if kind is ActionKind.REMOVE:
            return cls(kind, int(parts[1].lstrip("L")))
        init = InitScheme(parts[1]) if len(parts) == 3 else None
        src, dst = parts[-1].split("->")
        return cls(kind, int(src.lstrip("L")), int(dst.lstrip("L")), init)


def enumerate_actions(g: LayerGraph) -> list[Action]:
    """Every legal mutation of ``g`` in a stable order.

    Dense layers may not feed a convolution layer and convolution layers only
    follow convolution layers. Identity-initialized residual layers are listed
    only where their weight matrix is square.
    """
    problems = g.validate()
    if problems:
        raise StructuralError("invalid-graph", "; ".join(problems))
    layers = g.layers
    edges = g.edges()
    pairs = sorted(g.path_pairs())
    out = []
    for u, v in edges:
        if not layers[v].is_conv:
            out.append(Action(ActionKind.ADD_DENSE_SEQ, u, v))
    for u, v in pairs:
        if layers[v].is_conv:
            continue
        for init in _INIT_ORDER:
            if init is InitScheme.IDENTITY and layers[u].out_width != g.def_neu:
                continue
            out.append(Action(ActionKind.ADD_DENSE_RES, u, v, init))
    for u, v in edges:
        if layers[u].is_conv:
            out.append(Action(ActionKind.ADD_CONV_SEQ, u, v))
    for u, v in pairs:
        if layers[u].is_conv:
            out.append(Action(ActionKind.ADD_CONV_RES, u, v))
    for h in g.hidden_ids:
        out.append(Action(ActionKind.REMOVE, h))
    out.sort(key=lambda a: a.sort_key)
    return out


def execute(action: Action, g: LayerGraph, rng) -> LayerGraph:
    """Apply ``action`` to a copy of ``g``; ``g`` itself is left untouched."""
    anchors = [action.src] if action.dst is None else [action.src, action.dst]
    missing = [a for a in anchors if a not in g]
    if missing:
        raise StaleActionError(f"{action}: layer(s) {', '.join(f'L{m}' for m in missing)} no longer exist")
    new = g.copy()
    if action.kind is ActionKind.REMOVE:
        new.remove_layer(action.src)
    else:
        new.add_layer(_LAYER_KIND[action.kind], action.src, action.dst, rng,
                      action.init or InitScheme.RANDOM)
    return new
