"""Forward and backward signal flow over a layer graph.

A layer fires once every incoming signal has arrived: it averages them,
applies its weights and activation, then resizes its activation to what each
receiver expects before sending. Convolutional receivers take the image batch
as is; dense receivers take the row-major flattening, resized by a
quasi-identity projection. The graph is walked in topological order, which
is a deterministic schedule for the same message flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from archgrow.errors import DeadlockError, InvalidArgumentError, ShapeError
from archgrow.graph import Layer, LayerGraph, LayerKind
from archgrow.tensor import (
    Activation,
    activation_grad,
    apply_activation,
    conv2d,
    conv2d_backward,
    project,
    project_back,
)

LOG_FLOOR = 1e-12

Gradients = dict[int, tuple[np.ndarray, np.ndarray]]


@dataclass
class LayerTrace:
    inbar: np.ndarray | None  # averaged input (dense) or im2col patches (conv)
    in_batch_shape: tuple
    z: np.ndarray
    a: np.ndarray


@dataclass
class ForwardTrace:
    """Intermediates of one forward pass, consumed by :func:`backward`."""

    probs: np.ndarray
    order: list[int]
    layers: dict[int, LayerTrace] = field(default_factory=dict)


def _send(src: Layer, dst: Layer, a: np.ndarray) -> np.ndarray:
    if dst.is_conv:
        if not src.is_conv or a.shape[1:] != dst.in_shape:
            raise ShapeError(f"L{dst.id} expects images {dst.in_shape}, L{src.id} sends {a.shape[1:]}")
        return a
    return project(a.reshape(a.shape[0], -1), dst.in_width)


def forward_pass(g: LayerGraph, inputs) -> ForwardTrace:
    """Run the model on one batch and keep what the backward pass needs."""
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    if len(inputs) != len(g.inputs):
        raise InvalidArgumentError(f"model has {len(g.inputs)} inputs, got {len(inputs)} arrays")
    batch = inputs[0].shape[0]
    feed = {}
    for layer_id, x in zip(g.inputs, inputs):
        x = np.asarray(x, dtype=np.float64)
        expected = g.layers[layer_id].in_shape
        if x.shape[0] != batch or x.shape[1:] != expected:
            raise ShapeError(f"input L{layer_id} expects (batch, {expected}), got {x.shape}")
        feed[layer_id] = x

    order = g.topological_order()
    trace = ForwardTrace(probs=None, order=order)
    for layer_id in order:
        layer = g.layers[layer_id]
        if layer.kind is LayerKind.INPUT:
            inbar = feed[layer_id]
        else:
            if not layer.incoming:
                raise DeadlockError(f"L{layer_id} has no incoming connection")
            signals = [_send(g.layers[u], layer, trace.layers[u].a) for u in layer.incoming]
            inbar = signals[0] if len(signals) == 1 else sum(signals) / len(signals)
        if layer.is_conv:
            z, cols = conv2d(inbar, layer.weights, layer.bias)
            kept = cols
        else:
            z = inbar @ layer.weights + layer.bias
            kept = inbar
        a = apply_activation(layer.activation, z)
        trace.layers[layer_id] = LayerTrace(kept, inbar.shape, z, a)
    trace.probs = trace.layers[g.output].a
    return trace


def forward(g: LayerGraph, inputs) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return forward_pass(g, inputs).probs


def _check_labels(probs, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != probs.shape[0]:
        raise InvalidArgumentError(f"{probs.shape[0]} predictions but {labels.shape} labels")
    return labels.astype(np.int64)


def loss(probs: np.ndarray, labels) -> float:
    """Mean cross-entropy; probabilities are floored at 1e-12 before the log."""
    labels = _check_labels(probs, labels)
    p = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(p, LOG_FLOOR))))


def backward(g: LayerGraph, trace: ForwardTrace, labels) -> Gradients:
    """Gradients of the mean cross-entropy for every layer's weights and bias."""
    probs = trace.probs
    labels = _check_labels(probs, labels)
    batch = probs.shape[0]
    out = g.layers[g.output]
    if out.activation is not Activation.SOFTMAX:
        raise InvalidArgumentError("backward expects a softmax output layer")

    grad_a: dict[int, np.ndarray] = {}
    grads: Gradients = {}
    for layer_id in reversed(trace.order):
        layer = g.layers[layer_id]
        t = trace.layers[layer_id]
        if layer_id == g.output:
            gz = probs.copy()
            gz[np.arange(batch), labels] -= 1.0
            gz /= batch
        else:
            ga = grad_a.get(layer_id)
            if ga is None:
                ga = np.zeros_like(t.a)
            gz = activation_grad(layer.activation, t.z, ga)
        if layer.is_conv:
            g_in, dw, db = conv2d_backward(gz, t.inbar, layer.weights, t.in_batch_shape)
        else:
            dw = t.inbar.T @ gz
            db = gz.sum(axis=0)
            g_in = gz @ layer.weights.T
        grads[layer_id] = (dw, db)
        if layer.kind is LayerKind.INPUT:
            continue
        share = g_in / len(layer.incoming)
        for u in layer.incoming:
            src = g.layers[u]
            if layer.is_conv:
                back = share
            else:
                back = project_back(share, src.out_width).reshape((batch,) + src.out_shape)
            if u in grad_a:
                grad_a[u] = grad_a[u] + back
            else:
                grad_a[u] = back
    return grads


def sgd_step(g: LayerGraph, grads: Gradients, lr: float) -> LayerGraph:
    """Plain SGD update, in place."""
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be non-negative, got {lr}")
    for layer_id, (dw, db) in grads.items():
        layer = g.layers[layer_id]
        layer.weights -= lr * dw
        layer.bias -= lr * db
    return g


def predict(g: LayerGraph, inputs, batch_size: int = 256) -> np.ndarray:
    """Forward in chunks so large evaluation sets fit in memory."""
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    n = inputs[0].shape[0]
    parts = [forward(g, [x[i:i + batch_size] for x in inputs]) for i in range(0, n, batch_size)]
    return np.concatenate(parts, axis=0)


def train_epoch(g: LayerGraph, ds, lr: float, batch_size: int, rng) -> tuple[float, float]:
    """One shuffled pass of mini-batch SGD over ``ds``.

    Returns the accuracy and mean loss of the predictions made before each
    batch's update, which costs nothing extra to collect.
    """
    n = len(ds)
    order = rng.permutation(n)
    correct = 0
    total_loss = 0.0
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        y = ds.labels[idx]
        trace = forward_pass(g, [x[idx] for x in ds.inputs])
        correct += int((trace.probs.argmax(axis=1) == y).sum())
        total_loss += loss(trace.probs, y) * idx.size
        sgd_step(g, backward(g, trace, y), lr)
    return correct / n, total_loss / n


def evaluate(g: LayerGraph, ds, batch_size: int = 256) -> tuple[float, float]:
    """Accuracy and mean cross-entropy of ``g`` on ``ds``; ties go to the lowest class."""
    probs = predict(g, ds.inputs, batch_size)
    return float((probs.argmax(axis=1) == ds.labels).mean()), loss(probs, ds.labels)
