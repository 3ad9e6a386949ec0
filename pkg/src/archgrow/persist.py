"""Model files, DOT export and atomic file writes.

Model file layout, all integers little-endian::

    b"ARCHGROW"  magic
    u8           format version
    u32          header length in bytes
    header       UTF-8 JSON describing graph structure and array shapes
    payload      every layer's weights then bias as float64, ascending layer id
    u32          CRC-32 of all preceding bytes
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from archgrow.errors import ModelLoadError
from archgrow.graph import Layer, LayerGraph, LayerKind
from archgrow.tensor import Activation, InitScheme

MAGIC = b"ARCHGROW"
VERSION = 1


def save_model(g: LayerGraph) -> bytes:
    layers = []
    payload = []
    for layer_id in sorted(g.layers):
        l = g.layers[layer_id]
        layers.append({
            "id": l.id,
            "kind": l.kind.value,
            "init": l.init.value if l.init is not None else None,
            "activation": l.activation.value,
            "in_shape": list(l.in_shape),
            "neurons": l.neurons,
            "incoming": l.incoming,
            "outgoing": l.outgoing,
            "w_shape": list(l.weights.shape),
        })
        payload.append(np.ascontiguousarray(l.weights, dtype="<f8").tobytes())
        payload.append(np.ascontiguousarray(l.bias, dtype="<f8").tobytes())
    header = json.dumps({
        "def_neu": g.def_neu,
        "conv_channels": g.conv_channels,
        "next_id": g.next_id,
        "inputs": g.inputs,
        "output": g.output,
        "layers": layers,
    }, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<BI", VERSION, len(header)) + header + b"".join(payload)
    return body + struct.pack("<I", zlib.crc32(body))


def load_model(buf: bytes) -> LayerGraph:
    fixed = len(MAGIC) + 5
    if len(buf) < fixed + 4:
        raise ModelLoadError(f"model file truncated: {len(buf)} bytes")
    if buf[:len(MAGIC)] != MAGIC:
        raise ModelLoadError("not a model file (bad magic)")
    version, header_len = struct.unpack_from("<BI", buf, len(MAGIC))
    if version != VERSION:
        raise ModelLoadError(f"unsupported model format version {version}, expected {VERSION}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise ModelLoadError("model file corrupted or truncated (checksum mismatch)")
    try:
        header = json.loads(buf[fixed:fixed + header_len].decode())
        g = LayerGraph(header["def_neu"], header["conv_channels"])
        g.next_id = header["next_id"]
        g.inputs = list(header["inputs"])
        g.output = header["output"]
        offset = fixed + header_len
        for spec in header["layers"]:
            w_shape = tuple(spec["w_shape"])
            w_count = int(np.prod(w_shape))
            weights = np.frombuffer(buf, "<f8", w_count, offset).reshape(w_shape).astype(np.float64)
            offset += 8 * w_count
            bias = np.frombuffer(buf, "<f8", spec["neurons"], offset).astype(np.float64)
            offset += 8 * spec["neurons"]
            g.layers[spec["id"]] = Layer(
                id=spec["id"],
                kind=LayerKind(spec["kind"]),
                in_shape=tuple(spec["in_shape"]),
                neurons=spec["neurons"],
                weights=weights,
                bias=bias,
                activation=Activation(spec["activation"]),
                init=InitScheme(spec["init"]) if spec["init"] else None,
                incoming=list(spec["incoming"]),
                outgoing=list(spec["outgoing"]),
            )
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelLoadError(f"model file corrupted: {exc}") from exc
    if offset != len(buf) - 4:
        raise ModelLoadError("model file has trailing or missing parameter bytes")
    problems = g.validate()
    if problems:
        raise ModelLoadError("stored graph is invalid: " + "; ".join(problems))
    return g


def model_hash(g: LayerGraph) -> str:
    return hashlib.sha256(save_model(g)).hexdigest()


def export_dot(g: LayerGraph, name: str = "model") -> str:
    """Graphviz digraph; nodes are labelled ``id/kind/neurons`` in id order."""
    lines = [f"digraph {name} {{", "  rankdir=TB;", "  node [shape=box];"]
    for layer_id in sorted(g.layers):
        l = g.layers[layer_id]
        shape = ', shape=ellipse' if not l.kind.is_hidden else ""
        lines.append(f'  "{l.label}" [label="{l.label}/{l.kind.value}/{l.neurons}"{shape}];')
    for u, v in g.edges():
        lines.append(f'  "L{u}" -> "L{v}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_atomic(path, data: bytes | str):
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
