"""Portable model export: serialize the trained network as ONNX wire bytes.

The writer emits the protobuf wire format directly from the explicit layer
table, so the export needs no graph tracer and no protobuf runtime. Field
numbers follow onnx.proto3. Embedded metadata carries the class order and
input layout that the inference side validates at load time.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from wastetrainer import CLASS_NAMES

OPSET = 13
IR_VERSION = 8


def _varint(v: int) -> bytes:
    out = bytearray()
    v &= (1 << 64) - 1
    while True:
        byte = v & 0x7F
        v >>= 7
        if v:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return _varint((field << 3) | wire)


def _f_varint(field: int, v: int) -> bytes:
    return _tag(field, 0) + _varint(v)


def _f_bytes(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + _varint(len(payload)) + payload


def _f_str(field: int, s: str) -> bytes:
    return _f_bytes(field, s.encode("utf-8"))


def _tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    body = b"".join(_f_varint(1, d) for d in arr.shape)
    body += _f_varint(2, 1)  # FLOAT
    body += _f_str(8, name)
    body += _f_bytes(9, arr.astype("<f4").tobytes())
    return body


def _attr_int(name: str, v: int) -> bytes:
    return _f_str(1, name) + _f_varint(3, v) + _f_varint(20, 2)  # AttributeProto.INT


def _attr_ints(name: str, values) -> bytes:
    body = _f_str(1, name)
    for v in values:
        body += _f_varint(8, int(v))
    return body + _f_varint(20, 7)  # AttributeProto.INTS


def _node(op: str, inputs, outputs, attrs=()) -> bytes:
    body = b"".join(_f_str(1, i) for i in inputs)
    body += b"".join(_f_str(2, o) for o in outputs)
    body += _f_str(4, op)
    body += b"".join(_f_bytes(5, a) for a in attrs)
    return body


def _value_info(name: str, dims) -> bytes:
    dim_msgs = b""
    for d in dims:
        if isinstance(d, str):
            dim_msgs += _f_bytes(1, _f_str(2, d))
        else:
            dim_msgs += _f_bytes(1, _f_varint(1, int(d)))
    tensor_type = _f_varint(1, 1) + _f_bytes(2, dim_msgs)
    return _f_str(1, name) + _f_bytes(2, _f_bytes(1, tensor_type))


def _graph_from_arch(arch, state: dict, input_size: int) -> bytes:
    nodes = []
    inits = []
    current = "images"
    conv_i = 0
    linear_i = 0
    torch_layer = 0
    for kind, p in arch:
        if kind == "conv":
            w = state[f"{torch_layer}.weight"]
            b = state[f"{torch_layer}.bias"]
            wn, bn = f"conv{conv_i}_w", f"conv{conv_i}_b"
            inits += [_tensor(wn, w), _tensor(bn, b)]
            out = f"conv{conv_i}_out"
            nodes.append(
                _node(
                    "Conv",
                    [current, wn, bn],
                    [out],
                    attrs=[
                        _attr_ints("kernel_shape", (p["kernel"], p["kernel"])),
                        _attr_ints("strides", (p["stride"], p["stride"])),
                        _attr_ints("pads", (p["pad"], p["pad"], p["pad"], p["pad"])),
                    ],
                )
            )
            current = out
            conv_i += 1
        elif kind == "relu":
            out = f"{current}_relu"
            nodes.append(_node("Relu", [current], [out]))
            current = out
        elif kind == "maxpool":
            out = f"{current}_pool"
            nodes.append(
                _node(
                    "MaxPool",
                    [current],
                    [out],
                    attrs=[
                        _attr_ints("kernel_shape", (p["kernel"], p["kernel"])),
                        _attr_ints("strides", (p["stride"], p["stride"])),
                    ],
                )
            )
            current = out
        elif kind == "gap":
            out = f"{current}_gap"
            nodes.append(_node("GlobalAveragePool", [current], [out]))
            current = out
        elif kind == "flatten":
            out = f"{current}_flat"
            nodes.append(_node("Flatten", [current], [out], attrs=[_attr_int("axis", 1)]))
            current = out
        elif kind == "linear":
            w = state[f"{torch_layer}.weight"]
            b = state[f"{torch_layer}.bias"]
            wn, bn = f"fc{linear_i}_w", f"fc{linear_i}_b"
            inits += [_tensor(wn, w), _tensor(bn, b)]
            out = f"fc{linear_i}_out"
            nodes.append(_node("Gemm", [current, wn, bn], [out], attrs=[_attr_int("transB", 1)]))
            current = out
            linear_i += 1
        else:
            raise ValueError(f"unexportable layer kind {kind!r}")
        torch_layer += 1
    nodes.append(_node("Softmax", [current], ["probs"], attrs=[_attr_int("axis", -1)]))

    body = b"".join(_f_bytes(1, n) for n in nodes)
    body += _f_str(2, "tile_classifier")
    body += b"".join(_f_bytes(5, t) for t in inits)
    body += _f_bytes(11, _value_info("images", ["batch", 3, input_size, input_size]))
    body += _f_bytes(12, _value_info("probs", ["batch", 2]))
    return body


def encode_model(arch, state: dict, input_size: int, extra_metadata: dict | None = None) -> bytes:
    metadata = {
        "class_names": json.dumps(list(CLASS_NAMES)),
        "input_layout": "NCHW",
        "input_scale": "1/255",
    }
    metadata.update(extra_metadata or {})
    body = _f_varint(1, IR_VERSION)
    body += _f_str(2, "wastemap-trainer")
    body += _f_str(3, "0.1.0")
    body += _f_bytes(7, _graph_from_arch(arch, state, input_size))
    body += _f_bytes(8, _f_str(1, "") + _f_varint(2, OPSET))
    for key, value in sorted(metadata.items()):
        body += _f_bytes(14, _f_str(1, key) + _f_str(2, value))
    return body


def export_portable(checkpoint_path: str | Path, out_path: str | Path) -> str:
    """Write the portable model file for a saved checkpoint."""
    ckpt = torch.load(checkpoint_path, map_location="cpu", weights_only=False)
    for key in ("state_dict", "arch", "input_size", "class_names"):
        if key not in ckpt:
            raise ValueError(f"checkpoint lacks required entry {key!r}")
    if list(ckpt["class_names"]) != list(CLASS_NAMES):
        raise ValueError(
            f"checkpoint class order {ckpt['class_names']} does not match {list(CLASS_NAMES)}"
        )
    final = ckpt["arch"][-1]
    if final[0] != "linear" or final[1]["out_features"] != 2:
        raise ValueError("checkpoint architecture does not end in a 2-class head")
    state = {k: v.detach().cpu().numpy() for k, v in ckpt["state_dict"].items()}
    data = encode_model(ckpt["arch"], state, ckpt["input_size"])
    out_path = Path(out_path)
    out_path.write_bytes(data)
    return str(out_path)
