"""Hand-rolled ONNX wire-format writer for constructing test model files.

Kept inside the test tree on purpose: the package only ever reads model
files, and the secondary trainer ships its own independent writer, so this
builder stands in for "some external exporter" during primary testing.
"""

import json
import struct

import numpy as np


def varint(v: int) -> bytes:
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


def tag(field: int, wire: int) -> bytes:
    return varint((field << 3) | wire)


def f_varint(field: int, v: int) -> bytes:
    return tag(field, 0) + varint(v)


def f_bytes(field: int, payload: bytes) -> bytes:
    return tag(field, 2) + varint(len(payload)) + payload


def f_string(field: int, s: str) -> bytes:
    return f_bytes(field, s.encode("utf-8"))


def tensor_proto(name: str, arr: np.ndarray) -> bytes:
    dtype_codes = {np.dtype("float32"): 1, np.dtype("int64"): 7}
    arr = np.ascontiguousarray(arr)
    body = b"".join(f_varint(1, int(d)) for d in arr.shape)
    body += f_varint(2, dtype_codes[arr.dtype])
    body += f_string(8, name)
    body += f_bytes(9, arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    return body


def attr_ints(name: str, values) -> bytes:
    body = f_string(1, name)
    for v in values:
        body += f_varint(8, int(v))
    body += f_varint(20, 7)  # AttributeProto.INTS
    return body


def attr_int(name: str, value: int) -> bytes:
    return f_string(1, name) + f_varint(3, value) + f_varint(20, 2)  # INT


def attr_float(name: str, value: float) -> bytes:
    return f_string(1, name) + tag(2, 5) + struct.pack("<f", value) + f_varint(20, 1)  # FLOAT


def node(op_type: str, inputs, outputs, attrs=()) -> bytes:
    body = b"".join(f_string(1, i) for i in inputs)
    body += b"".join(f_string(2, o) for o in outputs)
    body += f_string(4, op_type)
    body += b"".join(f_bytes(5, a) for a in attrs)
    return body


def value_info(name: str, dims) -> bytes:
    dim_msgs = b""
    for d in dims:
        if isinstance(d, str):
            dim_msgs += f_bytes(1, f_string(2, d))
        else:
            dim_msgs += f_bytes(1, f_varint(1, int(d)))
    shape = f_bytes(2, dim_msgs)
    tensor_type = f_varint(1, 1) + shape  # elem_type FLOAT
    return f_string(1, name) + f_bytes(2, f_bytes(1, tensor_type))


def graph(nodes, initializers, inputs, outputs, name="g") -> bytes:
    body = b"".join(f_bytes(1, n) for n in nodes)
    body += f_string(2, name)
    body += b"".join(f_bytes(5, t) for t in initializers)
    body += b"".join(f_bytes(11, vi) for vi in inputs)
    body += b"".join(f_bytes(12, vi) for vi in outputs)
    return body


def model(graph_bytes: bytes, metadata: dict | None = None, opset: int = 13) -> bytes:
    body = f_varint(1, 8)  # ir_version
    body += f_string(2, "test-builder")
    body += f_bytes(7, graph_bytes)
    body += f_bytes(8, f_string(1, "") + f_varint(2, opset))
    for key, value in (metadata or {}).items():
        body += f_bytes(14, f_string(1, key) + f_string(2, value))
    return body


def build_tiny_classifier(
    rng: np.random.Generator,
    input_size: int = 128,
    n_classes: int = 2,
    metadata: dict | None = None,
) -> tuple[bytes, dict]:
    """Small conv classifier as ONNX bytes plus its weights for oracle replay."""
    w1 = (rng.standard_normal((4, 3, 3, 3)) * 0.2).astype(np.float32)
    b1 = (rng.standard_normal(4) * 0.1).astype(np.float32)
    w2 = (rng.standard_normal((n_classes, 4)) * 0.5).astype(np.float32)
    b2 = (rng.standard_normal(n_classes) * 0.1).astype(np.float32)

    nodes = [
        node(
            "Conv",
            ["images", "w1", "b1"],
            ["c1"],
            attrs=[
                attr_ints("kernel_shape", (3, 3)),
                attr_ints("strides", (1, 1)),
                attr_ints("pads", (1, 1, 1, 1)),
            ],
        ),
        node("Relu", ["c1"], ["r1"]),
        node("MaxPool", ["r1"], ["p1"], attrs=[attr_ints("kernel_shape", (2, 2)), attr_ints("strides", (2, 2))]),
        node("GlobalAveragePool", ["p1"], ["gap"]),
        node("Flatten", ["gap"], ["flat"], attrs=[attr_int("axis", 1)]),
        node("Gemm", ["flat", "w2", "b2"], ["logits"], attrs=[attr_int("transB", 1)]),
        node("Softmax", ["logits"], ["probs"], attrs=[attr_int("axis", -1)]),
    ]
    inits = [
        tensor_proto("w1", w1),
        tensor_proto("b1", b1),
        tensor_proto("w2", w2),
        tensor_proto("b2", b2),
    ]
    if metadata is None:
        metadata = {
            "class_names": json.dumps(["background", "waste"]),
            "input_layout": "NCHW",
        }
    g = graph(
        nodes,
        inits,
        [value_info("images", ["batch", 3, input_size, input_size])],
        [value_info("probs", ["batch", n_classes])],
    )
    weights = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    return model(g, metadata), weights
