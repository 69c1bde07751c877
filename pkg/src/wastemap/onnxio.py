"""Portable operator-graph model files: wire-format reader and numpy executor.

Reads the ONNX protobuf wire format directly (no protobuf runtime) and
executes the small operator vocabulary that 2-class tile classifiers use.
The file contract enforced here is the cross-component boundary with the
trainer:

  - metadata_props must carry class_names='["background","waste"]' and
    input_layout ('NCHW' or 'NHWC')
  - one graph input shaped (N, 3, S, S) or (N, S, S, 3)
  - one output with 2 classes (probabilities)

Field numbers follow onnx.proto3; only the subset needed for inference is
interpreted, everything else is skipped, so files produced by standard
exporters remain loadable as long as they stay within the op vocabulary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from wastemap.errors import ContractError, ModelParseError

REQUIRED_CLASS_NAMES = ["background", "waste"]

# --- protobuf wire decoding -------------------------------------------------


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelParseError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelParseError("varint too long")


def parse_message(buf: bytes) -> dict[int, list]:
    """Field number -> list of raw values ((wire_type, payload) tuples)."""
    fields: dict[int, list] = {}
    pos = 0
    end = len(buf)
    while pos < end:
        key, pos = _read_varint(buf, pos)
        number = key >> 3
        wire = key & 0x7
        if wire == 0:
            value, pos = _read_varint(buf, pos)
        elif wire == 1:
            if pos + 8 > end:
                raise ModelParseError("truncated fixed64 field")
            value = buf[pos : pos + 8]
            pos += 8
        elif wire == 2:
            length, pos = _read_varint(buf, pos)
            if pos + length > end:
                raise ModelParseError("truncated length-delimited field")
            value = buf[pos : pos + length]
            pos += length
        elif wire == 5:
            if pos + 4 > end:
                raise ModelParseError("truncated fixed32 field")
            value = buf[pos : pos + 4]
            pos += 4
        else:
            raise ModelParseError(f"unsupported wire type {wire}")
        fields.setdefault(number, []).append((wire, value))
    return fields


def _one(fields: dict, number: int, default=None):
    vals = fields.get(number)
    return vals[-1][1] if vals else default


def _string(fields: dict, number: int, default: str = "") -> str:
    raw = _one(fields, number)
    return raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else default


def _repeated_varints(fields: dict, number: int) -> list[int]:
    out: list[int] = []
    for wire, value in fields.get(number, []):
        if wire == 0:
            out.append(value)
        elif wire == 2:  # packed
            pos = 0
            while pos < len(value):
                v, pos = _read_varint(value, pos)
                out.append(v)
    return out


def _zigzag_to_signed(v: int) -> int:
    # onnx int64 fields are plain two's complement varints
    return v - (1 << 64) if v >= (1 << 63) else v


# --- ONNX structures --------------------------------------------------------

_DTYPES = {1: np.float32, 2: np.uint8, 3: np.int8, 6: np.int32, 7: np.int64, 11: np.float64}


def _parse_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    f = parse_message(buf)
    dims = [_zigzag_to_signed(d) for d in _repeated_varints(f, 1)]
    data_type = _one(f, 2)
    if isinstance(data_type, (bytes, bytearray)):
        raise ModelParseError("tensor data_type has unexpected wire type")
    if data_type not in _DTYPES:
        raise ModelParseError(f"unsupported tensor data type {data_type}")
    dtype = _DTYPES[data_type]
    name = _string(f, 8)
    raw = _one(f, 9)
    if raw is not None:
        arr = np.frombuffer(raw, dtype=dtype)
    else:
        if dtype == np.float32:
            packed = b"".join(v for w, v in f.get(4, []) if w == 2)
            if packed:
                arr = np.frombuffer(packed, dtype="<f4")
            else:
                arr = np.array(
                    [struct.unpack("<f", v)[0] for w, v in f.get(4, []) if w == 5],
                    dtype=np.float32,
                )
        elif dtype == np.int64:
            arr = np.array([_zigzag_to_signed(v) for v in _repeated_varints(f, 7)], dtype=np.int64)
        else:
            raise ModelParseError(f"tensor {name!r} carries no raw_data")
    try:
        arr = arr.reshape(dims) if dims else arr
    except ValueError as exc:
        raise ModelParseError(f"tensor {name!r}: data does not match dims {dims}") from exc
    return name, arr


@dataclass
class _Attr:
    name: str
    f: float | None = None
    i: int | None = None
    s: str | None = None
    floats: list[float] = field(default_factory=list)
    ints: list[int] = field(default_factory=list)


def _parse_attribute(buf: bytes) -> _Attr:
    f = parse_message(buf)
    attr = _Attr(name=_string(f, 1))
    raw_f = _one(f, 2)
    if isinstance(raw_f, (bytes, bytearray)) and len(raw_f) == 4:
        attr.f = struct.unpack("<f", raw_f)[0]
    raw_i = _one(f, 3)
    if isinstance(raw_i, int):
        attr.i = _zigzag_to_signed(raw_i)
    raw_s = _one(f, 4)
    if isinstance(raw_s, (bytes, bytearray)):
        attr.s = raw_s.decode("utf-8", "replace")
    packed_floats = b"".join(v for w, v in f.get(7, []) if w == 2)
    if packed_floats:
        attr.floats = list(np.frombuffer(packed_floats, dtype="<f4").astype(float))
    else:
        attr.floats = [struct.unpack("<f", v)[0] for w, v in f.get(7, []) if w == 5]
    attr.ints = [_zigzag_to_signed(v) for v in _repeated_varints(f, 8)]
    return attr


@dataclass
class _Node:
    op_type: str
    inputs: list[str]
    outputs: list[str]
    attrs: dict[str, _Attr]

    def attr_ints(self, name: str, default):
        a = self.attrs.get(name)
        return list(a.ints) if a and a.ints else list(default)

    def attr_int(self, name: str, default: int) -> int:
        a = self.attrs.get(name)
        return a.i if a and a.i is not None else default

    def attr_float(self, name: str, default: float) -> float:
        a = self.attrs.get(name)
        return a.f if a and a.f is not None else default


def _parse_node(buf: bytes) -> _Node:
    f = parse_message(buf)
    return _Node(
        op_type=_string(f, 4),
        inputs=[v.decode("utf-8") for w, v in f.get(1, []) if w == 2],
        outputs=[v.decode("utf-8") for w, v in f.get(2, []) if w == 2],
        attrs={a.name: a for a in (_parse_attribute(v) for w, v in f.get(5, []) if w == 2)},
    )


def _parse_value_info(buf: bytes) -> tuple[str, list]:
    f = parse_message(buf)
    name = _string(f, 1)
    dims: list = []
    type_raw = _one(f, 2)
    if isinstance(type_raw, (bytes, bytearray)):
        tmsg = parse_message(type_raw)
        tensor_raw = _one(tmsg, 1)
        if isinstance(tensor_raw, (bytes, bytearray)):
            tt = parse_message(tensor_raw)
            shape_raw = _one(tt, 2)
            if isinstance(shape_raw, (bytes, bytearray)):
                shape = parse_message(shape_raw)
                for wire, dim_buf in shape.get(1, []):
                    if wire != 2:
                        continue
                    dmsg = parse_message(dim_buf)
                    dv = _one(dmsg, 1)
                    if isinstance(dv, int):
                        dims.append(int(dv))
                    else:
                        dims.append(_string(dmsg, 2) or None)
    return name, dims


# --- model ------------------------------------------------------------------


@dataclass
class OnnxModel:
    nodes: list[_Node]
    initializers: dict[str, np.ndarray]
    input_name: str
    input_dims: list
    output_name: str
    output_dims: list
    metadata: dict[str, str]
    opset: int

    @property
    def input_layout(self) -> str:
        return self.metadata.get("input_layout", "NCHW")

    @property
    def class_names(self) -> list[str]:
        return json.loads(self.metadata["class_names"])

    def run(self, x: np.ndarray) -> np.ndarray:
        values: dict[str, np.ndarray] = dict(self.initializers)
        values[self.input_name] = np.asarray(x, dtype=np.float32)
        for node in self.nodes:
            _execute(node, values)
        try:
            return values[self.output_name]
        except KeyError as exc:
            raise ModelParseError(f"graph never produced output {self.output_name!r}") from exc


def parse_model(data: bytes) -> OnnxModel:
    fields = parse_message(data)
    graph_raw = _one(fields, 7)
    if not isinstance(graph_raw, (bytes, bytearray)):
        raise ModelParseError("model carries no graph")
    metadata: dict[str, str] = {}
    for wire, entry in fields.get(14, []):
        if wire != 2:
            continue
        e = parse_message(entry)
        metadata[_string(e, 1)] = _string(e, 2)
    opset = 0
    for wire, op_raw in fields.get(8, []):
        if wire != 2:
            continue
        o = parse_message(op_raw)
        if _string(o, 1) == "":  # default ai.onnx domain
            v = _one(o, 2)
            if isinstance(v, int):
                opset = max(opset, v)

    g = parse_message(graph_raw)
    nodes = [_parse_node(v) for w, v in g.get(1, []) if w == 2]
    initializers = {}
    for w, v in g.get(5, []):
        if w == 2:
            name, arr = _parse_tensor(v)
            initializers[name] = arr
    graph_inputs = [_parse_value_info(v) for w, v in g.get(11, []) if w == 2]
    graph_outputs = [_parse_value_info(v) for w, v in g.get(12, []) if w == 2]
    real_inputs = [(n, d) for n, d in graph_inputs if n not in initializers]
    if len(real_inputs) != 1:
        raise ModelParseError(f"expected exactly one graph input, found {len(real_inputs)}")
    if len(graph_outputs) != 1:
        raise ModelParseError(f"expected exactly one graph output, found {len(graph_outputs)}")
    if not nodes:
        raise ModelParseError("graph has no nodes")
    return OnnxModel(
        nodes=nodes,
        initializers=initializers,
        input_name=real_inputs[0][0],
        input_dims=real_inputs[0][1],
        output_name=graph_outputs[0][0],
        output_dims=graph_outputs[0][1],
        metadata=metadata,
        opset=opset,
    )


def load_model(path: str | Path, expect_input_size: int = 128) -> OnnxModel:
    """Parse and contract-check a model file."""
    path = Path(path)
    if not path.is_file():
        raise ModelParseError(f"model file not found: {path}")
    try:
        model = parse_model(path.read_bytes())
    except ModelParseError:
        raise
    except Exception as exc:
        raise ModelParseError(f"{path}: {exc}") from exc

    if "class_names" not in model.metadata:
        raise ContractError("model metadata lacks required key 'class_names'")
    try:
        names = model.class_names
    except (ValueError, json.JSONDecodeError) as exc:
        raise ContractError(f"class_names metadata is not a JSON list: {exc}") from exc
    if names != REQUIRED_CLASS_NAMES:
        raise ContractError(
            f"class order mismatch: expected {REQUIRED_CLASS_NAMES}, found {names}"
        )
    layout = model.metadata.get("input_layout")
    if layout not in ("NCHW", "NHWC"):
        raise ContractError(f"input_layout metadata must be NCHW or NHWC, found {layout!r}")

    dims = model.input_dims
    if len(dims) != 4:
        raise ContractError(f"expected a 4-D input, found dims {dims}")
    spatial = (3, expect_input_size, expect_input_size) if layout == "NCHW" else (
        expect_input_size,
        expect_input_size,
        3,
    )
    found = tuple(dims[1:])
    if found != spatial:
        raise ContractError(f"input shape mismatch: expected (N, {spatial}), found (N, {found})")

    out_dims = model.output_dims
    if out_dims and isinstance(out_dims[-1], int) and out_dims[-1] != 2:
        raise ContractError(f"class-count mismatch: expected 2 outputs, found {out_dims[-1]}")
    return model


# --- executor ---------------------------------------------------------------


def _pool_view(x: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _execute(node: _Node, values: dict[str, np.ndarray]) -> None:
    op = node.op_type
    try:
        ins = [values[name] for name in node.inputs if name]
    except KeyError as exc:
        raise ModelParseError(f"node {op} consumes unknown value {exc}") from exc

    if op == "Conv":
        x, w = ins[0], ins[1]
        b = ins[2] if len(ins) > 2 else None
        group = node.attr_int("group", 1)
        if group != 1:
            raise ModelParseError("grouped convolutions are not supported")
        dil = node.attr_ints("dilations", (1, 1))
        if any(d != 1 for d in dil):
            raise ModelParseError("dilated convolutions are not supported")
        kh, kw = node.attr_ints("kernel_shape", w.shape[2:])
        sh, sw = node.attr_ints("strides", (1, 1))
        pt, pl, pb, pr = node.attr_ints("pads", (0, 0, 0, 0))
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        win = _pool_view(xp, kh, kw, sh, sw)
        out = np.einsum("nchwkl,mckl->nmhw", win, w, optimize=True).astype(np.float32)
        if b is not None:
            out += b.reshape(1, -1, 1, 1)
        values[node.outputs[0]] = out
    elif op == "Relu":
        values[node.outputs[0]] = np.maximum(ins[0], np.float32(0))
    elif op == "Sigmoid":
        values[node.outputs[0]] = (1.0 / (1.0 + np.exp(-ins[0]))).astype(np.float32)
    elif op == "MaxPool":
        kh, kw = node.attr_ints("kernel_shape", (2, 2))
        sh, sw = node.attr_ints("strides", (kh, kw))
        pt, pl, pb, pr = node.attr_ints("pads", (0, 0, 0, 0))
        x = ins[0]
        if pt or pl or pb or pr:
            x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
        values[node.outputs[0]] = _pool_view(x, kh, kw, sh, sw).max(axis=(-2, -1))
    elif op == "AveragePool":
        kh, kw = node.attr_ints("kernel_shape", (2, 2))
        sh, sw = node.attr_ints("strides", (kh, kw))
        values[node.outputs[0]] = _pool_view(ins[0], kh, kw, sh, sw).mean(
            axis=(-2, -1), dtype=np.float32
        )
    elif op == "GlobalAveragePool":
        values[node.outputs[0]] = ins[0].mean(axis=(2, 3), keepdims=True, dtype=np.float32)
    elif op == "Flatten":
        axis = node.attr_int("axis", 1)
        x = ins[0]
        lead = int(np.prod(x.shape[:axis])) if axis else 1
        values[node.outputs[0]] = x.reshape(lead, -1)
    elif op == "Reshape":
        x, shape = ins[0], ins[1].astype(np.int64)
        dims = [x.shape[i] if s == 0 else int(s) for i, s in enumerate(shape)]
        values[node.outputs[0]] = x.reshape(dims)
    elif op == "Gemm":
        a, b = ins[0], ins[1]
        alpha = node.attr_float("alpha", 1.0)
        beta = node.attr_float("beta", 1.0)
        if node.attr_int("transA", 0):
            a = a.T
        if node.attr_int("transB", 0):
            b = b.T
        out = np.float32(alpha) * (a @ b)
        if len(ins) > 2:
            out = out + np.float32(beta) * ins[2]
        values[node.outputs[0]] = out.astype(np.float32)
    elif op == "MatMul":
        values[node.outputs[0]] = (ins[0] @ ins[1]).astype(np.float32)
    elif op == "Add":
        values[node.outputs[0]] = (ins[0] + ins[1]).astype(np.float32)
    elif op == "Softmax":
        axis = node.attr_int("axis", -1)
        x = ins[0]
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        values[node.outputs[0]] = (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)
    elif op == "BatchNormalization":
        x, scale, bias, mean, var = ins[:5]
        eps = np.float32(node.attr_float("epsilon", 1e-5))
        shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
        values[node.outputs[0]] = (
            (x - mean.reshape(shape))
            / np.sqrt(var.reshape(shape) + eps)
            * scale.reshape(shape)
            + bias.reshape(shape)
        ).astype(np.float32)
    elif op == "Concat":
        axis = node.attr_int("axis", 0)
        values[node.outputs[0]] = np.concatenate(ins, axis=axis)
    elif op == "Identity":
        values[node.outputs[0]] = ins[0]
    else:
        raise ModelParseError(f"unsupported operator {op!r}")
