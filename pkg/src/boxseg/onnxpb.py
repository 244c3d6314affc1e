"""Minimal self-contained ONNX protobuf reader.

Parses the ModelProto subset needed to validate graph contracts and to run
graphs with the bundled numpy executor: graph topology, tensor names/shapes,
node attributes and initializer payloads. No dependency on the `onnx` package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelContractError

# TensorProto.DataType -> numpy dtype
_DTYPES = {
    1: np.float32,
    2: np.uint8,
    3: np.int8,
    4: np.uint16,
    5: np.int16,
    6: np.int32,
    7: np.int64,
    9: np.bool_,
    10: np.float16,
    11: np.float64,
    12: np.uint32,
    13: np.uint64,
}


class _Cursor:
    """Forward-only reader over protobuf wire format."""

    __slots__ = ("buf", "pos", "end")

    def __init__(self, buf: bytes, pos: int = 0, end: int | None = None):
        self.buf = buf
        self.pos = pos
        self.end = len(buf) if end is None else end

    def done(self) -> bool:
        return self.pos >= self.end

    def varint(self) -> int:
        result = 0
        shift = 0
        while True:
            if self.pos >= self.end:
                raise ModelContractError("truncated protobuf varint")
            b = self.buf[self.pos]
            self.pos += 1
            result |= (b & 0x7F) << shift
            if not b & 0x80:
                return result
            shift += 7
            if shift > 70:
                raise ModelContractError("malformed protobuf varint")

    def signed_varint(self) -> int:
        v = self.varint() & 0xFFFFFFFFFFFFFFFF
        return v - (1 << 64) if v >= 1 << 63 else v

    def tag(self) -> tuple[int, int]:
        key = self.varint()
        return key >> 3, key & 0x7

    def bytes_(self) -> bytes:
        n = self.varint()
        if self.pos + n > self.end:
            raise ModelContractError("truncated protobuf bytes field")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def sub(self) -> "_Cursor":
        n = self.varint()
        if self.pos + n > self.end:
            raise ModelContractError("truncated protobuf message field")
        c = _Cursor(self.buf, self.pos, self.pos + n)
        self.pos += n
        return c

    def fixed32(self) -> bytes:
        out = self.buf[self.pos : self.pos + 4]
        self.pos += 4
        return out

    def fixed64(self) -> bytes:
        out = self.buf[self.pos : self.pos + 8]
        self.pos += 8
        return out

    def skip(self, wire_type: int) -> None:
        if wire_type == 0:
            self.varint()
        elif wire_type == 1:
            self.pos += 8
        elif wire_type == 2:
            self.bytes_()
        elif wire_type == 5:
            self.pos += 4
        else:
            raise ModelContractError(f"unsupported protobuf wire type {wire_type}")


def _packed_ints(cur: _Cursor, wire_type: int, out: list[int]) -> None:
    if wire_type == 0:
        out.append(cur.signed_varint())
    else:
        sub = _Cursor(cur.bytes_())
        while not sub.done():
            out.append(sub.signed_varint())


def _packed_floats(cur: _Cursor, wire_type: int, out: list[float]) -> None:
    if wire_type == 5:
        out.append(float(np.frombuffer(cur.fixed32(), dtype="<f4")[0]))
    else:
        data = cur.bytes_()
        out.extend(np.frombuffer(data, dtype="<f4").tolist())


@dataclass
class TensorInfo:
    name: str
    elem_type: int = 0
    dims: tuple[object, ...] = ()  # int for static, str/None for dynamic


@dataclass
class OnnxNode:
    op_type: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    name: str = ""
    attrs: dict[str, object] = field(default_factory=dict)


@dataclass
class OnnxGraph:
    name: str = ""
    nodes: list[OnnxNode] = field(default_factory=list)
    initializers: dict[str, np.ndarray] = field(default_factory=dict)
    inputs: list[TensorInfo] = field(default_factory=list)
    outputs: list[TensorInfo] = field(default_factory=list)


@dataclass
class OnnxModel:
    ir_version: int = 0
    producer_name: str = ""
    opset_version: int = 0
    graph: OnnxGraph = field(default_factory=OnnxGraph)

    def input_info(self) -> dict[str, TensorInfo]:
        return {t.name: t for t in self.graph.inputs}

    def output_info(self) -> dict[str, TensorInfo]:
        return {t.name: t for t in self.graph.outputs}


def _parse_tensor(cur: _Cursor) -> tuple[str, np.ndarray]:
    dims: list[int] = []
    data_type = 0
    raw: bytes | None = None
    name = ""
    float_data: list[float] = []
    int_data: list[int] = []
    while not cur.done():
        fno, wt = cur.tag()
        if fno == 1:
            _packed_ints(cur, wt, dims)
        elif fno == 2:
            data_type = cur.varint()
        elif fno == 4:
            _packed_floats(cur, wt, float_data)
        elif fno in (5, 7):
            _packed_ints(cur, wt, int_data)
        elif fno == 8:
            name = cur.bytes_().decode("utf-8")
        elif fno == 9:
            raw = cur.bytes_()
        else:
            cur.skip(wt)
    dtype = _DTYPES.get(data_type)
    if dtype is None:
        raise ModelContractError(f"initializer {name!r} has unsupported data_type {data_type}")
    if raw is not None:
        arr = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)
    elif float_data:
        arr = np.asarray(float_data, dtype=dtype)
    elif int_data:
        arr = np.asarray(int_data, dtype=dtype)
    else:
        arr = np.zeros(0, dtype=dtype)
    return name, arr.reshape(dims) if dims else arr.reshape(())


def _parse_shape(cur: _Cursor) -> tuple[object, ...]:
    dims: list[object] = []
    while not cur.done():
        fno, wt = cur.tag()
        if fno == 1:
            sub = cur.sub()
            value: object = None
            while not sub.done():
                dfno, dwt = sub.tag()
                if dfno == 1:
                    value = sub.signed_varint()
                elif dfno == 2:
                    value = sub.bytes_().decode("utf-8")
                else:
                    sub.skip(dwt)
            dims.append(value)
        else:
            cur.skip(wt)
    return tuple(dims)


def _parse_value_info(cur: _Cursor) -> TensorInfo:
    info = TensorInfo(name="")
    while not cur.done():
        fno, wt = cur.tag()
        if fno == 1:
            info.name = cur.bytes_().decode("utf-8")
        elif fno == 2:
            type_cur = cur.sub()
            while not type_cur.done():
                tfno, twt = type_cur.tag()
                if tfno == 1:  # tensor_type
                    tcur = type_cur.sub()
                    while not tcur.done():
                        ffno, fwt = tcur.tag()
                        if ffno == 1:
                            info.elem_type = tcur.varint()
                        elif ffno == 2:
                            info.dims = _parse_shape(tcur.sub())
                        else:
                            tcur.skip(fwt)
                else:
                    type_cur.skip(twt)
        else:
            cur.skip(wt)
    return info


def _parse_attribute(cur: _Cursor) -> tuple[str, object]:
    name = ""
    value: object = None
    floats: list[float] = []
    ints: list[int] = []
    strings: list[str] = []
    while not cur.done():
        fno, wt = cur.tag()
        if fno == 1:
            name = cur.bytes_().decode("utf-8")
        elif fno == 2:
            value = float(np.frombuffer(cur.fixed32(), dtype="<f4")[0])
        elif fno == 3:
            value = cur.signed_varint()
        elif fno == 4:
            value = cur.bytes_().decode("utf-8", errors="replace")
        elif fno == 5:
            value = _parse_tensor(cur.sub())[1]
        elif fno == 7:
            _packed_floats(cur, wt, floats)
        elif fno == 8:
            _packed_ints(cur, wt, ints)
        elif fno == 9:
            strings.append(cur.bytes_().decode("utf-8", errors="replace"))
        else:
            cur.skip(wt)
    if floats:
        value = floats
    elif ints:
        value = ints
    elif strings:
        value = strings
    return name, value


def _parse_node(cur: _Cursor) -> OnnxNode:
    node = OnnxNode(op_type="")
    while not cur.done():
        fno, wt = cur.tag()
        if fno == 1:
            node.inputs.append(cur.bytes_().decode("utf-8"))
        elif fno == 2:
            node.outputs.append(cur.bytes_().decode("utf-8"))
        elif fno == 3:
            node.name = cur.bytes_().decode("utf-8")
        elif fno == 4:
            node.op_type = cur.bytes_().decode("utf-8")
        elif fno == 5:
            key, value = _parse_attribute(cur.sub())
            node.attrs[key] = value
        else:
            cur.skip(wt)
    return node


def _parse_graph(cur: _Cursor) -> OnnxGraph:
    graph = OnnxGraph()
    while not cur.done():
        fno, wt = cur.tag()
        if fno == 1:
            graph.nodes.append(_parse_node(cur.sub()))
        elif fno == 2:
            graph.name = cur.bytes_().decode("utf-8")
        elif fno == 5:
            name, arr = _parse_tensor(cur.sub())
            graph.initializers[name] = arr
        elif fno == 11:
            graph.inputs.append(_parse_value_info(cur.sub()))
        elif fno == 12:
            graph.outputs.append(_parse_value_info(cur.sub()))
        else:
            cur.skip(wt)
    return graph


def load_model(source: str | Path | bytes) -> OnnxModel:
    """Parse an ONNX file (or raw bytes) into the reader's lightweight model."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise ModelContractError(f"model graph not found: {path}")
        data = path.read_bytes()
    else:
        data = source
    model = OnnxModel()
    cur = _Cursor(data)
    try:
        while not cur.done():
            fno, wt = cur.tag()
            if fno == 1:
                model.ir_version = cur.varint()
            elif fno == 2:
                model.producer_name = cur.bytes_().decode("utf-8", errors="replace")
            elif fno == 7:
                model.graph = _parse_graph(cur.sub())
            elif fno == 8:
                sub = cur.sub()
                while not sub.done():
                    ofno, owt = sub.tag()
                    if ofno == 2:
                        model.opset_version = max(model.opset_version, sub.varint())
                    else:
                        sub.skip(owt)
            else:
                cur.skip(wt)
    except (IndexError, ValueError) as exc:
        raise ModelContractError(f"malformed ONNX protobuf: {exc}") from exc
    if not model.graph.nodes and not model.graph.inputs:
        raise ModelContractError("ONNX file contains no graph")
    return model
