"""Numpy executor for exported ONNX graphs.

Covers the operator subset emitted by the export tooling's architectures
(convolutional backbones, pooling, resize, gather/slice shape plumbing,
normalization and matmul heads). Install `onnxruntime` for general graphs;
the backends prefer it automatically when importable. Unknown ops fail
loudly with the op name.
"""

from __future__ import annotations

import math

import numpy as np

from . import onnxpb
from .errors import ModelContractError

_INT64_MAX = (1 << 63) - 1


def _attr(node, name, default=None):
    return node.attrs.get(name, default)


def _axes_arg(node, inputs, index, attr_name="axes"):
    """Axes supplied either as an input tensor (opset >= 13) or an attribute."""
    if len(inputs) > index and inputs[index] is not None:
        return [int(v) for v in np.asarray(inputs[index]).ravel()]
    val = _attr(node, attr_name)
    if val is None:
        return None
    return [int(v) for v in val] if isinstance(val, list) else [int(val)]


def _pair(value, default):
    if value is None:
        return (default, default)
    vals = [int(v) for v in value] if isinstance(value, list) else [int(value)]
    return (vals[0], vals[1] if len(vals) > 1 else vals[0])


def _conv2d(x, w, b, strides, pads, dilations, group):
    n, c, h, wd = x.shape
    m, cg, kh, kw = w.shape
    sh, sw = strides
    dh, dw = dilations
    pt, pl, pb, pr = pads
    kh_eff = (kh - 1) * dh + 1
    kw_eff = (kw - 1) * dw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    oh = (h + pt + pb - kh_eff) // sh + 1
    ow = (wd + pl + pr - kw_eff) // sw + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh_eff, kw_eff), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw, ::dh, ::dw][:, :, :oh, :ow]
    out = np.empty((n, m, oh, ow), dtype=np.float32)
    mg = m // group
    for g in range(group):
        xg = windows[:, g * cg : (g + 1) * cg]  # n, cg, oh, ow, kh, kw
        cols = xg.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, cg * kh * kw)
        wg = w[g * mg : (g + 1) * mg].reshape(mg, cg * kh * kw)
        prod = cols @ wg.T  # (n*oh*ow, mg)
        out[:, g * mg : (g + 1) * mg] = prod.reshape(n, oh, ow, mg).transpose(0, 3, 1, 2)
    if b is not None:
        out += b.reshape(1, m, 1, 1)
    return out.astype(np.float32)


def _pool2d(x, kernel, strides, pads, op):
    kh, kw = kernel
    sh, sw = strides
    pt, pl, pb, pr = pads
    fill = -np.inf if op == "max" else 0.0
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=fill)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]
    if op == "max":
        return windows.max(axis=(-1, -2)).astype(x.dtype)
    return windows.mean(axis=(-1, -2)).astype(x.dtype)


def _resize_coords(out_len, in_len, coord_mode):
    o = np.arange(out_len, dtype=np.float64)
    if in_len == out_len:
        return o
    scale = out_len / in_len
    if coord_mode in ("half_pixel", "pytorch_half_pixel"):
        coords = (o + 0.5) / scale - 0.5
        if coord_mode == "pytorch_half_pixel" and out_len == 1:
            coords = np.zeros_like(o)
        return coords
    if coord_mode == "asymmetric":
        return o / scale
    if coord_mode == "align_corners":
        if out_len == 1:
            return np.zeros_like(o)
        return o * (in_len - 1) / (out_len - 1)
    raise ModelContractError(f"unsupported resize coordinate mode {coord_mode!r}")


def _resize_axis_linear(x, axis, out_len, coord_mode):
    in_len = x.shape[axis]
    coords = _resize_coords(out_len, in_len, coord_mode)
    lo = np.clip(np.floor(coords).astype(np.int64), 0, in_len - 1)
    hi = np.clip(lo + 1, 0, in_len - 1)
    frac = np.clip(coords - lo, 0.0, 1.0).astype(np.float32)
    shape = [1] * x.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    return (a * (1.0 - frac) + b * frac).astype(np.float32)


def _resize_axis_nearest(x, axis, out_len, coord_mode, nearest_mode):
    in_len = x.shape[axis]
    coords = _resize_coords(out_len, in_len, coord_mode)
    if nearest_mode == "floor":
        idx = np.floor(coords)
    elif nearest_mode == "ceil":
        idx = np.ceil(coords)
    elif nearest_mode == "round_prefer_ceil":
        idx = np.floor(coords + 0.5)
    else:  # round_prefer_floor
        idx = np.ceil(coords - 0.5)
    idx = np.clip(idx.astype(np.int64), 0, in_len - 1)
    return np.take(x, idx, axis=axis)


def _broadcast_sizes(x, scales, sizes):
    if sizes is not None:
        target = [int(v) for v in np.asarray(sizes).ravel()]
    else:
        sc = np.asarray(scales, dtype=np.float64).ravel()
        target = [int(math.floor(d * s)) for d, s in zip(x.shape, sc)]
    if len(target) != x.ndim:
        raise ModelContractError(f"resize target rank {len(target)} != input rank {x.ndim}")
    return target


class GraphExecutor:
    """Single-threaded node-by-node evaluation of a parsed ONNX graph."""

    def __init__(self, model: onnxpb.OnnxModel):
        self.model = model
        self.graph = model.graph
        self.input_names = [
            t.name for t in self.graph.inputs if t.name not in self.graph.initializers
        ]
        self.output_names = [t.name for t in self.graph.outputs]

    @classmethod
    def from_file(cls, path) -> "GraphExecutor":
        return cls(onnxpb.load_model(path))

    def run(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        values: dict[str, np.ndarray] = dict(self.graph.initializers)
        for name in self.input_names:
            if name not in feeds:
                raise ModelContractError(f"missing graph input {name!r}")
        for name, arr in feeds.items():
            values[name] = np.asarray(arr)
        for node in self.graph.nodes:
            inputs = [values[n] if n else None for n in node.inputs]
            try:
                outputs = self._dispatch(node, inputs)
            except KeyError as exc:
                raise ModelContractError(
                    f"node {node.name or node.op_type}: missing tensor {exc}"
                ) from exc
            for name, value in zip(node.outputs, outputs):
                if name:
                    values[name] = value
        missing = [n for n in self.output_names if n not in values]
        if missing:
            raise ModelContractError(f"graph did not produce outputs {missing}")
        return {n: values[n] for n in self.output_names}

    def _dispatch(self, node, inputs):
        op = node.op_type
        handler = getattr(self, f"_op_{op.lower()}", None)
        if handler is None:
            raise ModelContractError(f"numpy executor does not implement ONNX op {op!r}")
        return handler(node, inputs)

    # --- tensor creation / movement -------------------------------------------------

    def _op_constant(self, node, inputs):
        if "value" in node.attrs:
            return [np.asarray(node.attrs["value"])]
        for key, dtype in (("value_float", np.float32), ("value_int", np.int64)):
            if key in node.attrs:
                return [np.asarray(node.attrs[key], dtype=dtype)]
        for key, dtype in (("value_floats", np.float32), ("value_ints", np.int64)):
            if key in node.attrs:
                return [np.asarray(node.attrs[key], dtype=dtype)]
        raise ModelContractError("Constant node without a supported value attribute")

    def _op_constantofshape(self, node, inputs):
        shape = [int(v) for v in np.asarray(inputs[0]).ravel()]
        value = _attr(node, "value")
        if value is None:
            return [np.zeros(shape, dtype=np.float32)]
        value = np.asarray(value)
        return [np.full(shape, value.ravel()[0], dtype=value.dtype)]

    def _op_identity(self, node, inputs):
        return [inputs[0]]

    def _op_shape(self, node, inputs):
        shape = np.asarray(inputs[0].shape, dtype=np.int64)
        start = int(_attr(node, "start", 0) or 0)
        end = _attr(node, "end")
        return [shape[start : None if end is None else int(end)]]

    def _op_reshape(self, node, inputs):
        target = [int(v) for v in np.asarray(inputs[1]).ravel()]
        src = inputs[0].shape
        target = [src[i] if v == 0 else v for i, v in enumerate(target)]
        return [inputs[0].reshape(target)]

    def _op_transpose(self, node, inputs):
        perm = _attr(node, "perm")
        return [np.transpose(inputs[0], perm)]

    def _op_flatten(self, node, inputs):
        axis = int(_attr(node, "axis", 1))
        shape = inputs[0].shape
        lead = int(np.prod(shape[:axis])) if axis else 1
        return [inputs[0].reshape(lead, -1)]

    def _op_unsqueeze(self, node, inputs):
        axes = _axes_arg(node, inputs, 1)
        out = inputs[0]
        for ax in sorted(axes):
            out = np.expand_dims(out, ax)
        return [out]

    def _op_squeeze(self, node, inputs):
        axes = _axes_arg(node, inputs, 1)
        if axes is None:
            return [np.squeeze(inputs[0])]
        return [np.squeeze(inputs[0], axis=tuple(axes))]

    def _op_concat(self, node, inputs):
        axis = int(_attr(node, "axis", 0))
        arrays = [np.asarray(a) for a in inputs if a is not None]
        return [np.concatenate([np.atleast_1d(a) for a in arrays], axis=axis)]

    def _op_slice(self, node, inputs):
        data = inputs[0]
        starts = [int(v) for v in np.asarray(inputs[1]).ravel()]
        ends = [int(v) for v in np.asarray(inputs[2]).ravel()]
        axes = (
            [int(v) for v in np.asarray(inputs[3]).ravel()]
            if len(inputs) > 3 and inputs[3] is not None
            else list(range(len(starts)))
        )
        steps = (
            [int(v) for v in np.asarray(inputs[4]).ravel()]
            if len(inputs) > 4 and inputs[4] is not None
            else [1] * len(starts)
        )
        slices = [slice(None)] * data.ndim
        for start, end, axis, step in zip(starts, ends, axes, steps):
            end = None if end >= _INT64_MAX else end
            slices[axis] = slice(start, end, step)
        return [data[tuple(slices)]]

    def _op_gather(self, node, inputs):
        axis = int(_attr(node, "axis", 0))
        indices = np.asarray(inputs[1], dtype=np.int64)
        return [np.take(inputs[0], indices, axis=axis)]

    def _op_expand(self, node, inputs):
        target = [int(v) for v in np.asarray(inputs[1]).ravel()]
        shape = np.broadcast_shapes(inputs[0].shape, tuple(target))
        return [np.broadcast_to(inputs[0], shape)]

    def _op_cast(self, node, inputs):
        to = int(_attr(node, "to"))
        dtype = onnxpb._DTYPES.get(to)
        if dtype is None:
            raise ModelContractError(f"Cast to unsupported data_type {to}")
        return [inputs[0].astype(dtype)]

    def _op_range(self, node, inputs):
        start, limit, delta = (np.asarray(v).item() for v in inputs)
        return [np.arange(start, limit, delta, dtype=np.asarray(inputs[0]).dtype)]

    def _op_split(self, node, inputs):
        axis = int(_attr(node, "axis", 0))
        if len(inputs) > 1 and inputs[1] is not None:
            sizes = [int(v) for v in np.asarray(inputs[1]).ravel()]
        elif _attr(node, "split") is not None:
            sizes = [int(v) for v in _attr(node, "split")]
        else:
            n = len(node.outputs)
            sizes = [inputs[0].shape[axis] // n] * n
        points = np.cumsum(sizes)[:-1]
        return list(np.split(inputs[0], points, axis=axis))

    def _op_where(self, node, inputs):
        return [np.where(inputs[0], inputs[1], inputs[2])]

    # --- elementwise -----------------------------------------------------------------

    def _op_add(self, node, inputs):
        return [inputs[0] + inputs[1]]

    def _op_sub(self, node, inputs):
        return [inputs[0] - inputs[1]]

    def _op_mul(self, node, inputs):
        return [inputs[0] * inputs[1]]

    def _op_div(self, node, inputs):
        a, b = inputs
        if np.issubdtype(np.asarray(a).dtype, np.integer) and np.issubdtype(
            np.asarray(b).dtype, np.integer
        ):
            return [a // b]
        return [a / b]

    def _op_pow(self, node, inputs):
        return [np.power(inputs[0], inputs[1]).astype(inputs[0].dtype)]

    def _op_sqrt(self, node, inputs):
        return [np.sqrt(inputs[0])]

    def _op_exp(self, node, inputs):
        return [np.exp(inputs[0])]

    def _op_log(self, node, inputs):
        return [np.log(inputs[0])]

    def _op_neg(self, node, inputs):
        return [-inputs[0]]

    def _op_abs(self, node, inputs):
        return [np.abs(inputs[0])]

    def _op_floor(self, node, inputs):
        return [np.floor(inputs[0])]

    def _op_ceil(self, node, inputs):
        return [np.ceil(inputs[0])]

    def _op_min(self, node, inputs):
        out = inputs[0]
        for other in inputs[1:]:
            out = np.minimum(out, other)
        return [out]

    def _op_max(self, node, inputs):
        out = inputs[0]
        for other in inputs[1:]:
            out = np.maximum(out, other)
        return [out]

    def _op_clip(self, node, inputs):
        lo = inputs[1] if len(inputs) > 1 and inputs[1] is not None else _attr(node, "min")
        hi = inputs[2] if len(inputs) > 2 and inputs[2] is not None else _attr(node, "max")
        return [np.clip(inputs[0], lo, hi)]

    def _op_relu(self, node, inputs):
        return [np.maximum(inputs[0], 0)]

    def _op_leakyrelu(self, node, inputs):
        alpha = float(_attr(node, "alpha", 0.01))
        x = inputs[0]
        return [np.where(x >= 0, x, alpha * x).astype(x.dtype)]

    def _op_sigmoid(self, node, inputs):
        x = inputs[0]
        return [(1.0 / (1.0 + np.exp(-x))).astype(np.float32)]

    def _op_tanh(self, node, inputs):
        return [np.tanh(inputs[0])]

    def _op_softplus(self, node, inputs):
        return [np.logaddexp(0.0, inputs[0]).astype(np.float32)]

    def _op_equal(self, node, inputs):
        return [inputs[0] == inputs[1]]

    def _op_greater(self, node, inputs):
        return [inputs[0] > inputs[1]]

    def _op_less(self, node, inputs):
        return [inputs[0] < inputs[1]]

    def _op_not(self, node, inputs):
        return [~inputs[0].astype(bool)]

    # --- reductions ------------------------------------------------------------------

    def _reduce(self, node, inputs, fn):
        axes = _axes_arg(node, inputs, 1)
        keepdims = bool(_attr(node, "keepdims", 1))
        axis = None if axes is None else tuple(axes)
        return [fn(inputs[0], axis=axis, keepdims=keepdims)]

    def _op_reducemean(self, node, inputs):
        return self._reduce(node, inputs, np.mean)

    def _op_reducemax(self, node, inputs):
        return self._reduce(node, inputs, np.max)

    def _op_reducemin(self, node, inputs):
        return self._reduce(node, inputs, np.min)

    def _op_reducesum(self, node, inputs):
        return self._reduce(node, inputs, np.sum)

    def _op_argmax(self, node, inputs):
        axis = int(_attr(node, "axis", 0))
        keepdims = bool(_attr(node, "keepdims", 1))
        out = np.argmax(inputs[0], axis=axis).astype(np.int64)
        if keepdims:
            out = np.expand_dims(out, axis)
        return [out]

    def _op_softmax(self, node, inputs):
        axis = int(_attr(node, "axis", -1))
        x = inputs[0] - inputs[0].max(axis=axis, keepdims=True)
        e = np.exp(x)
        return [(e / e.sum(axis=axis, keepdims=True)).astype(np.float32)]

    # --- neural-network ops ----------------------------------------------------------

    def _op_conv(self, node, inputs):
        x, w = inputs[0], inputs[1]
        b = inputs[2] if len(inputs) > 2 else None
        strides = _pair(_attr(node, "strides"), 1)
        dilations = _pair(_attr(node, "dilations"), 1)
        group = int(_attr(node, "group", 1))
        pads_attr = _attr(node, "pads")
        pads = tuple(int(v) for v in pads_attr) if pads_attr else (0, 0, 0, 0)
        return [_conv2d(x.astype(np.float32), w, b, strides, pads, dilations, group)]

    def _op_maxpool(self, node, inputs):
        kernel = _pair(_attr(node, "kernel_shape"), 1)
        strides = _pair(_attr(node, "strides"), 1)
        pads_attr = _attr(node, "pads")
        pads = tuple(int(v) for v in pads_attr) if pads_attr else (0, 0, 0, 0)
        return [_pool2d(inputs[0], kernel, strides, pads, "max")]

    def _op_averagepool(self, node, inputs):
        kernel = _pair(_attr(node, "kernel_shape"), 1)
        strides = _pair(_attr(node, "strides"), 1)
        pads_attr = _attr(node, "pads")
        pads = tuple(int(v) for v in pads_attr) if pads_attr else (0, 0, 0, 0)
        return [_pool2d(inputs[0], kernel, strides, pads, "avg")]

    def _op_globalaveragepool(self, node, inputs):
        return [inputs[0].mean(axis=(2, 3), keepdims=True).astype(inputs[0].dtype)]

    def _op_batchnormalization(self, node, inputs):
        x, scale, bias, mean, var = inputs[:5]
        eps = float(_attr(node, "epsilon", 1e-5))
        shape = [1, -1] + [1] * (x.ndim - 2)
        out = (x - mean.reshape(shape)) / np.sqrt(var.reshape(shape) + eps)
        return [(out * scale.reshape(shape) + bias.reshape(shape)).astype(np.float32)]

    def _op_layernormalization(self, node, inputs):
        x = inputs[0]
        scale = inputs[1]
        bias = inputs[2] if len(inputs) > 2 and inputs[2] is not None else None
        axis = int(_attr(node, "axis", -1))
        eps = float(_attr(node, "epsilon", 1e-5))
        axes = tuple(range(axis % x.ndim, x.ndim))
        mean = x.mean(axis=axes, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=axes, keepdims=True)
        out = (x - mean) / np.sqrt(var + eps) * scale
        if bias is not None:
            out = out + bias
        return [out.astype(np.float32)]

    def _op_gemm(self, node, inputs):
        a, b = inputs[0], inputs[1]
        c = inputs[2] if len(inputs) > 2 else None
        if int(_attr(node, "transA", 0)):
            a = a.T
        if int(_attr(node, "transB", 0)):
            b = b.T
        out = float(_attr(node, "alpha", 1.0)) * (a @ b)
        if c is not None:
            out = out + float(_attr(node, "beta", 1.0)) * c
        return [out.astype(np.float32)]

    def _op_matmul(self, node, inputs):
        return [np.matmul(inputs[0], inputs[1]).astype(np.float32)]

    def _op_resize(self, node, inputs):
        x = inputs[0]
        scales = inputs[2] if len(inputs) > 2 and inputs[2] is not None and np.asarray(inputs[2]).size else None
        sizes = inputs[3] if len(inputs) > 3 and inputs[3] is not None and np.asarray(inputs[3]).size else None
        if scales is None and sizes is None:
            raise ModelContractError("Resize requires scales or sizes")
        mode = _attr(node, "mode", "nearest")
        coord_mode = _attr(node, "coordinate_transformation_mode", "half_pixel")
        nearest_mode = _attr(node, "nearest_mode", "round_prefer_floor")
        target = _broadcast_sizes(x, scales, sizes)
        out = x
        for axis, out_len in enumerate(target):
            if out.shape[axis] == out_len:
                continue
            if mode == "nearest":
                out = _resize_axis_nearest(out, axis, out_len, coord_mode, nearest_mode)
            elif mode == "linear":
                out = _resize_axis_linear(out.astype(np.float32), axis, out_len, coord_mode)
            else:
                raise ModelContractError(f"unsupported resize mode {mode!r}")
        return [out]
