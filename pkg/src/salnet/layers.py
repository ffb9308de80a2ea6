"""Forward and backward passes for the saliency regression network.

Architecture (input 3 x 96 x 96, N x C x H x W layout)::

    conv1 5x5, 32  -> ReLU -> maxpool 2x2/2    92x92x32 -> 46x46x32
    conv2 3x3, 64  -> ReLU -> maxpool 2x2/2    44x44x64 -> 22x22x64
    conv3 3x3, 64  -> ReLU -> maxpool 2x2/2    20x20x64 -> 10x10x64
    fc1   6400 -> 4608 (linear)
    fc2   4608 -> 2 x 2304 pieces, maxout over adjacent pairs -> 2304

Convolutions are valid (no padding), stride 1, cross-correlation:
``out[o, y, x] = bias[o] + sum_{c,i,j} w[o, c, i, j] * in[c, y + i, x + j]``.
The 10x10x64 volume is flattened in C, H, W order before fc1. Maxout pairs
pre-activations ``2i`` and ``2i + 1``. Max-pool and maxout ties go to the
first candidate in row-major scan order, and backward routes the gradient
there only.

With ``maxout_weighted=False`` the network has no fc2 and the maxout is a
parameter-free pairwise max over fc1's 4608 outputs.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import InconsistentTraceError, InvalidShapeError
from .tensor import DTYPE, init_gaussian

INPUT_SHAPE = (3, 96, 96)
OUTPUT_SIDE = 48
OUTPUT_SIZE = OUTPUT_SIDE * OUTPUT_SIDE

CONV_SHAPES = {
    "conv1": (32, 3, 5, 5),
    "conv2": (64, 32, 3, 3),
    "conv3": (64, 64, 3, 3),
}
FC_SHAPES = {
    "fc1": (4608, 6400),
    "fc2": (4608, 4608),
}
LAYER_NAMES = ("conv1", "conv2", "conv3", "fc1", "fc2")


@dataclass
class ConvParams:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weights.ndim != 4 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidShapeError(
                f"conv weights {self.weights.shape} / bias {self.bias.shape} do not agree"
            )


@dataclass
class FcParams:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise InvalidShapeError(
                f"fc weights {self.weights.shape} / bias {self.bias.shape} do not agree"
            )


def expected_param_count(maxout_weighted=True):
    total = 0
    for shapes in (CONV_SHAPES, FC_SHAPES):
        for name, shape in shapes.items():
            if name == "fc2" and not maxout_weighted:
                continue
            total += int(np.prod(shape)) + shape[0]
    return total


@dataclass
class Network:
    """Parameter set of the five learned layers.

    Also used as the container for gradients and optimizer velocities, which
    share the same block structure.
    """

    conv1: ConvParams
    conv2: ConvParams
    conv3: ConvParams
    fc1: FcParams
    fc2: FcParams | None = None
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        for name, shape in CONV_SHAPES.items():
            got = getattr(self, name).weights.shape
            if got != shape:
                raise InvalidShapeError(f"{name} weights must be {shape}, got {got}")
        got = self.fc1.weights.shape
        if got != FC_SHAPES["fc1"]:
            raise InvalidShapeError(f"fc1 weights must be {FC_SHAPES['fc1']}, got {got}")
        if self.fc2 is not None and self.fc2.weights.shape != FC_SHAPES["fc2"]:
            raise InvalidShapeError(
                f"fc2 weights must be {FC_SHAPES['fc2']}, got {self.fc2.weights.shape}"
            )
        n = self.n_params
        if n != expected_param_count(self.maxout_weighted):
            raise InvalidShapeError(f"unexpected parameter count {n}")

    @property
    def maxout_weighted(self):
        return self.fc2 is not None

    @property
    def n_params(self):
        return sum(a.size for a in self.blocks().values())

    def layers(self):
        return {name: getattr(self, name) for name in LAYER_NAMES if getattr(self, name) is not None}

    def blocks(self):
        """Ordered mapping ``"layer.weights" / "layer.bias"`` -> array (live views)."""
        out = {}
        for name, params in self.layers().items():
            out[f"{name}.weights"] = params.weights
            out[f"{name}.bias"] = params.bias
        return out

    @classmethod
    def from_blocks(cls, blocks):
        kwargs = {}
        for name in LAYER_NAMES:
            if f"{name}.weights" not in blocks:
                continue
            if f"{name}.bias" not in blocks:
                raise InvalidShapeError(f"{name} has weights but no bias")
            kind = ConvParams if name.startswith("conv") else FcParams
            kwargs[name] = kind(blocks[f"{name}.weights"], blocks[f"{name}.bias"])
        return cls(**kwargs)

    def map(self, fn):
        return Network.from_blocks({k: fn(v) for k, v in self.blocks().items()})

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    @classmethod
    def initialize(cls, seed=0, weight_std=0.01, bias_value=0.1, maxout_weighted=True):
        """Gaussian weights N(0, weight_std**2), constant biases.

        Each weight block gets its own seed, ``seed * 16 + block index``.
        """
        blocks = {}
        names = [n for n in LAYER_NAMES if maxout_weighted or n != "fc2"]
        for i, name in enumerate(names):
            shape = CONV_SHAPES.get(name) or FC_SHAPES[name]
            shape4 = shape if len(shape) == 4 else (1, 1) + shape
            w = init_gaussian(shape4, 0.0, weight_std, seed=seed * 16 + i).reshape(shape)
            blocks[f"{name}.weights"] = w
            blocks[f"{name}.bias"] = np.full(shape[0], bias_value, dtype=DTYPE)
        return cls.from_blocks(blocks)


# --- individual layers -----------------------------------------------------


def _im2col(x, kh, kw):
    """(N*Ho*Wo, C*kh*kw) patch matrix; rows in N, Ho, Wo order, columns in C, kh, kw order."""
    n, c, h, w = x.shape
    win = sliding_window_view(x, (kh, kw), axis=(2, 3)).transpose(0, 2, 3, 1, 4, 5)
    return win.reshape(n * (h - kh + 1) * (w - kw + 1), c * kh * kw)


def _check_conv_input(x, params):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4:
        raise InvalidShapeError(f"conv input must be N x C x H x W, got {x.shape}")
    o, c, kh, kw = params.weights.shape
    if x.shape[1] != c:
        raise InvalidShapeError(f"conv expects {c} input channels, got {x.shape[1]}")
    if x.shape[2] < kh or x.shape[3] < kw:
        raise InvalidShapeError(f"input {x.shape[2:]} smaller than kernel {(kh, kw)}")
    return x


def _conv_forward(x, params):
    n, _, h, w = x.shape
    o, _, kh, kw = params.weights.shape
    cols = _im2col(x, kh, kw)
    out = cols @ params.weights.reshape(o, -1).T
    out += params.bias
    out = out.reshape(n, h - kh + 1, w - kw + 1, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def _conv_backward(x_shape, params, cols, dout, need_input_grad):
    n, c, h, w = x_shape
    o, _, kh, kw = params.weights.shape
    ho, wo = h - kh + 1, w - kw + 1
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dmat.T @ cols).reshape(params.weights.shape)
    db = dmat.sum(axis=0)
    dx = None
    if need_input_grad:
        dcols = (dmat @ params.weights.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
        dx = np.zeros(x_shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + ho, j:j + wo] += dcols[..., i, j].transpose(0, 3, 1, 2)
    return dx, dw, db


def conv2d_forward(x, params):
    x = _check_conv_input(x, params)
    return _conv_forward(x, params)[0]


def conv2d_backward(x, params, dout, need_input_grad=True):
    """Return ``(dx, dw, db)``; ``dx`` is None when not requested."""
    x = _check_conv_input(x, params)
    kh, kw = params.weights.shape[2:]
    return _conv_backward(x.shape, params, _im2col(x, kh, kw), dout, need_input_grad)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(pre, dout):
    return np.where(pre > 0.0, dout, 0.0)


def maxpool2_forward(x):
    """2x2 max-pool with stride 2.

    Returns ``(out, idx)`` where ``idx`` in {0, 1, 2, 3} gives the winning
    position inside each block in row-major order ((0,0), (0,1), (1,0), (1,1)).
    """
    x = np.asarray(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidShapeError(f"maxpool2 needs even H and W, got {(h, w)}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def maxpool2_backward(dout, idx):
    n, c, hh, ww = dout.shape
    grad = np.zeros((n, c, hh, ww, 4), dtype=DTYPE)
    np.put_along_axis(grad, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    grad = grad.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return grad.reshape(n, c, 2 * hh, 2 * ww)


def fc_forward(x, params):
    """``W @ x + b`` for a vector, or row-wise for an N x in batch."""
    x = np.asarray(x, dtype=DTYPE)
    n_in = params.weights.shape[1]
    if x.shape[-1] != n_in or x.ndim > 2:
        raise InvalidShapeError(f"fc expects input length {n_in}, got shape {x.shape}")
    return x @ params.weights.T + params.bias


def fc_backward(x, params, dout, need_input_grad=True):
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    dw = d2.T @ x2
    db = d2.sum(axis=0)
    dx = dout @ params.weights if need_input_grad else None
    return dx, dw, db


def maxout2_forward(pre):
    """Max over adjacent pairs: ``out[i] = max(pre[2i], pre[2i+1])``.

    Returns ``(out, idx)`` with ``idx`` 0 or 1 naming the winning piece.
    """
    pre = np.asarray(pre)
    if pre.shape[-1] % 2:
        raise InvalidShapeError(f"maxout2 needs an even input length, got {pre.shape[-1]}")
    pairs = pre.reshape(pre.shape[:-1] + (-1, 2))
    idx = (pairs[..., 1] > pairs[..., 0]).astype(np.int8)
    out = np.where(idx == 1, pairs[..., 1], pairs[..., 0])
    return out, idx


def maxout2_backward(dout, idx):
    grad = np.zeros(dout.shape + (2,), dtype=DTYPE)
    np.put_along_axis(grad, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    return grad.reshape(dout.shape[:-1] + (-1,))


# --- composed network ------------------------------------------------------
#
# The composed pass keeps conv activations channels-last (N, H, W, C): the
# im2col gemm then produces its output in place and col2im adds contiguous
# channel vectors. Patch columns are ordered (kh, kw, C) to match.


def _conv_weights_hwc(params):
    o = params.weights.shape[0]
    return params.weights.transpose(0, 2, 3, 1).reshape(o, -1)


def _conv_forward_hwc(xh, params):
    n, h, w, c = xh.shape
    o, _, kh, kw = params.weights.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = sliding_window_view(xh, (kh, kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
    cols = win.reshape(n * ho * wo, kh * kw * c)
    out = cols @ _conv_weights_hwc(params).T
    out += params.bias
    return out.reshape(n, ho, wo, o), cols


def _conv_backward_hwc(x_shape, params, cols, dout, need_input_grad):
    n, h, w, c = x_shape
    o, _, kh, kw = params.weights.shape
    ho, wo = h - kh + 1, w - kw + 1
    dmat = dout.reshape(-1, o)
    dw = (dmat.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
    db = dmat.sum(axis=0)
    dx = None
    if need_input_grad:
        dcols = (dmat @ _conv_weights_hwc(params)).reshape(n, ho, wo, kh, kw, c)
        dx = np.zeros(x_shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, np.ascontiguousarray(dw), db


def _to_hwc(t):
    return np.ascontiguousarray(t.transpose(0, 2, 3, 1))


def _to_chw(t):
    return np.ascontiguousarray(t.transpose(0, 3, 1, 2))


@dataclass
class ForwardTrace:
    """Activations kept from a forward pass for backpropagation.

    Conv-stage arrays are stored channels-last, (N, H, W, C).
    """

    input: np.ndarray
    cols: list  # im2col patch matrices of conv1..conv3
    conv_pre: list  # pre-ReLU outputs of conv1..conv3
    pool_idx: list  # argmax positions (0..3, row-major) of the three pools
    pool_out: list  # pooled outputs (inputs to the next stage)
    fc1_out: np.ndarray
    fc2_pre: np.ndarray | None
    maxout_idx: np.ndarray
    output: np.ndarray
    net_id: int
    net_version: int

    def shapes(self):
        """Per-stage output shapes without the batch axis, (C, H, W) for conv stages."""
        chain = []
        for pre, pooled in zip(self.conv_pre, self.pool_out):
            for t in (pre, pooled):
                _, h, w, c = t.shape
                chain.append((c, h, w))
        chain.append(self.fc1_out.shape[1:])
        if self.fc2_pre is not None:
            chain.append(self.fc2_pre.shape[1:])
        chain.append(self.output.shape[1:])
        return chain

    def signature(self):
        """Every discrete routing decision made in the pass (ReLU masks and argmaxes)."""
        parts = [pre > 0 for pre in self.conv_pre]
        parts += list(self.pool_idx)
        parts.append(self.maxout_idx)
        return parts

    def flat_features(self):
        """fc1 input: the last pooled volume flattened in C, H, W order."""
        last = self.pool_out[2]
        return _to_chw(last).reshape(last.shape[0], -1)


def _check_input(x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != INPUT_SHAPE:
        raise InvalidShapeError(f"network input must be N x 3 x 96 x 96, got {x.shape}")
    return x


def net_forward(x, net, keep_trace=False):
    """Run the network on an N x 3 x 96 x 96 batch.

    Returns ``(output, trace)``; ``output`` is N x 2304 raw regression values
    and ``trace`` is None unless ``keep_trace``.
    """
    x = _check_input(x)
    cols, conv_pre, pool_idx, pool_out = [], [], [], []
    h = _to_hwc(x)
    for name in ("conv1", "conv2", "conv3"):
        pre, patches = _conv_forward_hwc(h, getattr(net, name))
        n, hh, ww, c = pre.shape
        if hh % 2 or ww % 2:
            raise InvalidShapeError(f"maxpool2 needs even H and W, got {(hh, ww)}")
        h = np.empty((n, hh // 2, ww // 2, c))
        idx = np.empty((n, hh // 2, ww // 2, c), dtype=np.int8)
        _kernels.relu_pool_forward(pre, h, idx)
        if keep_trace:
            cols.append(patches)
            conv_pre.append(pre)
            pool_idx.append(idx)
            pool_out.append(h)
        del patches
    flat = _to_chw(h).reshape(h.shape[0], -1)
    fc1_out = fc_forward(flat, net.fc1)
    fc2_pre = fc_forward(fc1_out, net.fc2) if net.fc2 is not None else None
    out, maxout_idx = maxout2_forward(fc1_out if fc2_pre is None else fc2_pre)
    trace = None
    if keep_trace:
        trace = ForwardTrace(
            x, cols, conv_pre, pool_idx, pool_out, fc1_out, fc2_pre, maxout_idx, out,
            id(net), net.version,
        )
    return out, trace


def check_trace(trace, net, output_grad):
    if trace.net_id != id(net) or trace.net_version != net.version:
        raise InconsistentTraceError("trace was recorded with different network parameters")
    if (trace.fc2_pre is None) == net.maxout_weighted:
        raise InconsistentTraceError("trace and network disagree on the maxout variant")
    output_grad = np.asarray(output_grad, dtype=DTYPE)
    if output_grad.ndim == 1:
        output_grad = output_grad[None]
    if output_grad.shape != trace.output.shape:
        raise InvalidShapeError(
            f"output_grad shape {output_grad.shape} != output shape {trace.output.shape}"
        )
    return output_grad


def conv_stages_backward(trace, net, d, need_input_grad, on_grad=None):
    """Backpropagate from the fc1 input gradient (N x 6400) down to the image.

    ``on_grad(name, dw, db)`` is called for conv3, conv2, conv1 in turn.
    Returns the N x 3 x 96 x 96 input gradient, or None.
    """
    last = trace.pool_out[2]
    d = _to_hwc(d.reshape(last.shape[0], last.shape[3], last.shape[1], last.shape[2]))
    stage_inputs = [_to_hwc(trace.input), trace.pool_out[0], trace.pool_out[1]]
    for i in (2, 1, 0):
        name = f"conv{i + 1}"
        pre = trace.conv_pre[i]
        dpre = np.empty_like(pre)
        _kernels.relu_pool_backward(d, trace.pool_idx[i], pre, dpre)
        want_dx = i > 0 or need_input_grad
        d, dw, db = _conv_backward_hwc(stage_inputs[i].shape, getattr(net, name), trace.cols[i], dpre, want_dx)
        on_grad(name, dw, db)
    return _to_chw(d) if need_input_grad else None


def net_backward(trace, net, output_grad, need_input_grad=True):
    """Backpropagate ``output_grad`` (N x 2304) through a traced forward pass.

    Returns ``(grads, dx)`` where ``grads`` is a :class:`Network` holding the
    parameter gradients and ``dx`` the gradient w.r.t. the input batch (None
    unless ``need_input_grad``).
    """
    output_grad = check_trace(trace, net, output_grad)
    blocks = {}
    d = maxout2_backward(output_grad, trace.maxout_idx)
    if net.fc2 is not None:
        d, blocks["fc2.weights"], blocks["fc2.bias"] = fc_backward(trace.fc1_out, net.fc2, d)
    d, blocks["fc1.weights"], blocks["fc1.bias"] = fc_backward(trace.flat_features(), net.fc1, d)

    def collect(name, dw, db):
        blocks[f"{name}.weights"], blocks[f"{name}.bias"] = dw, db

    dx = conv_stages_backward(trace, net, d, need_input_grad, collect)
    return Network.from_blocks(blocks), dx
