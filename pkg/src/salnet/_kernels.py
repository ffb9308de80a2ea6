"""Numba kernels for the hot paths of the composed network.

Two groups live here:

* ReLU followed by 2x2/2 max-pooling on channels-last (N, H, W, C) arrays,
  forward and backward, with the same first-in-scan-order tie rule as
  :func:`salnet.layers.maxpool2_forward`.
* A fused fully connected backward pass + Nesterov step. The fc weight
  matrices hold ~50M doubles, so the per-step cost is dominated by memory
  traffic; the fused pass streams each matrix once. The weight gradient and
  the input-gradient contribution are formed a chunk of rows at a time with
  BLAS while the chunk is cache resident, then the velocity update, the
  parameter update and the optional max-norm projection are applied to the
  chunk. Arithmetic matches :func:`salnet.training.nesterov_update` followed
  by :func:`salnet.training.maxnorm_project`.
"""

import numpy as np
from numba import njit

ROW_CHUNK = 16


@njit(cache=True)
def relu_pool_forward(pre, out, idx):
    n, h, w, c = pre.shape
    for b in range(n):
        for y in range(h // 2):
            for x in range(w // 2):
                for ch in range(c):
                    best = max(pre[b, 2 * y, 2 * x, ch], 0.0)
                    arg = 0
                    k = 0
                    for dy in range(2):
                        for dx in range(2):
                            v = max(pre[b, 2 * y + dy, 2 * x + dx, ch], 0.0)
                            if v > best:
                                best = v
                                arg = k
                            k += 1
                    out[b, y, x, ch] = best
                    idx[b, y, x, ch] = arg


@njit(cache=True)
def relu_pool_backward(dout, idx, pre, dpre):
    n, hh, ww, c = dout.shape
    dpre[:] = 0.0
    for b in range(n):
        for y in range(hh):
            for x in range(ww):
                for ch in range(c):
                    k = idx[b, y, x, ch]
                    yy = 2 * y + k // 2
                    xx = 2 * x + k % 2
                    if pre[b, yy, xx, ch] > 0.0:
                        dpre[b, yy, xx, ch] = dout[b, y, x, ch]


@njit(cache=True)
def _nesterov_rows(w, vw, g, lr, mu, cap):
    n_out, n_in = w.shape
    for i in range(n_out):
        sq = 0.0
        for j in range(n_in):
            v = mu * vw[i, j] - lr * g[i, j]
            vw[i, j] = v
            wn = w[i, j] + (mu * v - lr * g[i, j])
            w[i, j] = wn
            sq += wn * wn
        if cap > 0.0 and sq > cap * cap:
            scale = cap / np.sqrt(sq)
            for j in range(n_in):
                w[i, j] *= scale


def fc_backward_step(params, velocity, x, dout, lr, mu, cap=0.0, need_input_grad=True):
    """Backpropagate through ``params`` and apply one Nesterov step in place.

    ``x`` is the N x in layer input, ``dout`` the N x out output gradient.
    ``cap <= 0`` disables the row max-norm projection. Returns the input
    gradient (computed with the pre-update weights) or None.
    """
    w, vw = params.weights, velocity.weights
    dx = np.zeros_like(x) if need_input_grad else None

    gb = dout.sum(axis=0)
    vb = velocity.bias
    vb *= mu
    vb -= lr * gb
    params.bias += mu * vb - lr * gb

    g = np.empty((ROW_CHUNK, w.shape[1]))
    for r in range(0, w.shape[0], ROW_CHUNK):
        stop = min(r + ROW_CHUNK, w.shape[0])
        dchunk = np.ascontiguousarray(dout[:, r:stop])
        if need_input_grad:
            dx += dchunk @ w[r:stop]
        gc = g[: stop - r]
        np.matmul(dchunk.T, x, out=gc)
        _nesterov_rows(w[r:stop], vw[r:stop], gc, lr, mu, cap)
    return dx
