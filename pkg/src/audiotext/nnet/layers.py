"""Differentiable layers: forward passes return (output, cache); backward
passes consume the cache, accumulate parameter gradients in place, and
return the gradient with respect to the layer input.

Conventions fixed here (they are contract, not implementation detail):

* GRU update: h' = (1-z)*h + z*h_tilde with z the update gate.
* ReLU subgradient at 0 is 0; hinge-style choices match.
* Max pooling breaks ties toward the earliest frame.
* Recurrent sweeps start from zero initial state.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NnetError(ValueError):
    """Shape disagreement or invalid layer configuration."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# dense


class Dense:
    """Affine map y = W x + b; accepts a vector (in,) or frames (T, in)."""

    def __init__(self, w: Tensor, b: Tensor):
        self.w = w
        self.b = b

    def forward(self, x: np.ndarray):
        out_dim, in_dim = self.w.shape
        if x.shape[-1] != in_dim:
            raise NnetError(f"dense: input dim {x.shape[-1]} != {in_dim}")
        y = x @ self.w.data.T + self.b.data
        return y, x

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        x = cache
        if x.ndim == 1:
            self.w.accumulate(np.outer(dy, x))
            self.b.accumulate(dy)
        else:
            self.w.accumulate(dy.T @ x)
            self.b.accumulate(dy.sum(axis=0))
        return dy @ self.w.data


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b (stateless convenience form)."""
    return Dense(Tensor(w), Tensor(b)).forward(np.asarray(x))[0]


# ---------------------------------------------------------------------------
# activations


class Activation:
    KINDS = ("relu", "tanh", "sigmoid")

    def __init__(self, kind: str):
        if kind not in self.KINDS:
            raise NnetError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x: np.ndarray):
        if self.kind == "relu":
            y = np.maximum(x, 0.0)
        elif self.kind == "tanh":
            y = np.tanh(x)
        else:
            y = _sigmoid(x)
        return y, (x, y)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        x, y = cache
        if self.kind == "relu":
            return dy * (x > 0)
        if self.kind == "tanh":
            return dy * (1.0 - y * y)
        return dy * y * (1.0 - y)


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    return Activation(kind).forward(np.asarray(x, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# 1-D convolution over time


class Conv1d:
    """Same-length conv along time: x (T, C_in) -> y (T, C_out).

    Odd kernel width k, zero padding (k-1)/2 each side. Implemented as
    im2col + matmul; kernels[o, c, j] multiplies x[t - (k-1)/2 + j, c].
    """

    def __init__(self, kernels: Tensor, bias: Tensor):
        c_out, c_in, k = kernels.shape
        if k % 2 == 0:
            raise NnetError(f"conv1d kernel width must be odd, got {k}")
        if bias.shape != (c_out,):
            raise NnetError(f"conv1d bias shape {bias.shape} != ({c_out},)")
        self.kernels = kernels
        self.bias = bias

    def forward(self, x: np.ndarray):
        c_out, c_in, k = self.kernels.shape
        t = x.shape[0]
        if x.ndim != 2 or x.shape[1] != c_in:
            raise NnetError(f"conv1d: input shape {x.shape}, expected (T, {c_in})")
        pad = (k - 1) // 2
        xp = np.zeros((t + 2 * pad, c_in), dtype=x.dtype)
        xp[pad : pad + t] = x
        # windows[t, j, c] = xp[t + j, c]; flatten to (T, C_in*k) in (c, j) order
        windows = np.lib.stride_tricks.sliding_window_view(xp, (k, c_in)).reshape(t, k, c_in)
        cols = windows.transpose(0, 2, 1).reshape(t, c_in * k)
        y = cols @ self.kernels.data.reshape(c_out, c_in * k).T + self.bias.data
        return y, (cols, t, pad)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        cols, t, pad = cache
        c_out, c_in, k = self.kernels.shape
        self.kernels.accumulate((dy.T @ cols).reshape(c_out, c_in, k))
        self.bias.accumulate(dy.sum(axis=0))
        dcols = (dy @ self.kernels.data.reshape(c_out, c_in * k)).reshape(t, c_in, k)
        dxp = np.zeros((t + 2 * pad, c_in), dtype=dy.dtype)
        for j in range(k):
            dxp[j : j + t] += dcols[:, :, j]
        return dxp[pad : pad + t]


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return Conv1d(Tensor(np.asarray(kernels)), Tensor(np.asarray(bias))).forward(np.asarray(x))[0]


# ---------------------------------------------------------------------------
# pooling over time


class MaxPoolTime:
    """Non-overlapping max windows of length `stride`; T' = ceil(T/stride).

    The last window may be partial. Gradient flows to the earliest
    maximal frame in each window.
    """

    def __init__(self, stride: int):
        if stride < 1:
            raise NnetError(f"max pool stride must be >= 1, got {stride}")
        self.stride = stride

    def forward(self, x: np.ndarray):
        t, h = x.shape
        t_out = -(-t // self.stride)
        y = np.empty((t_out, h), dtype=x.dtype)
        argmax = np.empty((t_out, h), dtype=np.int64)
        for w in range(t_out):
            lo = w * self.stride
            hi = min(lo + self.stride, t)
            block = x[lo:hi]
            idx = block.argmax(axis=0)
            argmax[w] = lo + idx
            y[w] = block[idx, np.arange(h)]
        return y, (x.shape, argmax)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        shape, argmax = cache
        dx = np.zeros(shape, dtype=dy.dtype)
        h = shape[1]
        cols = np.arange(h)
        for w in range(dy.shape[0]):
            dx[argmax[w], cols] += dy[w]
        return dx


class MeanPoolTime:
    """stride=0: full-sequence mean to a single (H,) vector.
    stride>0: non-overlapping window means, partial last window included.
    """

    def __init__(self, stride: int = 0):
        if stride < 0:
            raise NnetError(f"mean pool stride must be >= 0, got {stride}")
        self.stride = stride

    def forward(self, x: np.ndarray):
        t = x.shape[0]
        if self.stride == 0:
            return x.mean(axis=0), t
        t_out = -(-t // self.stride)
        y = np.empty((t_out, x.shape[1]), dtype=x.dtype)
        for w in range(t_out):
            y[w] = x[w * self.stride : min((w + 1) * self.stride, t)].mean(axis=0)
        return y, t

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        t = cache
        if self.stride == 0:
            return np.tile(dy / t, (t, 1))
        dx = np.empty((t, dy.shape[1]), dtype=dy.dtype)
        for w in range(dy.shape[0]):
            lo = w * self.stride
            hi = min(lo + self.stride, t)
            dx[lo:hi] = dy[w] / (hi - lo)
        return dx


def pool_time(x: np.ndarray, kind: str, stride: int) -> np.ndarray:
    """Functional pooling entry point; mean with stride=0 collapses time."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "max":
        return MaxPoolTime(stride).forward(x)[0]
    if kind == "mean":
        return MeanPoolTime(stride).forward(x)[0]
    raise NnetError(f"unknown pool kind {kind!r}")


# ---------------------------------------------------------------------------
# recurrent cells


class GRUCell:
    """Gated recurrent unit.

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    h~ = tanh(Wh x + Uh (r*h) + bh)
    h' = (1-z)*h + z*h~
    """

    GATES = ("z", "r", "h")

    def __init__(self, p: dict[str, Tensor]):
        self.p = p  # keys: w_z,u_z,b_z,w_r,u_r,b_r,w_h,u_h,b_h

    def step(self, x: np.ndarray, h: np.ndarray):
        p = self.p
        z = _sigmoid(p["w_z"].data @ x + p["u_z"].data @ h + p["b_z"].data)
        r = _sigmoid(p["w_r"].data @ x + p["u_r"].data @ h + p["b_r"].data)
        rh = r * h
        h_tilde = np.tanh(p["w_h"].data @ x + p["u_h"].data @ rh + p["b_h"].data)
        h_new = (1.0 - z) * h + z * h_tilde
        return h_new, (x, h, z, r, rh, h_tilde)

    def step_backward(self, cache, dh_new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Returns (dx, dh_prev); accumulates parameter gradients."""
        x, h, z, r, rh, h_tilde = cache
        p = self.p
        dz_pre = dh_new * (h_tilde - h) * z * (1.0 - z)
        dht_pre = dh_new * z * (1.0 - h_tilde * h_tilde)
        dh_prev = dh_new * (1.0 - z)
        drh = p["u_h"].data.T @ dht_pre
        dr_pre = drh * h * r * (1.0 - r)
        dh_prev = dh_prev + drh * r
        dh_prev = dh_prev + p["u_z"].data.T @ dz_pre + p["u_r"].data.T @ dr_pre
        dx = p["w_z"].data.T @ dz_pre + p["w_r"].data.T @ dr_pre + p["w_h"].data.T @ dht_pre
        p["w_z"].accumulate(np.outer(dz_pre, x))
        p["u_z"].accumulate(np.outer(dz_pre, h))
        p["b_z"].accumulate(dz_pre)
        p["w_r"].accumulate(np.outer(dr_pre, x))
        p["u_r"].accumulate(np.outer(dr_pre, h))
        p["b_r"].accumulate(dr_pre)
        p["w_h"].accumulate(np.outer(dht_pre, x))
        p["u_h"].accumulate(np.outer(dht_pre, rh))
        p["b_h"].accumulate(dht_pre)
        return dx, dh_prev

    def sweep(self, xs: np.ndarray):
        """Run over a (T, in) sequence from h0 = 0; returns (T, H) states."""
        hidden = self.p["b_z"].shape[0]
        h = np.zeros(hidden, dtype=xs.dtype)
        states = np.empty((xs.shape[0], hidden), dtype=xs.dtype)
        caches = []
        for t in range(xs.shape[0]):
            h, cache = self.step(xs[t], h)
            states[t] = h
            caches.append(cache)
        return states, caches

    def sweep_backward(self, caches, dstates: np.ndarray) -> np.ndarray:
        dxs = np.empty((dstates.shape[0], self.p["w_z"].shape[1]), dtype=dstates.dtype)
        dh = np.zeros(dstates.shape[1], dtype=dstates.dtype)
        for t in range(dstates.shape[0] - 1, -1, -1):
            dxs[t], dh = self.step_backward(caches[t], dstates[t] + dh)
        return dxs


def gru_step(x: np.ndarray, h: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Single GRU step on plain arrays (params keyed w_z..b_h)."""
    cell = GRUCell({k: Tensor(np.asarray(v)) for k, v in params.items()})
    return cell.step(np.asarray(x, dtype=np.float64), np.asarray(h, dtype=np.float64))[0]


class LSTMCell:
    """Long short-term memory cell.

    i, f, o = sigmoid(W x + U h + b)   (input, forget, output gates)
    g = tanh(Wg x + Ug h + bg)
    c' = f*c + i*g
    h' = o*tanh(c')
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, p: dict[str, Tensor]):
        self.p = p  # keys: w_i,u_i,b_i,...,w_g,u_g,b_g

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        p = self.p
        i = _sigmoid(p["w_i"].data @ x + p["u_i"].data @ h + p["b_i"].data)
        f = _sigmoid(p["w_f"].data @ x + p["u_f"].data @ h + p["b_f"].data)
        o = _sigmoid(p["w_o"].data @ x + p["u_o"].data @ h + p["b_o"].data)
        g = np.tanh(p["w_g"].data @ x + p["u_g"].data @ h + p["b_g"].data)
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        return (h_new, c_new), (x, h, c, i, f, o, g, tanh_c)

    def step_backward(self, cache, dh_new: np.ndarray, dc_new: np.ndarray):
        """Returns (dx, dh_prev, dc_prev); accumulates parameter gradients."""
        x, h, c, i, f, o, g, tanh_c = cache
        p = self.p
        do_pre = dh_new * tanh_c * o * (1.0 - o)
        dc = dc_new + dh_new * o * (1.0 - tanh_c * tanh_c)
        di_pre = dc * g * i * (1.0 - i)
        df_pre = dc * c * f * (1.0 - f)
        dg_pre = dc * i * (1.0 - g * g)
        dc_prev = dc * f
        dh_prev = (
            p["u_i"].data.T @ di_pre
            + p["u_f"].data.T @ df_pre
            + p["u_o"].data.T @ do_pre
            + p["u_g"].data.T @ dg_pre
        )
        dx = (
            p["w_i"].data.T @ di_pre
            + p["w_f"].data.T @ df_pre
            + p["w_o"].data.T @ do_pre
            + p["w_g"].data.T @ dg_pre
        )
        for name, dpre in (("i", di_pre), ("f", df_pre), ("o", do_pre), ("g", dg_pre)):
            p[f"w_{name}"].accumulate(np.outer(dpre, x))
            p[f"u_{name}"].accumulate(np.outer(dpre, h))
            p[f"b_{name}"].accumulate(dpre)
        return dx, dh_prev, dc_prev

    def sweep(self, xs: np.ndarray):
        hidden = self.p["b_i"].shape[0]
        h = np.zeros(hidden, dtype=xs.dtype)
        c = np.zeros(hidden, dtype=xs.dtype)
        states = np.empty((xs.shape[0], hidden), dtype=xs.dtype)
        caches = []
        for t in range(xs.shape[0]):
            (h, c), cache = self.step(xs[t], h, c)
            states[t] = h
            caches.append(cache)
        return states, caches

    def sweep_backward(self, caches, dstates: np.ndarray) -> np.ndarray:
        dxs = np.empty((dstates.shape[0], self.p["w_i"].shape[1]), dtype=dstates.dtype)
        dh = np.zeros(dstates.shape[1], dtype=dstates.dtype)
        dc = np.zeros(dstates.shape[1], dtype=dstates.dtype)
        for t in range(dstates.shape[0] - 1, -1, -1):
            dxs[t], dh, dc = self.step_backward(caches[t], dstates[t] + dh, dc)
        return dxs


def lstm_step(
    x: np.ndarray, h: np.ndarray, c: np.ndarray, params: dict[str, np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Single LSTM step on plain arrays; returns (h', c')."""
    cell = LSTMCell({k: Tensor(np.asarray(v)) for k, v in params.items()})
    (h_new, c_new), _ = cell.step(
        np.asarray(x, dtype=np.float64),
        np.asarray(h, dtype=np.float64),
        np.asarray(c, dtype=np.float64),
    )
    return h_new, c_new


# ---------------------------------------------------------------------------
# projection head


class Projection:
    """Affine map then activation ("relu" or "identity") on a single vector."""

    def __init__(self, w: Tensor, b: Tensor, activation_kind: str = "relu"):
        if activation_kind not in ("relu", "identity"):
            raise NnetError(f"projection activation must be relu or identity, got {activation_kind!r}")
        self.dense = Dense(w, b)
        self.activation_kind = activation_kind

    def forward(self, v: np.ndarray):
        pre, dense_cache = self.dense.forward(v)
        if self.activation_kind == "relu":
            out = np.maximum(pre, 0.0)
        else:
            out = pre
        return out, (dense_cache, pre)

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        dense_cache, pre = cache
        if self.activation_kind == "relu":
            dout = dout * (pre > 0)
        return self.dense.backward(dense_cache, dout)
