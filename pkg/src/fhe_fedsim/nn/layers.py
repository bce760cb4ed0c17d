"""Minimal layer zoo with explicit forward/backward passes.

Float32 parameters and activations (the wire format is float32); numpy
accumulates matmuls in wider precision internally. Layers cache what
their backward pass needs, so a layer instance belongs to one model and
models are cloned per client.
"""

import numpy as np

from .. import qsim


def _kaiming_uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Layer:
    name = "layer"

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def params(self):
        return []

    def grads(self):
        return []


class Conv2d(Layer):
    """3x3 convolution via im2col, same padding by default."""

    def __init__(self, name, c_in, c_out, rng, kernel=3, stride=1, pad=1):
        self.name = name
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = c_in * kernel * kernel
        self.w = _kaiming_uniform(rng, (c_out, fan_in), fan_in)
        self.b = _kaiming_uniform(rng, (c_out,), fan_in)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def _im2col(self, x):
        b, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        hp = (h + 2 * p - k) // s + 1
        wp = (w + 2 * p - k) // s + 1
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        shape = (b, c, hp, wp, k, k)
        strides = (xp.strides[0], xp.strides[1], xp.strides[2] * s,
                   xp.strides[3] * s, xp.strides[2], xp.strides[3])
        win = np.lib.stride_tricks.as_strided(xp, shape, strides)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * hp * wp, c * k * k)
        return np.ascontiguousarray(cols), hp, wp, xp.shape

    def forward(self, x):
        cols, hp, wp, xp_shape = self._im2col(x)
        out = cols @ self.w.T + self.b
        b = x.shape[0]
        self._cache = (cols, x.shape, xp_shape, hp, wp)
        return out.reshape(b, hp, wp, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout):
        cols, x_shape, xp_shape, hp, wp = self._cache
        b, _, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.pad
        dmat = dout.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.dw = (dmat.T @ cols).astype(np.float32)
        self.db = dmat.sum(axis=0).astype(np.float32)
        dcols = (dmat @ self.w).reshape(b, hp, wp, self.c_in, k, k)
        dwin = dcols.transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros(xp_shape, dtype=np.float32)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + hp * s : s, j : j + wp * s : s] += dwin[:, :, :, :, i, j]
        return dxp[:, :, p : p + h, p : p + w]

    def params(self):
        return [(f"{self.name}.weight", self.w), (f"{self.name}.bias", self.b)]

    def grads(self):
        return [(f"{self.name}.weight", self.dw), (f"{self.name}.bias", self.db)]


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are cropped."""

    def forward(self, x):
        b, c, h, w = x.shape
        hp, wp = h // 2, w // 2
        x = x[:, :, : hp * 2, : wp * 2]
        win = x.reshape(b, c, hp, 2, wp, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, hp, wp, 4)
        self._argmax = win.argmax(axis=-1)
        self._in_shape = (b, c, h, w)
        return np.take_along_axis(win, self._argmax[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        b, c, h, w = self._in_shape
        hp, wp = h // 2, w // 2
        dwin = np.zeros((b, c, hp, wp, 4), dtype=np.float32)
        np.put_along_axis(dwin, self._argmax[..., None], dout[..., None], axis=-1)
        dx = np.zeros((b, c, h, w), dtype=np.float32)
        dx[:, :, : hp * 2, : wp * 2] = (
            dwin.reshape(b, c, hp, wp, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, hp * 2, wp * 2))
        return dx


class GlobalAvgPool(Layer):
    """Adaptive average pooling to 1x1, flattened to (B, C)."""

    def forward(self, x):
        self._in_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        b, c, h, w = self._in_shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), (b, c, h, w)).astype(np.float32)


class Linear(Layer):
    def __init__(self, name, n_in, n_out, rng):
        self.name = name
        self.w = _kaiming_uniform(rng, (n_out, n_in), n_in)
        self.b = _kaiming_uniform(rng, (n_out,), n_in)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dout):
        self.dw = (dout.T @ self._x).astype(np.float32)
        self.db = dout.sum(axis=0).astype(np.float32)
        return dout @ self.w

    def params(self):
        return [(f"{self.name}.weight", self.w), (f"{self.name}.bias", self.b)]

    def grads(self):
        return [(f"{self.name}.weight", self.dw), (f"{self.name}.bias", self.db)]


class QuantumLayer(Layer):
    """Variational circuit layer: activations enter as rotation angles,
    Pauli-Z readouts come out; gradients via the parameter-shift rule for
    both the circuit parameters and the embedding angles."""

    def __init__(self, name, circuit, rng):
        self.name = name
        self.circuit = circuit
        self.theta = rng.uniform(0.0, 2.0 * np.pi, size=circuit.n_params).astype(np.float32)
        self.dtheta = np.zeros_like(self.theta)

    def forward(self, x):
        self._x = x
        vals = qsim.expectations(self.circuit, x.astype(np.float64), self.theta.astype(np.float64))
        return vals.astype(x.dtype, copy=False)  # float64 probes stay float64

    def backward(self, dout):
        d_params, d_inputs = qsim.param_shift_grad(
            self.circuit, self._x.astype(np.float64), self.theta.astype(np.float64))
        self.dtheta = np.einsum("brp,br->p", d_params, dout.astype(np.float64)).astype(np.float32)
        return np.einsum("bri,br->bi", d_inputs, dout.astype(np.float64)).astype(np.float32)

    def params(self):
        return [(f"{self.name}.theta", self.theta)]

    def grads(self):
        return [(f"{self.name}.theta", self.dtheta)]


def softmax_cross_entropy(logits, labels):
    """Mean loss and dL/dlogits for integer class labels."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-12)))
    dlogits = probs.astype(np.float32)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / np.float32(n)
