"""Layer kinds with hand-written forward and backward passes.

Tensors are numpy arrays shaped ``(batch, channels, height, width)``. Every
layer is a small description object; its trainable parameters and running
buffers live outside the layer in flat name -> array dicts, so parameter sets
can be copied, frozen and checkpointed without touching the architecture.

``forward(p, buf, x, train)`` returns ``(y, cache)``;
``backward(p, cache, dy)`` returns ``(dx, grads)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..imaging import bilinear_matrix, box_matrix


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")


def reflect_pad_backward(dxp: np.ndarray, pad: int) -> np.ndarray:
    """Fold gradients of a reflection-padded tensor back onto the unpadded one."""
    if pad == 0:
        return dxp
    g = dxp
    for axis in (2, 3):
        n = g.shape[axis] - 2 * pad
        core = np.take(g, np.arange(pad, pad + n), axis=axis).copy()
        idx = [slice(None)] * 4
        for j in range(pad):
            # padded index j mirrors interior index pad - j
            idx[axis] = pad - j
            src = [slice(None)] * 4
            src[axis] = j
            core[tuple(idx)] += g[tuple(src)]
            # padded index pad + n + j mirrors interior index n - 2 - j
            idx[axis] = n - 2 - j
            src[axis] = pad + n + j
            core[tuple(idx)] += g[tuple(src)]
        g = core
    return g


# below this many input channels a conv stacks its shifted windows into one
# (k*k*c, h*w) matrix for the forward pass; above it per-tap products are faster
_STACK_BELOW = 16


def _stack_windows(flat: np.ndarray, k: int, wp: int, length: int) -> np.ndarray:
    n, c = flat.shape[:2]
    cols = np.empty((n, k * k, c, length), dtype=flat.dtype)
    for t in range(k * k):
        off = (t // k) * wp + t % k
        cols[:, t] = flat[:, :, off : off + length]
    return cols.reshape(n, k * k * c, length)


class Layer:
    kind = "layer"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def init(self, rng: np.random.Generator, dtype) -> tuple[dict, dict]:
        return {}, {}

    def channels_out(self, in_channels: int) -> int:
        return in_channels

    def forward(self, p, buf, x, train):
        raise NotImplementedError

    def backward(self, p, cache, dy):
        raise NotImplementedError


@dataclass
class Conv2d(Layer):
    """Convolution with reflection padding that preserves the spatial size."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    bias: bool = True
    # multiplies the He-uniform bound; small values start a layer near zero output
    init_gain: float = 1.0
    kind = "conv"

    @property
    def pad(self) -> int:
        return self.kernel // 2

    def channels_out(self, in_channels: int) -> int:
        if in_channels != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} input channels, got {in_channels}")
        return self.out_channels

    def param_shapes(self):
        shapes = {"weight": (self.out_channels, self.in_channels, self.kernel, self.kernel)}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes

    def init(self, rng, dtype):
        fan_in = self.in_channels * self.kernel * self.kernel
        bound = self.init_gain * math.sqrt(6.0 / fan_in)
        shape = self.param_shapes()["weight"]
        p = {"weight": rng.uniform(-bound, bound, size=shape).astype(dtype)}
        if self.bias:
            p["bias"] = np.zeros(self.out_channels, dtype=dtype)
        return p, {}

    def forward(self, p, buf, x, train):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} input channels, got {c}")
        weight = p["weight"]
        if self.kernel == 1:
            w2 = np.ascontiguousarray(weight[:, :, 0, 0])
            y = (w2 @ x.reshape(n, c, h * w)).reshape(n, self.out_channels, h, w)
            cache = x
        else:
            k, pad = self.kernel, self.pad
            xp = reflect_pad(x, pad)
            hp, wp = h + 2 * pad, w + 2 * pad
            length = h * wp
            # flattened padded planes: each kernel tap reads a contiguous window of
            # length h*wp; the last 2*pad columns of every output row are discarded
            flat = np.zeros((n, c, hp * wp + 2 * pad), dtype=x.dtype)
            flat[:, :, : hp * wp] = xp.reshape(n, c, hp * wp)
            y_full = np.empty((n, self.out_channels, length), dtype=x.dtype)
            cols = None
            if c < _STACK_BELOW:
                cols = _stack_windows(flat, k, wp, length)
                wmat = weight.transpose(0, 2, 3, 1).reshape(self.out_channels, k * k * c)
                for b in range(n):
                    y_full[b] = wmat @ cols[b]
            else:
                taps = np.ascontiguousarray(weight.transpose(2, 3, 0, 1))
                for b in range(n):
                    acc = y_full[b]
                    acc[...] = 0
                    for di in range(k):
                        for dj in range(k):
                            off = di * wp + dj
                            acc += taps[di, dj] @ flat[b, :, off : off + length]
            y = y_full.reshape(n, self.out_channels, h, wp)[..., :w]
            cache = (flat, cols, (n, c, h, w))
        if self.bias:
            y = y + p["bias"][None, :, None, None]
        return np.ascontiguousarray(y), cache

    def backward(self, p, cache, dy):
        weight = p["weight"]
        grads = {}
        if self.bias:
            grads["bias"] = dy.sum(axis=(0, 2, 3))
        if self.kernel == 1:
            x = cache
            n, c, h, w = x.shape
            w2t = np.ascontiguousarray(weight[:, :, 0, 0].T)
            dy2 = np.ascontiguousarray(dy).reshape(n, self.out_channels, h * w)
            x2 = x.reshape(n, c, h * w)
            grads["weight"] = sum(dy2[b] @ x2[b].T for b in range(n))[:, :, None, None]
            dx = (w2t @ dy2).reshape(n, c, h, w)
            return dx, grads
        flat, cols, (n, c, h, w) = cache
        k, pad = self.kernel, self.pad
        hp, wp = h + 2 * pad, w + 2 * pad
        length = h * wp
        if cols is None:
            cols = _stack_windows(flat, k, wp, length)
        dy_full = np.zeros((n, self.out_channels, h, wp), dtype=dy.dtype)
        dy_full[..., :w] = dy
        dy_full = dy_full.reshape(n, self.out_channels, length)
        wmat_t = np.ascontiguousarray(weight.transpose(0, 2, 3, 1).reshape(self.out_channels, k * k * c).T)
        dwmat = np.zeros((self.out_channels, k * k * c), dtype=weight.dtype)
        dflat = np.zeros_like(flat)
        for b in range(n):
            dwmat += dy_full[b] @ cols[b].T
            dcols = (wmat_t @ dy_full[b]).reshape(k * k, c, length)
            for t in range(k * k):
                off = (t // k) * wp + t % k
                dflat[b, :, off : off + length] += dcols[t]
        grads["weight"] = np.ascontiguousarray(dwmat.reshape(self.out_channels, k, k, c).transpose(0, 3, 1, 2))
        dxp = dflat[:, :, : hp * wp].reshape(n, c, hp, wp)
        return reflect_pad_backward(dxp, pad), grads


@dataclass
class BatchNorm(Layer):
    """Per-channel normalization over batch and spatial positions."""

    channels: int
    eps: float = 1e-5
    momentum: float = 0.1
    kind = "batchnorm"

    def param_shapes(self):
        return {"scale": (self.channels,), "shift": (self.channels,)}

    def buffer_shapes(self):
        return {"running_mean": (self.channels,), "running_var": (self.channels,)}

    def channels_out(self, in_channels):
        if in_channels != self.channels:
            raise ValueError(f"batch-norm expects {self.channels} channels, got {in_channels}")
        return in_channels

    def init(self, rng, dtype):
        c = self.channels
        return (
            {"scale": np.ones(c, dtype=dtype), "shift": np.zeros(c, dtype=dtype)},
            {"running_mean": np.zeros(c, dtype=dtype), "running_var": np.ones(c, dtype=dtype)},
        )

    def forward(self, p, buf, x, train):
        if x.shape[1] != self.channels:
            raise ValueError(f"batch-norm expects {self.channels} channels, got {x.shape[1]}")
        scale = p["scale"][None, :, None, None]
        shift = p["shift"][None, :, None, None]
        if not train:
            mean = buf["running_mean"][None, :, None, None]
            var = buf["running_var"][None, :, None, None]
            return (x - mean) / np.sqrt(var + self.eps) * scale + shift, None
        count = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * inv_std
        m = self.momentum
        unbiased = var.ravel() * (count / max(count - 1, 1))
        buf["running_mean"][...] = (1 - m) * buf["running_mean"] + m * mean.ravel()
        buf["running_var"][...] = (1 - m) * buf["running_var"] + m * unbiased
        return xhat * scale + shift, (xhat, inv_std)

    def backward(self, p, cache, dy):
        xhat, inv_std = cache
        grads = {"scale": (dy * xhat).sum(axis=(0, 2, 3)), "shift": dy.sum(axis=(0, 2, 3))}
        dxhat = dy * p["scale"][None, :, None, None]
        mean_dxhat = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return dx, grads


@dataclass
class LeakyReLU(Layer):
    slope: float = 0.2
    kind = "leaky-relu"

    def forward(self, p, buf, x, train):
        positive = x > 0
        return np.where(positive, x, x * x.dtype.type(self.slope)), positive

    def backward(self, p, cache, dy):
        return np.where(cache, dy, dy * dy.dtype.type(self.slope)), {}


@dataclass
class BilinearUp(Layer):
    """Corner-aligned bilinear upsampling by ``factor`` (or to a fixed ``size``)."""

    factor: int = 2
    size: tuple[int, int] | None = None
    kind = "bilinear-up"

    def target(self, h, w):
        return self.size if self.size is not None else (h * self.factor, w * self.factor)

    def forward(self, p, buf, x, train):
        h, w = x.shape[2:]
        oh, ow = self.target(h, w)
        rows = bilinear_matrix(h, oh).astype(x.dtype)
        cols = bilinear_matrix(w, ow).astype(x.dtype)
        return rows @ np.ascontiguousarray(x) @ np.ascontiguousarray(cols.T), (rows, cols)

    def backward(self, p, cache, dy):
        rows, cols = cache
        return np.ascontiguousarray(rows.T) @ np.ascontiguousarray(dy) @ cols, {}


@dataclass
class BoxDown(Layer):
    factor: int = 2
    kind = "box-down"

    def forward(self, p, buf, x, train):
        h, w = x.shape[2:]
        rows = box_matrix(h, self.factor).astype(x.dtype)
        cols = box_matrix(w, self.factor).astype(x.dtype)
        return rows @ np.ascontiguousarray(x) @ np.ascontiguousarray(cols.T), (rows, cols)

    def backward(self, p, cache, dy):
        rows, cols = cache
        return np.ascontiguousarray(rows.T) @ np.ascontiguousarray(dy) @ cols, {}


class Composite(Layer):
    """A layer made of named sublayers; parameter names get ``<sub>.`` prefixes."""

    def children(self) -> list[tuple[str, Layer]]:
        raise NotImplementedError

    def param_shapes(self):
        out = {}
        for name, layer in self.children():
            out.update({f"{name}.{k}": v for k, v in layer.param_shapes().items()})
        return out

    def buffer_shapes(self):
        out = {}
        for name, layer in self.children():
            out.update({f"{name}.{k}": v for k, v in layer.buffer_shapes().items()})
        return out

    def init(self, rng, dtype):
        params, buffers = {}, {}
        for name, layer in self.children():
            p, b = layer.init(rng, dtype)
            params.update({f"{name}.{k}": v for k, v in p.items()})
            buffers.update({f"{name}.{k}": v for k, v in b.items()})
        return params, buffers

    @staticmethod
    def _sub(d, name):
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in d.items() if k.startswith(prefix)}

    def _run(self, p, buf, x, train):
        caches = []
        for name, layer in self.children():
            x, cache = layer.forward(self._sub(p, name), self._sub(buf, name), x, train)
            caches.append(cache)
        return x, caches

    def _run_backward(self, p, caches, dy):
        grads = {}
        for (name, layer), cache in zip(reversed(self.children()), reversed(caches)):
            dy, g = layer.backward(self._sub(p, name), cache, dy)
            grads.update({f"{name}.{k}": v for k, v in g.items()})
        return dy, grads


@dataclass
class ResidualBlock(Composite):
    """``x + BN(conv(LReLU(BN(conv(x)))))`` with 3x3 convolutions."""

    channels: int
    slope: float = 0.2
    kind = "residual-block"
    _children: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        c = self.channels
        self._children = [
            ("conv1", Conv2d(c, c, 3)),
            ("bn1", BatchNorm(c)),
            ("act", LeakyReLU(self.slope)),
            ("conv2", Conv2d(c, c, 3)),
            ("bn2", BatchNorm(c)),
        ]

    def children(self):
        return self._children

    def channels_out(self, in_channels):
        if in_channels != self.channels:
            raise ValueError(f"residual block expects {self.channels} channels, got {in_channels}")
        return in_channels

    def forward(self, p, buf, x, train):
        y, caches = self._run(p, buf, x, train)
        return x + y, caches

    def backward(self, p, cache, dy):
        dx, grads = self._run_backward(p, cache, dy)
        return dx + dy, grads


@dataclass
class ScaleSkip(Composite):
    """``x + up(body(down(x)))``: runs ``body`` at reduced resolution.

    The upsampling targets the exact input size, so ragged dimensions survive
    the round trip.
    """

    body: list
    factor: int = 2
    kind = "scale-skip"

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.body)]

    def channels_out(self, in_channels):
        c = in_channels
        for layer in self.body:
            c = layer.channels_out(c)
        if c != in_channels:
            raise ValueError("scale-skip body must preserve the channel count")
        return c

    def forward(self, p, buf, x, train):
        h, w = x.shape[2:]
        down = BoxDown(self.factor)
        z, down_cache = down.forward({}, {}, x, train)
        z, caches = self._run(p, buf, z, train)
        up = BilinearUp(size=(h, w))
        z, up_cache = up.forward({}, {}, z, train)
        return x + z, (down_cache, caches, up_cache)

    def backward(self, p, cache, dy):
        down_cache, caches, up_cache = cache
        dz, _ = BilinearUp().backward({}, up_cache, dy)
        dz, grads = self._run_backward(p, caches, dz)
        dz, _ = BoxDown(self.factor).backward({}, down_cache, dz)
        return dy + dz, grads
