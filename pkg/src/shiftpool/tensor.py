"""Dense float32 tensors with reverse-mode automatic differentiation.

Just enough of an autograd engine for a small VGG-style network: elementwise
arithmetic with broadcasting, matmul, reductions, activations, 2D convolution,
depthwise convolution with stride, and batch normalization. Values are stored
as 32-bit floats; reductions accumulate in 64-bit before casting back.

Everything is deterministic: graph traversal order is fixed by construction
and no operation consults global state.
"""

import numpy as np


class DimensionError(ValueError):
    """Shape mismatch between operands, reported with the offending axes."""


def _noop():
    pass


class Tensor:
    """A dense N-dimensional float32 array with optional gradient tracking."""

    # make ndarray <op> Tensor defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = _noop
        self._prev = ()

    # ------------------------------------------------------------------ #
    # basic introspection

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.item())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # ------------------------------------------------------------------ #
    # graph machinery

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Visits every reachable node exactly once in reverse topological
        order. Raises if called on a non-scalar tensor.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._prev):
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            node._backward()

    # ------------------------------------------------------------------ #
    # arithmetic

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data)
        out.requires_grad = self.requires_grad or other.requires_grad
        if out.requires_grad:
            out._prev = (self, other)

            def _backward():
                _accumulate(self, _unbroadcast(out.grad, self.data.shape))
                _accumulate(other, _unbroadcast(out.grad, other.data.shape))

            out._backward = _backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data)
        out.requires_grad = self.requires_grad or other.requires_grad
        if out.requires_grad:
            out._prev = (self, other)

            def _backward():
                _accumulate(self, _unbroadcast(out.grad * other.data, self.data.shape))
                _accumulate(other, _unbroadcast(out.grad * self.data, other.data.shape))

            out._backward = _backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __pow__(self, exponent):
        exponent = float(exponent)
        out = Tensor(self.data ** np.float32(exponent))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                local = exponent * self.data ** np.float32(exponent - 1.0)
                _accumulate(self, out.grad * local)

            out._backward = _backward
        return out

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / float(other))

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise DimensionError(
                f"matmul expects 2D operands, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul inner axes differ: {self.data.shape[1]} vs {other.data.shape[0]}"
            )
        out = Tensor(self.data @ other.data)
        out.requires_grad = self.requires_grad or other.requires_grad
        if out.requires_grad:
            out._prev = (self, other)

            def _backward():
                _accumulate(self, out.grad @ other.data.T)
                _accumulate(other, self.data.T @ out.grad)

            out._backward = _backward
        return out

    # ------------------------------------------------------------------ #
    # reductions

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
        out = Tensor(out_data.astype(np.float32))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _accumulate(self, np.broadcast_to(g, self.data.shape))

            out._backward = _backward
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= self.data.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def amax(self, axis):
        """Maximum along one axis; ties route the gradient to the first hit."""
        idx = np.argmax(self.data, axis=axis)
        expanded = np.expand_dims(idx, axis)
        out_data = np.take_along_axis(self.data, expanded, axis)
        out = Tensor(np.squeeze(out_data, axis))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                gx = np.zeros_like(self.data)
                np.put_along_axis(gx, expanded, np.expand_dims(out.grad, axis), axis)
                _accumulate(self, gx)

            out._backward = _backward
        return out

    # ------------------------------------------------------------------ #
    # activations and shaping

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                # subgradient at 0 is 0
                _accumulate(self, out.grad * (self.data > 0.0))

            out._backward = _backward
        return out

    def sigmoid(self):
        x = self.data
        out_data = np.where(
            x >= 0.0,
            1.0 / (1.0 + np.exp(-np.abs(x))),
            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
        ).astype(np.float32)
        out = Tensor(out_data)
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                s = out.data
                _accumulate(self, out.grad * s * (1.0 - s))

            out._backward = _backward
        return out

    def exp(self):
        out = Tensor(np.exp(self.data))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                _accumulate(self, out.grad * out.data)

            out._backward = _backward
        return out

    def log(self):
        out = Tensor(np.log(self.data))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                _accumulate(self, out.grad / self.data)

            out._backward = _backward
        return out

    def clip(self, lo, hi):
        """Clamp values; gradient passes only where the input was in range."""
        out = Tensor(np.clip(self.data, lo, hi))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                inside = (self.data >= lo) & (self.data <= hi)
                _accumulate(self, out.grad * inside)

            out._backward = _backward
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape))
        out.requires_grad = self.requires_grad
        if out.requires_grad:
            out._prev = (self,)

            def _backward():
                _accumulate(self, out.grad.reshape(self.data.shape))

            out._backward = _backward
        return out


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------- #
# convolution


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _axis_geometry(size, k, s, padding):
    """Output length and (before, after) zero padding for one spatial axis.

    "same" keeps output length ceil(size / s) with windows centered on the
    naive subsampling grid {0, s, 2s, ...}; "valid" uses only full windows.
    """
    if padding == "valid":
        if size < k:
            raise DimensionError(f"kernel size {k} exceeds input extent {size}")
        return (size - k) // s + 1, 0, 0
    if padding == "same":
        out = -(-size // s)
        before = (k - 1) // 2
        after = max(0, (out - 1) * s + k - before - size)
        return out, before, after
    raise ValueError(f"unknown padding mode {padding!r}")


def _im2col(xp, kh, kw, sh, sw, oh, ow):
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s3, s2 * sh, s3 * sw),
        writeable=False,
    )
    return cols.reshape(n, c * kh * kw, oh * ow)


def conv2d(x, weight, stride=(1, 1), padding="same"):
    """2D cross-correlation of [N,C,H,W] input with an [F,C,kh,kw] kernel.

    Differentiable with respect to both input and weight. Output spatial
    size follows floor((H + pad - kh) / stride) + 1.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d input must be 4D [N,C,H,W], got {x.data.shape}")
    if weight.data.ndim != 4:
        raise DimensionError(
            f"conv2d weight must be 4D [F,C,kh,kw], got {weight.data.shape}"
        )
    n, c, h, w = x.data.shape
    f, cw, kh, kw = weight.data.shape
    if cw != c:
        raise DimensionError(f"channel axes differ: input has {c}, kernel expects {cw}")
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be >= 1, got {(sh, sw)}")
    oh, pt, pb = _axis_geometry(h, kh, sh, padding)
    ow, pl, pr = _axis_geometry(w, kw, sw, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    wmat = weight.data.reshape(f, c * kh * kw)
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    out = Tensor(np.matmul(wmat, cols).reshape(n, f, oh, ow))
    out.requires_grad = x.requires_grad or weight.requires_grad
    if out.requires_grad:
        out._prev = (x, weight)

        def _backward():
            g = out.grad.reshape(n, f, oh * ow)
            if weight.requires_grad:
                # columns are recomputed instead of cached to keep the live
                # graph small during training
                cols_b = _im2col(
                    np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr))),
                    kh, kw, sh, sw, oh, ow,
                )
                gw = np.tensordot(g, cols_b, axes=([0, 2], [0, 2]))
                _accumulate(weight, gw.reshape(weight.data.shape))
            if x.requires_grad:
                dcols = np.matmul(wmat.T, g).reshape(n, c, kh, kw, oh, ow)
                gxp = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=np.float32)
                for di in range(kh):
                    for dj in range(kw):
                        gxp[
                            :, :,
                            di : di + (oh - 1) * sh + 1 : sh,
                            dj : dj + (ow - 1) * sw + 1 : sw,
                        ] += dcols[:, :, di, dj]
                _accumulate(x, gxp[:, :, pt : pt + h, pl : pl + w])

        out._backward = _backward
    return out


def depthwise_conv2d(x, kernel, stride=(1, 1), padding="same"):
    """Convolve each channel independently with its own (or a shared) kernel.

    kernel is [C,kh,kw] for per-channel filters or [kh,kw] for one filter
    shared across channels. Channel count is preserved; differentiable with
    respect to input and kernel.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    if x.data.ndim != 4:
        raise DimensionError(f"input must be 4D [N,C,H,W], got {x.data.shape}")
    n, c, h, w = x.data.shape
    if kernel.data.ndim == 2:
        shared = True
        kh, kw = kernel.data.shape
    elif kernel.data.ndim == 3:
        shared = False
        kc, kh, kw = kernel.data.shape
        if kc != c:
            raise DimensionError(f"channel axes differ: input has {c}, kernel has {kc}")
    else:
        raise DimensionError(
            f"kernel must be [kh,kw] or [C,kh,kw], got {kernel.data.shape}"
        )
    sh, sw = _pair(stride)
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be >= 1, got {(sh, sw)}")
    oh, pt, pb = _axis_geometry(h, kh, sh, padding)
    ow, pl, pr = _axis_geometry(w, kw, sw, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    out_data = np.zeros((n, c, oh, ow), dtype=np.float32)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[
                :, :,
                di : di + (oh - 1) * sh + 1 : sh,
                dj : dj + (ow - 1) * sw + 1 : sw,
            ]
            if shared:
                out_data += patch * kernel.data[di, dj]
            else:
                out_data += patch * kernel.data[:, di, dj][None, :, None, None]
    out = Tensor(out_data)
    out.requires_grad = x.requires_grad or kernel.requires_grad
    if out.requires_grad:
        out._prev = (x, kernel)

        def _backward():
            g = out.grad
            if kernel.requires_grad:
                gk = np.zeros_like(kernel.data)
                for di in range(kh):
                    for dj in range(kw):
                        patch = xp[
                            :, :,
                            di : di + (oh - 1) * sh + 1 : sh,
                            dj : dj + (ow - 1) * sw + 1 : sw,
                        ]
                        contrib = np.sum(
                            g * patch,
                            axis=None if shared else (0, 2, 3),
                            dtype=np.float64,
                        )
                        if shared:
                            gk[di, dj] = contrib
                        else:
                            gk[:, di, dj] = contrib
                _accumulate(kernel, gk)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for di in range(kh):
                    for dj in range(kw):
                        if shared:
                            scaled = g * kernel.data[di, dj]
                        else:
                            scaled = g * kernel.data[:, di, dj][None, :, None, None]
                        gxp[
                            :, :,
                            di : di + (oh - 1) * sh + 1 : sh,
                            dj : dj + (ow - 1) * sw + 1 : sw,
                        ] += scaled
                _accumulate(x, gxp[:, :, pt : pt + h, pl : pl + w])

        out._backward = _backward
    return out


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over a [N,C,H,W] tensor.

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode normalizes with the running buffers.
    """
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"batch_norm input must be 4D, got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"gamma/beta must have shape ({c},), got {gamma.data.shape}/{beta.data.shape}"
        )
    if training:
        mu = x.data.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.data.var(axis=(0, 2, 3), dtype=np.float64)
        running_mean *= 1.0 - momentum
        running_mean += (momentum * mu).astype(np.float32)
        running_var *= 1.0 - momentum
        running_var += (momentum * var).astype(np.float32)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    xhat = (x.data - mu.astype(np.float32)[None, :, None, None]) * inv[None, :, None, None]
    out = Tensor(xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None])
    out.requires_grad = x.requires_grad or gamma.requires_grad or beta.requires_grad
    if out.requires_grad:
        out._prev = (x, gamma, beta)
        m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

        def _backward():
            g = out.grad
            _accumulate(gamma, np.sum(g * xhat, axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
            _accumulate(beta, np.sum(g, axis=(0, 2, 3), dtype=np.float64).astype(np.float32))
            if not x.requires_grad:
                return
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv[None, :, None, None] / m) * (
                    m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
                )
            else:
                gx = dxhat * inv[None, :, None, None]
            _accumulate(x, gx.astype(np.float32))

        out._backward = _backward
    return out
