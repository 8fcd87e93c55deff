"""Shift-robust pooling building blocks.

A conventional max-pooling layer (size k, stride s) is treated as two
operations: a densely evaluated max pool (size k, unit stride) followed by a
subsampling step with stride s. Robustness to input shifts comes from
swapping the naive subsampler for either

* low-pass filtered subsampling: a depthwise convolution with a fixed
  binomial mask ("blurpool") or a trainable softmax-constrained kernel
  ("tlpf"), fused with the stride, or
* adaptive polyphase sampling ("aps"): pick, per batch element, the
  subsampling grid whose component has the largest l1 or l2 norm, so the
  grid follows shifts in the input.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .tensor import Tensor, as_tensor, depthwise_conv2d, _accumulate, _pair


class PolyphaseIndex(NamedTuple):
    """Offset (i, j) of one subsampling grid, 0 <= i < s_h, 0 <= j < s_w."""

    i: int
    j: int


# ---------------------------------------------------------------------- #
# filter kernels


@dataclass
class FilterKernel:
    """A low-pass mask: non-negative weights summing to one.

    kind is "binomial" for fixed masks built from Pascal's triangle, or
    "trainable" for softmax-normalized logits (raw_params keeps the logits).
    """

    rows: int
    cols: int
    weights: Tensor
    kind: str
    raw_params: Optional[Tensor] = None

    def __post_init__(self):
        w = self.weights.data
        if w.shape != (self.rows, self.cols):
            raise ValueError(f"weights shape {w.shape} != ({self.rows}, {self.cols})")
        if self.kind not in ("binomial", "trainable"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if np.any(w < 0.0):
            raise ValueError("low-pass kernel weights must be non-negative")
        total = float(w.sum(dtype=np.float64))
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"kernel weights must sum to 1, got {total}")


def binomial1d(order):
    """1D binomial mask: [1, 1] convolved with itself `order` times, unit sum.

    order 0 gives [1, 1] / 2; order 2 gives [1, 3, 3, 1] / 8. Entries are the
    binomial coefficients C(order + 1, k) over 2**(order + 1).
    """
    order = int(order)
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    mask = np.array([1.0, 1.0])
    for _ in range(order):
        mask = np.convolve(mask, [1.0, 1.0])
    return (mask / mask.sum()).astype(np.float32)


def binomial2d(size):
    """Square binomial kernel: outer product of binomial1d(size - 2) with itself."""
    size = int(size)
    if size < 2:
        raise ValueError(f"binomial kernel size must be >= 2, got {size}")
    v = binomial1d(size - 2)
    return FilterKernel(size, size, Tensor(np.outer(v, v)), kind="binomial")


def binomial_kernel(rows, cols):
    """Binomial mask of an arbitrary (possibly degenerate 1xN or Mx1) shape."""
    rows, cols = int(rows), int(cols)
    if rows < 1 or cols < 1 or (rows == 1 and cols == 1):
        raise ValueError(f"kernel shape must cover more than one bin, got {rows}x{cols}")
    rv = binomial1d(rows - 2) if rows > 1 else np.ones(1, dtype=np.float32)
    cv = binomial1d(cols - 2) if cols > 1 else np.ones(1, dtype=np.float32)
    return FilterKernel(rows, cols, Tensor(np.outer(rv, cv)), kind="binomial")


def kernel_softmax(raw):
    """Softmax over the last two axes jointly, differentiably.

    Maps arbitrary logits of shape [..., m, n] to strictly positive weights
    that sum to one per leading index.
    """
    raw = as_tensor(raw)
    shift = raw.data.max(axis=(-2, -1), keepdims=True)
    e = (raw - shift).exp()
    return e / e.sum(axis=(-2, -1), keepdims=True)


def tlpf_materialize(raw_params):
    """Turn an [m, n] logit tensor into a trainable low-pass FilterKernel.

    The softmax constraint guarantees non-negativity and unit sum for any
    logit values, and the weights stay differentiable w.r.t. the logits.
    """
    raw = as_tensor(raw_params)
    if raw.data.ndim != 2:
        raise ValueError(f"raw_params must be 2D, got shape {raw.data.shape}")
    m, n = raw.data.shape
    return FilterKernel(m, n, kernel_softmax(raw), kind="trainable", raw_params=raw)


# ---------------------------------------------------------------------- #
# layer specification


@dataclass
class PoolingSpec:
    """Declarative description of one pooling layer.

    dense_k is the densely evaluated max-pool size; subsampler is "naive",
    "lpf", or "aps"; stride applies to the subsampling step. The lpf_* and
    aps_p fields configure the respective subsampler and are ignored
    otherwise.
    """

    dense_k: int = 2
    subsampler: str = "naive"
    stride: tuple = (2, 2)
    lpf_shape: tuple = (3, 3)
    lpf_trainable: bool = False
    lpf_shared: bool = False
    aps_p: int = 1

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.lpf_shape = _pair(self.lpf_shape)
        self.validate()

    def validate(self):
        if self.dense_k < 1:
            raise ValueError(f"dense_k must be >= 1, got {self.dense_k}")
        if self.subsampler not in ("naive", "lpf", "aps"):
            raise ValueError(f"unknown subsampler {self.subsampler!r}")
        if min(self.stride) < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.subsampler != "naive" and min(self.stride) < 2:
            raise ValueError(
                f"{self.subsampler} subsampling requires stride >= (2, 2), got {self.stride}"
            )
        if self.subsampler == "aps" and self.aps_p not in (1, 2):
            raise ValueError(f"aps_p must be 1 or 2, got {self.aps_p}")
        if self.subsampler == "lpf" and min(self.lpf_shape) < 1:
            raise ValueError(f"bad lpf_shape {self.lpf_shape}")

    @classmethod
    def naive(cls, dense_k=2, stride=(2, 2)):
        return cls(dense_k=dense_k, subsampler="naive", stride=stride)

    @classmethod
    def blurpool(cls, size=3, dense_k=2, stride=(2, 2)):
        return cls(dense_k=dense_k, subsampler="lpf", stride=stride,
                   lpf_shape=(size, size), lpf_trainable=False)

    @classmethod
    def tlpf(cls, shape=(5, 5), dense_k=2, stride=(2, 2), shared=False):
        return cls(dense_k=dense_k, subsampler="lpf", stride=stride,
                   lpf_shape=shape, lpf_trainable=True, lpf_shared=shared)

    @classmethod
    def aps(cls, p=1, dense_k=2, stride=(2, 2)):
        return cls(dense_k=dense_k, subsampler="aps", stride=stride, aps_p=p)

    def to_dict(self):
        return {
            "dense_k": self.dense_k,
            "subsampler": self.subsampler,
            "stride": list(self.stride),
            "lpf_shape": list(self.lpf_shape),
            "lpf_trainable": self.lpf_trainable,
            "lpf_shared": self.lpf_shared,
            "aps_p": self.aps_p,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            dense_k=d.get("dense_k", 2),
            subsampler=d.get("subsampler", "naive"),
            stride=tuple(d.get("stride", (2, 2))),
            lpf_shape=tuple(d.get("lpf_shape", (3, 3))),
            lpf_trainable=d.get("lpf_trainable", False),
            lpf_shared=d.get("lpf_shared", False),
            aps_p=d.get("aps_p", 1),
        )


# ---------------------------------------------------------------------- #
# operations


def dense_maxpool(x, k):
    """Sliding k x k maximum with unit stride and same geometry.

    Ties route the gradient to the first maximal element in row-major window
    order. k = 1 is the identity.
    """
    x = as_tensor(x)
    k = int(k)
    if k < 1:
        raise ValueError(f"pool size must be >= 1, got {k}")
    if k == 1:
        return x
    if k > 15:
        raise ValueError(f"pool size {k} not supported (max 15)")
    n, c, h, w = x.data.shape
    pt = pl = (k - 1) // 2
    pb = pr = k - 1 - pt
    xp = np.pad(
        x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
        constant_values=np.float32(-np.inf),
    )
    out_data = np.full((n, c, h, w), -np.inf, dtype=np.float32)
    idx = np.zeros((n, c, h, w), dtype=np.uint8)
    offsets = [(di, dj) for di in range(k) for dj in range(k)]
    for t, (di, dj) in enumerate(offsets):
        patch = xp[:, :, di : di + h, dj : dj + w]
        better = patch > out_data
        np.copyto(out_data, patch, where=better)
        idx[better] = t
    out = Tensor(out_data)
    out.requires_grad = x.requires_grad
    if out.requires_grad:
        out._prev = (x,)

        def _backward():
            gxp = np.zeros_like(xp)
            for t, (di, dj) in enumerate(offsets):
                gxp[:, :, di : di + h, dj : dj + w] += np.where(idx == t, out.grad, 0.0)
            _accumulate(x, gxp[:, :, pt : pt + h, pl : pl + w])

        out._backward = _backward
    return out


def naive_subsample(x, s):
    """Keep every s-th bin starting from offset (0, 0)."""
    x = as_tensor(x)
    sh, sw = _pair(s)
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be >= 1, got {(sh, sw)}")
    out = Tensor(np.ascontiguousarray(x.data[:, :, ::sh, ::sw]))
    out.requires_grad = x.requires_grad
    if out.requires_grad:
        out._prev = (x,)

        def _backward():
            gx = np.zeros_like(x.data)
            gx[:, :, ::sh, ::sw] = out.grad
            _accumulate(x, gx)

        out._backward = _backward
    return out


def lpf_subsample(x, kernel, s):
    """Low-pass filter then subsample, as one strided depthwise convolution.

    kernel may be a FilterKernel (applied to every channel), a [m, n] tensor
    shared across channels, or a [C, m, n] tensor with one mask per channel.
    Same zero padding keeps the output aligned with the naive grid, so a
    1-point kernel reproduces naive subsampling exactly. Constant inputs pass
    through unchanged because the mask has unit sum.
    """
    if isinstance(kernel, FilterKernel):
        kernel = kernel.weights
    return depthwise_conv2d(x, kernel, stride=s, padding="same")


def polyphase_components(x, s):
    """All s_h * s_w subsampling grids of x, keyed by PolyphaseIndex.

    Component (i, j) is x[..., i::s_h, j::s_w]; ragged tails are kept, so
    component row counts are ceil((H - i) / s_h). Each component is
    differentiable back into x.
    """
    x = as_tensor(x)
    sh, sw = _pair(s)
    comps = {}
    for i in range(sh):
        for j in range(sw):
            comps[PolyphaseIndex(i, j)] = _component(x, i, j, sh, sw)
    return comps


def _component(x, i, j, sh, sw):
    out = Tensor(np.ascontiguousarray(x.data[:, :, i::sh, j::sw]))
    out.requires_grad = x.requires_grad
    if out.requires_grad:
        out._prev = (x,)

        def _backward():
            gx = np.zeros_like(x.data)
            gx[:, :, i::sh, j::sw] = out.grad
            _accumulate(x, gx)

        out._backward = _backward
    return out


def aps_subsample(x, s, p=1):
    """Adaptive polyphase sampling: keep the grid with the largest l_p norm.

    The norm is taken jointly over channels and spatial bins, separately per
    batch element. Ties select the smallest (i, j) in row-major order. The
    input is zero-padded up to a stride multiple so every candidate grid
    yields the same output shape (the padding contributes nothing to the
    norms). Gradients flow through the selected bins only; the selection
    itself is treated as a constant.

    Returns (output, indices) where indices holds one PolyphaseIndex per
    batch element.
    """
    x = as_tensor(x)
    sh, sw = _pair(s)
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be >= 1, got {(sh, sw)}")
    if p not in (1, 2):
        raise ValueError(f"norm order must be 1 or 2, got {p}")
    n, c, h, w = x.data.shape
    hp = -(-h // sh) * sh
    wp = -(-w // sw) * sw
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)))
    oh, ow = hp // sh, wp // sw
    # [n, sh*sw, c, oh, ow] with grids ordered row-major by (i, j)
    grids = (
        xp.reshape(n, c, oh, sh, ow, sw)
        .transpose(0, 3, 5, 1, 2, 4)
        .reshape(n, sh * sw, c, oh, ow)
    )
    if p == 1:
        norms = np.abs(grids).sum(axis=(2, 3, 4), dtype=np.float64)
    else:
        norms = np.sqrt((grids.astype(np.float64) ** 2).sum(axis=(2, 3, 4)))
    sel = np.argmax(norms, axis=1)
    out_data = np.ascontiguousarray(grids[np.arange(n), sel])
    indices = [PolyphaseIndex(int(v) // sw, int(v) % sw) for v in sel]
    out = Tensor(out_data)
    out.requires_grad = x.requires_grad
    if out.requires_grad:
        out._prev = (x,)

        def _backward():
            gxp = np.zeros((n, c, hp, wp), dtype=np.float32)
            for b, (i, j) in enumerate(indices):
                gxp[b, :, i::sh, j::sw] = out.grad[b]
            _accumulate(x, gxp[:, :, :h, :w])

        out._backward = _backward
    return out, indices


def pooling_layer(x, spec, lpf_kernel=None):
    """Dense max pool followed by the subsampler named in the spec.

    For an lpf spec with a fixed kernel the binomial mask is built from
    lpf_shape; a trainable spec needs the materialized kernel passed in via
    lpf_kernel (see model.PoolingLayer for the stateful wrapper). With the
    naive subsampler this composes to a conventional max-pooling layer.
    """
    y = dense_maxpool(x, spec.dense_k)
    if spec.subsampler == "naive":
        return naive_subsample(y, spec.stride)
    if spec.subsampler == "lpf":
        kernel = lpf_kernel
        if kernel is None:
            if spec.lpf_trainable:
                raise ValueError("trainable lpf spec needs an explicit kernel")
            kernel = binomial_kernel(*spec.lpf_shape)
        return lpf_subsample(y, kernel, spec.stride)
    out, _ = aps_subsample(y, spec.stride, spec.aps_p)
    return out
