"""Independent brute-force references for the core numerics.

Each function here recomputes a result by direct enumeration (nested loops,
finite differences, exhaustive curve integration) with no code shared with
the fast paths it checks. The test suite and the ``oracle`` CLI subcommand
both run these comparisons.
"""

import numpy as np

from .tensor import Tensor, _axis_geometry, _pair


def conv2d_reference(x, weight, stride=(1, 1), padding="same"):
    """Nested-loop 2D convolution over numpy arrays."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    n, c, h, w = x.shape
    f, _, kh, kw = weight.shape
    sh, sw = _pair(stride)
    oh, pt, _ = _axis_geometry(h, kh, sh, padding)
    ow, pl, _ = _axis_geometry(w, kw, sw, padding)
    out = np.zeros((n, f, oh, ow))
    for b in range(n):
        for fo in range(f):
            for y in range(oh):
                for xo in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                yy = y * sh + di - pt
                                xx = xo * sw + dj - pl
                                if 0 <= yy < h and 0 <= xx < w:
                                    acc += x[b, ci, yy, xx] * weight[fo, ci, di, dj]
                    out[b, fo, y, xo] = acc
    return out.astype(np.float32)


def maxpool_reference(x, k, stride):
    """Conventional strided max pooling (valid windows only), by loops."""
    x = np.asarray(x)
    n, c, h, w = x.shape
    sh, sw = _pair(stride)
    oh = (h - k) // sh + 1
    ow = (w - k) // sw + 1
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for b in range(n):
        for ci in range(c):
            for y in range(oh):
                for xo in range(ow):
                    out[b, ci, y, xo] = x[b, ci, y * sh : y * sh + k, xo * sw : xo * sw + k].max()
    return out


def global_pool_reference(x):
    """Mean over the last axis then max over the second-to-last, by loops."""
    x = np.asarray(x)
    n, c, t, f = x.shape
    out = np.empty((n, c), dtype=np.float64)
    for b in range(n):
        for ci in range(c):
            best = -np.inf
            for ti in range(t):
                acc = 0.0
                for fi in range(f):
                    acc += float(x[b, ci, ti, fi])
                best = max(best, acc / f)
            out[b, ci] = best
    return out.astype(np.float32)


def average_precision_reference(scores, targets):
    """AP by exhaustive precision-recall curve integration.

    Walks the ranked list point by point, recomputing precision and recall
    from scratch at each depth, and integrates the step curve.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    total_pos = int(sum(int(targets[i]) for i in range(len(targets))))
    if total_pos == 0:
        raise ValueError("average precision undefined without positives")
    ap = 0.0
    prev_recall = 0.0
    for depth in range(1, len(order) + 1):
        hits = sum(int(targets[order[i]]) for i in range(depth))
        precision = hits / depth
        recall = hits / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def polyphase_reference(x, s):
    """Polyphase components by explicit index enumeration."""
    x = np.asarray(x)
    n, c, h, w = x.shape
    sh, sw = _pair(s)
    comps = {}
    for i in range(sh):
        for j in range(sw):
            rows = [r for r in range(h) if r >= i and (r - i) % sh == 0]
            cols = [q for q in range(w) if q >= j and (q - j) % sw == 0]
            comp = np.empty((n, c, len(rows), len(cols)), dtype=x.dtype)
            for ri, r in enumerate(rows):
                for qi, q in enumerate(cols):
                    comp[:, :, ri, qi] = x[:, :, r, q]
            comps[(i, j)] = comp
    return comps


def finite_difference_gradients(loss_fn, params, h=1e-2, max_entries=None, rng=None):
    """Central finite differences of a scalar loss w.r.t. Tensor parameters.

    loss_fn must be a pure function of the current parameter values and
    return a float. Perturbs entries in place and restores them. When
    max_entries is given, a random subset of entries per parameter is probed.
    Returns one array of numeric derivatives per parameter, with untested
    entries set to nan.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        numeric = np.full(flat.shape, np.nan)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(flat.size, size=max_entries, replace=False)
            indices.sort()
        for i in indices:
            keep = flat[i]
            flat[i] = keep + h
            up = float(loss_fn())
            hi = float(flat[i])
            flat[i] = keep - h
            down = float(loss_fn())
            lo = float(flat[i])
            flat[i] = keep
            # divide by the step actually realized in storage, not 2h
            numeric[i] = (np.float64(up) - np.float64(down)) / (hi - lo)
        grads.append(numeric.reshape(p.data.shape))
    return grads


def max_relative_error(analytic, numeric, floor=None):
    """Largest |a - n| / max(|a|, |n|, floor) over the probed entries.

    The default floor is 1% of the largest probed derivative magnitude:
    entries far below the dominant gradient scale are noise-dominated when
    the forward pass runs in float32, so they are held to a proportional
    absolute tolerance instead of a pure relative one.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    a = analytic[mask]
    n = numeric[mask]
    if floor is None:
        floor = max(1e-4, 1e-2 * float(np.max(np.abs(n))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradient(loss_builder, params, h=1e-2, tol=1e-3, max_entries=None, rng=None):
    """Compare an autograd gradient against central finite differences.

    loss_builder rebuilds the loss Tensor from the parameters' current data.
    Returns the max relative error across all probed entries.
    """
    loss = loss_builder()
    for p in params:
        p.zero_grad()
    loss.backward()
    analytic = [np.array(p.grad) for p in params]
    numeric = finite_difference_gradients(
        lambda: loss_builder().item(), params, h=h, max_entries=max_entries, rng=rng
    )
    return max(
        max_relative_error(a, n) for a, n in zip(analytic, numeric)
    )
