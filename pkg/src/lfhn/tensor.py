"""Dense float64 tensor helpers shared by every layer.

Activations use (batch, height, width, channels) axis order and kernels use
(kernel_h, kernel_w, in_channels, out_channels); everything is a row-major
float64 numpy array. This module owns the index arithmetic and the im2col
lowering that turns sliding-window convolution into one matrix product.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


def as_tensor(values) -> np.ndarray:
    """Coerce to a contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=DTYPE)


def flat_index(shape, index) -> int:
    """Row-major offset of a multi-index within `shape`."""
    if len(index) != len(shape):
        raise ValueError(f"index {tuple(index)} does not match rank of shape {tuple(shape)}")
    offset = 0
    for extent, i in zip(shape, index):
        if not 0 <= i < extent:
            raise ValueError(f"index {tuple(index)} out of bounds for shape {tuple(shape)}")
        offset = offset * extent + i
    return offset


def unflat_index(shape, offset) -> tuple:
    """Inverse of flat_index."""
    if offset < 0:
        raise ValueError("offset must be non-negative")
    index = []
    for extent in reversed(shape):
        index.append(offset % extent)
        offset //= extent
    if offset:
        raise ValueError(f"offset out of bounds for shape {tuple(shape)}")
    return tuple(reversed(index))


def matmul(a, b) -> np.ndarray:
    """Product of an (m, k) by a (k, n) matrix."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def argmax(v) -> int:
    """Smallest index attaining the maximum of a non-empty vector."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("argmax expects a non-empty 1-d vector")
    return int(np.argmax(v))


def conv_extent(extent: int, window: int, stride: int, pad: int) -> int:
    """Output extent of a strided window sweep; the division must be exact."""
    span = extent + 2 * pad - window
    if span < 0:
        raise ValueError(f"window {window} larger than padded extent {extent + 2 * pad}")
    if span % stride:
        raise ValueError(
            f"non-integral output extent: ({extent} + 2*{pad} - {window}) / {stride}"
        )
    return span // stride + 1


def im2col_indices(h, w, c, kh, kw, stride, pad):
    """Gather map for im2col.

    Returns (idx, ho, wo) where idx has shape (ho*wo, kh*kw*c) and holds
    row-major offsets into the zero-padded (h+2p, w+2p, c) image. Row r lists
    the receptive field of output position r in (kh, kw, c) order.
    """
    ho = conv_extent(h, kh, stride, pad)
    wo = conv_extent(w, kw, stride, pad)
    wp = w + 2 * pad
    oy = np.repeat(np.arange(ho) * stride, wo)
    ox = np.tile(np.arange(wo) * stride, ho)
    ky = np.repeat(np.arange(kh), kw)
    kx = np.tile(np.arange(kw), kh)
    rows = oy[:, None] + ky[None, :]
    cols = ox[:, None] + kx[None, :]
    spatial = rows * wp + cols
    idx = spatial[:, :, None] * c + np.arange(c)[None, None, :]
    return idx.reshape(ho * wo, kh * kw * c), ho, wo


def im2col(x, kh, kw, stride=1, pad=0) -> np.ndarray:
    """Lower sliding windows to matrix rows.

    A (h, w, c) input yields an (ho*wo, kh*kw*c) matrix; a batched
    (n, h, w, c) input yields (n, ho*wo, kh*kw*c). Padded positions
    contribute zeros.
    """
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"im2col expects a rank-3 or rank-4 tensor, got shape {x.shape}")
    n, h, w, c = x.shape
    idx, ho, wo = im2col_indices(h, w, c, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.take(x.reshape(n, -1), idx.ravel(), axis=1)
    cols = cols.reshape(n, ho * wo, kh * kw * c)
    return cols[0] if single else cols


def col2im(cols, input_shape, kh, kw, stride=1, pad=0) -> np.ndarray:
    """Adjoint of im2col: scatter-add matrix rows back onto the image grid."""
    n, h, w, c = input_shape
    idx, ho, wo = im2col_indices(h, w, c, kh, kw, stride, pad)
    cols = np.asarray(cols, dtype=DTYPE).reshape(n, ho * wo, kh * kw * c)
    hp, wp = h + 2 * pad, w + 2 * pad
    per_image = hp * wp * c
    # bincount gives a deterministic reduction order, unlike unbuffered adds
    gidx = (np.arange(n)[:, None] * per_image + idx.reshape(1, -1)).ravel()
    acc = np.bincount(gidx, weights=cols.reshape(n, -1).ravel(), minlength=n * per_image)
    acc = acc.reshape(n, hp, wp, c)
    return np.ascontiguousarray(acc[:, pad:pad + h, pad:pad + w, :])
