"""Dense rank-3 tensor arithmetic and the three convolution variants.

A tensor is a plain ``numpy.ndarray`` of shape ``(channels, height, width)``.
All arithmetic is done in float64; inputs are validated but never copied
unless the operation requires it.  Every function here is pure, so values
may be shared freely across threads.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


def check_tensor(x, name="input"):
    """Validate a (c, h, w) tensor and return it as a float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be rank-3 (channels, height, width), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} dimensions must all be >= 1, got shape {x.shape}")
    return x


def conv_output_size(dim, kernel, stride, padding):
    """Spatial output extent: floor((dim + 2*padding - kernel) / stride) + 1."""
    if kernel < 1:
        raise ShapeError(f"kernel extent must be >= 1, got {kernel}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"padding must be >= 0, got {padding}")
    span = dim + 2 * padding - kernel
    if span < 0:
        raise ShapeError(
            f"kernel {kernel} does not fit input extent {dim} with padding {padding}"
        )
    return span // stride + 1


def pad2d(x, padding):
    """Zero-fill symmetric padding of the two trailing (spatial) axes."""
    if padding == 0:
        return x
    pad = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (padding, padding)]
    return np.pad(x, pad, mode="constant")


def _windows(x, kernel_h, kernel_w, stride, padding):
    # (c, h', w', kh, kw) strided view over the zero-padded input
    xp = pad2d(x, padding)
    win = sliding_window_view(xp, (kernel_h, kernel_w), axis=(1, 2))
    return win[:, ::stride, ::stride]


def conv2d_standard(x, weights, stride=1, padding=0):
    """Standard cross-correlation of full-depth kernels over a tensor.

    ``weights`` has shape (k, c, sh, sw): k kernels, each spanning all c
    input channels.  Output channel k at (i, j) is the dot product of
    kernel k with the zero-padded input window anchored at stride*(i, j).
    """
    x = check_tensor(x)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 4:
        raise ShapeError(f"weights must be rank-4 (k, c, sh, sw), got shape {weights.shape}")
    if weights.shape[1] != x.shape[0]:
        raise ShapeError(
            f"kernel depth {weights.shape[1]} does not match input channels {x.shape[0]}"
        )
    _, _, sh, sw = weights.shape
    conv_output_size(x.shape[1], sh, stride, padding)
    conv_output_size(x.shape[2], sw, stride, padding)
    win = _windows(x, sh, sw, stride, padding)
    return np.einsum("kcmn,chwmn->khw", weights, win, optimize=True)


def conv2d_depthwise(x, filters, stride=1, padding=0):
    """Depthwise cross-correlation: every filter runs over every channel alone.

    ``filters`` has shape (k, sh, sw).  The output has k*c channels and the
    plane at index f*c + l holds filter f applied to input channel l
    (filter-major, channel-minor ordering).
    """
    x = check_tensor(x)
    filters = np.asarray(filters, dtype=np.float64)
    if filters.ndim != 3:
        raise ShapeError(f"filters must be rank-3 (k, sh, sw), got shape {filters.shape}")
    k, sh, sw = filters.shape
    c = x.shape[0]
    h2 = conv_output_size(x.shape[1], sh, stride, padding)
    w2 = conv_output_size(x.shape[2], sw, stride, padding)
    win = _windows(x, sh, sw, stride, padding)
    out = np.einsum("kmn,chwmn->kchw", filters, win, optimize=True)
    return out.reshape(k * c, h2, w2)


def conv2d_pointwise(x, weights, bias):
    """1x1 cross-channel linear combination; spatial dims are untouched."""
    x = check_tensor(x)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2:
        raise ShapeError(f"pointwise weights must be rank-2 (c_out, c), got shape {weights.shape}")
    if weights.shape[1] != x.shape[0]:
        raise ShapeError(
            f"pointwise weight columns {weights.shape[1]} do not match input channels {x.shape[0]}"
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[0]} outputs")
    return np.einsum("oc,chw->ohw", weights, x) + bias[:, None, None]


_ELEMENTWISE = {
    "max": np.maximum,
    "min": np.minimum,
    "subtract": np.subtract,
    "add": np.add,
}


def elementwise(op, a, b):
    """Pixelwise max/min/subtract/add of two identically shaped tensors."""
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise operands differ in shape: {a.shape} vs {b.shape}")
    return _ELEMENTWISE[op](a, b)
