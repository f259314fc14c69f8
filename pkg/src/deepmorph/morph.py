"""Trainable morphological neurons built from binarized depthwise filter banks.

A filter bank holds s*s real-valued filters of size s x s.  Each filter is
max-binarized (one-hot at its largest weight, lowest row-major index on
ties), so the bank's binary view selects up to s*s neighborhood offsets
whose union is a structuring element.  Applying the one-hot filters
depthwise and pooling min/max across each input channel's s*s planes
realizes erosion/dilation with that structuring element, up to the zero
padding at the borders.

A neuron chains two such stages (erosion/dilation in some order, with
tied or independent banks), optionally combines the result with the
input through a skip connection (top-hats subtract, geodesic
reconstructions take a pixelwise extreme), and collapses the per-channel
maps to a single plane with a trainable pointwise combination.

Gradients follow the straight-through rule: the backward pass computes
ordinary convolution gradients against the binary filters and applies
them verbatim to the underlying real weights.  Pooling routes each
output pixel's gradient solely to the plane that won it.
"""

from dataclasses import dataclass

import numpy as np

from . import classical
from ._kernels import TRACE_DTYPE, pool_backward_input, pool_backward_weights, pool_forward
from .nn import Layer, Parameter, uniform_init
from .tensor_ops import ShapeError, check_tensor, conv_output_size, pad2d

NEURON_KINDS = (
    "composed_erosion_first",
    "composed_dilation_first",
    "opening",
    "closing",
    "white_tophat",
    "black_tophat",
    "rec_by_erosion",
    "rec_by_dilation",
)

# kinds whose two stages share one weight tensor
TIED_KINDS = (
    "opening",
    "closing",
    "white_tophat",
    "black_tophat",
    "rec_by_erosion",
    "rec_by_dilation",
)

# kinds whose skip connection requires both stages to preserve spatial shape
SKIP_KINDS = ("white_tophat", "black_tophat", "rec_by_erosion", "rec_by_dilation")

# stage directions per kind, in forward order
_STAGES = {
    "composed_erosion_first": ("erosion", "dilation"),
    "composed_dilation_first": ("dilation", "erosion"),
    "opening": ("erosion", "dilation"),
    "closing": ("dilation", "erosion"),
    "white_tophat": ("erosion", "dilation"),
    "black_tophat": ("dilation", "erosion"),
    "rec_by_erosion": ("dilation", "erosion"),
    "rec_by_dilation": ("erosion", "dilation"),
}


def max_binarize(w):
    """One-hot filter activating only the maximum weight.

    Ties break to the lowest row-major index so repeated binarization is
    stable and reproducible.
    """
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros_like(w)
    out.reshape(-1)[int(np.argmax(w))] = 1.0
    return out


def binarize_offsets(weights):
    """Per-filter argmax coordinates, shape (F, 2); first max wins ties."""
    weights = np.asarray(weights, dtype=np.float64)
    f, sh, sw = weights.shape
    flat_idx = np.argmax(weights.reshape(f, sh * sw), axis=1)
    return np.stack([flat_idx // sw, flat_idx % sw], axis=1).astype(np.int64)


class FilterBank:
    """s*s trainable real filters of size s x s plus conv geometry."""

    def __init__(self, size, stride, padding, weights, name):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (size * size, size, size):
            raise ShapeError(
                f"bank needs {size * size} filters of {size}x{size}, got {weights.shape}"
            )
        self.size = size
        self.stride = stride
        self.padding = padding
        self.weights = Parameter(weights, name)

    @classmethod
    def random(cls, size, stride, padding, rng, name):
        """Uniform [0, 1) noise plus a unit bump at a random central cell.

        Each filter's initial argmax lands uniformly inside the central
        3x3 region, so the initial structuring element is a small random
        mask near the identity element.  A full-grid random argmax would
        make the union span the whole kernel, and an element wider than
        every image structure erodes all activations to zero, starving
        the network of gradient signal.  For 3x3 kernels this reduces to
        an argmax uniform over all positions.
        """
        weights = rng.random((size * size, size, size))
        lo = max(size // 2 - 1, 0)
        span = min(3, size)
        rows = lo + rng.integers(0, span, size * size)
        cols = lo + rng.integers(0, span, size * size)
        weights[np.arange(size * size), rows, cols] += 1.0
        return cls(size, stride, padding, weights, name)

    def binary_offsets(self):
        return binarize_offsets(self.weights.value)

    def binary_filters(self):
        offs = self.binary_offsets()
        filters = np.zeros_like(self.weights.value)
        filters[np.arange(len(offs)), offs[:, 0], offs[:, 1]] = 1.0
        return filters


def recover_se(bank):
    """Union of the bank's one-hot filters as a centered structuring element."""
    if isinstance(bank, FilterBank):
        size = bank.size
        offs = bank.binary_offsets()
    else:
        filters = np.asarray(bank)
        size = filters.shape[-1]
        offs = binarize_offsets(filters)
    mask = np.zeros((size, size), bool)
    mask[offs[:, 0], offs[:, 1]] = True
    return classical.StructuringElement(mask, (size // 2, size // 2))


def se_ascii(se):
    """Render an SE mask as rows of '0'/'1' characters."""
    return "\n".join("".join("1" if v else "0" for v in row) for row in se.mask) + "\n"


def se_from_ascii(text):
    """Parse the inspect-se ASCII dump back into a centered SE."""
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty SE dump")
    mask = np.array([[ch == "1" for ch in row] for row in rows])
    return classical.StructuringElement(mask, (mask.shape[0] // 2, mask.shape[1] // 2))


def dilate_se_for_reconstruction(se):
    """Grow a structuring element by a 3x3 square (Minkowski dilation).

    The support expands by one cell on every side, so an s x s mask
    becomes (s+2) x (s+2).  Used to derive the second-stage neighborhood
    of reconstruction neurons from their learned first-stage element.
    """
    grown = np.zeros((se.shape[0] + 2, se.shape[1] + 2))
    grown[1:-1, 1:-1] = se.mask
    dilated = classical.dilate(grown, classical.make_se("square", 3))
    return classical.StructuringElement(dilated > 0.5, (grown.shape[0] // 2, grown.shape[1] // 2))


class _StageCache:
    __slots__ = ("xpad", "trace", "offsets", "stride", "size_eff", "padding", "in_hw", "grown")

    def __init__(self, xpad, trace, offsets, stride, size_eff, padding, in_hw, grown):
        self.xpad = xpad
        self.trace = trace
        self.offsets = offsets
        self.stride = stride
        self.size_eff = size_eff
        self.padding = padding
        self.in_hw = in_hw
        self.grown = grown


def _stage_forward(direction, offsets, size_eff, stride, padding, flat_x, grown=False):
    """One framework stage over a flat (channels, h, w) stack."""
    _, h, w = flat_x.shape
    h2 = conv_output_size(h, size_eff, stride, padding)
    w2 = conv_output_size(w, size_eff, stride, padding)
    xpad = pad2d(flat_x, padding)
    out, trace = pool_forward(xpad, offsets, stride, h2, w2, direction == "dilation")
    cache = _StageCache(xpad, trace, offsets, stride, size_eff, padding, (h, w), grown)
    return out, cache


def _stage_backward(cache, grad_flat, n_weight_planes):
    """Input gradient and dense per-filter weight gradient for one stage."""
    gxpad = pool_backward_input(
        grad_flat, cache.trace, cache.offsets, cache.stride,
        cache.xpad.shape[1], cache.xpad.shape[2],
    )
    p = cache.padding
    gx = gxpad[:, p : p + cache.in_hw[0], p : p + cache.in_hw[1]]
    gw = pool_backward_weights(
        grad_flat, cache.trace, cache.xpad, cache.stride, cache.size_eff, n_weight_planes
    )
    if cache.grown:
        gw = gw[:, 1:-1, 1:-1]  # grown window cells outside the real kernel carry no weights
    return np.ascontiguousarray(gx), gw


def framework_morph(direction, bank, x):
    """Binarized depthwise convolution + per-channel min/max pooling.

    Returns the morphological output (one plane per input channel) and
    the pooling trace holding, per output pixel and channel, the index of
    the decomposed filter that won the min (erosion) or max (dilation).
    """
    if direction not in ("erosion", "dilation"):
        raise ValueError(f"direction must be 'erosion' or 'dilation', got {direction!r}")
    x = check_tensor(x)
    out, cache = _stage_forward(
        direction, bank.binary_offsets(), bank.size, bank.stride, bank.padding, x
    )
    return out, cache.trace


@dataclass(frozen=True)
class NeuronSpec:
    """Declarative description of one morphological neuron."""

    kind: str
    size: int
    stride1: int = 1
    padding1: int = 0
    stride2: int = 1
    padding2: int = 0

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise ValueError(f"unknown neuron kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("kernel size must be >= 1")

    def output_hw(self, h, w):
        h1 = conv_output_size(h, self.size, self.stride1, self.padding1)
        w1 = conv_output_size(w, self.size, self.stride1, self.padding1)
        h2 = conv_output_size(h1, self.size, self.stride2, self.padding2)
        w2 = conv_output_size(w1, self.size, self.stride2, self.padding2)
        return h2, w2


class MorphNeuron:
    """One morphological processing unit: two framework stages, an optional
    skip connection, and a pointwise collapse to a single output plane."""

    def __init__(self, spec, in_channels, rng, name, reconstruction_dilate_se=True):
        if spec.kind in SKIP_KINDS:
            ok = (
                spec.stride1 == spec.stride2 == 1
                and spec.padding1 == spec.padding2 == spec.size // 2
            )
            if not ok:
                raise ShapeError(
                    f"{spec.kind} neuron needs stride 1 and padding {spec.size // 2} on both "
                    f"stages so the skip connection aligns, got {spec}"
                )
        self.spec = spec
        self.kind = spec.kind
        self.name = name
        self.in_channels = in_channels
        self.reconstruction_dilate_se = reconstruction_dilate_se
        self.bank1 = FilterBank.random(
            spec.size, spec.stride1, spec.padding1, rng, f"{name}.bank1"
        )
        if spec.kind in TIED_KINDS:
            # same weight storage; stage-2 geometry may differ from bank1's
            self.bank2 = None
        else:
            self.bank2 = FilterBank.random(
                spec.size, spec.stride2, spec.padding2, rng, f"{name}.bank2"
            )
        self.pointwise_weight = Parameter(
            uniform_init(rng, (in_channels,), in_channels), f"{name}.pointwise_weight"
        )
        self.pointwise_bias = Parameter(np.zeros(()), f"{name}.pointwise_bias")
        self._cache = None

    def params(self):
        banks = [self.bank1.weights] if self.bank2 is None else [self.bank1.weights, self.bank2.weights]
        return banks + [self.pointwise_weight, self.pointwise_bias]

    def _stage2_weights(self):
        return self.bank1.weights if self.bank2 is None else self.bank2.weights

    def _is_grown_rec(self):
        return self.kind in ("rec_by_erosion", "rec_by_dilation") and self.reconstruction_dilate_se

    def _stage2_offsets(self):
        """Plane offsets for stage 2, plus the count of weight-carrying planes.

        Reconstruction neurons (with SE growing enabled) pool over the
        dilated version of the learned element on a grown (s+2)^2 window.
        The bank's own planes come first, shifted into the grown grid, so
        weight gradients keep flowing to the real filters whenever one of
        them wins a pixel; the derived extra cells pool and route input
        gradients but train nothing.
        """
        base = binarize_offsets(self._stage2_weights().value)
        if not self._is_grown_rec():
            return base, len(base)
        se = recover_se(self.bank1)
        dil = dilate_se_for_reconstruction(se)
        grown_base = base + 1
        covered = set(map(tuple, grown_base.tolist()))
        extra = [rc for rc in zip(*np.nonzero(dil.mask)) if (rc[0], rc[1]) not in covered]
        if extra:
            offs = np.concatenate([grown_base, np.asarray(extra, dtype=np.int64)])
        else:
            offs = grown_base
        return offs, len(base)

    def derived_stage2_se(self):
        """Structuring element actually probed by stage 2 (after any growing)."""
        if self._is_grown_rec():
            return dilate_se_for_reconstruction(recover_se(self.bank1))
        return recover_se(self._stage2_weights().value)

    def output_hw(self, h, w):
        return self.spec.output_hw(h, w)

    def forward(self, xb, training=False):
        """(batch, c, h, w) -> (batch, 1, h', w')."""
        b, c, h, w = xb.shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {c}")
        dir1, dir2 = _STAGES[self.kind]
        spec = self.spec
        flat = np.ascontiguousarray(xb.reshape(b * c, h, w))
        s1_out, s1_cache = _stage_forward(
            dir1, self.bank1.binary_offsets(), spec.size, spec.stride1, spec.padding1, flat
        )
        offs2, n_weighted = self._stage2_offsets()
        if self._is_grown_rec():
            size_eff, pad_eff, grown = spec.size + 2, spec.padding2 + 1, True
        else:
            size_eff, pad_eff, grown = spec.size, spec.padding2, False
        s2_out, s2_cache = _stage_forward(
            dir2, offs2, size_eff, spec.stride2, pad_eff, s1_out, grown=grown
        )
        core = s2_out.reshape(b, c, *s2_out.shape[1:])

        skip_winner = None
        if self.kind == "white_tophat":
            core = xb - core
        elif self.kind == "black_tophat":
            core = core - xb
        elif self.kind == "rec_by_erosion":
            skip_winner = core > xb  # ties give the gradient to the input operand
            core = np.where(skip_winner, core, xb)
        elif self.kind == "rec_by_dilation":
            skip_winner = core < xb
            core = np.where(skip_winner, core, xb)

        out = np.einsum("bchw,c->bhw", core, self.pointwise_weight.value)
        out = out + self.pointwise_bias.value
        if training:
            self._cache = (s1_cache, s2_cache, n_weighted, core, skip_winner, xb.shape)
        return out[:, None]

    def backward(self, grad_out):
        """(batch, 1, h', w') -> gradient on the (batch, c, h, w) input."""
        s1_cache, s2_cache, n_weighted, core, skip_winner, in_shape = self._cache
        b, c, h, w = in_shape
        g = grad_out[:, 0]
        self.pointwise_weight.grad += np.einsum("bhw,bchw->c", g, core)
        self.pointwise_bias.grad += g.sum()
        gcore = g[:, None] * self.pointwise_weight.value[None, :, None, None]

        gx_skip = None
        if self.kind == "white_tophat":
            gx_skip = gcore
            gcore = -gcore
        elif self.kind == "black_tophat":
            gx_skip = -gcore
        elif self.kind in ("rec_by_erosion", "rec_by_dilation"):
            gx_skip = np.where(skip_winner, 0.0, gcore)
            gcore = np.where(skip_winner, gcore, 0.0)

        flat_g2 = np.ascontiguousarray(gcore.reshape(b * c, *gcore.shape[2:]))
        g_s1, gw2 = _stage_backward(s2_cache, flat_g2, n_weighted)
        self._stage2_weights().grad += gw2
        g_flat_in, gw1 = _stage_backward(s1_cache, g_s1, len(s1_cache.offsets))
        self.bank1.weights.grad += gw1

        gx = g_flat_in.reshape(b, c, h, w)
        if gx_skip is not None:
            gx = gx + gx_skip
        return gx


class MorphLayer(Layer):
    """A stack of morphological neurons; one output channel per neuron.

    No activation function is applied.  All neurons must produce the same
    spatial shape, which is checked at construction against a declared
    input extent.
    """

    def __init__(self, specs, in_channels, input_hw, rng, name="morph",
                 reconstruction_dilate_se=True):
        self.name = name
        self.in_channels = in_channels
        self.neurons = [
            MorphNeuron(spec, in_channels, rng, f"{name}.neuron{i}",
                        reconstruction_dilate_se=reconstruction_dilate_se)
            for i, spec in enumerate(specs)
        ]
        shapes = {n.output_hw(*input_hw) for n in self.neurons}
        if len(shapes) > 1:
            raise ShapeError(f"{name}: neurons disagree on output shape: {sorted(shapes)}")

    def params(self):
        return [p for n in self.neurons for p in n.params()]

    def kinds(self):
        return [n.kind for n in self.neurons]

    def forward(self, x, training=False):
        return np.concatenate([n.forward(x, training=training) for n in self.neurons], axis=1)

    def backward(self, grad):
        gx = None
        for i, neuron in enumerate(self.neurons):
            g = neuron.backward(grad[:, i : i + 1])
            gx = g if gx is None else gx + g
        return gx

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {c}")
        h2, w2 = self.neurons[0].output_hw(h, w)
        return (len(self.neurons), h2, w2)
