"""Classical grayscale morphology with flat structuring elements.

This is the reference implementation used to verify the trainable
morphological layers and to interpret recovered structuring elements.
The border policy clips the neighborhood to the image support: pixels
outside the image never participate, so ordering invariants such as
``erode(x) <= x <= dilate(x)`` hold exactly.  The probed neighborhood
always includes the center pixel itself, even when the mask's center
cell is 0.

All operations accept a single-channel image ``(h, w)`` or a stack
``(c, h, w)``; multi-channel input is processed per channel.
"""

from dataclasses import dataclass

import numpy as np

SE_SHAPES = ("square", "disk", "diamond", "cross", "x_shape")


@dataclass(frozen=True)
class StructuringElement:
    """Binary neighborhood mask with an explicit center cell."""

    mask: np.ndarray
    center: tuple

    def __post_init__(self):
        mask = np.ascontiguousarray(np.asarray(self.mask).astype(bool))
        object.__setattr__(self, "mask", mask)
        if mask.ndim != 2:
            raise ValueError(f"SE mask must be 2-D, got shape {mask.shape}")
        if not mask.any():
            raise ValueError("SE must have at least one active cell")
        ci, cj = self.center
        if not (0 <= ci < mask.shape[0] and 0 <= cj < mask.shape[1]):
            raise ValueError(f"SE center {self.center} outside mask of shape {mask.shape}")

    @property
    def shape(self):
        return self.mask.shape

    def offsets(self):
        """Active-cell offsets relative to the center, with (0, 0) forced in."""
        rows, cols = np.nonzero(self.mask)
        offs = {(int(r) - self.center[0], int(c) - self.center[1]) for r, c in zip(rows, cols)}
        offs.add((0, 0))
        return sorted(offs)

    def reflected(self):
        """Point reflection through the center (transposition of the SE)."""
        mask = self.mask[::-1, ::-1]
        ci = self.mask.shape[0] - 1 - self.center[0]
        cj = self.mask.shape[1] - 1 - self.center[1]
        return StructuringElement(mask, (ci, cj))


def centered_se(mask):
    """SE with the center at the middle cell of an odd-sized mask."""
    mask = np.asarray(mask)
    return StructuringElement(mask, (mask.shape[0] // 2, mask.shape[1] // 2))


def make_se(shape, size):
    """Build one of the canonical SE shapes at an odd size.

    square: full box; disk: Euclidean ball of radius size/2;
    diamond: L1 ball; cross: center row and column; x_shape: both diagonals.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError(f"SE size must be odd and >= 1, got {size}")
    if shape not in SE_SHAPES:
        raise ValueError(f"unknown SE shape {shape!r}; expected one of {SE_SHAPES}")
    r = size // 2
    di, dj = np.mgrid[-r : r + 1, -r : r + 1]
    if shape == "square":
        mask = np.ones((size, size), bool)
    elif shape == "disk":
        mask = di * di + dj * dj <= (size / 2.0) ** 2
    elif shape == "diamond":
        mask = np.abs(di) + np.abs(dj) <= r
    elif shape == "cross":
        mask = (di == 0) | (dj == 0)
    else:  # x_shape
        mask = np.abs(di) == np.abs(dj)
    return StructuringElement(mask, (r, r))


def _as_planes(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image[None], True
    if image.ndim == 3:
        return image, False
    raise ValueError(f"image must be (h, w) or (c, h, w), got shape {image.shape}")


def _shifted_extreme(planes, offsets, reducer):
    # reducer folds each offset's clipped shift into the running extreme;
    # the (0, 0) offset seeds the fold, so out <= or >= image holds exactly.
    _, h, w = planes.shape
    out = planes.copy()
    for di, dj in offsets:
        if di == 0 and dj == 0:
            continue
        if abs(di) >= h or abs(dj) >= w:
            continue  # offset never lands inside the image
        src = planes[:, max(di, 0) : h + min(di, 0), max(dj, 0) : w + min(dj, 0)]
        dst = out[:, max(-di, 0) : h + min(-di, 0), max(-dj, 0) : w + min(-dj, 0)]
        reducer(dst, src, out=dst)
    return out


def erode(image, se):
    """Per-pixel minimum over the SE neighborhood, clipped to the image."""
    planes, squeeze = _as_planes(image)
    out = _shifted_extreme(planes, se.offsets(), np.minimum)
    return out[0] if squeeze else out


def dilate(image, se):
    """Per-pixel maximum over the SE neighborhood, clipped to the image."""
    planes, squeeze = _as_planes(image)
    out = _shifted_extreme(planes, se.offsets(), np.maximum)
    return out[0] if squeeze else out


def opening(image, se):
    """Erosion followed by dilation with the same SE."""
    return dilate(erode(image, se), se)


def closing(image, se):
    """Dilation followed by erosion with the same SE."""
    return erode(dilate(image, se), se)


def white_tophat(image, se):
    """Residue image - opening(image); nonnegative everywhere."""
    image = np.asarray(image, dtype=np.float64)
    return image - opening(image, se)


def black_tophat(image, se):
    """Residue closing(image) - image; nonnegative everywhere."""
    image = np.asarray(image, dtype=np.float64)
    return closing(image, se) - image


RECONSTRUCT_KINDS = ("by_erosion", "by_dilation")


def _check_kind(kind):
    if kind not in RECONSTRUCT_KINDS:
        raise ValueError(f"kind must be one of {RECONSTRUCT_KINDS}, got {kind!r}")


def reconstruct(kind, image, se, elementary_se=None):
    """Geodesic reconstruction iterated to idempotence.

    by_erosion: the marker dilate(image, se) is repeatedly eroded with the
    elementary SE and clamped from below by the image, until a full pass
    changes nothing.  by_dilation is the dual (erode marker, clamp from
    above with pixelwise min).  The elementary SE defaults to the
    4-connected cross.
    """
    _check_kind(kind)
    image = np.asarray(image, dtype=np.float64)
    if elementary_se is None:
        elementary_se = make_se("cross", 3)
    if kind == "by_erosion":
        marker = dilate(image, se)
        step = lambda y: np.maximum(erode(y, elementary_se), image)
    else:
        marker = erode(image, se)
        step = lambda y: np.minimum(dilate(y, elementary_se), image)
    # each pass is monotone and bounded by the image, so h*w passes suffice
    limit = image.shape[-1] * image.shape[-2]
    for _ in range(limit + 1):
        nxt = step(marker)
        if np.array_equal(nxt, marker):
            return nxt
        marker = nxt
    raise RuntimeError(f"geodesic reconstruction did not converge within {limit} passes")


def reconstruct_approx(kind, image, se, se_prime):
    """One-step approximation of geodesic reconstruction.

    A single transformation of the marker with ``se_prime`` (meant to be a
    superset of ``se``) replaces the iteration: by_erosion computes
    max(erode(dilate(image, se), se_prime), image) and by_dilation the dual
    with min.
    """
    _check_kind(kind)
    image = np.asarray(image, dtype=np.float64)
    if kind == "by_erosion":
        return np.maximum(erode(dilate(image, se), se_prime), image)
    return np.minimum(dilate(erode(image, se), se_prime), image)
