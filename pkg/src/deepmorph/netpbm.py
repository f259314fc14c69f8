"""Binary netpbm (PGM P5 / PPM P6) codec.

These formats are specifiable bit-exactly without external codecs, which
keeps dataset round-trips byte-identical.  Only single-byte samples
(maxval <= 255) are supported; anything else is reported as a per-file
error naming the offending path.
"""

import numpy as np


class NetpbmError(ValueError):
    """Malformed or unsupported netpbm content, with the file path."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


def _tokens(data, path):
    """Yield whitespace-separated header tokens, skipping # comments."""
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise NetpbmError(path, "truncated header")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end == -1:
                raise NetpbmError(path, "unterminated comment")
            pos = end + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        yield data[pos:end], end
        pos = end


def read_netpbm(path):
    """Decode a binary PGM/PPM file to a float32 (c, h, w) array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tok = _tokens(data, path)
    magic, _ = next(tok)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(path, f"unsupported magic {magic!r} (expected P5 or P6)")
    channels = 1 if magic == b"P5" else 3
    fields = []
    for _ in range(3):
        t, end = next(tok)
        if not t.isdigit():
            raise NetpbmError(path, f"non-numeric header field {t!r}")
        fields.append(int(t))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise NetpbmError(path, f"bad dimensions {width}x{height}")
    if not 1 <= maxval <= 255:
        raise NetpbmError(path, f"unsupported maxval {maxval} (only single-byte samples)")
    payload = data[end + 1 :]  # exactly one whitespace byte after maxval
    need = width * height * channels
    if len(payload) < need:
        raise NetpbmError(path, f"truncated payload: need {need} bytes, have {len(payload)}")
    raw = np.frombuffer(payload[:need], dtype=np.uint8)
    img = raw.reshape(height, width) if channels == 1 else raw.reshape(height, width, 3)
    img = img.astype(np.float32) / maxval
    return img[None] if channels == 1 else np.ascontiguousarray(img.transpose(2, 0, 1))


def write_pgm(path, plane):
    """Encode one plane as binary PGM with maxval 255.

    Float input is clipped to [0, 1] and scaled; uint8 passes through.
    """
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"PGM plane must be 2-D, got shape {plane.shape}")
    if plane.dtype != np.uint8:
        plane = np.round(np.clip(plane, 0.0, 1.0) * 255).astype(np.uint8)
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(plane.tobytes())


def write_ppm(path, image):
    """Encode a (3, h, w) image as binary PPM with maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"PPM image must be (3, h, w), got shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    header = f"P6\n{image.shape[2]} {image.shape[1]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image.transpose(1, 2, 0)).tobytes())
