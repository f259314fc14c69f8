"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic b"DMORPH01"
    bytes 8..15   uint64 length of the JSON header
    header        UTF-8 JSON, sorted keys:
                    format: container version (1)
                    meta:   architecture name, classes, in_channels,
                            input_hw, seed, config echo
                    params: ordered list of {name, shape}
    blobs         one float64 C-order little-endian blob per params entry,
                  concatenated in listed order

Writing the same network state twice yields byte-identical files, which
is what the determinism contract of the command-line tools relies on.
"""

import json

import numpy as np

MAGIC = b"DMORPH01"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or structurally invalid checkpoint file."""


def save_checkpoint(path, meta, values):
    """Write named float64 arrays plus metadata; sorted by name."""
    names = sorted(values)
    header = {
        "format": FORMAT_VERSION,
        "meta": meta,
        "params": [{"name": n, "shape": list(values[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(values[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read back (meta, {name: float64 array}); validates magic and sizes."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {data[:8]!r})")
    if len(data) < 16:
        raise CheckpointError(f"{path}: truncated header")
    hlen = int.from_bytes(data[8:16], "little")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    if header.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')}")
    values = {}
    offset = 16 + hlen
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated blob for {entry['name']}")
        values[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header["meta"], values
