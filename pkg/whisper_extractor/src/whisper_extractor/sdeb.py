"""Writer for the SDEB embedding interchange format.

File layout, little-endian throughout: magic "SDEB", version byte 0x01,
flags byte (bit0 = timings present), u32 dim, u64 n, two length-prefixed
UTF-8 strings (u16 length; recording id then source tag), n*dim float32
vectors row-major, then, when flagged, n (start, end) float64 pairs.

This package only writes the format; the diarization toolkit on the other
side of the file boundary owns the reader. Vectors are stored as float32,
so writing the same data twice yields byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

SDEB_MAGIC = b"SDEB"
SDEB_VERSION = 1


def _write_string(fh, text: str) -> None:
    encoded = text.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError("string field longer than 65535 bytes")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)


def write_sdeb(path, vectors, timings=None, recording_id: str = "rec",
               source_tag: str = "whisper-unknown") -> None:
    """Write one embedding set. ``vectors`` is (n, dim); ``timings`` is None
    or (n, 2) float64 (start_s, end_s) rows, sorted and non-overlapping.
    n = 0 is legal (a recording with no speech) and keeps the dim field."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
    n, dim = vectors.shape
    if timings is not None:
        timings = np.ascontiguousarray(timings, dtype=np.float64)
        if timings.shape != (n, 2):
            raise ValueError(f"timings must be ({n}, 2), got {timings.shape}")
        if np.any(timings[:, 1] <= timings[:, 0]):
            raise ValueError("every timing must satisfy start < end")
        if np.any(timings[1:, 0] < timings[:-1, 1] - 1e-9):
            raise ValueError("timings must be sorted and non-overlapping")
    with open(path, "wb") as fh:
        fh.write(SDEB_MAGIC)
        flags = 1 if timings is not None else 0
        fh.write(struct.pack("<BB", SDEB_VERSION, flags))
        fh.write(struct.pack("<IQ", dim, n))
        _write_string(fh, recording_id)
        _write_string(fh, source_tag)
        fh.write(vectors.astype("<f4", copy=False).tobytes())
        if timings is not None:
            fh.write(timings.astype("<f8", copy=False).tobytes())
