"""AVFS: a flat binary container for audio-visual feature sequences.

Layout (all integers little-endian):

    header  28 bytes   magic b"AVFS", version u32, d_a u32, d_v u32,
                       L u32, n_sequences u32, flags u32
                       (flag bit 0: labels present, bit 1: masks present)
    body    per sequence, in order:
              Xa   d_a*L float64, column-major
              Xv   d_v*L float64, column-major
              labels  2*L float64 (valence block, then arousal block),
                      only when bit 0 is set
              masks   2*L bytes, 0/1 (audio block, then visual block),
                      only when bit 1 is set

The total file size is fully determined by the header, so truncation is
always detectable, and write -> read round-trips bitwise.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Matrix
from .fusion import AUDIO, VISUAL, FeatureSequence
from .metrics import EmotionTrack
from .synthdata import LabeledSequence

__all__ = ["AVFSError", "write_avfs", "read_avfs", "expected_file_size", "FLAG_LABELS", "FLAG_MASKS"]

MAGIC = b"AVFS"
VERSION = 1
FLAG_LABELS = 1
FLAG_MASKS = 2

_HEADER = struct.Struct("<4sIIIIII")


class AVFSError(ValueError):
    """A file does not conform to the AVFS layout."""


def expected_file_size(d_a: int, d_v: int, length: int, n: int, flags: int) -> int:
    per_seq = 8 * (d_a + d_v) * length
    if flags & FLAG_LABELS:
        per_seq += 8 * 2 * length
    if flags & FLAG_MASKS:
        per_seq += 2 * length
    return _HEADER.size + n * per_seq


def write_avfs(path, sequences: list[LabeledSequence]) -> None:
    """Serialize sequences to ``path``; dims must be homogeneous.

    Labels and masks are written when every sequence carries them; a mix
    of present and absent is rejected.
    """
    if not sequences:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, 0, 0, 0, 0, 0))
        return

    first = sequences[0]
    d_a, d_v, length = first.xa.dim, first.xv.dim, first.clips
    have_labels = [s.labels is not None for s in sequences]
    have_masks = [s.corruption_mask is not None for s in sequences]
    for s in sequences:
        if (s.xa.dim, s.xv.dim, s.clips) != (d_a, d_v, length):
            raise AVFSError(
                f"heterogeneous dimensions: expected ({d_a}, {d_v}, {length}), "
                f"got ({s.xa.dim}, {s.xv.dim}, {s.clips})"
            )
    if any(have_labels) != all(have_labels) or any(have_masks) != all(have_masks):
        raise AVFSError("labels/masks must be present on all sequences or none")

    flags = (FLAG_LABELS if all(have_labels) else 0) | (FLAG_MASKS if all(have_masks) else 0)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d_a, d_v, length, len(sequences), flags))
        for s in sequences:
            fh.write(np.asarray(s.xa.features.data, dtype="<f8").tobytes(order="F"))
            fh.write(np.asarray(s.xv.features.data, dtype="<f8").tobytes(order="F"))
            if flags & FLAG_LABELS:
                fh.write(np.asarray(s.labels.valence, dtype="<f8").tobytes())
                fh.write(np.asarray(s.labels.arousal, dtype="<f8").tobytes())
            if flags & FLAG_MASKS:
                fh.write(s.corruption_mask.astype(np.uint8).tobytes())


def read_avfs(path) -> list[LabeledSequence]:
    """Parse an AVFS file; the inverse of :func:`write_avfs`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise AVFSError(f"corrupt file: expected at least {_HEADER.size} header bytes, got {len(blob)}")
    magic, version, d_a, d_v, length, n, flags = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise AVFSError("not an AVFS file")
    if version != VERSION:
        raise AVFSError(f"unsupported AVFS version {version} (expected {VERSION})")
    want = expected_file_size(d_a, d_v, length, n, flags)
    if len(blob) != want:
        raise AVFSError(f"corrupt file: expected {want} bytes, got {len(blob)}")

    out: list[LabeledSequence] = []
    off = _HEADER.size
    for _ in range(n):
        xa, off = _read_matrix(blob, off, d_a, length)
        xv, off = _read_matrix(blob, off, d_v, length)
        labels = None
        if flags & FLAG_LABELS:
            vals = np.frombuffer(blob, "<f8", 2 * length, off)
            off += 16 * length
            labels = EmotionTrack(vals[:length].copy(), vals[length:].copy())
        mask = None
        if flags & FLAG_MASKS:
            raw = np.frombuffer(blob, np.uint8, 2 * length, off)
            off += 2 * length
            mask = raw.reshape(2, length).astype(bool)
        out.append(
            LabeledSequence(
                FeatureSequence(AUDIO, xa), FeatureSequence(VISUAL, xv), labels, mask
            )
        )
    return out


def _read_matrix(blob: bytes, off: int, rows: int, cols: int) -> tuple[Matrix, int]:
    count = rows * cols
    flat = np.frombuffer(blob, "<f8", count, off)
    return Matrix(flat.reshape((rows, cols), order="F")), off + 8 * count
