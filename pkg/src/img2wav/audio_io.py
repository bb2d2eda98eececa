"""16-bit PCM mono WAV reading and writing.

Writing clamps to [-1, 1] and quantizes with rounding at scale 32767, so a
round trip moves any sample by at most half a least-significant bit. The
reader walks RIFF chunks and rejects anything that is not plain 16-bit mono
PCM with a descriptive error.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_PCM_SCALE = 32767.0


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV files."""


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"write_wav expects a mono 1-D signal, got shape {samples.shape}")
    if sample_rate <= 0:
        raise ValueError(f"sample rate must be positive, got {sample_rate}")
    q = np.round(np.clip(samples, -1.0, 1.0) * _PCM_SCALE).astype("<i2")
    data = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(data),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        sample_rate,
        sample_rate * 2,
        2,
        16,
        b"data",
        len(data),
    )
    Path(path).write_bytes(header + data)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (float64 samples in [-1, 1], sample_rate)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: truncated chunk {cid!r} ({len(body)} of {size} bytes)")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if audio_format != 1:
        raise WavFormatError(f"{path}: unsupported codec (format tag {audio_format}, want PCM)")
    if channels != 1:
        raise WavFormatError(f"{path}: unsupported channel count {channels}, want mono")
    if bits != 16:
        raise WavFormatError(f"{path}: unsupported bit depth {bits}, want 16")
    if len(data) % 2:
        raise WavFormatError(f"{path}: odd data chunk length {len(data)}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / _PCM_SCALE
    return samples, sample_rate
