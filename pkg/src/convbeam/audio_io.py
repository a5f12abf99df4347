"""RIFF WAVE I/O: 32-bit float and 32-bit integer PCM, any channel count.

Readers return float64 samples shaped (n_samples, n_channels); integer
PCM is scaled into [-1, 1) by 2**-31.  The writer always emits 32-bit
float and writes atomically (temp file, then rename).
"""

from __future__ import annotations

import os
import struct

import numpy as np

_FORMAT_NAMES = {
    0x0001: "PCM",
    0x0002: "ADPCM",
    0x0003: "IEEE_FLOAT",
    0x0006: "ALAW",
    0x0007: "MULAW",
    0x0011: "IMA_ADPCM",
    0x0055: "MPEG_LAYER3",
    0xFFFE: "EXTENSIBLE",
}


class UnsupportedCodecError(ValueError):
    """WAVE file uses a codec other than float32 / int32 PCM."""


def _format_name(tag: int) -> str:
    return _FORMAT_NAMES.get(tag, f"0x{tag:04x}")


def read_wav(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a WAVE file; returns (samples (n, channels) float64, sample_rate)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise UnsupportedCodecError(f"{os.fspath(path)}: not a RIFF WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos : pos + 4]
        (chunk_len,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + chunk_len]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_len + (chunk_len & 1)  # chunks are word-aligned

    if fmt is None or len(fmt) < 16:
        raise UnsupportedCodecError(f"{os.fspath(path)}: missing or short fmt chunk")
    if data is None:
        raise UnsupportedCodecError(f"{os.fspath(path)}: missing data chunk")

    tag, n_channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == 0xFFFE and len(fmt) >= 40:
        # extensible: the real format is the first two bytes of the sub-format GUID
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if n_channels < 1:
        raise UnsupportedCodecError(f"{os.fspath(path)}: channel count {n_channels}")

    if tag == 0x0003 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    elif tag == 0x0001 and bits == 32:
        samples = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2.0**31
    else:
        raise UnsupportedCodecError(
            f"{os.fspath(path)}: unsupported codec {_format_name(tag)} at {bits} bits "
            f"(need IEEE_FLOAT or PCM at 32 bits)"
        )
    n_frames = samples.size // n_channels
    return samples[: n_frames * n_channels].reshape(n_frames, n_channels), int(sample_rate)


def write_wav(path: str | os.PathLike, samples: np.ndarray, sample_rate: int) -> None:
    """Write samples as 32-bit float WAVE; accepts (n,) or (n, channels)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"samples must be 1-D or 2-D, got shape {x.shape}")
    n_frames, n_channels = x.shape
    payload = x.astype("<f4").tobytes()
    byte_rate = int(sample_rate) * n_channels * 4
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 4 + 24 + 8 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack(
                "<IHHIIHH", 16, 0x0003, n_channels, int(sample_rate), byte_rate, n_channels * 4, 32
            ),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    tmp = f"{os.fspath(path)}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
