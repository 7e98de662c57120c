"""Minimal WAV reading and resampling (stdlib wave + numpy)."""

from __future__ import annotations

import wave

import numpy as np


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return (mono float32 waveform in [-1, 1], sample_rate); 16/24/32-bit PCM."""
    with wave.open(str(path), "rb") as w:
        rate = w.getframerate()
        n_channels = w.getnchannels()
        width = w.getsampwidth()
        raw = w.readframes(w.getnframes())
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float32) / 2147483648.0
    elif width == 3:
        as_bytes = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        ints = (as_bytes[:, 0].astype(np.int32)
                | (as_bytes[:, 1].astype(np.int32) << 8)
                | (as_bytes[:, 2].astype(np.int32) << 16))
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        data = ints.astype(np.float32) / float(1 << 23)
    else:
        raise ValueError(f"unsupported sample width {width} bytes")
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return data, rate


def resample_linear(waveform: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Linear-interpolation resampling; adequate for feature extraction."""
    if src_rate == dst_rate:
        return waveform
    duration = len(waveform) / src_rate
    n_out = int(round(duration * dst_rate))
    t_out = np.arange(n_out) / dst_rate
    t_in = np.arange(len(waveform)) / src_rate
    return np.interp(t_out, t_in, waveform).astype(np.float32)
