"""Small WAV helpers: float64 in memory, 16-bit or float32 PCM on disk."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path):
    """Read a WAV file as (sample_rate, float64 samples in [-1, 1]).

    Returns samples of shape (n,) for mono or (n, channels) otherwise.
    Integer PCM is scaled by its full-scale value; float data is passed
    through.
    """
    rate, data = wavfile.read(Path(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format: {data.dtype}")
    return rate, samples


def write_wav(path, sample_rate: int, samples) -> None:
    """Write float32 PCM; samples shaped (n,) or (n, channels)."""
    data = np.asarray(samples, dtype=np.float32)
    wavfile.write(Path(path), int(sample_rate), data)
