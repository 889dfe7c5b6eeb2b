"""STFT analysis and weighted overlap-add synthesis.

Analysis prepends ``frame_len - hop`` zeros of history so that the first
emitted frame already contains the start of the signal: a streaming caller
that receives one hop of fresh samples per step can produce output from
step 0. Synthesis uses the least-squares dual of the analysis window, so
the round trip is an identity for any window/hop combination for which the
shifted squared window taps never sum to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters shared by all frequency-domain stages."""

    frame_len: int = 768
    hop: int = 192
    sample_rate: int = 16000
    window: str = "hamming"

    def __post_init__(self):
        if self.frame_len <= 0 or self.hop <= 0:
            raise ValueError("frame_len and hop must be positive")
        if self.frame_len % self.hop:
            raise ValueError(
                f"frame_len {self.frame_len} is not divisible by hop {self.hop}"
            )

    @property
    def decimation(self) -> int:
        """Frame-domain tap spacing: hops per frame."""
        return self.frame_len // self.hop

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return -(-n_samples // self.hop)

    def analysis_window(self) -> np.ndarray:
        return get_window(self.window, self.frame_len, fftbins=True).astype(np.float64)

    def synthesis_window(self) -> np.ndarray:
        """Least-squares dual window: w / sum_k w^2[n + k*hop]."""
        w = self.analysis_window()
        overlap = (w * w).reshape(self.decimation, self.hop).sum(axis=0)
        if np.any(overlap <= 0.0):
            raise ValueError("analysis window is not invertible at this hop")
        return w / np.tile(overlap, self.decimation)


def analyze(signal, cfg: StftConfig) -> np.ndarray:
    """Transform real samples into one-sided STFT frames.

    Parameters
    ----------
    signal : array, shape (n,) or (channels, n)
        Real time-domain samples; all channels must have equal length.
    cfg : StftConfig

    Returns
    -------
    spectra : complex array, shape (frames, n_bins) or (channels, frames, n_bins)
        Frame p covers samples [p*hop - (frame_len - hop), p*hop + hop) of
        the input, with zeros before sample 0 and after the last sample.
    """
    x = np.asarray(signal)
    if x.dtype == object:
        raise ValueError("channel length mismatch")
    x = x.astype(np.float64, copy=False)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("signal must be 1-D or 2-D (channels, samples)")

    n = x.shape[1]
    n_fft, hop = cfg.frame_len, cfg.hop
    n_frames = cfg.n_frames(n)
    if n_frames == 0:
        out = np.zeros((x.shape[0], 0, cfg.n_bins), dtype=np.complex128)
        return out[0] if single else out

    pad_front = n_fft - hop
    pad_back = (n_frames - 1) * hop + n_fft - (pad_front + n)
    xp = np.pad(x, ((0, 0), (pad_front, max(pad_back, 0))))
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft, axis=1)[:, ::hop, :]
    frames = frames[:, :n_frames, :] * cfg.analysis_window()
    spec = np.fft.rfft(frames, axis=-1)
    return spec[0] if single else spec


def synthesize(spectra, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Reconstruct real samples from single-channel STFT frames.

    Overlap-add with the dual synthesis window, renormalized per sample by
    the accumulated window product so partially covered edge samples are
    scaled consistently. ``length`` trims or zero-pads the result; default
    is frames * hop.
    """
    s = np.asarray(spectra, dtype=np.complex128)
    if s.ndim != 2:
        raise ValueError("spectra must be 2-D (frames, bins)")
    n_frames, n_bins = s.shape
    if n_bins != cfg.n_bins:
        raise ValueError(f"expected {cfg.n_bins} bins, got {n_bins}")

    n_fft, hop = cfg.frame_len, cfg.hop
    out_len = n_frames * hop if length is None else int(length)
    if n_frames == 0:
        return np.zeros(out_len)

    dual = cfg.synthesis_window()
    frames = np.fft.irfft(s, n=n_fft, axis=1) * dual
    wprod = cfg.analysis_window() * dual

    total = (n_frames - 1) * hop + n_fft
    y = np.zeros(total)
    wsum = np.zeros(total)
    for p in range(n_frames):
        y[p * hop : p * hop + n_fft] += frames[p]
        wsum[p * hop : p * hop + n_fft] += wprod
    # The clamp keeps partially covered edge samples from being blown up
    # by the renormalization when the spectra are not OLA-consistent.
    y /= np.maximum(wsum, 1e-2)

    start = n_fft - hop
    out = y[start : start + out_len]
    if out.shape[0] < out_len:
        out = np.pad(out, (0, out_len - out.shape[0]))
    return out
