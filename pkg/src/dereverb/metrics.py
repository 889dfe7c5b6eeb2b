"""Identification accuracy and signal-level improvement metrics.

The identification stage is only determined up to the constraint scaling,
so filter accuracy is scored with the normalized projection misalignment
(NPM): the residual of the truth after projecting out the estimated
direction, in dB. Signal quality uses the log-spectral distance (LSD)
between floored STFT magnitudes, evaluated in the engine's own STFT domain
to avoid resampling ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stft import StftConfig, analyze

NPM_FLOOR_DB = -300.0
LSD_FLOOR_DB = -80.0


def npm_db(estimate: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Normalized projection misalignment in dB, scale invariant.

    ``estimate`` and ``truth`` are stacked filter vectors over the last
    axis; leading axes are batched. Perfect alignment is reported as the
    -300 dB floor; an all-zero truth is rejected.
    """
    estimate = np.asarray(estimate, dtype=np.complex128)
    truth = np.asarray(truth, dtype=np.complex128)
    truth_norm2 = np.sum(np.abs(truth) ** 2, axis=-1)
    if np.any(truth_norm2 == 0.0):
        raise ValueError("ground-truth filter vector is zero")
    est_norm2 = np.sum(np.abs(estimate) ** 2, axis=-1)
    coef = np.sum(np.conj(estimate) * truth, axis=-1) / np.where(
        est_norm2 > 0.0, est_norm2, 1.0)
    resid = truth - coef[..., None] * estimate
    ratio2 = np.sum(np.abs(resid) ** 2, axis=-1) / truth_norm2
    with np.errstate(divide="ignore"):
        return np.maximum(10.0 * np.log10(ratio2), NPM_FLOOR_DB)


@dataclass
class NpmResult:
    per_bin_db: np.ndarray
    median_db: float
    mean_db: float


def npm_result(estimates: np.ndarray, truths: np.ndarray) -> NpmResult:
    per_bin = npm_db(estimates, truths)
    return NpmResult(per_bin_db=per_bin,
                     median_db=float(np.median(per_bin)),
                     mean_db=float(np.mean(per_bin)))


def _floored_log_mag(mag: np.ndarray, floor_db: float) -> np.ndarray:
    peak = np.max(mag)
    floor = 10.0 ** (floor_db / 20.0) * (peak if peak > 0.0 else 1.0)
    return 20.0 * np.log10(np.maximum(mag, floor))


def log_spectral_distance(ref_mag: np.ndarray, test_mag: np.ndarray,
                          floor_db: float = LSD_FLOOR_DB):
    """Per-frame and mean LSD between magnitude spectrograms (frames, bins).

    Each side is floored at ``floor_db`` relative to its own peak, which
    makes the distance symmetric and equivariant under global scaling.
    """
    ref_mag = np.asarray(ref_mag, dtype=np.float64)
    test_mag = np.asarray(test_mag, dtype=np.float64)
    if ref_mag.shape != test_mag.shape:
        raise ValueError("spectrogram shapes differ")
    diff = _floored_log_mag(ref_mag, floor_db) - _floored_log_mag(test_mag, floor_db)
    per_frame = np.sqrt(np.mean(diff * diff, axis=-1))
    return per_frame, float(np.mean(per_frame))


def improvement_report(reference, unprocessed, enhanced, cfg: StftConfig,
                       floor_db: float = LSD_FLOOR_DB,
                       align_gain: bool = True) -> dict:
    """LSD improvement of ``enhanced`` over ``unprocessed`` vs ``reference``.

    All three are time-domain signals; the reference is the first-tap
    (early response) filtered source, time-aligned with the microphones.
    ``align_gain`` removes each test signal's global log-gain offset before
    scoring, because the engine's output scale is pinned by the sum of
    first filter taps rather than by any single channel's gain.
    """
    n = min(len(reference), len(unprocessed), len(enhanced))
    if n == 0:
        raise ValueError("empty signals")
    ref_mag = np.abs(analyze(np.asarray(reference)[:n], cfg))
    lsd_unproc = _aligned_lsd(ref_mag, np.asarray(unprocessed)[:n], cfg,
                              floor_db, align_gain)
    lsd_enh = _aligned_lsd(ref_mag, np.asarray(enhanced)[:n], cfg,
                           floor_db, align_gain)
    delta = lsd_unproc - lsd_enh
    return {
        "lsd_unprocessed_db": lsd_unproc,
        "lsd_enhanced_db": lsd_enh,
        "improvement_per_frame_db": delta,
        "median_improvement_db": float(np.median(delta)),
        "mean_improvement_db": float(np.mean(delta)),
        "mean_lsd_unprocessed_db": float(np.mean(lsd_unproc)),
        "mean_lsd_enhanced_db": float(np.mean(lsd_enh)),
    }


def _aligned_lsd(ref_mag, test, cfg, floor_db, align_gain):
    test_mag = np.abs(analyze(test, cfg))
    diff = _floored_log_mag(ref_mag, floor_db) - _floored_log_mag(test_mag, floor_db)
    if align_gain:
        diff = diff - np.mean(diff)
    return np.sqrt(np.mean(diff * diff, axis=-1))
