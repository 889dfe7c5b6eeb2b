"""Magnitude floor and phase reattachment for the filtered estimate."""

from __future__ import annotations

import numpy as np


def floor_gain(floor_db: float) -> float:
    return 10.0 ** (floor_db / 20.0)


def apply_floor(estimate, mic_mags, gain: float):
    """Lower-limit the magnitude estimate by the mean microphone magnitude.

    ``estimate`` (...,) may be negative (inverse filtering does not enforce
    nonnegativity); ``mic_mags`` (..., channels) are the per-channel STFT
    magnitudes of the same bins. Returns ``(floored, mask)`` where ``mask``
    flags the entries that were raised to gain * mean_i |x_i|.
    """
    floor = gain * np.mean(np.asarray(mic_mags), axis=-1)
    estimate = np.asarray(estimate)
    return np.maximum(estimate, floor), estimate < floor


def reattach_phase(magnitude, reference):
    """Combine a nonnegative magnitude with the phase of ``reference``.

    A zero reference coefficient contributes zero phase, so the output is
    then the magnitude itself.
    """
    reference = np.asarray(reference, dtype=np.complex128)
    mag_ref = np.abs(reference)
    safe = np.where(mag_ref > 0.0, mag_ref, 1.0)
    unit = np.where(mag_ref > 0.0, reference / safe, 1.0 + 0.0j)
    return np.asarray(magnitude) * unit
