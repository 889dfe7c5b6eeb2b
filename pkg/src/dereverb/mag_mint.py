"""Adaptive inverse filtering of subband filter magnitudes.

The source STFT magnitude is approximated as the frame-domain convolution
of the (nonnegative) filter magnitudes with the source magnitude. Recovery
therefore asks for multichannel inverse filters h whose summed convolution
with the filter magnitudes equals a unit impulse with zero delay: the
first filter tap already carries the direct path plus early reflections,
so no modeling delay is wanted. The impulse equation is solved by a
normalized gradient step per frame,

    h <- h - mu / trace(A^T A) * 2 A^T (A h - d),

where A stacks per-channel Toeplitz convolution matrices. The gradient is
evaluated with per-channel forward/adjoint convolutions; the explicit
matrix is only materialized for tests and oracles. Filter energy is never
clamped: the normalized step keeps the iteration stable, and the energy is
exported as a diagnostic instead.

All operations accept arbitrary leading batch axes (typically a bank of
frequency bins). Filters use shape (..., channels, filter_len); the
stacked layout of the matrix formulation is the plain reshape of the last
two axes.
"""

from __future__ import annotations

import numpy as np

TRACE_TOL = 1e-12


def impulse_target(ctf_len: int, filter_len: int) -> np.ndarray:
    d = np.zeros(ctf_len + filter_len - 1)
    d[0] = 1.0
    return d


def build_conv_matrix(mags: np.ndarray, filter_len: int) -> np.ndarray:
    """Stacked Toeplitz convolution matrix for one bin.

    ``mags`` (channels, ctf_len) nonnegative. Column c of each channel
    block holds the channel's magnitude taps shifted down by c rows;
    blocks are concatenated along columns, giving shape
    (ctf_len + filter_len - 1, channels * filter_len).
    """
    mags = np.asarray(mags, dtype=np.float64)
    channels, ctf_len = mags.shape
    rows = ctf_len + filter_len - 1
    mat = np.zeros((rows, channels * filter_len))
    for i in range(channels):
        for c in range(filter_len):
            mat[c : c + ctf_len, i * filter_len + c] = mags[i]
    return mat


def convolve_stack(mags: np.ndarray, filters: np.ndarray) -> np.ndarray:
    """Sum over channels of the per-channel linear convolutions (A h)."""
    mags = np.asarray(mags, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    ctf_len = mags.shape[-1]
    filter_len = filters.shape[-1]
    batch = np.broadcast_shapes(mags.shape[:-2], filters.shape[:-2])
    out = np.zeros(batch + (ctf_len + filter_len - 1,))
    for q in range(ctf_len):
        out[..., q : q + filter_len] += np.sum(mags[..., :, q, None] * filters, axis=-2)
    return out


def correlate_stack(mags: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`convolve_stack` (A^T r), shape (..., channels, filter_len)."""
    mags = np.asarray(mags, dtype=np.float64)
    residual = np.asarray(residual, dtype=np.float64)
    ctf_len = mags.shape[-1]
    filter_len = residual.shape[-1] - ctf_len + 1
    batch = np.broadcast_shapes(mags.shape[:-2], residual.shape[:-1])
    out = np.zeros(batch + (mags.shape[-2], filter_len))
    for q in range(ctf_len):
        out += mags[..., :, q, None] * residual[..., None, q : q + filter_len]
    return out


def residual(mags: np.ndarray, filters: np.ndarray,
             target: np.ndarray | None = None) -> np.ndarray:
    out = convolve_stack(mags, filters)
    if target is None:
        out[..., 0] -= 1.0
        return out
    return out - target


def cost(mags: np.ndarray, filters: np.ndarray,
         target: np.ndarray | None = None) -> np.ndarray:
    """Squared impulse-equation error ||A h - d||^2."""
    r = residual(mags, filters, target)
    return np.sum(r * r, axis=-1)


def gradient(mags: np.ndarray, filters: np.ndarray,
             target: np.ndarray | None = None) -> np.ndarray:
    """Gradient 2 A^T (A h - d) of the squared error, shape of ``filters``."""
    return 2.0 * correlate_stack(mags, residual(mags, filters, target))


def gram_trace(mags: np.ndarray, filter_len: int) -> np.ndarray:
    """Exact trace of A^T A: filter_len * sum of squared magnitude taps.

    Coincides with ctf_len * sum ||mags_i||^2 at the default operating
    point filter_len == ctf_len.
    """
    mags = np.asarray(mags, dtype=np.float64)
    return filter_len * np.sum(mags * mags, axis=(-2, -1))


def update_filters(filters: np.ndarray, mags: np.ndarray, step_factor: float,
                   target: np.ndarray | None = None,
                   trace_tol: float = TRACE_TOL):
    """One normalized gradient step; silent bins (zero trace) are held.

    Returns ``(new_filters, skipped)`` with the number of held batch
    entries.
    """
    tr = gram_trace(mags, filters.shape[-1])
    ok = tr > trace_tol
    skipped = int(ok.size - np.count_nonzero(ok))
    step = np.where(ok, step_factor / np.where(ok, tr, 1.0), 0.0)
    new = filters - step[..., None, None] * gradient(mags, filters, target)
    return new, skipped


def apply_inverse_filter(filters: np.ndarray, mag_taps: np.ndarray) -> np.ndarray:
    """Inverse-filter output: sum_i h_i . taps_i (may be negative).

    ``mag_taps`` holds the newest-first decimated magnitude history per
    channel, same shape as ``filters``.
    """
    return np.sum(np.asarray(filters) * mag_taps, axis=(-2, -1))


class MintBank:
    """Joint multichannel inverse-filter stack for a bank of bins."""

    def __init__(self, n_bins: int, channels: int, ctf_len: int,
                 filter_len: int, step_factor: float):
        self.ctf_len = ctf_len
        self.filter_len = filter_len
        self.step_factor = float(step_factor)
        self.filters = np.zeros((n_bins, channels, filter_len))
        self.skipped = 0

    def step(self, mags: np.ndarray, mag_taps: np.ndarray) -> np.ndarray:
        """Update filters against ``mags`` then filter ``mag_taps``."""
        self.filters, skipped = update_filters(self.filters, mags, self.step_factor)
        self.skipped += skipped
        return apply_inverse_filter(self.filters, mag_taps)

    def energy(self) -> np.ndarray:
        """Per-bin squared filter norm, the exported stability diagnostic."""
        return np.sum(self.filters * self.filters, axis=(-2, -1))


class PairwiseMint:
    """Independent two-channel stacks per pair, averaged in fixed order.

    The pair estimates are combined by an arithmetic mean over the
    configured pair list; the summation order is fixed so the result does
    not depend on how pairs are scheduled.
    """

    def __init__(self, n_bins: int, channels: int, ctf_len: int,
                 filter_len: int, step_factor: float, pairs):
        self.pairs = list(pairs)
        if channels < 2 or not self.pairs:
            raise ValueError("pairwise scheme needs at least two channels")
        self.banks = [MintBank(n_bins, 2, ctf_len, filter_len, step_factor)
                      for _ in self.pairs]

    @property
    def skipped(self) -> int:
        return sum(bank.skipped for bank in self.banks)

    def step(self, mags: np.ndarray, mag_taps: np.ndarray) -> np.ndarray:
        acc = None
        for bank, (i, j) in zip(self.banks, self.pairs):
            idx = (i, j)
            out = bank.step(mags[:, idx, :], mag_taps[:, idx, :])
            acc = out if acc is None else acc + out
        return acc / len(self.pairs)

    def energy(self) -> np.ndarray:
        total = self.banks[0].energy().copy()
        for bank in self.banks[1:]:
            total += bank.energy()
        return total
