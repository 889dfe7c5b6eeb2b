"""Blind identification of critically sampled subband filters (CTFs).

Per frequency bin, the microphone STFT sequences obey a cross-relation:
for any channel pair (i, j) sharing one source, x_i convolved with the
filter of channel j equals x_j convolved with the filter of channel i.
Stacking the per-channel filters into one vector ``a`` turns each pair and
frame into a linear equation ``v . a = 0``. The filters are identified as
the minimizer of the exponentially weighted sum of squared cross-relation
errors subject to the linear constraint ``g . a = 1`` (sum of the first
taps of all channels equals one), which has the closed form

    a = R^-1 g / (g^T R^-1 g),    R = sum_{frames, pairs} conj(v) v^T.

The inverse of R is tracked directly with one rank-one Sherman-Morrison
downdate per pair and frame, so no matrix is ever inverted at runtime.
All routines are vectorized over a leading bank of frequency bins.
"""

from __future__ import annotations

import numpy as np

BREAKDOWN_TOL = 1e-12
DEGENERATE_TOL = 1e-12
IMAG_RESIDUAL_TOL = 1e-6


def constraint_vector(channels: int, taps: int) -> np.ndarray:
    """Selector of the first tap of every channel block."""
    g = np.zeros(channels * taps)
    g[::taps] = 1.0
    return g


def pair_list(channels: int, policy: str = "first-mic") -> list[tuple[int, int]]:
    """Microphone pairs used for the cross-relation equations.

    ``first-mic`` keeps the channels-1 pairs that contain channel 0, which
    performs on par with the full set at a fraction of the cost;
    ``all-pairs`` enumerates all channels*(channels-1)/2 pairs.
    """
    if channels < 2:
        raise ValueError("need at least two channels")
    if policy == "first-mic":
        return [(0, j) for j in range(1, channels)]
    if policy == "all-pairs":
        return [(i, j) for i in range(channels) for j in range(i + 1, channels)]
    raise ValueError(f"unknown pair policy: {policy!r}")


def build_pair_vector(taps: np.ndarray, pair: tuple[int, int]) -> np.ndarray:
    """Cross-relation vector for one channel pair at one frame.

    ``taps`` has shape (channels, n_taps), row i holding the newest-first
    decimated history of channel i (zero-padded before the stream start).
    Block i of the result holds channel j's taps, block j holds the negated
    channel-i taps, every other block is zero, so that the inner product
    with the stacked true filter vector vanishes.
    """
    taps = np.asarray(taps)
    i, j = pair
    channels, n_taps = taps.shape
    if not (0 <= i < j < channels):
        raise ValueError(f"invalid pair {pair} for {channels} channels")
    v = np.zeros(channels * n_taps, dtype=np.complex128)
    v[i * n_taps : (i + 1) * n_taps] = taps[j]
    v[j * n_taps : (j + 1) * n_taps] = -taps[i]
    return v


def build_pair_vectors(taps: np.ndarray, pairs) -> np.ndarray:
    """Banked variant: taps (bins, channels, n_taps) -> (pairs, bins, dim)."""
    n_bins, channels, n_taps = taps.shape
    out = np.zeros((len(pairs), n_bins, channels * n_taps), dtype=np.complex128)
    for m, (i, j) in enumerate(pairs):
        out[m, :, i * n_taps : (i + 1) * n_taps] = taps[:, j, :]
        out[m, :, j * n_taps : (j + 1) * n_taps] = -taps[:, i, :]
    return out


def sherman_morrison_update(P: np.ndarray, vectors: np.ndarray,
                            breakdown_tol: float = BREAKDOWN_TOL) -> int:
    """Fold one frame of cross-relation vectors into the inverse covariance.

    ``P`` (bins, dim, dim) is updated in place with one rank-one downdate
    per vector: P <- P - (P v* v^T P) / (1 + v^T P v*). The caller applies
    the forgetting-factor rescale beforehand. Updates whose denominator is
    within ``breakdown_tol`` of zero are skipped; returns the skip count.
    """
    vectors = np.atleast_3d(np.asarray(vectors, dtype=np.complex128))
    skipped = 0
    for v in vectors:
        Pv = (P @ np.conj(v)[..., None])[..., 0]            # P v*
        vP = (v[:, None, :] @ P)[:, 0, :]                   # v^T P
        den = 1.0 + np.einsum("ki,ki->k", v, Pv)            # 1 + v^T P v*
        ok = np.abs(den) > breakdown_tol
        skipped += int(ok.size - np.count_nonzero(ok))
        den = np.where(ok, den, 1.0)
        P -= np.where(ok[:, None, None],
                      Pv[:, :, None] * vP[:, None, :] / den[:, None, None], 0.0)
    return skipped


def solve_constrained(P: np.ndarray, g: np.ndarray,
                      degenerate_tol: float = DEGENERATE_TOL):
    """Constrained minimizer a = P g / (g^T P g) for a bank of bins.

    Returns ``(a, ok, imag_ratio)`` where ``ok`` flags bins whose
    denominator is safely away from zero (others carry g/|g|^2 as a
    placeholder and should be held by the caller) and ``imag_ratio`` is the
    relative imaginary residual of the denominator, which is real for an
    exactly Hermitian P.
    """
    num = P @ g
    den = num @ g
    imag_ratio = np.abs(den.imag) / np.maximum(np.abs(den), 1e-300)
    den_r = den.real
    ok = np.abs(den_r) > degenerate_tol
    a = num / np.where(ok, den_r, 1.0)[:, None]
    return a, ok, imag_ratio


class RecursiveIdentifier:
    """Streaming per-bin filter identification with exponential forgetting.

    One instance owns the inverse covariance and the current estimates for
    a bank of bins; bins never interact, so banks may be split and run in
    parallel without changing any per-bin result.
    """

    def __init__(self, n_bins: int, channels: int, taps: int, forgetting: float,
                 pairs=None, init_scale: float = 1000.0, resym_interval: int = 64):
        if not 0.0 < forgetting <= 1.0:
            raise ValueError("forgetting factor must be in (0, 1]")
        self.channels = channels
        self.taps = taps
        self.forgetting = float(forgetting)
        self.pairs = list(pairs) if pairs is not None else pair_list(channels)
        self.resym_interval = int(resym_interval)
        dim = channels * taps
        self.g = constraint_vector(channels, taps)
        self.P = np.tile(float(init_scale) * np.eye(dim, dtype=np.complex128),
                         (n_bins, 1, 1))
        # What a solve against the fresh prior would return.
        self.estimates = np.tile((self.g / (self.g @ self.g)).astype(np.complex128),
                                 (n_bins, 1))
        self.frames_seen = 0
        self.skip_counts = {"covariance_update": 0, "ctf_solve": 0}
        self.constraint_imag_events = 0

    @property
    def n_bins(self) -> int:
        return self.P.shape[0]

    def update(self, taps_now: np.ndarray) -> np.ndarray:
        """Advance one frame: taps_now (bins, channels, taps) newest-first.

        Returns the refreshed estimates, shape (bins, channels * taps).
        Bins with a degenerate constraint denominator keep their previous
        estimate; both failure kinds are counted, never raised.
        """
        vectors = build_pair_vectors(taps_now, self.pairs)
        self.P *= 1.0 / self.forgetting
        self.skip_counts["covariance_update"] += sherman_morrison_update(self.P, vectors)
        self.frames_seen += 1
        if self.resym_interval and self.frames_seen % self.resym_interval == 0:
            self.P += np.conj(np.swapaxes(self.P, 1, 2))
            self.P *= 0.5

        a, ok, imag_ratio = solve_constrained(self.P, self.g)
        held = int(ok.size - np.count_nonzero(ok))
        self.skip_counts["ctf_solve"] += held
        self.constraint_imag_events += int(np.count_nonzero(imag_ratio > IMAG_RESIDUAL_TOL))
        self.estimates = np.where(ok[:, None], a, self.estimates)
        return self.estimates


class CovarianceAccumulator:
    """Plain (non-recursive) accumulation of the cross-relation covariance.

    Supports the batch identification mode and serves as the direct-inverse
    oracle in tests. ``prior_scale`` adds prior_scale * I so the result is
    the exact fixed point of the recursive updates with forgetting 1 and
    inverse-covariance initialization (1 / prior_scale) * I.
    """

    def __init__(self, n_bins: int, channels: int, taps: int,
                 pairs=None, prior_scale: float = 1e-3):
        self.channels = channels
        self.taps = taps
        self.pairs = list(pairs) if pairs is not None else pair_list(channels)
        dim = channels * taps
        self.g = constraint_vector(channels, taps)
        self.R = np.tile(float(prior_scale) * np.eye(dim, dtype=np.complex128),
                         (n_bins, 1, 1))
        self.frames_seen = 0

    def add_frame(self, taps_now: np.ndarray) -> None:
        for v in build_pair_vectors(taps_now, self.pairs):
            self.R += np.conj(v)[:, :, None] * v[:, None, :]
        self.frames_seen += 1

    def solve(self) -> np.ndarray:
        """Constrained solve; singular banks get a trace-scaled ridge."""
        dim = self.R.shape[-1]
        g = np.broadcast_to(self.g, (self.R.shape[0], dim))[..., None]
        try:
            num = np.linalg.solve(self.R, g)[..., 0]
        except np.linalg.LinAlgError:
            scale = np.einsum("kii->k", self.R).real / dim
            ridge = 1e-10 * np.where(scale > 0, scale, 1.0)
            num = np.linalg.solve(self.R + ridge[:, None, None] * np.eye(dim),
                         g)[..., 0]
        den = np.einsum("ki,i->k", num, self.g).real
        den = np.where(np.abs(den) > DEGENERATE_TOL, den, 1.0)
        return num / den[:, None]


def batch_identify(tap_frames, channels: int, taps: int, pairs=None,
                   prior_scale: float = 1e-3) -> np.ndarray:
    """Identify filters from a whole recording at once.

    ``tap_frames`` iterates over per-frame arrays (bins, channels, taps);
    a single (frames, channels, taps) array is treated as one bin. Returns
    estimates of shape (bins, channels * taps) satisfying g . a = 1.
    """
    frames = np.asarray(tap_frames) if not isinstance(tap_frames, np.ndarray) \
        else tap_frames
    if frames.ndim == 3:
        frames = frames[:, None, :, :]
    if frames.ndim != 4:
        raise ValueError("tap_frames must be (frames, bins, channels, taps)")
    acc = CovarianceAccumulator(frames.shape[1], channels, taps,
                                pairs=pairs, prior_scale=prior_scale)
    for taps_now in frames:
        acc.add_frame(taps_now)
    return acc.solve()
