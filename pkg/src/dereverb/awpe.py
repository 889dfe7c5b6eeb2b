"""Adaptive weighted prediction error (AWPE) baseline.

Per frequency bin, late reverberation is modeled as a delayed linear
prediction from the stacked multichannel STFT history and subtracted from
the target channel. The prediction filter is tracked by RLS on the
variance-normalized regression vector, the variance being approximated by
the floored instantaneous target-channel power. With a prediction delay of
at least one frame the predictor never sees the current frame, so the
output stays causal.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .pipeline import RunReport, StreamResult, split_bins
from .stft import StftConfig, analyze, synthesize

BREAKDOWN_TOL = 1e-12


@dataclass(frozen=True)
class AwpeConfig:
    frame_len: int = 512
    hop: int = 128
    sample_rate: int = 16000
    window: str = "hann"
    filter_len: int | None = None     # per channel; default 16 (few mics) or 8
    prediction_delay: int = 6
    forgetting: float | None = None   # default 0.97 (few mics) or 0.985
    reference_channel: int = 0
    variance_floor_scale: float = 1e-10
    init_cov_scale: float = 1000.0
    threads: int = 1

    def stft(self) -> StftConfig:
        return StftConfig(frame_len=self.frame_len, hop=self.hop,
                          sample_rate=self.sample_rate, window=self.window)

    def resolved_filter_len(self, channels: int) -> int:
        if self.filter_len is not None:
            return self.filter_len
        return 16 if channels <= 4 else 8

    def resolved_forgetting(self, channels: int) -> float:
        if self.forgetting is not None:
            return self.forgetting
        return 0.97 if channels <= 4 else 0.985

    def validate(self) -> None:
        if self.prediction_delay < 1:
            raise ValueError("prediction delay must be >= 1")
        if self.filter_len is not None and self.filter_len < 0:
            raise ValueError("filter length must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self, channels: int | None = None) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if channels is not None:
            out["filter_len"] = self.resolved_filter_len(channels)
            out["forgetting"] = self.resolved_forgetting(channels)
        return out


class AwpeBinEngine:
    """RLS predictor state for one block of frequency bins."""

    # Forgetting inflates the inverse covariance exponentially along
    # unexcited directions (classic RLS wind-up); periodically clipping its
    # eigenvalues at the prior scale bounds the gain without disturbing the
    # well-excited directions.
    CLIP_INTERVAL = 32

    def __init__(self, cfg: AwpeConfig, channels: int, n_bins: int):
        cfg.validate()
        self.cfg = cfg
        self.channels = channels
        self.n_bins = n_bins
        self.filter_len = cfg.resolved_filter_len(channels)
        self.forgetting = cfg.resolved_forgetting(channels)
        depth = cfg.prediction_delay + max(self.filter_len, 1)
        self.buf = np.zeros((n_bins, channels, depth), dtype=np.complex128)
        dim = channels * self.filter_len
        self.weights = np.zeros((n_bins, dim), dtype=np.complex128)
        self.P = np.tile(cfg.init_cov_scale * np.eye(dim, dtype=np.complex128),
                         (n_bins, 1, 1)) if dim else np.zeros((n_bins, 0, 0))
        self.power_mean = np.zeros(n_bins)
        self.frames = 0
        self.skipped = 0
        self.energy_frames = []
        self.stage_seconds = {"analysis": 0.0, "prediction": 0.0, "synthesis": 0.0}

    def process_frame(self, frame: np.ndarray) -> np.ndarray:
        """frame (channels, bins) -> dereverberated target-channel bins."""
        t0 = time.perf_counter()
        cfg = self.cfg
        self.buf[:, :, 1:] = self.buf[:, :, :-1]
        self.buf[:, :, 0] = frame.T
        target = frame[cfg.reference_channel]
        power = np.abs(target) ** 2
        self.frames += 1
        self.power_mean += (power - self.power_mean) / self.frames

        if self.filter_len == 0:
            self.energy_frames.append(np.zeros(self.n_bins))
            self.stage_seconds["prediction"] += time.perf_counter() - t0
            return target.copy()

        delay = cfg.prediction_delay
        regress = self.buf[:, :, delay : delay + self.filter_len]
        regress = regress.reshape(self.n_bins, -1)
        error = target - np.einsum("ki,ki->k", np.conj(self.weights), regress)

        sigma2 = np.maximum(power, cfg.variance_floor_scale * self.power_mean)
        num = (self.P @ regress[..., None])[..., 0]
        den = self.forgetting * sigma2 + np.einsum("ki,ki->k",
                                                   np.conj(regress), num)
        active = np.einsum("ki,ki->k", np.conj(regress), regress).real > 0.0
        ok = np.abs(den) > BREAKDOWN_TOL
        self.skipped += int(np.count_nonzero(active & ~ok))
        apply = active & ok
        den = np.where(ok, den, 1.0)
        gain = num / den[:, None]
        yhP = (np.conj(regress)[:, None, :] @ self.P)[:, 0, :]
        new_P = (self.P - gain[:, :, None] * yhP[:, None, :]) / self.forgetting
        self.P = np.where(apply[:, None, None], new_P, self.P)
        if self.frames % self.CLIP_INTERVAL == 0:
            self._clip_windup()
        self.weights = np.where(apply[:, None],
                                self.weights + gain * np.conj(error)[:, None],
                                self.weights)
        self.energy_frames.append(np.sum(np.abs(self.weights) ** 2, axis=1))
        self.stage_seconds["prediction"] += time.perf_counter() - t0
        return error

    def _clip_windup(self) -> None:
        herm = 0.5 * (self.P + np.conj(np.swapaxes(self.P, 1, 2)))
        evals, evecs = np.linalg.eigh(herm)
        evals = np.clip(evals, 0.0, self.cfg.init_cov_scale)
        self.P = (evecs * evals[:, None, :]) @ np.conj(np.swapaxes(evecs, 1, 2))


def _run_slice(cfg: AwpeConfig, mic_spec: np.ndarray, sl: slice):
    channels, n_frames, _ = mic_spec.shape
    engine = AwpeBinEngine(cfg, channels, sl.stop - sl.start)
    out = np.empty((n_frames, engine.n_bins), dtype=np.complex128)
    for p in range(n_frames):
        out[p] = engine.process_frame(mic_spec[:, p, sl])
    return out, engine


def process_spectra(cfg: AwpeConfig, mic_spec: np.ndarray):
    cfg.validate()
    if mic_spec.shape[0] < 2:
        raise ValueError("need at least two channels")
    slices = split_bins(mic_spec.shape[2], cfg.threads)
    if len(slices) == 1:
        results = [_run_slice(cfg, mic_spec, slices[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            results = list(pool.map(lambda sl: _run_slice(cfg, mic_spec, sl),
                                    slices))
    output = np.concatenate([out for out, _ in results], axis=1)
    return output, [eng for _, eng in results]


def process_stream(cfg: AwpeConfig, samples: np.ndarray) -> StreamResult:
    """Dereverberate (channels, n) samples with the AWPE predictor."""
    cfg.validate()
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 2:
        raise ValueError("need at least two channels")
    n = samples.shape[1]
    scfg = cfg.stft()

    wall_start = time.perf_counter()
    t0 = time.perf_counter()
    mic_spec = analyze(samples, scfg)
    t_analysis = time.perf_counter() - t0
    out_spec, engines = process_spectra(cfg, mic_spec)
    t0 = time.perf_counter()
    output = synthesize(out_spec, scfg, length=n)
    t_synthesis = time.perf_counter() - t0
    wall = time.perf_counter() - wall_start

    n_frames = out_spec.shape[0]
    energy = np.concatenate([np.asarray(eng.energy_frames) for eng in engines],
                            axis=1).sum(axis=1) if n_frames else np.zeros(0)
    skipped = sum(eng.skipped for eng in engines)
    attempts = n_frames * out_spec.shape[1]
    stage = {"analysis": t_analysis,
             "prediction": sum(eng.stage_seconds["prediction"] for eng in engines),
             "synthesis": t_synthesis}
    stats = {"min": float(energy.min()) if energy.size else 0.0,
             "max": float(energy.max()) if energy.size else 0.0,
             "mean": float(energy.mean()) if energy.size else 0.0}
    duration = n / scfg.sample_rate if n else 1.0
    report = RunReport(config=cfg.to_dict(samples.shape[0]),
                       frames_processed=n_frames,
                       floored_bin_fraction=0.0,
                       skip_counts={"prediction_update": skipped},
                       filter_energy_stats=stats,
                       realtime_factor=wall / duration,
                       stage_seconds=stage)
    return StreamResult(output=output, report=report, output_spec=out_spec,
                        filter_energy=energy,
                        floored_per_frame=np.zeros(n_frames),
                        worst_skip_fraction=skipped / attempts if attempts else 0.0)
