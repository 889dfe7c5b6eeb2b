"""Synthetic scene generation for oracle tests and end-to-end evaluation.

Three scene families with increasing realism:

* ``ctf-exact``: microphone spectra are frame-domain convolutions of the
  source spectra with sparse (decimated-tap) complex filters, so the
  cross-relation identification model holds to machine precision.
* ``magnitude-exact``: filters and spectra are real and nonnegative, so
  the magnitude convolution model *and* the cross-relation both hold
  exactly; the natural oracle for the inverse-filtering stage.
* ``time-domain``: exponentially decaying noise RIRs convolved with the
  source; satisfies neither subband model exactly and is used only for
  relative-improvement comparisons.

The test source is amplitude-modulated filtered noise with a speech-like
4 Hz energy modulation; a stationary source would leave the magnitude
model uninformative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .stft import StftConfig, analyze, synthesize
from . import wavio

MODES = ("ctf-exact", "magnitude-exact", "time-domain")
TRAJECTORIES = ("static", "linear-interp")


@dataclass
class ScenarioSpec:
    """Declarative description of a synthetic scene."""

    channels: int = 2
    mode: str = "ctf-exact"
    ctf_taps_critical: int = 4
    decay_taps: float = 2.0          # envelope time constant, in decimated taps
    t60: float = 0.7                 # time-domain mode only, seconds
    duration_s: float = 10.0
    sample_rate: int = 16000
    trajectory: str = "static"
    move_start_frame: int = 300
    move_end_frame: int = 400
    snr_db: float | None = None
    direct_delay_ms: float = 4.0     # time-domain mode: propagation delay, channel 0
    drr_db: float = 2.0              # time-domain mode: direct-to-reverberation ratio

    def __post_init__(self):
        if self.channels < 2:
            raise ValueError("scenes need at least two channels")
        if self.mode not in MODES:
            raise ValueError(f"unknown scene mode: {self.mode!r}")
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"unknown trajectory: {self.trajectory!r}")
        if self.decay_taps <= 0 or self.t60 <= 0:
            raise ValueError("decay constants must be positive")
        if self.trajectory == "linear-interp" and \
                self.move_start_frame >= self.move_end_frame:
            raise ValueError("move_start_frame must precede move_end_frame")

    def save(self, path):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            lines.append(f"{f.name}={value}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown scenario key {key!r}")
            kwargs[key] = _coerce(value, known[key].type)
        return cls(**kwargs)


def _coerce(text: str, type_hint: str):
    if text.lower() in ("none", ""):
        return None
    hint = str(type_hint)
    if "int" in hint:
        return int(text)
    if "float" in hint:
        return float(text)
    return text


def speechlike_source(duration_s: float, sample_rate: int, seed: int,
                      mod_hz: float = 4.0) -> np.ndarray:
    """Amplitude-modulated filtered noise, peak-normalized to 0.9."""
    rng = np.random.default_rng(seed)
    n = round(duration_s * sample_rate)
    noise = rng.standard_normal(n)
    # Mild low-pass tilt plus a white floor keeps every bin excited.
    shaped = lfilter([1.0], [1.0, -0.6], noise) + 0.2 * noise
    t = np.arange(n) / sample_rate
    envelope = 0.25 + 0.75 * 0.5 * (1.0 - np.cos(2.0 * np.pi * mod_hz * t))
    x = shaped * envelope
    return 0.9 * x / np.max(np.abs(x))


def gen_ctf(n_bins: int, channels: int, taps: int, decay_taps: float,
            seed: int) -> np.ndarray:
    """Random complex decimated filters with exponentially decaying taps.

    Tap q is circular complex Gaussian with amplitude envelope
    exp(-q / decay_taps), so the first tap dominates in expectation and the
    expected tap-energy ratio between consecutive taps is
    exp(-2 / decay_taps). Deterministic under ``seed``.
    """
    rng = np.random.default_rng(seed)
    shape = (n_bins, channels, taps)
    draws = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return draws * np.exp(-np.arange(taps) / decay_taps)


def normalize_first_taps(ctfs: np.ndarray) -> np.ndarray:
    """Scale each bin so the first taps sum to one across channels.

    Matches the identification constraint, so a normalized scene's
    first-tap reference is the source itself.
    """
    total = ctfs[..., :, 0].sum(axis=-1)
    if np.any(np.abs(total) < 1e-12):
        raise ValueError("first taps sum to zero in at least one bin")
    return ctfs / total[..., None, None]


def synth_ctf_exact(source_spec: np.ndarray, ctfs: np.ndarray,
                    decimation: int) -> np.ndarray:
    """Frame-domain convolution x_i[p] = sum_q s[p - q*decimation] a_i[q].

    ``source_spec`` is (bins, frames); ``ctfs`` is (bins, channels, taps)
    or (frames, bins, channels, taps) for a per-frame schedule. History
    before frame 0 is zero. Returns (channels, frames, bins) to match the
    analyzer layout.
    """
    source_spec = np.asarray(source_spec)
    n_bins, n_frames = source_spec.shape
    moving = ctfs.ndim == 4
    taps = ctfs.shape[-1]
    channels = ctfs.shape[-2]
    out = np.zeros((channels, n_frames, n_bins), dtype=source_spec.dtype)
    for q in range(taps):
        shift = q * decimation
        if shift >= n_frames:
            break
        src = source_spec[:, : n_frames - shift]          # (bins, frames-shift)
        if moving:
            w = ctfs[shift:, :, :, q]                     # (frames-shift, bins, channels)
            out[:, shift:, :] += np.transpose(w, (2, 0, 1)) * src.T
        else:
            w = ctfs[:, :, q]                             # (bins, channels)
            out[:, shift:, :] += w.T[:, None, :] * src.T[None, :, :]
    return out


def synth_magnitude_exact(source_mag: np.ndarray, ctf_mags: np.ndarray,
                          decimation: int) -> np.ndarray:
    """Nonnegative magnitude convolution, same layout as synth_ctf_exact."""
    source_mag = np.asarray(source_mag, dtype=np.float64)
    ctf_mags = np.asarray(ctf_mags, dtype=np.float64)
    if np.any(source_mag < 0) or np.any(ctf_mags < 0):
        raise ValueError("magnitude model inputs must be nonnegative")
    return synth_ctf_exact(source_mag, ctf_mags, decimation).real


def gen_rir(t60: float, sample_rate: int, length: int, direct_delay: int,
            seed: int, drr_db: float | None = None) -> np.ndarray:
    """Exponentially decaying white-noise room impulse response.

    The amplitude envelope reaches -60 dB at t60 seconds after the direct
    path; ``direct_delay`` leading zeros model propagation delay. With
    ``drr_db`` set, a unit direct-path impulse is placed at the delay and
    the diffuse tail is scaled to the requested direct-to-reverberation
    energy ratio; otherwise the response is the bare tail.
    """
    if t60 <= 0:
        raise ValueError("t60 must be positive")
    rng = np.random.default_rng(seed)
    rir = np.zeros(length)
    tail = length - direct_delay
    t = np.arange(tail) / sample_rate
    envelope = np.exp(-np.log(1000.0) * t / t60)
    rir[direct_delay:] = envelope * rng.standard_normal(tail)
    if drr_db is not None:
        rir[direct_delay + 1 :] *= np.sqrt(
            1.0 / (np.sum(rir[direct_delay + 1 :] ** 2) * 10.0 ** (drr_db / 10.0)))
        rir[direct_delay] = 1.0
    return rir


def time_domain_convolve(signal: np.ndarray, rir: np.ndarray) -> np.ndarray:
    """Exact linear convolution truncated to the signal length."""
    return fftconvolve(np.asarray(signal, dtype=np.float64), rir)[: len(signal)]


def make_moving(ctfs_start: np.ndarray, ctfs_end: np.ndarray,
                p_start: int, p_end: int, n_frames: int) -> np.ndarray:
    """Per-frame filter schedule, linear per-tap interpolation in [p_start, p_end]."""
    if p_start >= p_end:
        raise ValueError("p_start must precede p_end")
    ramp = np.clip((np.arange(n_frames) - p_start) / (p_end - p_start), 0.0, 1.0)
    ramp = ramp.reshape((n_frames,) + (1,) * ctfs_start.ndim)
    return (1.0 - ramp) * ctfs_start + ramp * ctfs_end


def add_noise(signals: np.ndarray, snr_db: float | None, seed: int) -> np.ndarray:
    """Add white noise at an exact signal-to-noise power ratio.

    Works for real samples and complex spectra (circular complex noise).
    The noise realization is rescaled so the measured ratio equals the
    request; ``snr_db`` of None or +inf passes the input through.
    """
    signals = np.asarray(signals)
    if snr_db is None or np.isinf(snr_db):
        return signals.copy()
    power = np.mean(np.abs(signals) ** 2)
    if power <= 0.0:
        raise ValueError("cannot set an SNR on an all-zero signal")
    rng = np.random.default_rng(seed)
    if np.iscomplexobj(signals):
        noise = rng.standard_normal(signals.shape) + 1j * rng.standard_normal(signals.shape)
    else:
        noise = rng.standard_normal(signals.shape)
    noise_power = np.mean(np.abs(noise) ** 2)
    target = power / 10.0 ** (snr_db / 10.0)
    return signals + noise * np.sqrt(target / noise_power)


@dataclass
class Scene:
    """A generated scene plus everything needed to score results against it."""

    spec: ScenarioSpec
    stft: StftConfig
    seed: int
    source: np.ndarray                 # (n,) clean source samples
    mics: np.ndarray                   # (channels, n) microphone samples
    reference: np.ndarray              # (n,) first-tap-filtered source samples
    mic_spec: np.ndarray | None = None     # (channels, frames, bins), model-exact modes
    source_spec: np.ndarray | None = None  # (bins, frames)
    ctfs: np.ndarray | None = None         # (bins, channels, taps) start filters
    ctfs_end: np.ndarray | None = None     # moving scenes
    rirs: np.ndarray | None = None         # (channels, rir_len), time-domain mode

    @property
    def sample_rate(self) -> int:
        return self.stft.sample_rate

    def ctf_schedule(self, n_frames: int) -> np.ndarray:
        """(frames, bins, channels, taps) filter truth, constant if static."""
        if self.ctfs is None:
            raise ValueError("scene has no subband filter ground truth")
        if self.spec.trajectory == "static" or self.ctfs_end is None:
            return np.broadcast_to(self.ctfs, (n_frames,) + self.ctfs.shape)
        return make_moving(self.ctfs, self.ctfs_end,
                           self.spec.move_start_frame, self.spec.move_end_frame,
                           n_frames)


def build_scene(spec: ScenarioSpec, stft_cfg: StftConfig | None = None,
                seed: int = 0) -> Scene:
    """Generate a scene per the spec; deterministic under ``seed``."""
    cfg = stft_cfg or StftConfig(sample_rate=spec.sample_rate)
    source = speechlike_source(spec.duration_s, cfg.sample_rate, seed)
    if spec.mode == "time-domain":
        return _build_time_domain(spec, cfg, seed, source)
    return _build_model_exact(spec, cfg, seed, source)


def _build_model_exact(spec: ScenarioSpec, cfg: StftConfig, seed: int,
                       source: np.ndarray) -> Scene:
    n_bins = cfg.n_bins
    taps = spec.ctf_taps_critical
    src_spec = analyze(source, cfg).T                      # (bins, frames)
    n_frames = src_spec.shape[1]

    ctfs = gen_ctf(n_bins, spec.channels, taps, spec.decay_taps, seed + 1)
    if spec.mode == "magnitude-exact":
        ctfs = np.abs(ctfs)
    ctfs = normalize_first_taps(ctfs)

    ctfs_end = None
    if spec.trajectory == "linear-interp":
        ctfs_end = gen_ctf(n_bins, spec.channels, taps, spec.decay_taps, seed + 2)
        if spec.mode == "magnitude-exact":
            ctfs_end = np.abs(ctfs_end)
        ctfs_end = normalize_first_taps(ctfs_end)
        schedule = make_moving(ctfs, ctfs_end, spec.move_start_frame,
                               spec.move_end_frame, n_frames)
        filters = schedule
    else:
        filters = ctfs

    if spec.mode == "magnitude-exact":
        mic_spec = synth_magnitude_exact(np.abs(src_spec), filters, cfg.decimation)
        mic_spec = mic_spec.astype(np.complex128)
        ref_spec = np.abs(src_spec).T                      # first taps sum to 1
    else:
        mic_spec = synth_ctf_exact(src_spec, filters, cfg.decimation)
        # First-tap semantics: reference carries channel 0's first tap.
        if filters.ndim == 4:
            first_tap = filters[:, :, 0, 0]                # (frames, bins)
            ref_spec = src_spec.T * first_tap
        else:
            ref_spec = src_spec.T * filters[:, 0, 0]

    if spec.snr_db is not None:
        mic_spec = add_noise(mic_spec, spec.snr_db, seed + 3)

    mics = np.stack([synthesize(mic_spec[i], cfg, length=len(source))
                     for i in range(spec.channels)])
    reference = synthesize(np.asarray(ref_spec, dtype=np.complex128), cfg,
                           length=len(source))
    return Scene(spec=spec, stft=cfg, seed=seed, source=source, mics=mics,
                 reference=reference, mic_spec=mic_spec, source_spec=src_spec,
                 ctfs=ctfs, ctfs_end=ctfs_end)


def _build_time_domain(spec: ScenarioSpec, cfg: StftConfig, seed: int,
                       source: np.ndarray) -> Scene:
    fs = cfg.sample_rate
    rir_len = int(round(1.1 * spec.t60 * fs))
    base_delay = int(round(spec.direct_delay_ms * fs / 1000.0))
    rng = np.random.default_rng(seed + 10)
    rirs = []
    for i in range(spec.channels):
        # Small per-channel delay jitter mimics array geometry.
        delay = base_delay + (0 if i == 0 else int(rng.integers(0, 16)))
        rirs.append(gen_rir(spec.t60, fs, rir_len, delay, seed + 20 + i,
                            drr_db=spec.drr_db))
    rirs = np.stack(rirs)
    mics = np.stack([time_domain_convolve(source, rir) for rir in rirs])
    if spec.snr_db is not None:
        mics = add_noise(mics, spec.snr_db, seed + 3)
    # First-tap semantics: early RIR segment (one analysis frame) of channel 0.
    early = rirs[0][: cfg.frame_len]
    reference = time_domain_convolve(source, early)
    return Scene(spec=spec, stft=cfg, seed=seed, source=source, mics=mics,
                 reference=reference, rirs=rirs)


def save_scene(scene: Scene, out_dir) -> Path:
    """Write WAVs plus a JSON ground-truth sidecar and the scenario file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fs = scene.sample_rate
    wavio.write_wav(out / "mics.wav", fs, scene.mics.T)
    wavio.write_wav(out / "source.wav", fs, scene.source)
    wavio.write_wav(out / "reference.wav", fs, scene.reference)
    scene.spec.save(out / "scenario.spec")

    truth = {
        "mode": scene.spec.mode,
        "channels": scene.spec.channels,
        "sample_rate": fs,
        "seed": scene.seed,
        "stft": {"frame_len": scene.stft.frame_len, "hop": scene.stft.hop,
                 "window": scene.stft.window},
        "trajectory": {"kind": scene.spec.trajectory,
                       "start_frame": scene.spec.move_start_frame,
                       "end_frame": scene.spec.move_end_frame},
        "snr_db": scene.spec.snr_db,
        "files": {"mics": "mics.wav", "source": "source.wav",
                  "reference": "reference.wav"},
    }
    if scene.ctfs is not None:
        truth["ctf_taps_critical"] = scene.ctfs.shape[-1]
        truth["ctfs"] = _complex_to_json(scene.ctfs)
        if scene.ctfs_end is not None:
            truth["ctfs_end"] = _complex_to_json(scene.ctfs_end)
    if scene.rirs is not None:
        truth["rirs"] = scene.rirs.tolist()
    (out / "ground_truth.json").write_text(json.dumps(truth) + "\n")
    return out


def load_scene(scene_dir) -> Scene:
    """Load a saved scene; spectra are re-derived only on demand by callers."""
    path = Path(scene_dir)
    sidecar = path / "ground_truth.json"
    if not sidecar.exists():
        raise FileNotFoundError(f"missing ground-truth sidecar: {sidecar}")
    truth = json.loads(sidecar.read_text())
    spec = ScenarioSpec.load(path / "scenario.spec")
    cfg = StftConfig(frame_len=truth["stft"]["frame_len"],
                     hop=truth["stft"]["hop"],
                     sample_rate=truth["sample_rate"],
                     window=truth["stft"]["window"])
    fs, mics = wavio.read_wav(path / truth["files"]["mics"])
    _, source = wavio.read_wav(path / truth["files"]["source"])
    _, reference = wavio.read_wav(path / truth["files"]["reference"])
    ctfs = _complex_from_json(truth["ctfs"]) if "ctfs" in truth else None
    ctfs_end = _complex_from_json(truth["ctfs_end"]) if "ctfs_end" in truth else None
    rirs = np.asarray(truth["rirs"]) if "rirs" in truth else None
    return Scene(spec=spec, stft=cfg, seed=truth.get("seed", 0),
                 source=np.atleast_2d(source.T)[0], mics=mics.T,
                 reference=np.atleast_2d(reference.T)[0],
                 ctfs=ctfs, ctfs_end=ctfs_end, rirs=rirs)


def _complex_to_json(arr: np.ndarray):
    return {"real": arr.real.tolist(), "imag": arr.imag.tolist()}


def _complex_from_json(obj) -> np.ndarray:
    return np.asarray(obj["real"]) + 1j * np.asarray(obj["imag"])
