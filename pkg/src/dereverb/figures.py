"""Matplotlib rendering for the CLI report paths (file output only)."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .stft import StftConfig, analyze


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def write_csv(path, header, rows) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def spectrogram_figure(path, signals: dict, cfg: StftConfig,
                       floor_db: float = -80.0) -> None:
    """Stacked log-magnitude spectrograms of named signals."""
    plt = _plt()
    names = list(signals)
    fig, axes = plt.subplots(len(names), 1, figsize=(8, 2.4 * len(names)),
                             sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        mag = np.abs(analyze(np.asarray(signals[name], dtype=np.float64), cfg))
        peak = mag.max() if mag.size else 1.0
        level = 20.0 * np.log10(np.maximum(mag, 10 ** (floor_db / 20) * max(peak, 1e-30)))
        extent = (0.0, mag.shape[0] * cfg.hop / cfg.sample_rate,
                  0.0, cfg.sample_rate / 2000.0)
        im = ax.imshow(level.T, origin="lower", aspect="auto", extent=extent,
                       cmap="magma")
        ax.set_ylabel("kHz")
        ax.set_title(name, fontsize=9)
        fig.colorbar(im, ax=ax, pad=0.01, label="dB")
    axes[-1, 0].set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def timeline_figure(path, times, series: dict, ylabel: str,
                    title: str = "") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 3))
    for label, values in series.items():
        ax.plot(times[: len(values)], values, label=label, linewidth=1.0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def stage_bar_figure(path, stage_seconds: dict, title: str = "") -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3))
    names = list(stage_seconds)
    ax.bar(names, [stage_seconds[k] for k in names], color="steelblue")
    ax.set_ylabel("seconds")
    if title:
        ax.set_title(title, fontsize=10)
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
