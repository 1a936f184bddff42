"""Deterministic synthetic rotating-machinery signals with ground-truth wear.

Each channel is a sum of sinusoidal harmonics plus gaussian noise. From the
degradation onset onwards, the first harmonic of the designated fault channel
grows linearly in amplitude and a sideband at 1.5x its frequency fades in, so
the signal drifts away from its healthy dynamics at a controlled rate.

The run is divided into equal pseudo ring cuts. Synthetic wear rises linearly
from 150 um towards 400 um over the post-onset span (constant 150 um when the
degradation rate is zero), which places the 300 um limit crossing inside the
degraded region.

Pure given a config; the same seed always yields byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import WearEntry, WearTable
from .signal_io import MultiChannelSeries, WindowingConfig

__all__ = [
    "Harmonic",
    "SynthConfig",
    "SynthRun",
    "default_harmonics",
    "generate_run",
]

WEAR_START_UM = 150.0
WEAR_END_UM = 400.0


@dataclass
class Harmonic:
    """One sinusoidal component of a channel."""

    frequency_hz: float
    amplitude: float
    phase: float = 0.0


def default_harmonics(channels: int) -> list[list[Harmonic]]:
    """A distinct small harmonic set per channel, all well below 500 Hz."""
    sets = []
    for c in range(channels):
        base = 30.0 + 17.0 * c
        sets.append(
            [
                Harmonic(frequency_hz=base, amplitude=1.0, phase=0.37 * c),
                Harmonic(frequency_hz=2.0 * base, amplitude=0.5, phase=1.1 + 0.2 * c),
                Harmonic(frequency_hz=3.3 * base, amplitude=0.25, phase=2.0),
            ]
        )
    return sets


@dataclass
class SynthConfig:
    """Generator settings; harmonics default per channel when omitted."""

    channels: int = 3
    sample_rate_hz: float = 1000.0
    duration_samples: int = 200_000
    harmonics: list[list[Harmonic]] | None = None
    noise_sigma: float = 0.1
    degradation_onset: int = 120_000
    degradation_rate: float = 0.0
    cuts: int = 40
    fault_channel: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.channels < 1 or self.duration_samples < 1:
            raise ValueError("channels and duration_samples must be >= 1")
        if not 0 <= self.degradation_onset <= self.duration_samples:
            raise ValueError("degradation_onset must lie within the run")
        if self.degradation_rate < 0:
            raise ValueError("degradation_rate must be >= 0")
        if self.cuts < 1:
            raise ValueError("cuts must be >= 1")
        if not 0 <= self.fault_channel < self.channels:
            raise ValueError("fault_channel out of range")
        if self.harmonics is not None and len(self.harmonics) != self.channels:
            raise ValueError("need one harmonic set per channel")


@dataclass
class SynthRun:
    """Generated series plus its ground truth."""

    series: MultiChannelSeries
    wear: WearTable
    window_cuts: list[int]  # cut id per window, aligned with window order


def _wear_curve(cfg: SynthConfig, cut_mid_samples: np.ndarray) -> np.ndarray:
    """Linear 150 -> 400 um over the post-onset span; constant when rate = 0."""
    if cfg.degradation_rate == 0.0 or cfg.degradation_onset >= cfg.duration_samples:
        return np.full(len(cut_mid_samples), WEAR_START_UM)
    progress = (cut_mid_samples - cfg.degradation_onset) / (
        cfg.duration_samples - cfg.degradation_onset
    )
    progress = np.clip(progress, 0.0, 1.0)
    return WEAR_START_UM + (WEAR_END_UM - WEAR_START_UM) * progress


def generate_run(cfg: SynthConfig, windowing: WindowingConfig) -> SynthRun:
    """Generate the signal, segment it into windows, and attach wear per cut.

    Cuts split the sample axis into equal spans; a window belongs to the cut
    containing its midpoint sample. Window indices in the wear table are
    1-based to match monitoring records.
    """
    t = np.arange(cfg.duration_samples, dtype=np.float64) / cfg.sample_rate_hz
    harmonic_sets = cfg.harmonics if cfg.harmonics is not None else default_harmonics(cfg.channels)

    rng = np.random.default_rng(cfg.seed)
    data = rng.normal(0.0, cfg.noise_sigma, size=(cfg.duration_samples, cfg.channels))

    # (t - onset)+ in samples, the linear degradation driver
    after = np.maximum(np.arange(cfg.duration_samples, dtype=np.float64) - cfg.degradation_onset, 0.0)
    growth = cfg.degradation_rate * after

    for c, hset in enumerate(harmonic_sets):
        for j, h in enumerate(hset):
            amp = np.full(cfg.duration_samples, h.amplitude)
            if c == cfg.fault_channel and j == 0:
                amp = h.amplitude * (1.0 + growth)
            data[:, c] += amp * np.sin(2.0 * np.pi * h.frequency_hz * t + h.phase)
        if c == cfg.fault_channel and hset:
            f0, a0 = hset[0].frequency_hz, hset[0].amplitude
            data[:, c] += (a0 * growth) * np.sin(2.0 * np.pi * 1.5 * f0 * t)

    series = MultiChannelSeries(
        samples=data,
        channel_names=[f"ch{c}" for c in range(cfg.channels)],
        sample_rate_hz=cfg.sample_rate_hz,
    )

    # window midpoints decide cut membership
    w, stride = windowing.window_len, windowing.stride
    offsets = list(range(0, cfg.duration_samples - w + 1, stride))
    span = cfg.duration_samples / cfg.cuts
    window_cuts = []
    for off in offsets:
        mid = off + w // 2
        window_cuts.append(min(cfg.cuts - 1, int(mid / span)) + 1)  # 1-based cut ids

    cut_mids = np.array([(j + 0.5) * span for j in range(cfg.cuts)])
    wear_values = _wear_curve(cfg, cut_mids)

    entries = []
    for j in range(cfg.cuts):
        cut_id = j + 1
        members = [i + 1 for i, c in enumerate(window_cuts) if c == cut_id]
        if not members:
            continue  # degenerate config: more cuts than windows
        entries.append(
            WearEntry(
                cut_id=cut_id,
                wear_um=float(wear_values[j]),
                first_window=members[0],
                last_window=members[-1],
            )
        )
    return SynthRun(series=series, wear=WearTable(entries=entries), window_cuts=window_cuts)
