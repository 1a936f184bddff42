"""Loading, normalisation, windowing, and streaming of multivariate sensor signals.

Batch functions are pure; ``stream_windows`` is single-consumer (one reader
per source) but its output windows may be handed to another thread in FIFO
order.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "MultiChannelSeries",
    "ChannelStats",
    "WindowingConfig",
    "SignalWindow",
    "StreamFormatError",
    "compute_channel_stats",
    "normalize_series",
    "normalize_window",
    "normalize_windows",
    "segment_windows",
    "split_context_target",
    "stream_windows",
    "train_val_split",
    "stack_windows",
    "read_signal_csv",
    "write_signal_csv",
    "csv_sample_source",
    "socket_sample_source",
]

DEFAULT_EPSILON = 1e-8


@dataclass
class MultiChannelSeries:
    """A T x C matrix of raw measurements plus channel metadata."""

    samples: np.ndarray
    channel_names: list[str]
    sample_rate_hz: float

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (T, C), got shape {self.samples.shape}")
        t, c = self.samples.shape
        if t < 1 or c < 1:
            raise ValueError("series needs at least one sample and one channel")
        if len(self.channel_names) != c:
            raise ValueError(
                f"channel_names has {len(self.channel_names)} entries for {c} channels"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_channels(self) -> int:
        return self.samples.shape[1]


@dataclass
class ChannelStats:
    """Per-channel mean/std used for z-scoring, with a stability epsilon."""

    mean: np.ndarray
    std: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have matching length")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def num_channels(self) -> int:
        return self.mean.shape[0]


@dataclass
class WindowingConfig:
    """Window length W, context length S, and hop between window starts."""

    window_len: int
    context_len: int
    stride: int | None = None

    def __post_init__(self) -> None:
        if self.stride is None:
            self.stride = self.window_len  # consecutive windows by default
        if self.window_len < 1:
            raise ValueError("window_len must be positive")
        if not 0 < self.context_len < self.window_len:
            raise ValueError(
                f"context_len must satisfy 0 < S < W, got S={self.context_len} W={self.window_len}"
            )
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @property
    def target_len(self) -> int:
        return self.window_len - self.context_len


@dataclass
class SignalWindow:
    """One W x C slice of a series, remembering where it came from."""

    data: np.ndarray
    start_index: int = 0

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"window data must be 2-D (W, C), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("window contains non-finite values")

    @property
    def window_len(self) -> int:
        return self.data.shape[0]

    @property
    def num_channels(self) -> int:
        return self.data.shape[1]


class StreamFormatError(ValueError):
    """A malformed record was encountered while streaming samples."""

    def __init__(self, record_index: int, message: str):
        self.record_index = record_index
        super().__init__(f"record {record_index}: {message}")


def compute_channel_stats(
    series: "MultiChannelSeries | np.ndarray", epsilon: float = DEFAULT_EPSILON
) -> ChannelStats:
    """Column mean and population standard deviation (divide by T).

    Accepts either a series or a raw (T, C) sample matrix.
    """
    samples = series.samples if isinstance(series, MultiChannelSeries) else np.asarray(series)
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError("empty input")
    mean = samples.mean(axis=0)
    std = samples.std(axis=0)  # ddof=0: population std
    return ChannelStats(mean=mean, std=std, epsilon=epsilon)


def _check_channel_match(stats: ChannelStats, c: int) -> None:
    if stats.num_channels != c:
        raise ValueError(
            f"stats cover {stats.num_channels} channels but data has {c}"
        )


def normalize_series(series: MultiChannelSeries, stats: ChannelStats) -> MultiChannelSeries:
    """Channel-wise z-score: (x - mean) / (std + epsilon)."""
    _check_channel_match(stats, series.num_channels)
    out = (series.samples - stats.mean) / (stats.std + stats.epsilon)
    return MultiChannelSeries(
        samples=out,
        channel_names=list(series.channel_names),
        sample_rate_hz=series.sample_rate_hz,
    )


def normalize_window(window: SignalWindow, stats: ChannelStats) -> SignalWindow:
    """Apply the series normalisation to a single window."""
    _check_channel_match(stats, window.num_channels)
    out = (window.data - stats.mean) / (stats.std + stats.epsilon)
    return SignalWindow(data=out, start_index=window.start_index)


def normalize_windows(
    windows: Sequence[SignalWindow], stats: ChannelStats
) -> list[SignalWindow]:
    return [normalize_window(w, stats) for w in windows]


def segment_windows(series: MultiChannelSeries, cfg: WindowingConfig) -> list[SignalWindow]:
    """Cut the series into complete windows at offsets 0, stride, 2*stride, ...

    Returns an empty list when the series is shorter than one window.
    """
    t = series.num_samples
    w = cfg.window_len
    if t < w:
        return []
    starts = range(0, t - w + 1, cfg.stride)
    return [SignalWindow(data=series.samples[s : s + w], start_index=s) for s in starts]


def split_context_target(window: SignalWindow, context_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a window into (context, target) = (rows <= S, rows > S)."""
    w = window.window_len
    if not 0 < context_len < w:
        raise ValueError(f"context_len must satisfy 0 < S < W, got S={context_len} W={w}")
    return window.data[:context_len], window.data[context_len:]


def stack_windows(windows: Sequence[SignalWindow]) -> np.ndarray:
    """Concatenate window rows into one (n*W, C) matrix."""
    if not windows:
        raise ValueError("empty input")
    return np.concatenate([w.data for w in windows], axis=0)


def train_val_split(
    windows: Sequence[SignalWindow], val_fraction: float = 0.2, seed: int = 0
) -> tuple[list[SignalWindow], list[SignalWindow]]:
    """Seeded window-level random split; validation gets round(n * val_fraction)."""
    n = len(windows)
    if n < 2:
        raise ValueError("need at least two windows to split")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = min(n - 1, max(1, int(round(n * val_fraction))))
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [windows[i] for i in range(n) if i not in val_idx]
    val = [windows[i] for i in sorted(val_idx)]
    return train, val


def stream_windows(
    samples: Iterable[Sequence[float]],
    cfg: WindowingConfig,
    channel_count: int | None = None,
) -> Iterator[SignalWindow]:
    """Assemble windows from an ordered sample stream.

    Yields the same window sequence as :func:`segment_windows` on the fully
    loaded series, regardless of how the source chunks its samples. A
    trailing partial window is never emitted.

    Args:
        samples: iterable of per-sample rows, each with C values.
        cfg: windowing parameters; monitoring normally uses stride = W.
        channel_count: expected C; inferred from the first row when None.

    Raises:
        StreamFormatError: on a row with the wrong field count or a
            non-numeric value, reporting the offending record index.
    """
    w = cfg.window_len
    stride = cfg.stride
    buf: list[np.ndarray] = []
    start = 0
    drop = 0  # samples still to discard when stride > W
    expected = channel_count
    for index, row in enumerate(samples):
        try:
            vec = np.asarray(row, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise StreamFormatError(index, f"non-numeric value ({exc})") from None
        if vec.ndim != 1:
            raise StreamFormatError(index, f"expected a flat row, got shape {vec.shape}")
        if expected is None:
            expected = vec.shape[0]
        if vec.shape[0] != expected:
            raise StreamFormatError(
                index, f"expected {expected} fields, got {vec.shape[0]}"
            )
        if not np.all(np.isfinite(vec)):
            raise StreamFormatError(index, "non-finite value")
        if drop > 0:
            drop -= 1
            continue
        buf.append(vec)
        if len(buf) == w:
            yield SignalWindow(data=np.stack(buf), start_index=start)
            if stride >= w:
                buf = []
                drop = stride - w
            else:
                buf = buf[stride:]
            start += stride


def read_signal_csv(path: str, sample_rate_hz: float) -> MultiChannelSeries:
    """Read the signal CSV format: header of channel names, one sample per row."""
    names, rows = _read_csv_rows(path)
    if not rows:
        raise ValueError(f"{path}: no samples after header")
    return MultiChannelSeries(
        samples=np.asarray(rows, dtype=np.float64),
        channel_names=names,
        sample_rate_hz=sample_rate_hz,
    )


def write_signal_csv(series: MultiChannelSeries, path: str) -> None:
    """Write the signal CSV format with full round-trip float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(series.channel_names) + "\n")
        for row in series.samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_csv_rows(path: str) -> tuple[list[str], list[list[float]]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty file")
        names = [n.strip() for n in header.rstrip("\n").split(",")]
        rows = []
        for index, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != len(names):
                raise StreamFormatError(index, f"expected {len(names)} fields, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise StreamFormatError(index, f"non-numeric value ({exc})") from None
    return names, rows


def csv_sample_source(path: str) -> Iterator[np.ndarray]:
    """Replay a signal CSV file one sample row at a time (header skipped)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty file")
        n_fields = len(header.rstrip("\n").split(","))
        for index, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != n_fields:
                raise StreamFormatError(index, f"expected {n_fields} fields, got {len(fields)}")
            try:
                yield np.asarray([float(f) for f in fields], dtype=np.float64)
            except ValueError as exc:
                raise StreamFormatError(index, f"non-numeric value ({exc})") from None


def socket_sample_source(host: str, port: int) -> Iterator[np.ndarray]:
    """Connect to a line-oriented TCP feed: one sample per line, C floats each.

    The stream ends when the peer closes the connection.
    """
    with socket.create_connection((host, port)) as conn:
        with conn.makefile("r", encoding="utf-8") as fh:
            index = 0
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield np.asarray([float(f) for f in line.split(",")], dtype=np.float64)
                except ValueError as exc:
                    raise StreamFormatError(index, f"non-numeric value ({exc})") from None
                index += 1
