"""Online condition monitoring: WLF scoring, health index, alarms, calibration.

Each incoming window is scored by the deployed model's token cross-entropy
(the window-level fit, WLF). The first buffer_len windows form a baseline;
afterwards the health index is

    hi(k) = wlf(k) - mean(wlf(1..buffer_len))

and an alarm fires strictly when hi > threshold. HI is absent (None), not
zero, while the baseline accumulates, so downstream metrics can skip those
windows.

One tracker per stream, single writer. Model parameters are read-only here,
so many streams may share one checkpoint.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .model import Checkpoint, forward_batch, load_checkpoint
from .sequence import build_mcps
from .signal_io import SignalWindow, normalize_window, split_context_target
from .tokenizer import CodebookSet, codebook_file_hash, load_codebooks, tokenize_window
from .train import window_loss

__all__ = [
    "MonitorConfig",
    "HealthRecord",
    "BaselineBuffer",
    "HealthTracker",
    "DeployedModel",
    "ThresholdCalibration",
    "score_window",
    "monitor_stream",
    "calibrate_threshold",
    "write_health_csv",
    "read_health_csv",
    "format_alarm_line",
]


@dataclass
class MonitorConfig:
    """Baseline length and alarm threshold."""

    buffer_len: int = 20000
    threshold: float = 0.20

    def __post_init__(self) -> None:
        if self.buffer_len < 1:
            raise ValueError("buffer_len must be >= 1")


@dataclass
class HealthRecord:
    """Outcome for one monitored window; window_index is 1-based."""

    window_index: int
    wlf: float
    hi: float | None
    alarm: bool

    def __post_init__(self) -> None:
        if self.alarm and self.hi is None:
            raise ValueError("alarm requires a defined health index")


@dataclass
class BaselineBuffer:
    """The first buffer_len WLF values; the baseline is their mean."""

    capacity: int
    values: list[float] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return len(self.values) >= self.capacity

    @property
    def mean(self) -> float:
        if not self.values:
            raise ValueError("empty input")
        return float(np.mean(self.values))

    def add(self, wlf: float) -> None:
        if self.complete:
            raise ValueError("baseline buffer already full")
        self.values.append(float(wlf))


class HealthTracker(object):
    """Stateful per-stream HI computation. Feed WLF values in arrival order."""

    def __init__(self, cfg: MonitorConfig) -> None:
        self.cfg = cfg
        self.buffer = BaselineBuffer(capacity=cfg.buffer_len)
        self._baseline: float | None = None
        self._count = 0

    @property
    def window_count(self) -> int:
        return self._count

    @property
    def baseline(self) -> float | None:
        return self._baseline

    def update(self, wlf: float) -> HealthRecord:
        self._count += 1
        if not self.buffer.complete:
            self.buffer.add(wlf)
            if self.buffer.complete:
                self._baseline = self.buffer.mean
            return HealthRecord(window_index=self._count, wlf=float(wlf), hi=None, alarm=False)
        hi = float(wlf) - self._baseline
        return HealthRecord(
            window_index=self._count,
            wlf=float(wlf),
            hi=hi,
            alarm=hi > self.cfg.threshold,
        )


@dataclass
class DeployedModel:
    """A trained checkpoint plus the codebooks it was trained against."""

    checkpoint: Checkpoint
    codebooks: CodebookSet

    def __post_init__(self) -> None:
        cfg = self.checkpoint.config
        if self.codebooks.K != cfg.num_tokens or self.codebooks.num_channels != cfg.num_channels:
            raise ValueError("codebooks are incompatible with the checkpoint configuration")

    @classmethod
    def from_files(
        cls, checkpoint_path: str, codebooks_path: str, verify_hash: bool = True
    ) -> "DeployedModel":
        ckpt = load_checkpoint(checkpoint_path)
        if verify_hash and ckpt.codebook_hash:
            actual = codebook_file_hash(codebooks_path)
            if actual != ckpt.codebook_hash:
                raise ValueError(
                    f"{codebooks_path}: codebooks file does not match the checkpoint "
                    f"(hash {actual[:12]}.. != {ckpt.codebook_hash[:12]}..)"
                )
        return cls(checkpoint=ckpt, codebooks=load_codebooks(codebooks_path))


def score_window(window: SignalWindow, deployed: DeployedModel) -> float:
    """WLF for one raw window: normalise with the stored training stats, split,
    flatten, predict, and take the cross-entropy of the true target tokens."""
    ckpt = deployed.checkpoint
    if window.num_channels != len(ckpt.channel_names):
        raise ValueError(
            f"window has {window.num_channels} channels; model expects {len(ckpt.channel_names)}"
        )
    if window.window_len != ckpt.window_len:
        raise ValueError(
            f"window length {window.window_len} differs from training configuration "
            f"({ckpt.window_len})"
        )
    norm = normalize_window(window, ckpt.stats)
    context, target = split_context_target(norm, ckpt.context_len)
    ps = build_mcps(context, ckpt.config.patch_len)
    dists, _ = forward_batch(ps.rows[None, :, :], ckpt.params, ckpt.config)
    tokens = tokenize_window(target, deployed.codebooks)
    return window_loss(dists[0], tokens)


def monitor_stream(
    deployed: DeployedModel,
    windows: Iterable[SignalWindow],
    cfg: MonitorConfig,
) -> Iterator[HealthRecord]:
    """Score windows in arrival order and yield one HealthRecord each.

    Strictly causal: the record for window k depends only on windows <= k.
    """
    tracker = HealthTracker(cfg)
    for window in windows:
        yield tracker.update(score_window(window, deployed))


@dataclass
class ThresholdCalibration:
    """Calibrated threshold and the cut it was read from."""

    tau: float
    cut_id: int
    wear_um: float


def calibrate_threshold(
    hi_by_cut: Mapping[int, Sequence[float | None]],
    wear_by_cut: Mapping[int, float],
    wear_limit_um: float = 300.0,
) -> ThresholdCalibration:
    """Pick the cut whose wear is closest to the limit (ties: earliest cut) and
    return the mean HI over that cut's windows as the threshold.

    Cuts without any defined HI are not eligible.
    """
    if not wear_by_cut:
        raise ValueError("empty input")
    candidates: list[tuple[float, int, float]] = []
    for cut_id in sorted(wear_by_cut):
        series = [h for h in hi_by_cut.get(cut_id, []) if h is not None]
        if not series:
            continue
        wear = float(wear_by_cut[cut_id])
        candidates.append((abs(wear - wear_limit_um), cut_id, float(np.mean(series))))
    if not candidates:
        raise ValueError("no cut with a defined health index")
    gap, cut_id, tau = min(candidates, key=lambda item: (item[0], item[1]))
    return ThresholdCalibration(tau=tau, cut_id=cut_id, wear_um=float(wear_by_cut[cut_id]))


def write_health_csv(
    records: Sequence[HealthRecord],
    path: str,
    cut_ids: Sequence[int | None] | None = None,
    ma_window: int | None = None,
) -> None:
    """window_index,wlf,hi,alarm rows; hi is empty during the baseline buffer.

    cut_ids, when given, must align with records and adds a cut_id column
    (None entries render empty). ma_window adds a trailing moving average of
    the defined HI values (hi_ma) for plotting; it never affects alarms.
    """
    if cut_ids is not None and len(cut_ids) != len(records):
        raise ValueError("cut_ids must align one-to-one with records")
    if ma_window is not None and ma_window < 1:
        raise ValueError("ma_window must be >= 1")
    header = ["window_index", "wlf", "hi", "alarm"]
    if cut_ids is not None:
        header.append("cut_id")
    if ma_window is not None:
        header.append("hi_ma")
    recent: deque[float] = deque(maxlen=ma_window or 1)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i, rec in enumerate(records):
            row = [
                str(rec.window_index),
                repr(rec.wlf),
                "" if rec.hi is None else repr(rec.hi),
                "1" if rec.alarm else "0",
            ]
            if cut_ids is not None:
                row.append("" if cut_ids[i] is None else str(cut_ids[i]))
            if ma_window is not None:
                if rec.hi is None:
                    row.append("")
                else:
                    recent.append(rec.hi)
                    row.append(repr(float(np.mean(recent))))
            fh.write(",".join(row) + "\n")


def read_health_csv(path: str) -> tuple[list[HealthRecord], list[int | None] | None]:
    """Parse a health CSV back into records plus the cut_id column if present."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    required = ["window_index", "wlf", "hi", "alarm"]
    if header[: len(required)] != required:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    cut_col = header.index("cut_id") if "cut_id" in header else None
    records: list[HealthRecord] = []
    cuts: list[int | None] = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(header):
            raise ValueError(f"{path}: bad row {ln!r}")
        records.append(
            HealthRecord(
                window_index=int(parts[0]),
                wlf=float(parts[1]),
                hi=None if parts[2] == "" else float(parts[2]),
                alarm=parts[3] == "1",
            )
        )
        if cut_col is not None:
            cuts.append(None if parts[cut_col] == "" else int(parts[cut_col]))
    return records, (cuts if cut_col is not None else None)


def format_alarm_line(record: HealthRecord, tau: float) -> str:
    """The log line emitted once per alarmed window."""
    if not record.alarm or record.hi is None:
        raise ValueError("record is not an alarm")
    return f"ALARM window={record.window_index} hi={record.hi!r} tau={tau!r}"
