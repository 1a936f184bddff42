"""Command-line pipeline driver.

Subcommands cover the whole workflow: synth, fit-codebooks, pretrain, train,
monitor, calibrate, eval. Behaviour is controlled by one JSON config document
with a section per concern; any scalar can be overridden with repeatable
--set section.key=value flags. Outputs land under --out with fixed names
(signal.csv, wear.csv, codebooks.json, checkpoint.lorm, train_report.csv,
hi.csv, metrics.json).

Relative paths in the config resolve against --out, so chained commands in
one directory find each other's outputs. A signal source of the form
tcp://host:port streams samples from a socket instead of a file (monitor
only).

Exit codes: 0 success, 2 for usage or configuration problems (the diagnostic
names the offending field), 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evaluation import (
    WearTable,
    compute_metrics,
    detection_deviation,
    format_metrics_table,
    label_windows,
    write_metrics_json,
)
from .model import (
    BackboneConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .monitor import (
    DeployedModel,
    MonitorConfig,
    calibrate_threshold,
    format_alarm_line,
    monitor_stream,
    read_health_csv,
    write_health_csv,
)
from .sequence import num_patches
from .signal_io import (
    MultiChannelSeries,
    WindowingConfig,
    compute_channel_stats,
    csv_sample_source,
    normalize_window,
    read_signal_csv,
    segment_windows,
    socket_sample_source,
    split_context_target,
    stack_windows,
    stream_windows,
    train_val_split,
    write_signal_csv,
)
from .synth import SynthConfig, generate_run
from .tokenizer import (
    codebook_file_hash,
    fit_codebook_set,
    load_codebooks,
    save_codebooks,
)
from .train import (
    TrainConfig,
    build_examples,
    train_model,
    write_train_report_csv,
)

__all__ = ["ConfigError", "default_config", "load_run_config", "main"]


class ConfigError(ValueError):
    """Configuration or usage problem; maps to exit code 2."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "windowing": {"window_len": 321, "context_len": 320, "stride": 321},
    "patch": {"patch_len": 16},
    "tokenizer": {"num_tokens": 10},
    "model": {
        "hidden_dim": 64,
        "num_layers": 2,
        "num_heads": 4,
        "ffn_dim": 256,
        "attention_mode": "causal",
    },
    "train": {
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "epsilon": 1e-8,
        "batch_size": 32,
        "max_epochs": 100,
        "patience": 10,
        "val_fraction": 0.2,
    },
    "monitor": {"buffer_len": 20000, "threshold": 0.2, "ma_window": None},
    "synth": {
        "channels": 3,
        "sample_rate_hz": 1000.0,
        "duration_samples": 200_000,
        "noise_sigma": 0.1,
        "degradation_onset": 120_000,
        "degradation_rate": 0.0,
        "cuts": 40,
        "fault_channel": 0,
    },
    "eval": {"wear_limit_um": 300.0},
    "paths": {
        "signal": "signal.csv",
        "pretrain_signal": "",
        "wear": "wear.csv",
        "codebooks": "codebooks.json",
        "checkpoint": "checkpoint.lorm",
        "init_checkpoint": "",
        "hi": "hi.csv",
    },
}


def default_config() -> dict:
    return json.loads(json.dumps(DEFAULT_CONFIG))


@dataclass
class RunConfig:
    """Validated settings for one invocation."""

    raw: dict
    seed: int
    out_dir: str
    windowing: WindowingConfig
    patch_len: int
    num_tokens: int
    train: TrainConfig
    val_fraction: float
    monitor: MonitorConfig
    ma_window: int | None
    synth: SynthConfig
    wear_limit_um: float
    paths: dict[str, str]

    def resolve(self, key: str) -> str:
        """Path for a config entry: relative names live under the out dir."""
        value = self.paths.get(key, "")
        if not value:
            raise ConfigError(f"paths.{key} is required for this command")
        if value.startswith("tcp://") or os.path.isabs(value):
            return value
        return os.path.join(self.out_dir, value)

    def out_path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)


def _merge(base: dict, extra: dict, prefix: str = "") -> None:
    for key, value in extra.items():
        where = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            _merge(base[key], value, prefix=f"{where}.")
        else:
            base[key] = value


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects section.key=value, got {assignment!r}")
    dotted, value = assignment.split("=", 1)
    parts = dotted.strip().split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"{dotted} is a section, not a scalar")
    node[leaf] = _parse_scalar(value)


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, optional config file, --set overrides, and --seed, then
    validate every section eagerly so bad values fail before any work."""
    config = default_config()
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        _merge(config, user)
    for assignment in args.set or []:
        _apply_set(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed

    try:
        seed = int(config["seed"])
        windowing = WindowingConfig(**config["windowing"])
        patch_len = int(config["patch"]["patch_len"])
        if patch_len < 1:
            raise ValueError("patch.patch_len must be >= 1")
        num_tokens = int(config["tokenizer"]["num_tokens"])
        if num_tokens < 1:
            raise ValueError("tokenizer.num_tokens must be >= 1")
        train_section = dict(config["train"])
        val_fraction = float(train_section.pop("val_fraction"))
        if not 0 < val_fraction < 1:
            raise ValueError("train.val_fraction must lie in (0, 1)")
        train_cfg = TrainConfig(seed=seed, **train_section)
        monitor_section = dict(config["monitor"])
        ma_window = monitor_section.pop("ma_window")
        if ma_window is not None:
            ma_window = int(ma_window)
            if ma_window < 1:
                raise ValueError("monitor.ma_window must be >= 1 or null")
        monitor_cfg = MonitorConfig(
            buffer_len=int(monitor_section["buffer_len"]),
            threshold=float(monitor_section["threshold"]),
        )
        synth_cfg = SynthConfig(seed=seed, **config["synth"])
        wear_limit = float(config["eval"]["wear_limit_um"])
        if wear_limit <= 0:
            raise ValueError("eval.wear_limit_um must be positive")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    out_dir = args.out or "."
    return RunConfig(
        raw=config,
        seed=seed,
        out_dir=out_dir,
        windowing=windowing,
        patch_len=patch_len,
        num_tokens=num_tokens,
        train=train_cfg,
        val_fraction=val_fraction,
        monitor=monitor_cfg,
        ma_window=ma_window,
        synth=synth_cfg,
        wear_limit_um=wear_limit,
        paths={k: str(v) for k, v in config["paths"].items()},
    )


def _require_file(path: str, field: str) -> str:
    if path.startswith("tcp://"):
        return path
    if not os.path.exists(path):
        raise ConfigError(f"paths.{field}: no such file: {path}")
    return path


def _read_series(cfg: RunConfig, key: str) -> MultiChannelSeries:
    path = _require_file(cfg.resolve(key), key)
    if path.startswith("tcp://"):
        raise ConfigError(f"paths.{key}: this command needs a file, not a socket")
    return read_signal_csv(path, sample_rate_hz=cfg.synth.sample_rate_hz)


def _prepare_splits(cfg: RunConfig, series: MultiChannelSeries):
    """Shared deterministic prep: windows, split, training-split stats."""
    windows = segment_windows(series, cfg.windowing)
    if len(windows) < 2:
        raise ConfigError(
            f"signal yields {len(windows)} windows; need at least 2 "
            f"(window_len {cfg.windowing.window_len}, stride {cfg.windowing.stride})"
        )
    train_w, val_w = train_val_split(windows, cfg.val_fraction, seed=cfg.seed)
    stats = compute_channel_stats(stack_windows(train_w))
    return train_w, val_w, stats


def _backbone_for(cfg: RunConfig, channels: int) -> BackboneConfig:
    n = num_patches(cfg.windowing.context_len, cfg.patch_len)
    return BackboneConfig(
        max_seq_len=n * channels,
        num_tokens=cfg.num_tokens,
        num_channels=channels,
        patch_len=cfg.patch_len,
        **cfg.raw["model"],
    )


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    run = generate_run(cfg.synth, cfg.windowing)
    write_signal_csv(run.series, cfg.out_path("signal.csv"))
    run.wear.to_csv(cfg.out_path("wear.csv"))
    print(
        f"wrote {run.series.num_samples} samples x {run.series.num_channels} channels, "
        f"{len(run.wear.entries)} cuts"
    )
    return 0


def cmd_fit_codebooks(cfg: RunConfig, args: argparse.Namespace) -> int:
    series = _read_series(cfg, "signal")
    train_w, _, stats = _prepare_splits(cfg, series)
    targets = [
        split_context_target(normalize_window(w, stats), cfg.windowing.context_len)[1]
        for w in train_w
    ]
    codebooks = fit_codebook_set(
        targets, k=cfg.num_tokens, seed=cfg.seed, channel_names=series.channel_names
    )
    save_codebooks(codebooks, cfg.out_path("codebooks.json"))
    print(f"wrote codebooks.json (K={codebooks.K}, channels={codebooks.num_channels})")
    return 0


def _run_training(cfg: RunConfig, freeze: bool, signal_key: str) -> int:
    series = _read_series(cfg, signal_key)
    train_w, val_w, stats = _prepare_splits(cfg, series)
    codebooks_path = _require_file(cfg.resolve("codebooks"), "codebooks")
    codebooks = load_codebooks(codebooks_path)
    if codebooks.num_channels != series.num_channels:
        raise ConfigError(
            f"paths.codebooks: built for {codebooks.num_channels} channels, "
            f"signal has {series.num_channels}"
        )

    backbone = _backbone_for(cfg, series.num_channels)
    init_path = cfg.paths.get("init_checkpoint", "")
    if init_path:
        ckpt = load_checkpoint(_require_file(cfg.resolve("init_checkpoint"), "init_checkpoint"))
        if ckpt.config.to_dict() != backbone.to_dict():
            raise ConfigError(
                "paths.init_checkpoint: checkpoint architecture differs from the "
                "configured model section"
            )
        params = ckpt.params
    else:
        params = init_model(backbone, seed=cfg.seed)

    p_train, y_train = build_examples(
        train_w, stats, cfg.windowing.context_len, codebooks, cfg.patch_len
    )
    p_val, y_val = build_examples(
        val_w, stats, cfg.windowing.context_len, codebooks, cfg.patch_len
    )
    report = train_model(
        p_train, y_train, p_val, y_val, params, backbone, cfg.train, freeze=freeze
    )
    write_train_report_csv(report, cfg.out_path("train_report.csv"))
    save_checkpoint(
        cfg.out_path("checkpoint.lorm"),
        params,
        backbone,
        stats,
        window_len=cfg.windowing.window_len,
        context_len=cfg.windowing.context_len,
        channel_names=series.channel_names,
        codebook_hash=codebook_file_hash(codebooks_path),
    )
    print(
        f"best epoch {report.best_epoch} val_loss {report.best_val_loss:.6f} "
        f"({'early stop' if report.stopped_early else 'ran to max_epochs'})"
    )
    return 0


def cmd_pretrain(cfg: RunConfig, args: argparse.Namespace) -> int:
    key = "pretrain_signal" if cfg.paths.get("pretrain_signal") else "signal"
    return _run_training(cfg, freeze=False, signal_key=key)


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    return _run_training(cfg, freeze=True, signal_key="signal")


def _window_source(cfg: RunConfig, deployed: DeployedModel):
    """Iterator of raw windows for monitoring, from a file or a socket."""
    path = _require_file(cfg.resolve("signal"), "signal")
    windowing = WindowingConfig(
        window_len=deployed.checkpoint.window_len,
        context_len=deployed.checkpoint.context_len,
        stride=cfg.windowing.stride,
    )
    channels = len(deployed.checkpoint.channel_names)
    if path.startswith("tcp://"):
        rest = path[len("tcp://") :]
        host, sep, port_text = rest.partition(":")
        if not sep or not host:
            raise ConfigError(f"paths.signal: expected tcp://host:port, got {path!r}")
        try:
            port = int(port_text)
        except ValueError:
            raise ConfigError(f"paths.signal: bad port in {path!r}") from None
        source = socket_sample_source(host, port)
    else:
        source = csv_sample_source(path)
    return stream_windows(source, windowing, channel_count=channels)


def cmd_monitor(cfg: RunConfig, args: argparse.Namespace) -> int:
    ckpt_path = _require_file(cfg.resolve("checkpoint"), "checkpoint")
    codebooks_path = _require_file(cfg.resolve("codebooks"), "codebooks")
    deployed = DeployedModel.from_files(ckpt_path, codebooks_path)

    wear: WearTable | None = None
    wear_path = cfg.paths.get("wear", "")
    if wear_path:
        resolved = cfg.resolve("wear")
        if os.path.exists(resolved):
            wear = WearTable.from_csv(resolved)

    records = []
    cut_ids: list[int | None] = []
    for record in monitor_stream(deployed, _window_source(cfg, deployed), cfg.monitor):
        records.append(record)
        if wear is not None:
            cut_ids.append(
                wear.cut_of(record.window_index) if wear.covers(record.window_index) else None
            )
        if record.alarm:
            print(format_alarm_line(record, cfg.monitor.threshold))
    write_health_csv(
        records,
        cfg.out_path("hi.csv"),
        cut_ids=cut_ids if wear is not None else None,
        ma_window=cfg.ma_window,
    )
    alarms = sum(1 for r in records if r.alarm)
    print(f"monitored {len(records)} windows, {alarms} alarms")
    return 0


def _group_hi_by_cut(records, cut_ids, wear: WearTable) -> dict[int, list[float | None]]:
    grouped: dict[int, list[float | None]] = {}
    for i, record in enumerate(records):
        if cut_ids is not None:
            cut = cut_ids[i]
        else:
            cut = wear.cut_of(record.window_index) if wear.covers(record.window_index) else None
        if cut is None:
            continue
        grouped.setdefault(cut, []).append(record.hi)
    return grouped


def cmd_calibrate(cfg: RunConfig, args: argparse.Namespace) -> int:
    records, cut_ids = read_health_csv(_require_file(cfg.resolve("hi"), "hi"))
    wear = WearTable.from_csv(_require_file(cfg.resolve("wear"), "wear"))
    calibration = calibrate_threshold(
        _group_hi_by_cut(records, cut_ids, wear),
        wear.wear_by_cut(),
        wear_limit_um=cfg.wear_limit_um,
    )
    write_metrics_json(
        {
            "calibration": {
                "tau": calibration.tau,
                "cut_id": calibration.cut_id,
                "wear_um": calibration.wear_um,
            }
        },
        cfg.out_path("metrics.json"),
    )
    print(f"tau={calibration.tau!r} cut={calibration.cut_id} wear_um={calibration.wear_um!r}")
    return 0


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    records, _ = read_health_csv(_require_file(cfg.resolve("hi"), "hi"))
    wear = WearTable.from_csv(_require_file(cfg.resolve("wear"), "wear"))
    scored = [r for r in records if r.hi is not None and wear.covers(r.window_index)]
    if not scored:
        raise ConfigError("paths.hi: no post-buffer windows overlap the wear table")
    labels = label_windows(wear, cfg.wear_limit_um, [r.window_index for r in scored])
    predictions = np.array([r.alarm for r in scored], dtype=bool)
    report = compute_metrics(predictions, labels)
    first_alarm = next((r.window_index for r in records if r.alarm), None)
    deviation = detection_deviation(first_alarm, wear, cfg.wear_limit_um)
    write_metrics_json(
        {
            "classification": report.to_dict(),
            "detection_deviation_um": deviation,
            "first_alarm_window": first_alarm,
        },
        cfg.out_path("metrics.json"),
    )
    print(format_metrics_table(report, deviation_um=deviation))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "fit-codebooks": cmd_fit_codebooks,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "monitor": cmd_monitor,
    "calibrate": cmd_calibrate,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lorm",
        description="Self-supervised token-prediction condition monitoring pipeline.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="pipeline stage to run")
    parser.add_argument("--config", default=None, help="JSON config file merged over defaults")
    parser.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override one config scalar (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--out", default=".", help="directory for outputs and relative config paths"
    )
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args)
        os.makedirs(cfg.out_dir, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
