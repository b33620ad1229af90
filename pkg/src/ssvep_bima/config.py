"""JSON run configuration with sections data, spectral, bima, train and eval.

Every field is optional. Values are resolved as command-line flag, then
config file, then module default. Unknown keys are rejected so a typo never
silently falls back to a default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace

from .data import EegEpochSet, bandpass, crop_window, decimate, select_channels
from .errors import FormatError, ParameterError
from .model import BimaConfig
from .spectral import SpectralConfig
from .training import TrainConfig

SECTIONS = ("data", "spectral", "bima", "train", "eval")
SEED_ENV = "BIMA_SEED"


@dataclass(frozen=True)
class DataConfig:
    """Preprocessing applied to every loaded subject, in field order."""

    channels: tuple | None = None
    bandpass_hz: tuple | None = None
    decimate: int = 1
    start_s: float = 0.0
    window_s: float | None = None

    def __post_init__(self):
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(self.channels))
        if self.bandpass_hz is not None:
            if len(self.bandpass_hz) != 2:
                raise ParameterError("bandpass_hz must be [low, high]")
            object.__setattr__(self, "bandpass_hz", tuple(float(v) for v in self.bandpass_hz))
        if int(self.decimate) != self.decimate or self.decimate < 1:
            raise ParameterError("decimate must be a positive integer")
        if self.start_s < 0:
            raise ParameterError("start_s must be nonnegative")
        if self.window_s is not None and not self.window_s > 0:
            raise ParameterError("window_s must be positive")

    def apply(self, s: EegEpochSet) -> EegEpochSet:
        if self.channels is not None:
            s = select_channels(s, self.channels)
        if self.bandpass_hz is not None:
            s = bandpass(s, *self.bandpass_hz)
        if self.decimate != 1:
            s = decimate(s, self.decimate)
        if self.window_s is not None or self.start_s:
            length = self.window_s if self.window_s is not None else s.duration_s - self.start_s
            s = crop_window(s, self.start_s, length)
        return s


@dataclass(frozen=True)
class EvalConfig:
    gaze_s: float = 0.0
    report_format: str | None = None

    def __post_init__(self):
        if not self.gaze_s >= 0:
            raise ParameterError("gaze_s must be nonnegative")
        if self.report_format not in (None, "json", "csv"):
            raise ParameterError("report_format must be 'json' or 'csv'")


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_BIMA_FILE_FIELDS = {f.name for f in fields(BimaConfig)} - {"num_channels", "num_classes", "dropout_p"}
_TRAIN_FILE_FIELDS = {f.name for f in fields(TrainConfig)} - {"bima", "spectral"}


def _check_keys(section: str, d, allowed) -> dict:
    if not isinstance(d, dict):
        raise FormatError(f"config section {section!r} must be a JSON object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ParameterError(f"unknown key(s) in config section {section!r}: {sorted(unknown)}; allowed: {sorted(allowed)}")
    return dict(d)


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def parse_config(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a parsed JSON document plus flag overrides.

    ``overrides`` maps section name to a dict of values that win over the file.
    """
    doc = _check_keys("<root>", doc or {}, SECTIONS)
    overrides = overrides or {}
    merged = {}
    allowed = {
        "data": {f.name for f in fields(DataConfig)},
        "spectral": {f.name for f in fields(SpectralConfig)},
        "bima": _BIMA_FILE_FIELDS,
        "train": _TRAIN_FILE_FIELDS,
        "eval": {f.name for f in fields(EvalConfig)},
    }
    for sec in SECTIONS:
        merged[sec] = _check_keys(sec, doc.get(sec, {}), allowed[sec])
        merged[sec].update({k: v for k, v in overrides.get(sec, {}).items() if v is not None})
        _check_keys(sec, merged[sec], allowed[sec])
    train = dict(merged["train"])
    train.setdefault("seed", default_seed())
    try:
        return RunConfig(
            data=DataConfig(**merged["data"]),
            train=TrainConfig(spectral=SpectralConfig(**merged["spectral"]), bima=merged["bima"], **train),
            eval=EvalConfig(**merged["eval"]),
        )
    except TypeError as exc:
        raise ParameterError(f"invalid config value: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, overrides)


def with_disabled(cfg: RunConfig, disable) -> RunConfig:
    return replace(cfg, train=cfg.train.with_disabled(disable)) if disable else cfg
