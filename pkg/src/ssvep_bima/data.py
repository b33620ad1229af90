"""EEG epoch container, the EEGB file format, preprocessing and a synthetic SSVEP generator.

All arrays are held as 64-bit floats in memory. On disk the sample payload is
little-endian float32.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import (
    ChannelLookupError,
    FormatError,
    ParameterError,
    SizeError,
    ValidationError,
)

EEGB_FORMAT = "EEGB"
EEGB_VERSION = 1

# Dataset 2 occipital montage.
OCCIPITAL_CHANNELS = ("PO7", "PO3", "PO", "PO4", "PO8", "O1", "Oz", "O2")

FILTER_ORDER = 4


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EegEpochSet:
    """Labeled multi-channel trials from a single subject.

    ``trials`` has shape ``(num_trials, num_channels, num_samples)``.
    Instances are immutable: arrays are copied and marked read-only.
    """

    subject_id: str
    sampling_rate_hz: float
    channel_names: tuple[str, ...]
    stimulus_frequencies_hz: tuple[float, ...]
    trials: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "subject_id", str(self.subject_id))
        set_(self, "sampling_rate_hz", float(self.sampling_rate_hz))
        set_(self, "channel_names", tuple(str(c) for c in self.channel_names))
        set_(self, "stimulus_frequencies_hz", tuple(float(f) for f in self.stimulus_frequencies_hz))
        set_(self, "trials", _frozen(self.trials, np.float64))
        set_(self, "labels", _frozen(self.labels, np.int64))
        self._validate()

    def _validate(self):
        if not (self.sampling_rate_hz > 0 and math.isfinite(self.sampling_rate_hz)):
            raise ValidationError(f"sampling_rate_hz must be positive, got {self.sampling_rate_hz}")
        if self.trials.ndim != 3:
            raise ValidationError(f"trials must be 3-D (trials, channels, samples), got shape {self.trials.shape}")
        n, c, t = self.trials.shape
        k = len(self.stimulus_frequencies_hz)
        if n < 1:
            raise ValidationError("an epoch set needs at least one trial")
        if c < 1:
            raise ValidationError("an epoch set needs at least one channel")
        if t < 2:
            raise ValidationError(f"trials need at least 2 samples, got {t}")
        if k < 2:
            raise ValidationError(f"need at least 2 classes, got {k}")
        if any(not (f > 0) for f in self.stimulus_frequencies_hz):
            raise ValidationError("stimulus frequencies must be positive")
        if len(self.channel_names) != c:
            raise ValidationError(f"{len(self.channel_names)} channel names for {c} channels")
        if self.labels.ndim != 1 or self.labels.shape[0] != n:
            raise ValidationError(f"{self.labels.shape[0] if self.labels.ndim else 0} labels for {n} trials")
        if self.labels.min() < 0 or self.labels.max() >= k:
            raise ValidationError(f"labels must lie in [0, {k})")
        if not np.all(np.isfinite(self.trials)):
            raise ValidationError("trials contain non-finite samples")

    @property
    def num_trials(self) -> int:
        return self.trials.shape[0]

    @property
    def num_channels(self) -> int:
        return self.trials.shape[1]

    @property
    def num_samples(self) -> int:
        return self.trials.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.stimulus_frequencies_hz)

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sampling_rate_hz

    def with_trials(self, trials, sampling_rate_hz=None, channel_names=None) -> "EegEpochSet":
        """Copy of this set with new sample data; labels are carried over."""
        return replace(
            self,
            trials=trials,
            sampling_rate_hz=self.sampling_rate_hz if sampling_rate_hz is None else sampling_rate_hz,
            channel_names=self.channel_names if channel_names is None else channel_names,
        )

    def equals(self, other: "EegEpochSet") -> bool:
        return (
            self.subject_id == other.subject_id
            and self.sampling_rate_hz == other.sampling_rate_hz
            and self.channel_names == other.channel_names
            and self.stimulus_frequencies_hz == other.stimulus_frequencies_hz
            and np.array_equal(self.labels, other.labels)
            and self.trials.shape == other.trials.shape
            and np.array_equal(self.trials, other.trials)
        )


# ---------------------------------------------------------------------------
# EEGB v1 container
# ---------------------------------------------------------------------------

_HEADER_FIELDS = (
    "format",
    "version",
    "subject_id",
    "sampling_rate_hz",
    "channel_names",
    "stimulus_frequencies_hz",
    "num_trials",
    "num_channels",
    "num_samples",
    "labels",
)


def _header_bytes(s: EegEpochSet) -> bytes:
    header = {
        "format": EEGB_FORMAT,
        "version": EEGB_VERSION,
        "subject_id": s.subject_id,
        "sampling_rate_hz": s.sampling_rate_hz,
        "channel_names": list(s.channel_names),
        "stimulus_frequencies_hz": list(s.stimulus_frequencies_hz),
        "num_trials": s.num_trials,
        "num_channels": s.num_channels,
        "num_samples": s.num_samples,
        "labels": [int(v) for v in s.labels],
    }
    return (json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8")


def encode_epochs(s: EegEpochSet) -> bytes:
    """Serialize to EEGB bytes: JSON header line, then float32 LE samples."""
    if not isinstance(s, EegEpochSet):
        raise ValidationError("expected an EegEpochSet")
    payload = np.ascontiguousarray(s.trials, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise ValidationError("samples overflow the 32-bit payload")
    return _header_bytes(s) + payload.tobytes(order="C")


def save_epochs(s: EegEpochSet, path) -> None:
    data = encode_epochs(s)
    Path(path).write_bytes(data)


def _require(header, name, kind):
    if name not in header:
        raise FormatError(f"EEGB header is missing field '{name}'")
    value = header[name]
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "num": isinstance(value, (int, float)) and not isinstance(value, bool),
        "str": isinstance(value, str),
        "list": isinstance(value, list),
    }[kind]
    if not ok:
        raise FormatError(f"EEGB header field '{name}' has the wrong type ({type(value).__name__})")
    return value


def decode_epochs(raw: bytes) -> EegEpochSet:
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("EEGB header line is not terminated by a newline")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"EEGB header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise FormatError("EEGB header must be a JSON object")
    if _require(header, "format", "str") != EEGB_FORMAT:
        raise FormatError(f"EEGB header field 'format' must be '{EEGB_FORMAT}', got {header['format']!r}")
    if _require(header, "version", "int") != EEGB_VERSION:
        raise FormatError(f"EEGB header field 'version' must be {EEGB_VERSION}, got {header['version']!r}")
    subject_id = _require(header, "subject_id", "str")
    fs = _require(header, "sampling_rate_hz", "num")
    channels = _require(header, "channel_names", "list")
    freqs = _require(header, "stimulus_frequencies_hz", "list")
    labels = _require(header, "labels", "list")
    dims = []
    for name in ("num_trials", "num_channels", "num_samples"):
        v = _require(header, name, "int")
        if v < 0:
            raise FormatError(f"EEGB header field '{name}' must be nonnegative, got {v}")
        dims.append(v)
    n, c, t = dims
    if len(channels) != c:
        raise FormatError(f"EEGB header field 'channel_names' has {len(channels)} entries, num_channels is {c}")
    if len(labels) != n:
        raise FormatError(f"EEGB header field 'labels' has {len(labels)} entries, num_trials is {n}")
    extra = set(header) - set(_HEADER_FIELDS)
    if extra:
        raise FormatError(f"EEGB header has unknown field(s): {sorted(extra)}")

    payload = raw[nl + 1 :]
    expected = n * c * t * 4
    if len(payload) != expected:
        raise SizeError(f"EEGB payload is {len(payload)} bytes, header declares {n}x{c}x{t} float32 = {expected} bytes")
    trials = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, c, t)
    return EegEpochSet(
        subject_id=subject_id,
        sampling_rate_hz=fs,
        channel_names=channels,
        stimulus_frequencies_hz=freqs,
        trials=trials,
        labels=labels,
    )


def load_epochs(path) -> EegEpochSet:
    return decode_epochs(Path(path).read_bytes())


def _natural_key(p: Path):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", p.name)]


def load_directory(path) -> list[EegEpochSet]:
    """Load every ``*.eegb`` file in a directory in natural name order (subject_2 before subject_10)."""
    files = sorted(Path(path).glob("*.eegb"), key=_natural_key)
    return [load_epochs(f) for f in files]


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def _nyquist(s: EegEpochSet) -> float:
    return s.sampling_rate_hz / 2.0


def butter_sos(fs, low_hz=None, high_hz=None, order=FILTER_ORDER):
    """Butterworth design in second-order sections (band, low or high pass)."""
    if low_hz is not None and high_hz is not None:
        return signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    if high_hz is not None:
        return signal.butter(order, high_hz, btype="lowpass", fs=fs, output="sos")
    return signal.butter(order, low_hz, btype="highpass", fs=fs, output="sos")


def zero_phase(sos, x):
    """Forward-backward filtering along the last axis.

    Edges use a mirror (even) extension as long as the signal allows. The
    default short odd extension leaves multi-percent transients well past
    0.5 s for band edges near 1 Hz; the long mirror settles much faster.
    """
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=x.shape[-1] - 1)


def bandpass(s: EegEpochSet, low_hz: float, high_hz: float) -> EegEpochSet:
    """Zero-phase Butterworth band-pass applied to every channel of every trial."""
    nyq = _nyquist(s)
    if not (0 < low_hz < high_hz < nyq):
        raise ParameterError(f"band must satisfy 0 < low < high < Nyquist ({nyq} Hz), got [{low_hz}, {high_hz}]")
    sos = butter_sos(s.sampling_rate_hz, low_hz, high_hz)
    return s.with_trials(zero_phase(sos, s.trials))


def decimate(s: EegEpochSet, factor: int) -> EegEpochSet:
    """Anti-alias low-pass at 0.8 x the new Nyquist, then keep every factor-th sample."""
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise ParameterError(f"decimation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if s.num_samples % factor:
        raise ParameterError(f"factor {factor} does not divide {s.num_samples} samples")
    if factor == 1:
        return s.with_trials(s.trials)
    new_fs = s.sampling_rate_hz / factor
    sos = butter_sos(s.sampling_rate_hz, high_hz=0.8 * new_fs / 2.0)
    filtered = zero_phase(sos, s.trials)
    return s.with_trials(filtered[..., ::factor], sampling_rate_hz=new_fs)


def select_channels(s: EegEpochSet, names: Sequence[str]) -> EegEpochSet:
    index = {name: i for i, name in enumerate(s.channel_names)}
    missing = [n for n in names if n not in index]
    if missing:
        raise ChannelLookupError(f"unknown channel(s) {missing}; available: {list(s.channel_names)}")
    if not names:
        raise ParameterError("select at least one channel")
    order = [index[n] for n in names]
    return s.with_trials(s.trials[:, order, :], channel_names=list(names))


def crop_window(s: EegEpochSet, start_s: float, length_s: float) -> EegEpochSet:
    fs = s.sampling_rate_hz
    n = round(length_s * fs)
    offset = round(start_s * fs)
    if length_s <= 0 or n < 1 or abs(length_s * fs - n) > 1e-6:
        raise ParameterError(f"window length {length_s} s is not a positive whole number of samples at {fs} Hz")
    if start_s < 0 or offset + n > s.num_samples:
        raise ParameterError(
            f"window [{start_s}, {start_s + length_s}] s exceeds the {s.duration_s} s trial"
        )
    return s.with_trials(s.trials[:, :, offset : offset + n])


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def dataset1_frequencies() -> list[float]:
    """The 12 stimulus frequencies 9.25 ... 14.75 Hz in 0.5 Hz steps."""
    return [9.25 + 0.5 * k for k in range(12)]


@dataclass(frozen=True)
class SynthConfig:
    num_subjects: int = 6
    classes_hz: tuple[float, ...] = field(default_factory=lambda: tuple(dataset1_frequencies()))
    trials_per_class: int = 10
    sampling_rate_hz: float = 256.0
    window_s: float = 1.0
    num_channels: int = 8
    num_harmonics: int = 3
    snr_db: float = 0.0
    subject_phase_jitter_rad: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes_hz", tuple(float(f) for f in self.classes_hz))
        if self.num_subjects < 1:
            raise ParameterError("num_subjects must be >= 1")
        if len(self.classes_hz) < 2:
            raise ParameterError("need at least 2 classes")
        if any(not (0 < f < self.sampling_rate_hz / 2) for f in self.classes_hz):
            raise ParameterError("stimulus frequencies must lie in (0, Nyquist)")
        if self.trials_per_class < 1:
            raise ParameterError("trials_per_class must be >= 1")
        if self.num_channels < 1:
            raise ParameterError("num_channels must be >= 1")
        if self.num_harmonics < 1:
            raise ParameterError("num_harmonics must be >= 1")
        if self.window_s <= 0 or round(self.window_s * self.sampling_rate_hz) < 2:
            raise ParameterError("window must span at least 2 samples")
        if self.subject_phase_jitter_rad < 0:
            raise ParameterError("subject_phase_jitter_rad must be nonnegative")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ParameterError("snr_db must be a real number or +inf")
        if not (0 <= int(self.seed) < 2**64):
            raise ParameterError("seed must be a 64-bit unsigned integer")

    @property
    def num_samples(self) -> int:
        return int(round(self.window_s * self.sampling_rate_hz))


def ssvep_template(freq_hz, phase, t, num_harmonics, fs):
    """Harmonic sum with 1/h amplitudes; harmonics at or above Nyquist are dropped."""
    out = np.zeros_like(t)
    for h in range(1, num_harmonics + 1):
        if h * freq_hz >= fs / 2:
            break
        out += np.sin(2 * np.pi * h * freq_hz * t + phase) / h
    return out


def synthesize(cfg: SynthConfig) -> list[EegEpochSet]:
    """Phase-locked harmonic SSVEP trials, one epoch set per subject.

    Class k has fundamental ``classes_hz[k]`` and phase ``k * pi / 2``. Each of
    ``num_channels`` latent sources carries the class waveform with a fixed
    source delay phase; a fixed random full-rank matrix mixes sources into
    channels. Every subject draws its own per-class phase jitter, and white
    Gaussian noise is added per channel at ``snr_db``.
    """
    root = np.random.SeedSequence(int(cfg.seed))
    shared_seq, *subject_seqs = root.spawn(cfg.num_subjects + 1)
    shared = np.random.default_rng(shared_seq)
    c = cfg.num_channels
    mixing = shared.standard_normal((c, c))
    # full rank with overwhelming probability; nudge the diagonal if not
    while np.linalg.matrix_rank(mixing) < c:
        mixing += np.eye(c)
    source_phase = shared.uniform(0, np.pi / 2, size=c)

    fs = cfg.sampling_rate_hz
    t = np.arange(cfg.num_samples) / fs
    k = len(cfg.classes_hz)
    labels = np.repeat(np.arange(k), cfg.trials_per_class)
    names = [f"Ch{i + 1}" for i in range(c)]
    width = max(2, len(str(cfg.num_subjects)))

    sets = []
    for s, seq in enumerate(subject_seqs):
        rng = np.random.default_rng(seq)
        jitter = rng.normal(0.0, cfg.subject_phase_jitter_rad, size=k) if cfg.subject_phase_jitter_rad > 0 else np.zeros(k)
        clean = np.empty((k, c, t.size))
        for cls, f in enumerate(cfg.classes_hz):
            phase = cls * np.pi / 2 + jitter[cls]
            sources = np.stack(
                [ssvep_template(f, phase + source_phase[j], t, cfg.num_harmonics, fs) for j in range(c)]
            )
            clean[cls] = mixing @ sources
        trials = clean[labels].copy()
        if cfg.snr_db != math.inf:
            power = np.mean(clean[labels] ** 2, axis=-1, keepdims=True)
            sigma = np.sqrt(power / 10.0 ** (cfg.snr_db / 10.0))
            trials += sigma * rng.standard_normal(trials.shape)
        sets.append(
            EegEpochSet(
                subject_id=f"subject_{s + 1:0{width}d}",
                sampling_rate_hz=fs,
                channel_names=names,
                stimulus_frequencies_hz=cfg.classes_hz,
                trials=trials,
                labels=labels,
            )
        )
    return sets
