"""Zero-padded DFT and the real||imaginary complex-spectrum features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError

AMPLITUDE_SCALES = ("two_over_n", "none")


@dataclass(frozen=True)
class SpectralConfig:
    resolution_hz: float = 0.25
    band_low_hz: float = 8.0
    band_high_hz: float = 64.0
    amplitude_scale: str = "two_over_n"

    def __post_init__(self):
        if not self.resolution_hz > 0:
            raise ParameterError(f"resolution_hz must be positive, got {self.resolution_hz}")
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ParameterError(f"need 0 < band_low_hz < band_high_hz, got [{self.band_low_hz}, {self.band_high_hz}]")
        if self.amplitude_scale not in AMPLITUDE_SCALES:
            raise ParameterError(f"amplitude_scale must be one of {AMPLITUDE_SCALES}, got {self.amplitude_scale!r}")

    def nfft(self, fs: float) -> int:
        return int(round(fs / self.resolution_hz))

    def check(self, fs: float, num_samples: int) -> None:
        """Raise ParameterError unless this config is usable at ``fs`` for ``num_samples``-long input."""
        if not self.band_high_hz < fs / 2:
            raise ParameterError(f"band_high_hz {self.band_high_hz} must be below Nyquist {fs / 2}")
        n = self.nfft(fs)
        if n < num_samples:
            raise ParameterError(
                f"nfft = round({fs}/{self.resolution_hz}) = {n} is shorter than the {num_samples}-sample input"
            )

    def bin_indices(self, fs: float) -> np.ndarray:
        """DFT bin indices whose frequency falls inside the closed band."""
        n = self.nfft(fs)
        lo = math.ceil(self.band_low_hz * n / fs - 1e-9)
        hi = math.floor(self.band_high_hz * n / fs + 1e-9)
        return np.arange(lo, hi + 1)

    def num_bins(self, fs: float) -> int:
        return len(self.bin_indices(fs))


@dataclass(frozen=True, eq=False)
class SpectralFeatures:
    """``values`` is ``(C, 2F)``: real parts in the first F columns, imaginary parts after."""

    values: np.ndarray
    bin_frequencies_hz: np.ndarray
    source_config: SpectralConfig

    @property
    def num_bins(self) -> int:
        return len(self.bin_frequencies_hz)

    @property
    def real(self) -> np.ndarray:
        return self.values[:, : self.num_bins]

    @property
    def imag(self) -> np.ndarray:
        return self.values[:, self.num_bins :]


def dft(x, nfft: int) -> np.ndarray:
    """X[k] = sum_t x[t] exp(-2j pi k t / nfft), with x zero-padded to nfft.

    Computed with numpy's pocketfft, which handles any length.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1:
        raise ShapeError("dft needs at least a 1-D signal")
    if nfft < x.shape[-1]:
        raise ParameterError(f"nfft ({nfft}) is shorter than the signal ({x.shape[-1]})")
    return np.fft.fft(x, n=nfft, axis=-1)


def complex_spectrum_array(trials, fs: float, cfg: SpectralConfig) -> np.ndarray:
    """Batched features: ``(..., C, T)`` -> ``(..., C, 2F)``."""
    trials = np.asarray(trials, dtype=np.float64)
    cfg.check(fs, trials.shape[-1])
    n = cfg.nfft(fs)
    spec = dft(trials, n)[..., cfg.bin_indices(fs)]
    if cfg.amplitude_scale == "two_over_n":
        spec = spec * (2.0 / n)
    return np.concatenate([spec.real, spec.imag], axis=-1)


def complex_spectrum(trial, fs: float, cfg: SpectralConfig | None = None) -> SpectralFeatures:
    cfg = cfg or SpectralConfig()
    trial = np.asarray(trial, dtype=np.float64)
    if trial.ndim != 2:
        raise ShapeError(f"trial must be (channels, samples), got shape {trial.shape}")
    values = complex_spectrum_array(trial, fs, cfg)
    freqs = cfg.bin_indices(fs) * fs / cfg.nfft(fs)
    return SpectralFeatures(values=values, bin_frequencies_hz=freqs, source_config=cfg)
