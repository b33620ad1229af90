"""Complex spectrum features: where a cosine and a sine end up.

The spectral stream sees each channel as the real parts of its DFT bins
followed by the imaginary parts, restricted to 8-64 Hz at 0.25 Hz
resolution. A 1 s trial is zero-padded to 1024 points to get there.
"""

import numpy as np

from ssvep_bima.spectral import SpectralConfig, complex_spectrum

fs = 256.0
t = np.arange(256) / fs
trial = np.stack([np.cos(2 * np.pi * 10 * t), np.sin(2 * np.pi * 10 * t)])
cfg = SpectralConfig()
feats = complex_spectrum(trial, fs, cfg)

print(f"nfft {cfg.nfft(fs)}, {feats.num_bins} bins from {feats.bin_frequencies_hz[0]:g} to {feats.bin_frequencies_hz[-1]:g} Hz")
print(f"feature matrix {feats.values.shape}: real half then imaginary half")

col = int(np.flatnonzero(feats.bin_frequencies_hz == 10.0)[0])
for name, row in zip(("cosine", "sine"), range(2)):
    print(f"10 Hz {name:6s}: real {feats.real[row, col]:+.4f}  imag {feats.imag[row, col]:+.4f}")
# A unit tone covering a quarter of the padded length scales to 2/1024 * 128 = 0.25.
