"""Generate synthetic SSVEP subjects, filter them and round-trip them through EEGB.

Each class is a phase-locked harmonic response at its stimulus frequency.
At 0 dB the tone is buried in noise on any single trial, but averaging the
trials of one class brings it back.
"""

import tempfile
from pathlib import Path

import numpy as np

from ssvep_bima.data import SynthConfig, bandpass, crop_window, load_epochs, save_epochs, synthesize

subjects = synthesize(SynthConfig(num_subjects=2, trials_per_class=10, snr_db=0.0, seed=0))
s = subjects[0]
print(f"{s.subject_id}: {s.num_trials} trials, {s.num_channels} channels, {s.num_samples} samples at {s.sampling_rate_hz:g} Hz")
print("classes (Hz):", ", ".join(f"{f:g}" for f in s.stimulus_frequencies_hz))

# Average the trials of class 0 and look for its fundamental.
# Zero-padding to 1024 points gives 0.25 Hz bins, matching the stimulus grid.
freqs = np.fft.rfftfreq(1024, 1 / s.sampling_rate_hz)
single = np.abs(np.fft.rfft(s.trials[0, 0], 1024))
averaged = np.abs(np.fft.rfft(s.trials[s.labels == 0, 0].mean(axis=0), 1024))
band = (freqs > 6) & (freqs < 40)
print(f"single-trial peak:  {freqs[band][np.argmax(single[band])]:5.1f} Hz")
print(f"class-average peak: {freqs[band][np.argmax(averaged[band])]:5.1f} Hz  (stimulus {s.stimulus_frequencies_hz[0]:g} Hz)")

# Zero-phase band-pass and a 0.75 s crop, as used for the shorter windows.
filtered = crop_window(bandpass(s, 6.0, 80.0), 0.0, 0.75)
print(f"after band-pass and crop: {filtered.num_samples} samples")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "subject_1.eegb"
    save_epochs(s, path)
    back = load_epochs(path)
    # samples are stored as float32, so the first save rounds; later ones are exact
    err = np.max(np.abs(back.trials - s.trials) / np.max(np.abs(s.trials)))
    again = Path(tmp) / "again.eegb"
    save_epochs(back, again)
    print(f"EEGB file: {path.stat().st_size} bytes, float32 rounding {err:.1e}, "
          f"save-load-save identical: {path.read_bytes() == again.read_bytes()}")
