"""A reduced leave-one-subject-out run plus one ablation.

Four subjects, four classes and a short window keep this to about a
minute on one core. The same calls with the default sizes reproduce the
full 6-subject benchmark.
"""

from ssvep_bima.data import SynthConfig, synthesize
from ssvep_bima.evaluation import build_report
from ssvep_bima.training import TrainConfig, loso

subjects = synthesize(SynthConfig(num_subjects=4, classes_hz=(9.25, 10.25, 11.25, 12.25), trials_per_class=8,
                                  num_channels=4, snr_db=-10.0, seed=1))
cfg = TrainConfig(epochs=10, batch_size=16, seed=0)

full = build_report(loso(subjects, cfg), window_s=1.0, num_classes=4)
for f in full.folds:
    print(f"fold {f.fold} ({f.subject}): accuracy {f.accuracy:.3f}, ITR {f.itr_bits_per_min:6.1f} bits/min")
print(f"full model: {full.mean_accuracy:.3f} ± {full.std_accuracy:.3f}, mean ITR {full.mean_itr_bits_per_min:.1f}")

no_mask = build_report(loso(subjects, cfg.with_disabled(["mask"])), 1.0, 4, disabled=["mask"])
print(f"without mask: {no_mask.mean_accuracy:.3f} ± {no_mask.std_accuracy:.3f}")
print("ablation row:", no_mask.table_row())
test = no_mask.add_t_test("full", [f.accuracy for f in full.folds])
print(f"paired t-test vs full model: t = {test.t:.3f}, p = {test.p:.3f}")
