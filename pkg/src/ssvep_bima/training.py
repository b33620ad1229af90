"""Adam, the mini-batch training loop and leave-one-subject-out evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import nn
from .data import EegEpochSet
from .errors import ParameterError, ValidationError
from .evaluation import build_report, confusion_matrix
from .model import ABLATION_FLAGS, BimaConfig, BimaModel, forward_tokens
from .nn import _kernels
from .spectral import SpectralConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    dropout_p: float = 0.5
    seed: int = 0
    shuffle: bool = True
    # BimaConfig overrides; num_channels and num_classes always come from the data
    bima: dict = field(default_factory=dict)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps_adam > 0:
            raise ParameterError("eps_adam must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if not 0 <= self.dropout_p < 1:
            raise ParameterError("dropout_p must be in [0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        bad = set(self.bima) & {"num_channels", "num_classes", "dropout_p"}
        if bad:
            raise ParameterError(f"bima overrides may not set {sorted(bad)}")
        object.__setattr__(self, "bima", dict(self.bima))

    def model_config(self, num_channels: int, num_classes: int) -> BimaConfig:
        return BimaConfig(num_channels=num_channels, num_classes=num_classes, dropout_p=self.dropout_p, **self.bima)

    def with_disabled(self, disable) -> "TrainConfig":
        """Copy with ablation flags cleared ('sa', 'na', 'wmf', 'pe', 'mask')."""
        disable = set(disable)
        unknown = disable - set(ABLATION_FLAGS)
        if unknown:
            raise ParameterError(f"unknown ablation(s) {sorted(unknown)}; choose from {sorted(ABLATION_FLAGS)}")
        if {"na", "sa"} <= disable:
            raise ParameterError("cannot disable both the na and sa streams")
        bima = dict(self.bima)
        bima.update({ABLATION_FLAGS[d]: False for d in disable})
        return replace(self, bima=bima)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spectral"] = asdict(self.spectral)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown TrainConfig field(s): {sorted(unknown)}")
        if isinstance(d.get("spectral"), dict):
            d["spectral"] = SpectralConfig(**d["spectral"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First and second moment buffers, keyed by parameter name."""

    def __init__(self, params: nn.ParamStore):
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0


def adam_step(params: nn.ParamStore, state: AdamState, t: int, cfg: TrainConfig) -> None:
    """One in-place bias-corrected Adam update from the gradients in ``params``."""
    if t < 1:
        raise ParameterError(f"Adam step index must be >= 1, got {t}")
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)
    state.t = t


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: BimaModel
    losses: list[float]


def stack_sets(sets: Sequence[EegEpochSet]):
    """Concatenate trials and labels of compatible epoch sets, in list order."""
    if isinstance(sets, EegEpochSet):
        sets = [sets]
    sets = list(sets)
    if not sets:
        raise ParameterError("no training data")
    check_compatible(sets)
    return np.concatenate([s.trials for s in sets]), np.concatenate([s.labels for s in sets])


def check_compatible(sets: Sequence[EegEpochSet]):
    ref = sets[0]
    for s in sets[1:]:
        for attr in ("sampling_rate_hz", "num_channels", "num_samples", "stimulus_frequencies_hz"):
            if getattr(s, attr) != getattr(ref, attr):
                raise ValidationError(
                    f"subject {s.subject_id} differs from {ref.subject_id} in {attr}: "
                    f"{getattr(s, attr)} vs {getattr(ref, attr)}"
                )


def _open_log(log):
    if log is None or hasattr(log, "write"):
        return log, False
    return open(log, "w", encoding="utf-8"), True


def train(model: BimaModel, sets, cfg: TrainConfig, log=None) -> TrainResult:
    """Train ``model`` in place with shuffled mini-batches, cross-entropy and Adam.

    Batch order and dropout draw from separate random streams, both derived
    from ``cfg.seed``. ``log`` may be a path or writable text stream; it
    receives one JSON line ``{"epoch", "mean_loss"}`` per epoch.
    """
    trials, labels = stack_sets(sets)
    if len(labels) == 0:
        raise ParameterError("empty training set")
    k = model.config.num_classes
    missing = sorted(set(range(k)) - set(labels.tolist()))
    if missing:
        warnings.warn(f"classes {missing} have no training trials", stacklevel=2)
    _kernels.tune_allocator()

    inputs = model.prepare(trials)
    shuffle_seq, dropout_seq = np.random.SeedSequence(int(cfg.seed)).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    state = AdamState(model.params)
    n = len(labels)
    losses = []
    stream, close = _open_log(log)
    try:
        for epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                batch = {s: x[idx] for s, x in inputs.items()}
                model.params.zero_grad()
                with nn.Tape() as tape:
                    logits = forward_tokens(batch, model.params, model.config, True, dropout_rng)
                    loss = nn.cross_entropy_loss(logits, labels[idx])
                tape.backward(loss)
                adam_step(model.params, state, state.t + 1, cfg)
                total += loss.item() * len(idx)
            mean_loss = total / n
            if not math.isfinite(mean_loss):
                raise ValidationError(f"training loss became non-finite at epoch {epoch + 1}")
            losses.append(mean_loss)
            logger.debug("epoch %d mean loss %.6f", epoch + 1, mean_loss)
            if stream is not None:
                stream.write(json.dumps({"epoch": epoch + 1, "mean_loss": mean_loss}) + "\n")
    finally:
        if close:
            stream.close()
    return TrainResult(model, losses)


def new_model(sets, cfg: TrainConfig, seed=None) -> BimaModel:
    """Freshly initialized model sized for the given epoch sets."""
    sets = [sets] if isinstance(sets, EegEpochSet) else list(sets)
    ref = sets[0]
    bima = cfg.model_config(ref.num_channels, ref.num_classes)
    return BimaModel.create(bima, ref.sampling_rate_hz, ref.num_samples, cfg.spectral, cfg.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# Leave-one-subject-out
# ---------------------------------------------------------------------------


@dataclass
class FoldResult:
    fold: int
    held_out_subject: str
    accuracy: float
    predictions: list[int]
    labels: list[int]
    confusion: list[list[int]]
    final_loss: float
    epochs: int
    losses: list[float]
    train_subjects: list[str]


def fold_seed(seed: int, fold_index: int) -> int:
    return int(seed) ^ int(fold_index)


def run_fold(subjects: Sequence[EegEpochSet], cfg: TrainConfig, fold_index: int) -> FoldResult:
    test = subjects[fold_index]
    train_sets = [s for i, s in enumerate(subjects) if i != fold_index]
    seed = fold_seed(cfg.seed, fold_index)
    fold_cfg = replace(cfg, seed=seed)
    model = new_model(train_sets, fold_cfg)
    result = train(model, train_sets, fold_cfg)
    predictions = model.predict(test.trials, cfg.batch_size)
    k = test.num_classes
    cm = confusion_matrix(test.labels, predictions, k)
    return FoldResult(
        fold=fold_index,
        held_out_subject=test.subject_id,
        accuracy=float(np.trace(cm) / cm.sum()),
        predictions=[int(p) for p in predictions],
        labels=[int(v) for v in test.labels],
        confusion=cm.tolist(),
        final_loss=result.losses[-1] if result.losses else float("nan"),
        epochs=len(result.losses),
        losses=list(result.losses),
        train_subjects=[s.subject_id for s in train_sets],
    )


def _run_fold_job(args):
    return run_fold(*args)


def loso(subjects: Sequence[EegEpochSet], cfg: TrainConfig, jobs: int = 1, folds=None) -> list[FoldResult]:
    """Leave-one-subject-out: train on all other subjects, test on each in turn.

    Fold ``i`` holds out ``subjects[i]`` and is seeded with ``cfg.seed ^ i``,
    so each fold's result depends only on its index, not on execution order
    or on ``jobs``. ``folds`` restricts the run to a subset of fold indices.
    """
    subjects = list(subjects)
    if len(subjects) < 2:
        raise ParameterError(f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    ids = [s.subject_id for s in subjects]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"subject ids must be distinct, got {ids}")
    check_compatible(subjects)
    indices = list(range(len(subjects))) if folds is None else [int(i) for i in folds]
    for i in indices:
        if not 0 <= i < len(subjects):
            raise ParameterError(f"fold index {i} out of range")
    if jobs is None or jobs < 1:
        jobs = os.cpu_count() or 1
    if jobs == 1 or len(indices) == 1:
        return [run_fold(subjects, cfg, i) for i in indices]
    with ProcessPoolExecutor(max_workers=min(jobs, len(indices))) as pool:
        return list(pool.map(_run_fold_job, [(subjects, cfg, i) for i in indices]))


def ablate(subjects, cfg: TrainConfig, disable=(), jobs: int = 1, window_s=None, gaze_s: float = 0.0):
    """LOSO with the named components switched off, summarized as an EvalReport."""
    ablated_cfg = cfg.with_disabled(disable)
    folds = loso(subjects, ablated_cfg, jobs=jobs)
    ref = subjects[0]
    return build_report(
        folds,
        window_s=ref.duration_s if window_s is None else window_s,
        num_classes=ref.num_classes,
        config=ablated_cfg.to_dict(),
        disabled=sorted(set(disable)),
        gaze_s=gaze_s,
    )
