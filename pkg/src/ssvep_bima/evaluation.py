"""Accuracy, Wolpaw ITR, paired t-test, decision fusion and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .nn.functional import log_softmax

CSV_HEADER = ("fold", "subject", "accuracy", "itr_bits_per_min", "epochs")


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ShapeError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if predictions.size == 0:
        raise ParameterError("accuracy of an empty prediction set is undefined")
    return float(np.mean(predictions == labels))


def confusion_matrix(labels, predictions, num_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    labels, predictions = np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ShapeError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


# ---------------------------------------------------------------------------
# Information transfer rate
# ---------------------------------------------------------------------------


def bits_per_selection(P: float, M: int) -> float:
    """Wolpaw bits per selection, with P clamped to [1/M, 1] first."""
    if int(M) != M or M < 2:
        raise ParameterError(f"number of classes must be an integer >= 2, got {M}")
    if not 0.0 <= P <= 1.0:
        raise ParameterError(f"accuracy must lie in [0, 1], got {P}")
    if P <= 1.0 / M:
        return 0.0
    bits = math.log2(M) + P * math.log2(P)
    if P < 1.0:
        bits += (1.0 - P) * math.log2((1.0 - P) / (M - 1))
    # near chance the terms cancel to within rounding; never report negative bits
    return max(bits, 0.0)


def itr_bits_per_min(P: float, M: int, window_s: float, gaze_s: float = 0.0) -> float:
    """Information transfer rate in bits/min for accuracy P over M targets.

    The selection time is ``window_s + gaze_s``; ``gaze_s`` defaults to 0.
    """
    if not window_s > 0:
        raise ParameterError(f"window must be positive, got {window_s}")
    if not gaze_s >= 0:
        raise ParameterError(f"gaze-shift time must be nonnegative, got {gaze_s}")
    return 60.0 / (window_s + gaze_s) * bits_per_selection(P, M)


def itr_clamped(P: float, M: int) -> bool:
    """True when P is below chance and the ITR formula saw 1/M instead."""
    return P < 1.0 / M


# ---------------------------------------------------------------------------
# Paired t-test
# ---------------------------------------------------------------------------


def _betacf(a, b, x, max_iter=300, tol=1e-15):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not (a > 0 and b > 0):
        raise ParameterError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # the fraction converges fast on the side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees."""
    if math.isinf(t):
        return 0.0
    return regularized_beta(df / 2.0, 0.5, df / (df + t * t))


@dataclass
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False
    baseline_name: str = ""


def paired_t_test(a, b, baseline_name: str = "") -> TTestResult:
    """Two-sided paired t-test on ``a - b``.

    Zero spread is handled explicitly: a nonzero mean difference gives
    ``t = +-inf``, ``p = 0`` with ``degenerate`` set; a zero mean gives
    ``t = 0``, ``p = 1``.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ParameterError(f"paired t-test needs at least 2 pairs, got {n}")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, False, baseline_name)
        return TTestResult(math.copysign(math.inf, mean), 0.0, df, True, baseline_name)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, student_t_sf2(t, df), df, False, baseline_name)


# ---------------------------------------------------------------------------
# Decision-level fusion
# ---------------------------------------------------------------------------


def decision_fusion(logits_na, logits_sa) -> int:
    """Class with the largest summed log-softmax evidence from two single-stream models."""
    a, b = np.asarray(logits_na, dtype=np.float64), np.asarray(logits_sa, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"fusion needs two equal-length logit vectors, got {a.shape} and {b.shape}")
    return int(np.argmax(log_softmax(a) + log_softmax(b)))


def decision_fusion_batch(logits_na, logits_sa) -> np.ndarray:
    a, b = np.asarray(logits_na, dtype=np.float64), np.asarray(logits_sa, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"fusion needs two equal-shape (B, K) logit arrays, got {a.shape} and {b.shape}")
    return np.argmax(log_softmax(a) + log_softmax(b), axis=1)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class FoldRecord:
    fold: int
    subject: str
    accuracy: float
    itr_bits_per_min: float
    itr_clamped: bool
    epochs: int
    final_loss: float
    predictions: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    confusion: list = field(default_factory=list)


@dataclass
class EvalReport:
    folds: list
    mean_accuracy: float
    std_accuracy: float
    mean_itr_bits_per_min: float
    itr_of_mean_accuracy: float
    window_s: float
    gaze_s: float
    num_classes: int
    disabled: list = field(default_factory=list)
    t_tests: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown report field(s): {sorted(unknown)}")
        missing = known - set(d) - {"disabled", "t_tests", "config"}
        if missing:
            raise FormatError(f"report is missing field(s): {sorted(missing)}")
        d["folds"] = [FoldRecord(**f) for f in d["folds"]]
        d["t_tests"] = [TTestResult(**t) for t in d.get("t_tests", [])]
        return cls(**d)

    def add_t_test(self, baseline_name: str, baseline_accuracies) -> TTestResult:
        """Paired t-test of this report's fold accuracies against a baseline's."""
        res = paired_t_test([f.accuracy for f in self.folds], baseline_accuracies, baseline_name)
        self.t_tests.append(res)
        return res

    def table_row(self) -> dict:
        """One ablation-table row: component flags plus accuracy and ITR."""
        row = {name: name not in self.disabled for name in ("sa", "na", "wmf", "pe", "mask")}
        row.update(
            mean_accuracy=self.mean_accuracy,
            std_accuracy=self.std_accuracy,
            mean_itr_bits_per_min=self.mean_itr_bits_per_min,
        )
        return row


def build_report(fold_results, window_s: float, num_classes: int, config=None, disabled=(), gaze_s: float = 0.0) -> EvalReport:
    """Summarize LOSO fold results.

    The headline ITR is the mean of per-fold ITRs. Because ITR is convex in
    accuracy this is at least the ITR of the mean accuracy, which is also
    reported.
    """
    if not fold_results:
        raise ParameterError("a report needs at least one fold")
    records = []
    for fr in fold_results:
        records.append(
            FoldRecord(
                fold=int(fr.fold),
                subject=fr.held_out_subject,
                accuracy=float(fr.accuracy),
                itr_bits_per_min=itr_bits_per_min(fr.accuracy, num_classes, window_s, gaze_s),
                itr_clamped=itr_clamped(fr.accuracy, num_classes),
                epochs=int(fr.epochs),
                final_loss=float(fr.final_loss),
                predictions=list(fr.predictions),
                labels=list(fr.labels),
                confusion=[list(r) for r in fr.confusion],
            )
        )
    accs = np.array([r.accuracy for r in records])
    mean_acc = float(np.mean(accs))
    return EvalReport(
        folds=records,
        mean_accuracy=mean_acc,
        std_accuracy=float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
        mean_itr_bits_per_min=float(np.mean([r.itr_bits_per_min for r in records])),
        itr_of_mean_accuracy=itr_bits_per_min(mean_acc, num_classes, window_s, gaze_s),
        window_s=float(window_s),
        gaze_s=float(gaze_s),
        num_classes=int(num_classes),
        disabled=sorted(disabled),
        config=dict(config or {}),
    )


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def report_csv_rows(report: EvalReport) -> list[list[str]]:
    rows = [list(CSV_HEADER)]
    for r in report.folds:
        rows.append([str(r.fold), r.subject, repr(r.accuracy), repr(r.itr_bits_per_min), str(r.epochs)])
    epochs = {r.epochs for r in report.folds}
    mean_epochs = str(epochs.pop()) if len(epochs) == 1 else repr(float(np.mean([r.epochs for r in report.folds])))
    rows.append(["", "MEAN", repr(report.mean_accuracy), repr(report.mean_itr_bits_per_min), mean_epochs])
    return rows


def write_report(report: EvalReport, path, format: str | None = None) -> None:
    """Write ``report`` as JSON or CSV; the format defaults to the file suffix."""
    path = str(path)
    fmt = (format or ("csv" if path.endswith(".csv") else "json")).lower()
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report_json(report))
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(report_csv_rows(report))
    else:
        raise ParameterError(f"unknown report format {format!r}; use 'json' or 'csv'")


def read_report(path) -> EvalReport:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not a JSON report ({exc})") from None
    return EvalReport.from_dict(d)


def read_report_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or tuple(rows[0].keys()) != CSV_HEADER:
        raise FormatError(f"{path}: unexpected CSV header")
    return rows
