"""``bima`` command-line front end.

Exit codes: 0 success, 1 runtime or data error, 2 usage error. Settings are
resolved as flag, then ``--config`` file, then module default; ``BIMA_SEED``
supplies the seed when neither flag nor file sets one.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .config import SEED_ENV, load_config, with_disabled
from .data import SynthConfig, dataset1_frequencies, load_directory, save_epochs, synthesize
from .errors import BimaError, ParameterError
from .evaluation import build_report, itr_bits_per_min, write_report
from .model import load_checkpoint, save_checkpoint
from .training import loso, new_model, train

PRECEDENCE = f"Precedence: command-line flags > --config file > built-in defaults; ${SEED_ENV} is the default seed."


class UsageError(Exception):
    """Raised for invalid flag values; mapped to exit code 2."""


def _csv_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _jobs_default():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _add_run_flags(p, with_window=True):
    p.add_argument("--data", required=True, help="directory of subject_*.eegb files")
    p.add_argument("--config", help="JSON config with sections data, spectral, bima, train, eval")
    p.add_argument("--epochs", type=int, help="training epochs per fold (default 100)")
    p.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 64)")
    p.add_argument("--dropout", type=float, help="dropout probability (default 0.5)")
    if with_window:
        p.add_argument("--window", type=float, help="crop trials to this many seconds from trial start")
    p.add_argument("--gaze", type=float, help="gaze-shift seconds added to the ITR selection time (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bima",
        description="Dual-stream attention SSVEP classifier: data synthesis, training, LOSO evaluation, ITR.",
        epilog=PRECEDENCE,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="write synthetic SSVEP subjects as EEGB files", epilog=PRECEDENCE)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=6, help="number of subjects (default 6)")
    p.add_argument("--classes", type=_csv_floats, default=None,
                   help="comma-separated stimulus frequencies in Hz (default 9.25,9.75,...,14.75)")
    p.add_argument("--trials-per-class", type=int, default=10, help="trials per class (default 10)")
    p.add_argument("--fs", type=float, default=256.0, help="sampling rate in Hz (default 256)")
    p.add_argument("--window", type=float, default=1.0, help="trial length in seconds (default 1.0)")
    p.add_argument("--channels", type=int, default=8, help="number of channels (default 8)")
    p.add_argument("--harmonics", type=int, default=3, help="harmonics per template (default 3)")
    p.add_argument("--snr-db", type=float, default=0.0, help="per-channel SNR in dB, or inf (default 0)")
    p.add_argument("--jitter", type=float, default=0.1, help="per-subject phase jitter std in rad (default 0.1)")
    p.add_argument("--seed", type=int, default=None, help=f"seed (default ${SEED_ENV} or 0)")

    p = sub.add_parser("train", help="train one model on every subject in a directory", epilog=PRECEDENCE)
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--log", help="write per-epoch JSON lines {epoch, mean_loss} here")
    p.add_argument("--disable", type=_csv_names, default=[], help="components to switch off: sa,na,wmf,pe,mask")

    p = sub.add_parser("eval", help="evaluate a checkpoint on every subject in a directory", epilog=PRECEDENCE)
    p.add_argument("--checkpoint", required=True, help="checkpoint written by 'bima train'")
    p.add_argument("--data", required=True, help="directory of subject_*.eegb files")
    p.add_argument("--config", help="JSON config (data and eval sections are used)")
    p.add_argument("--window", type=float, help="crop trials to this many seconds from trial start")
    p.add_argument("--gaze", type=float, help="gaze-shift seconds added to the ITR selection time (default 0)")
    p.add_argument("--report", help="report path (.json or .csv)")
    p.add_argument("--format", choices=("json", "csv"), help="report format (default from the file suffix)")

    for name, helptext in (
        ("loso", "leave-one-subject-out cross-validation"),
        ("ablate", "leave-one-subject-out with components disabled (alias for loso --disable)"),
    ):
        p = sub.add_parser(name, help=helptext, epilog=PRECEDENCE)
        _add_run_flags(p)
        p.add_argument("--report", help="report path (.json or .csv)")
        p.add_argument("--format", choices=("json", "csv"), help="report format (default from the file suffix)")
        p.add_argument("--disable", type=_csv_names, default=[], required=name == "ablate",
                       help="components to switch off: sa,na,wmf,pe,mask")
        p.add_argument("--jobs", type=int, default=_jobs_default(),
                       help="folds run in parallel (default: available cores); results do not depend on it")

    p = sub.add_parser("itr", help="Wolpaw information transfer rate in bits/min")
    p.add_argument("--acc", type=float, required=True, help="accuracy in [0, 1]")
    p.add_argument("--classes", type=int, required=True, help="number of targets M >= 2")
    p.add_argument("--window", type=float, required=True, help="selection window in seconds")
    p.add_argument("--gaze", type=float, default=0.0, help="gaze-shift seconds added to the window (default 0)")

    p = sub.add_parser("verify", help="run the oracle and invariant self-checks")
    p.add_argument("--only", type=_csv_names, default=None, help="comma-separated subset of checks")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _run_config(args, disable=()):
    overrides = {
        "data": {"window_s": getattr(args, "window", None)},
        "train": {
            "epochs": getattr(args, "epochs", None),
            "seed": getattr(args, "seed", None),
            "learning_rate": getattr(args, "lr", None),
            "batch_size": getattr(args, "batch_size", None),
            "dropout_p": getattr(args, "dropout", None),
        },
        "eval": {"gaze_s": getattr(args, "gaze", None)},
    }
    cfg = load_config(args.config, overrides)
    return with_disabled(cfg, disable)


def _load_subjects(directory, data_cfg):
    if not Path(directory).is_dir():
        raise FileNotFoundError(f"data directory {directory} does not exist")
    subjects = [data_cfg.apply(s) for s in load_directory(directory)]
    if not subjects:
        raise ParameterError(f"no .eegb files in {directory}")
    return subjects


def _write(report, path, fmt):
    if path:
        write_report(report, path, fmt)


def cmd_synth(args):
    seed = args.seed if args.seed is not None else load_config(None).train.seed
    try:
        cfg = SynthConfig(
            num_subjects=args.subjects,
            classes_hz=tuple(args.classes) if args.classes else tuple(dataset1_frequencies()),
            trials_per_class=args.trials_per_class,
            sampling_rate_hz=args.fs,
            window_s=args.window,
            num_channels=args.channels,
            num_harmonics=args.harmonics,
            snr_db=args.snr_db,
            subject_phase_jitter_rad=args.jitter,
            seed=seed,
        )
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(synthesize(cfg), start=1):
        save_epochs(s, out / f"subject_{i}.eegb")
    print(f"wrote {cfg.num_subjects} subjects x {len(cfg.classes_hz) * cfg.trials_per_class} trials to {out}")
    return 0


def cmd_train(args):
    cfg = _run_config(args, args.disable)
    subjects = _load_subjects(args.data, cfg.data)
    model = new_model(subjects, cfg.train)
    result = train(model, subjects, cfg.train, log=args.log)
    save_checkpoint(model, args.out)
    last = result.losses[-1] if result.losses else float("nan")
    print(f"trained {len(result.losses)} epochs on {len(subjects)} subjects; final mean loss {last:.6f}")
    return 0


def cmd_eval(args):
    cfg = _run_config(args)
    model = load_checkpoint(args.checkpoint)
    subjects = _load_subjects(args.data, cfg.data)
    rows = []
    for i, s in enumerate(subjects):
        pred = model.predict(s.trials)
        rows.append(SimpleNamespace(
            fold=i, held_out_subject=s.subject_id,
            accuracy=float(np.mean(pred == s.labels)),
            predictions=pred.tolist(), labels=s.labels.tolist(),
            confusion=_confusion(s.labels, pred, s.num_classes), final_loss=float("nan"), epochs=0,
        ))
    report = build_report(rows, subjects[0].duration_s, subjects[0].num_classes,
                          config={"checkpoint": str(args.checkpoint)}, gaze_s=cfg.eval.gaze_s)
    _write(report, args.report, args.format or cfg.eval.report_format)
    _print_summary(report)
    return 0


def _confusion(labels, pred, k):
    from .evaluation import confusion_matrix

    return confusion_matrix(labels, pred, k).tolist()


def _print_summary(report):
    print(f"mean accuracy {report.mean_accuracy:.4f} +/- {report.std_accuracy:.4f} over {len(report.folds)} folds")
    print(f"mean ITR {report.mean_itr_bits_per_min:.2f} bits/min "
          f"(ITR of mean accuracy {report.itr_of_mean_accuracy:.2f})")


def cmd_loso(args):
    cfg = _run_config(args, args.disable)
    subjects = _load_subjects(args.data, cfg.data)
    folds = loso(subjects, cfg.train, jobs=args.jobs)
    report = build_report(
        folds,
        window_s=subjects[0].duration_s,
        num_classes=subjects[0].num_classes,
        config={"data": _plain(cfg.data), "train": cfg.train.to_dict(), "eval": _plain(cfg.eval)},
        disabled=sorted(set(args.disable)),
        gaze_s=cfg.eval.gaze_s,
    )
    _write(report, args.report, args.format or cfg.eval.report_format)
    _print_summary(report)
    return 0


def _plain(dc):
    from dataclasses import asdict

    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(dc).items()}


def cmd_itr(args):
    try:
        value = itr_bits_per_min(args.acc, args.classes, args.window, args.gaze)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    print(f"{value:.2f}")
    return 0


def cmd_verify(args):
    from .verify import CHECKS, run_checks

    names = args.only
    if names:
        unknown = [n for n in names if n not in CHECKS]
        if unknown:
            raise UsageError(f"unknown check(s) {unknown}; available: {list(CHECKS)}")
    results = run_checks(names)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return 1 if failed else 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "loso": cmd_loso,
    "ablate": cmd_loso,
    "itr": cmd_itr,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        parser.print_usage(sys.stderr)
        print("bima: error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"bima {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (BimaError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"bima {args.command}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
