"""Single-entry command line for the whole workflow.

Subcommands: gen, preprocess, train, eval, sweep, crossday, ablate,
auth (enroll|verify), selftest. Every command writes a config echo
beside its outputs so any run can be reproduced from its artifacts.

Exit codes: 0 success, 2 usage, 3 I/O, 4 schema, 5 numeric degeneracy.
Set PPGAUTH_LOG=debug for verbose logging.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import checks, corpus, dsp, report
from .errors import (
    ArgumentError,
    DatasetError,
    MetricUndefinedError,
    NumericDegeneracyError,
    PpgError,
    SchemaVersionError,
)
from .evaluation import (
    EvalReport,
    ablation_grid,
    config_hash,
    cross_day_eval,
    evaluate_fold,
    make_folds,
    pass_rate_sweep,
    write_grid_csv,
    write_report_csv,
    write_sweep_csv,
)
from .metrics import auc, eer, far_at_frr
from .model import ModelConfig, MultiTaskPpgModel
from .seeding import derive_seed
from .train import TrainConfig, switch_train, write_history_csv
from . import auth as auth_mod

log = logging.getLogger("ppgauth")


def _args_dict(args, command):
    d = {k: v for k, v in vars(args).items() if k != "func"}
    d["command"] = command
    return d


def _echo_config(directory, name, args_dict):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{name}_config.json")
    with open(path, "w") as f:
        json.dump(args_dict, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_segments_anywhere(path):
    """Accept either a preprocessed segments CSV or a raw dataset directory."""
    if os.path.isdir(path):
        seg_csv = os.path.join(path, "segments.csv")
        if os.path.exists(seg_csv):
            return dsp.load_segments(seg_csv)
        return dsp.preprocess_all(corpus.load_dataset(path))
    return dsp.load_segments(path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    activities = args.activities.split(",")
    for a in activities:
        if a not in corpus.ACTIVITIES:
            raise ArgumentError(f"unknown activity {a!r}")
    records = corpus.generate_corpus(
        args.subjects,
        args.seed,
        activities=activities,
        days=tuple(range(args.days)),
        duration_s=args.duration,
        fs_hz=args.fs,
        day_drift_sigma=args.drift,
    )
    corpus.save_dataset(records, args.out)
    _echo_config(args.out, "gen", _args_dict(args, "gen"))
    log.info("wrote %d records to %s", len(records), args.out)
    return 0


def cmd_preprocess(args):
    records = corpus.load_dataset(getattr(args, "in"))
    segments = dsp.preprocess_all(
        records, target_fs=args.fs, window_s=args.window, overlap_s=args.overlap
    )
    os.makedirs(args.out, exist_ok=True)
    dsp.save_segments(segments, os.path.join(args.out, "segments.csv"))
    _echo_config(args.out, "preprocess", _args_dict(args, "preprocess"))
    log.info("wrote %d segments", len(segments))
    return 0


def cmd_train(args):
    segments = _load_segments_anywhere(args.data)
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.epochs is not None:
        config.epochs = args.epochs
    c, length = segments[0].data.shape
    model = MultiTaskPpgModel(
        ModelConfig(in_channels=c, input_len=length),
        seed=derive_seed(config.seed, "model"),
    )
    model, history = switch_train(model, segments, config)
    model.save(args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    write_history_csv(os.path.join(out_dir, "history.csv"), history)
    report.plot_history(history, os.path.join(out_dir, "history.png"))
    _echo_config(out_dir, "train", _args_dict(args, "train"))
    log.info("trained %d epochs; checkpoint at %s", config.epochs, args.out)
    return 0


def cmd_eval(args):
    segments = _load_segments_anywhere(args.data)
    model = MultiTaskPpgModel.load(args.model)
    folds = make_folds([s.subject_id for s in segments], k=args.folds, seed=args.seed)
    result = EvalReport(seed=args.seed)
    for f, test_subjects in enumerate(folds):
        test_set = set(test_subjects)
        test_segs = [s for s in segments if s.subject_id in test_set]
        res = evaluate_fold(
            model, test_segs, n_pairs=args.pairs, seed=derive_seed(args.seed, "eval", f)
        )
        for condition in ("static", "mixed"):
            sp = res[condition].scored()
            result.fold_rows.append(
                {
                    "fold": f,
                    "condition": condition,
                    "auc": auc(sp),
                    "eer": eer(sp),
                    "far": far_at_frr(sp),
                }
            )
    os.makedirs(args.report, exist_ok=True)
    tag = config_hash(_args_dict(args, "eval"))
    base = os.path.join(args.report, f"report_{tag}_seed{args.seed}")
    write_report_csv(base + ".csv", result)
    report.plot_fold_metrics(result, base + ".png")
    _echo_config(args.report, "eval", _args_dict(args, "eval"))
    log.info("report written to %s.csv", base)
    return 0


def cmd_sweep(args):
    segments = _load_segments_anywhere(args.data)
    model = MultiTaskPpgModel.load(args.model)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    res = evaluate_fold(model, segments, n_pairs=args.pairs, seed=args.seed)
    points = [(0, p) for p in pass_rate_sweep(res["mixed"], thresholds)]
    os.makedirs(args.report, exist_ok=True)
    tag = config_hash(_args_dict(args, "sweep"))
    base = os.path.join(args.report, f"sweep_{tag}_seed{args.seed}")
    write_sweep_csv(base + ".csv", points)
    report.plot_sweep(points, base + ".png")
    _echo_config(args.report, "sweep", _args_dict(args, "sweep"))
    return 0


def cmd_crossday(args):
    segments = _load_segments_anywhere(args.data)
    model = MultiTaskPpgModel.load(args.model)
    result = cross_day_eval(
        model,
        segments,
        args.gap,
        do_fine_tune=args.fine_tune,
        k=args.folds,
        n_pairs=args.pairs,
        seed=args.seed,
    )
    os.makedirs(args.report, exist_ok=True)
    tag = config_hash(_args_dict(args, "crossday"))
    base = os.path.join(args.report, f"crossday_gap{args.gap}_{tag}")
    write_report_csv(base + ".csv", result)
    report.plot_fold_metrics(result, base + ".png")
    _echo_config(args.report, "crossday", _args_dict(args, "crossday"))
    return 0


def cmd_ablate(args):
    records = corpus.load_dataset(args.data)
    settings = (
        [float(s) for s in args.settings.split(",")] if args.settings else None
    )
    train_config = TrainConfig.load(args.config) if args.config else TrainConfig()
    rows = ablation_grid(
        records,
        args.axis,
        settings=settings,
        train_config=train_config,
        k=args.folds,
        n_pairs=args.pairs,
        seed=args.seed,
    )
    os.makedirs(args.report, exist_ok=True)
    tag = config_hash(_args_dict(args, "ablate"))
    base = os.path.join(args.report, f"ablation_{args.axis}_{tag}")
    write_grid_csv(base + ".csv", rows)
    report.plot_grid(rows, args.axis, base + ".png")
    _echo_config(args.report, "ablate", _args_dict(args, "ablate"))
    return 0


def cmd_auth(args):
    model = MultiTaskPpgModel.load(args.model)
    segments = _load_segments_anywhere(args.stream)
    if args.action == "enroll":
        if os.path.exists(args.store):
            store = auth_mod.TemplateStore.load(args.store)
        else:
            store = auth_mod.TemplateStore(quality_threshold=args.quality_threshold)
        summary = auth_mod.register(model, store, args.user, iter(segments))
        store.save(args.store)
        print(json.dumps(summary))
        return 0
    store = auth_mod.TemplateStore.load(args.store)
    decision = auth_mod.authenticate(model, store, args.user, iter(segments))
    print(
        json.dumps(
            {
                "outcome": decision.outcome,
                "votes_for": decision.votes_for,
                "votes_against": decision.votes_against,
                "elapsed_signal_s": decision.elapsed_signal_s,
            }
        )
    )
    return 0


def cmd_selftest(args):
    ok = checks.run_selftest(verbose=print)
    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ppgauth",
        description="Synthetic PPG quality/identity workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--days", type=int, default=1)
    p.add_argument("--activities", default="sit,walk")
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--fs", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--drift", type=float, default=None,
                   help="override per-subject day-drift sigma")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("preprocess", help="resample/filter/segment a dataset")
    p.add_argument("--in", dest="in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fs", type=float, default=60.0)
    p.add_argument("--window", type=float, default=6.0)
    p.add_argument("--overlap", type=float, default=2.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="switch-train the multi-task model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="subject-independent fold evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="quality pass-rate sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--thresholds", default="0,0.2,0.4,0.6,0.8,0.9,0.95")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("crossday", help="cross-day evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--gap", type=int, choices=[1, 2, 3, 4], required=True)
    p.add_argument("--fine-tune", dest="fine_tune", action="store_true")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--pairs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_crossday)

    p = sub.add_parser("ablate", help="ablation grid over one axis")
    p.add_argument("--axis", choices=["window", "fs", "channels"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--settings", default=None, help="comma list overriding defaults")
    p.add_argument("--config", default=None)
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--pairs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("auth", help="enroll or verify over a recorded stream")
    p.add_argument("action", choices=["enroll", "verify"])
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--quality-threshold", type=float, default=0.8)
    p.set_defaults(func=cmd_auth)

    p = sub.add_parser("selftest", help="gradient and metric-oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    level = os.environ.get("PPGAUTH_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (MetricUndefinedError, NumericDegeneracyError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 5
    except SchemaVersionError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 4
    except (DatasetError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3
    except ArgumentError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except PpgError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
