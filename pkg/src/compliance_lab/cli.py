"""Command-line interface.

Subcommands: simulate, collect, train, grow, calibrate, evaluate, plot-data.
Each reads a config (file path or preset name), writes its declared outputs
and prints a one-line JSON summary to stdout.  Exit status is non-zero on
any error.  COMPLIANCE_LAB_LOG_LEVEL controls stderr logging.
"""

import argparse
import json
import logging
import os
import sys

from .backend import BACKEND_NAME
from .errors import ComplianceLabError

log = logging.getLogger("compliance_lab")


def _summary(payload):
    print(json.dumps(payload, sort_keys=True))


def _add_common(p):
    p.add_argument("--config", required=True, help="config file path or preset name")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--models", nargs="*", default=[], help="extra model container paths")
    p.add_argument("--strict", action="store_true", help="fail on singular configurations")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="compliance-lab",
        description="Adaptive force-impedance wiping lab: simulate, learn, detect, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario and write its logs")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("collect", help="run a clean pinned execution and emit a training dataset")
    _add_common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one predictive model on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset.csv from collect")
    p.add_argument("--out", required=True, help="model container path (.json)")

    p = sub.add_parser("grow", help="train an additional model on a flagged run's samples")
    _add_common(p)
    p.add_argument("--run", required=True, help="directory of the flagged run (simulate output)")
    p.add_argument("--out", required=True, help="new model container path (.json)")

    p = sub.add_parser("calibrate", help="derive the abnormal-score threshold from clean data")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="threshold JSON path")

    p = sub.add_parser("evaluate", help="recompute run metrics from written logs")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None, help="optional metrics JSON path")

    p = sub.add_parser("plot-data", help="emit plot-ready panel CSVs from written logs")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True, help="panel output directory")
    return parser


def _load_config(args):
    from .scenario import load_config

    return load_config(args.config, seed_override=args.seed, extra_model_paths=args.models)


def _cmd_simulate(args):
    from .harness import run_scenario

    cfg = _load_config(args)
    result = run_scenario(cfg, out_dir=args.out)
    payload = {
        "command": "simulate",
        "scenario": cfg.name,
        "out": args.out,
        "backend": BACKEND_NAME,
        "ticks": int(result.control.shape[0]),
        "detector_ticks": int(result.detector.shape[0]),
        "metrics": result.metrics.to_dict(),
        "fault_tick": result.audit["fault_tick"],
    }
    _summary(payload)
    return 3 if result.audit["fault_tick"] is not None else 0


def _cmd_collect(args):
    from .harness import collect_training_data

    cfg = _load_config(args)
    data_path, result = collect_training_data(cfg, args.out)
    _summary(
        {
            "command": "collect",
            "scenario": cfg.name,
            "dataset": data_path,
            "samples": int(result.samples.shape[0]),
            "backend": BACKEND_NAME,
        }
    )
    return 0


def _cmd_train(args):
    from .harness import train_from_dataset
    from .model_io import save_model

    cfg = _load_config(args)
    if not os.path.exists(args.dataset):
        raise ComplianceLabError(f"dataset not found: {args.dataset}")
    model, curve = train_from_dataset(args.dataset, cfg)
    save_model(model, args.out)
    _summary(
        {
            "command": "train",
            "model": args.out,
            "epochs": len(curve),
            "nll_first": curve[0],
            "nll_final": curve[-1],
        }
    )
    return 0


def _cmd_grow(args):
    from .detector import windows_from_samples
    from .harness import load_dataset
    from .mdn_gru import train
    from .model_io import load_model, save_model

    cfg = _load_config(args)
    samples_path = os.path.join(args.run, "samples.csv")
    if not os.path.exists(samples_path):
        raise ComplianceLabError(f"flagged run has no samples log: {samples_path}")
    existing = [load_model(p) for p in cfg.model_paths]
    v_samples, f_samples = load_dataset(samples_path)
    v, f = windows_from_samples(v_samples, f_samples, cfg.detector.window_len)
    model, curve = train(v, f, cfg.training)
    save_model(model, args.out)
    _summary(
        {
            "command": "grow",
            "model": args.out,
            "ensemble_size": len(existing) + 1,
            "windows": int(v.shape[0]),
            "nll_final": curve[-1],
        }
    )
    return 0


def _cmd_calibrate(args):
    from .harness import calibrate_from_dataset
    from .model_io import load_model

    cfg = _load_config(args)
    if not cfg.model_paths:
        raise ComplianceLabError("calibrate needs at least one model (--models or config ensemble)")
    if not os.path.exists(args.dataset):
        raise ComplianceLabError(f"dataset not found: {args.dataset}")
    models = [load_model(p) for p in cfg.model_paths]
    threshold, scores = calibrate_from_dataset(args.dataset, models, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "threshold": threshold,
                "calibration_k": cfg.detector.calibration_k,
                "score_window": cfg.detector.score_window,
                "n_scores": int(scores.size),
            },
            fh,
            sort_keys=True,
            indent=1,
        )
        fh.write("\n")
    _summary({"command": "calibrate", "threshold": threshold, "out": args.out})
    return 0


def _cmd_evaluate(args):
    from .harness import evaluate_run

    cfg = _load_config(args)
    metrics = evaluate_run(args.run, cfg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"metrics": metrics.to_dict()}, fh, sort_keys=True, indent=1)
            fh.write("\n")
    _summary({"command": "evaluate", "run": args.run, "metrics": metrics.to_dict()})
    return 0


def _cmd_plot_data(args):
    from .harness import write_plot_data

    cfg = _load_config(args)
    write_plot_data(args.run, args.out, cfg)
    _summary({"command": "plot-data", "run": args.run, "out": args.out})
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "collect": _cmd_collect,
    "train": _cmd_train,
    "grow": _cmd_grow,
    "calibrate": _cmd_calibrate,
    "evaluate": _cmd_evaluate,
    "plot-data": _cmd_plot_data,
}


def main(argv=None):
    logging.basicConfig(
        stream=sys.stderr,
        level=os.environ.get("COMPLIANCE_LAB_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ComplianceLabError as exc:
        log.error("%s", exc)
        print(json.dumps({"error": str(exc), "command": args.command}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": str(exc), "command": args.command}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
