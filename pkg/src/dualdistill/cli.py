"""Command-line surface: synth, run, fuse, eval.

Every config key is a CLI flag; flags override the JSON config file, which
overrides the built-in defaults. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 training divergence. The last stdout line of every
invocation is a machine-parsable ``status=...`` record.
"""

import argparse
import json
import os
import sys

from . import __version__
from .errors import (
    ConfigError,
    DualDistillError,
    InvalidInputError,
    MissingPredictionError,
    ParseError,
    TrainingDivergenceError,
    UnsupportedEvaluationError,
)
from .pipeline import PipelineConfig, evaluate, run
from .network import load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4

_CONFIG_FLAG_TYPES = {
    "total_epochs": int,
    "stage_one_epochs": int,
    "batch_size": int,
    "epsilon": float,
    "zeta": float,
    "beta": float,
    "gamma": float,
    "gu_threshold": float,
    "prompt_period": int,
    "prompt_steps": int,
    "prompt_lr": float,
    "lr0": float,
    "momentum": float,
    "weight_decay": float,
    "seed": int,
    "fusion_schedule": str,
    "wg_form": str,
    "prototype_mode": str,
    "activation": str,
}


def _add_config_flags(parser):
    for name, typ in _CONFIG_FLAG_TYPES.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    parser.add_argument(
        "--fixed-fusion-weight",
        dest="fixed_fusion_weight",
        type=float,
        default=None,
        help="pin the semantic-stream fusion weight instead of the adaptive rule",
    )
    parser.add_argument(
        "--hidden-sizes",
        dest="hidden_sizes",
        type=str,
        default=None,
        help="comma-separated hidden layer widths, e.g. 64,32",
    )
    parser.add_argument(
        "--ablate",
        action="append",
        default=[],
        choices=["kd", "mix", "im", "sr", "self"],
        help="disable one loss component (repeatable)",
    )


def _resolve_config(args):
    values = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                values.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
    for name in list(_CONFIG_FLAG_TYPES) + ["hidden_sizes", "fixed_fusion_weight"]:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if isinstance(values.get("hidden_sizes"), str):
        values["hidden_sizes"] = tuple(int(s) for s in values["hidden_sizes"].split(",") if s)
    for name in getattr(args, "ablate", []):
        values[f"use_{name}"] = False
    try:
        return PipelineConfig.from_dict(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _status(ok, command, **extra):
    kind = "ok" if ok else "error"
    parts = [f"status={kind}", f"command={command}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    print(" ".join(parts))


def cmd_synth(args):
    from . import fileio
    from .synth import (
        default_blackbox_teacher,
        default_domain_pair,
        default_semantic_teacher,
        generate,
    )

    pair = default_domain_pair(
        seed=args.seed,
        dim=args.dim,
        classes=args.classes,
        n_target=args.n,
        angle=args.angle,
        noise=args.noise,
    )
    dataset = generate(pair)
    os.makedirs(args.out, exist_ok=True)
    dataset_path = os.path.join(args.out, "dataset.csv")
    fileio.write_dataset(dataset_path, dataset, class_count=args.classes)
    written = {"dataset": dataset_path}
    if args.with_teachers:
        tb = default_blackbox_teacher(pair)
        tc = default_semantic_teacher(pair)
        tb_path = os.path.join(args.out, "teacher_b.csv")
        tc_path = os.path.join(args.out, "teacher_c.csv")
        fileio.write_prediction_matrix(tb_path, tb.query(dataset.features, dataset.sample_ids))
        fileio.write_prediction_matrix(tc_path, tc.query(dataset.features, dataset.sample_ids))
        written["teacher_b"] = tb_path
        written["teacher_c"] = tc_path
    _status(True, "synth", **written)
    return EXIT_OK


def cmd_fuse(args):
    from . import fileio
    from .fusion import fuse

    yb = fileio.read_prediction_matrix(args.teacher_b)
    yc = fileio.read_prediction_matrix(args.teacher_c, expected_classes=yb.class_count)
    fused, report = fuse(yb, yc, args.threshold)
    fileio.write_prediction_matrix(args.out, fused)
    report_json = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report_json + "\n")
    print(report_json)
    _status(True, "fuse", out=args.out, branch=report.branch)
    return EXIT_OK


def cmd_eval(args):
    from . import fileio

    layout, theta = load_checkpoint(args.checkpoint)
    dataset, _ = fileio.read_dataset(args.data)
    accuracy = evaluate(layout, theta, dataset)
    report = {"checkpoint": args.checkpoint, "data": args.data, "accuracy": accuracy}
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(report, sort_keys=True))
    _status(True, "eval", accuracy=f"{accuracy:.6f}")
    return EXIT_OK


def _load_run_inputs(args, cfg):
    from . import fileio
    from .synth import default_benchmark
    from .teachers import load_file_teacher

    if args.data or args.teacher_b or args.teacher_c:
        if not (args.data and args.teacher_b and args.teacher_c):
            raise ConfigError("file mode needs --data, --teacher-b and --teacher-c together")
        for p in (args.data, args.teacher_b, args.teacher_c):
            if not os.path.exists(p):
                raise InvalidInputError(f"input file not found: {p}")
        dataset, _ = fileio.read_dataset(args.data)
        teacher_b = load_file_teacher(args.teacher_b)
        teacher_c = load_file_teacher(args.teacher_c, expected_classes=teacher_b.class_count)
        inputs = {"data": args.data, "teacher_b": args.teacher_b, "teacher_c": args.teacher_c}
        return dataset, teacher_b, teacher_c, inputs
    _, dataset, teacher_b, teacher_c = default_benchmark(seed=cfg.seed, prompt_lr=cfg.prompt_lr)
    return dataset, teacher_b, teacher_c, {}


def cmd_run(args):
    from . import fileio

    cfg = _resolve_config(args)
    dataset, teacher_b, teacher_c, inputs = _load_run_inputs(args, cfg)

    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.ndjson")
    ckpt_stage1 = os.path.join(args.out, "checkpoint_stage1.bin")
    ckpt_final = os.path.join(args.out, "checkpoint_final.bin")
    manifest_path = os.path.join(args.out, "manifest.json")
    outputs = {
        "metrics": metrics_path,
        "checkpoint_stage1": ckpt_stage1,
        "checkpoint_final": ckpt_final,
    }
    fileio.write_manifest(manifest_path, cfg.to_dict(), cfg.seed, inputs, outputs)

    result = run(cfg, dataset, teacher_b, teacher_c, stage_one_only=(args.stage == "one-only"))

    fileio.write_metrics(metrics_path, result.records)
    save_checkpoint(ckpt_stage1, result.layout, result.theta_stage_one)
    save_checkpoint(ckpt_final, result.layout, result.theta)
    if args.dump_fused:
        fileio.write_prediction_matrix(args.dump_fused, result.initial_fused)
    if args.plot:
        fileio.write_plot_series(os.path.join(args.out, "plot_"), result.records)

    final = result.records[-1]
    extra = {"out": args.out, "epochs": final.epoch}
    if final.target_accuracy is not None:
        extra["accuracy"] = f"{final.target_accuracy:.6f}"
    _status(True, "run", **extra)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dualdistill",
        description="Dual-teacher fusion, distillation and self-training at desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"dualdistill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic covariate-shift benchmark")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--dim", type=int, default=8)
    p_synth.add_argument("--n", type=int, default=2000)
    p_synth.add_argument("--angle", type=float, default=0.45)
    p_synth.add_argument("--noise", type=float, default=0.95)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--with-teachers", action="store_true",
                         help="also export the two synthetic teachers' prediction matrices")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="run the two-stage adaptation")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--config", help="JSON config file; flags override it")
    p_run.add_argument("--data", help="dataset file (file mode)")
    p_run.add_argument("--teacher-b", dest="teacher_b", help="black-box prediction matrix (file mode)")
    p_run.add_argument("--teacher-c", dest="teacher_c", help="semantic-stream prediction matrix (file mode)")
    p_run.add_argument("--stage", choices=["full", "one-only"], default="full")
    p_run.add_argument("--dump-fused", dest="dump_fused", help="write the initial fused labels to this CSV")
    p_run.add_argument("--plot", action="store_true", help="also write two-column series per metric")
    p_run.add_argument("--threads", type=int, default=1,
                       help="reserved; the run is sequential for bit-reproducibility")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_fuse = sub.add_parser("fuse", help="fuse two prediction-matrix files")
    p_fuse.add_argument("--teacher-b", dest="teacher_b", required=True)
    p_fuse.add_argument("--teacher-c", dest="teacher_c", required=True)
    p_fuse.add_argument("--out", required=True)
    p_fuse.add_argument("--report", help="also write the fusion report JSON here")
    p_fuse.add_argument("--threshold", type=float, default=0.05)
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", help="write the accuracy report JSON here")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        _status(False, args.command, kind="config", detail="threads must be >= 1")
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        _status(False, args.command, kind="config", detail=str(exc))
        return EXIT_CONFIG
    except TrainingDivergenceError as exc:
        _status(False, args.command, kind="divergence", detail=str(exc))
        return EXIT_DIVERGENCE
    except (
        ParseError,
        MissingPredictionError,
        UnsupportedEvaluationError,
        InvalidInputError,
        FileNotFoundError,
    ) as exc:
        _status(False, args.command, kind="data", detail=str(exc))
        return EXIT_DATA
    except DualDistillError as exc:
        _status(False, args.command, kind="data", detail=str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
