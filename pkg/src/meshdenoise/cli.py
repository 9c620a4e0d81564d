"""Command line interface: synth, train, denoise, eval, classify.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
An optional config file of ``key = value`` lines supplies defaults that
explicit flags override.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .gcn import load_cascade, save_cascade
from .mesh import MeshError, load_obj, save_obj
from .metrics import evaluate
from .noise import NoiseKind, NoiseSpec, add_noise
from .pipeline import DenoiseParams, denoise_mesh
from .training import TrainingDiverged, TrainSettings, desk_scale_settings, train_cascade
from .voting import classify_mesh


class CliError(Exception):
    """Validation failure reported to stderr with exit code 2."""


def _default_threads() -> int:
    return os.cpu_count() or 1


def _parse_config_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def _load_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise CliError(f"{path}:{lineno}: expected key = value")
                key, _, val = stripped.partition("=")
                values[key.strip().replace("-", "_")] = _parse_config_value(val)
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from None
    return values


def _epoch_pair(raw: str) -> tuple[int, ...]:
    try:
        parts = tuple(int(p) for p in raw.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad epochs {raw!r}, expected e.g. 24,16") from None
    if not parts or any(e < 1 for e in parts):
        raise argparse.ArgumentTypeError("epochs must be positive")
    return parts


def build_parser(config_defaults: dict | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshdenoise",
        description="Feature-preserving mesh denoising with cascaded graph convolutions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value file supplying flag defaults")
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        p.add_argument(
            "--threads",
            type=int,
            default=_default_threads(),
            help="worker threads for patch building; 1 guarantees bit-reproducibility",
        )

    p_synth = sub.add_parser("synth", help="add synthetic noise to a clean mesh")
    p_synth.add_argument("input", help="clean OBJ mesh")
    p_synth.add_argument("output", help="noisy OBJ mesh to write")
    p_synth.add_argument("--kind", choices=["gaussian", "impulsive"], default="gaussian")
    p_synth.add_argument("--level", type=float, default=None,
                         help="sigma as fraction of mean edge length, or vertex fraction "
                              "(required here or in the config file)")
    p_synth.add_argument("--strength", type=float, default=None,
                         help="impulsive displacement strength (defaults to --level)")
    common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train a cascade from a manifest of mesh pairs")
    p_train.add_argument("manifest", help="lines of noisy_path<TAB>clean_path")
    p_train.add_argument("output", help="model checkpoint to write")
    p_train.add_argument("--desk-scale", action="store_true",
                         help="reduced preset: channel widths / 4, epochs 8,4")
    p_train.add_argument("--stages", type=int, default=2)
    p_train.add_argument("--epochs", type=_epoch_pair, default=None,
                         help="per-stage epoch counts, e.g. 24,16 (default; desk preset 8,4)")
    p_train.add_argument("--batch-size", type=int, default=None,
                         help="default 128 (desk preset 32)")
    p_train.add_argument("--lr", type=float, default=None,
                         help="default 1e-4 (desk preset 1e-3)")
    p_train.add_argument("--k", type=float, default=4.0, help="patch radius scale")
    p_train.add_argument("--nodes", type=int, default=64, help="graph node budget")
    p_train.add_argument("--knn", type=int, default=8, help="dynamic neighborhood size")
    p_train.add_argument("--balance-ratio", type=float, default=1.5)
    p_train.add_argument("--width-divisor", type=int, default=None,
                         help="divide all channel widths (1 = full scale)")
    p_train.add_argument("--val-fraction", type=float, default=0.1)
    p_train.add_argument("--vertex-iters", type=int, default=15)
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_train.add_argument("--report-dir", default=None,
                         help="directory for the training log and curve figure "
                              "(default: next to the checkpoint)")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_den = sub.add_parser("denoise", help="denoise a mesh with a trained cascade")
    p_den.add_argument("input", help="noisy OBJ mesh")
    p_den.add_argument("output", help="denoised OBJ mesh to write")
    p_den.add_argument("--model", required=True, help="trained checkpoint")
    p_den.add_argument("--refine-iters", type=int, default=1,
                       help="bilateral normal refinement iterations (12 suits CAD-like meshes)")
    p_den.add_argument("--sigma-r", type=float, default=0.3)
    p_den.add_argument("--vertex-iters", type=int, default=15)
    p_den.add_argument("--stages", type=int, default=None,
                       help="use only the first n cascade stages")
    p_den.add_argument("--batch-size", type=int, default=256)
    p_den.add_argument("--report", default=None, metavar="GROUND_TRUTH",
                       help="also evaluate against this clean mesh")
    p_den.add_argument("--report-dir", default=None,
                       help="write report.tsv and figures here (with --report)")
    common(p_den)
    p_den.set_defaults(func=cmd_denoise)

    p_eval = sub.add_parser("eval", help="compare a denoised mesh against ground truth")
    p_eval.add_argument("denoised")
    p_eval.add_argument("ground_truth")
    p_eval.add_argument("--samples-per-face", type=int, default=10)
    p_eval.add_argument("--per-face", default=None, help="write per-face angular errors here")
    p_eval.add_argument("--report-dir", default=None,
                        help="write report.tsv and figures here")
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_cls = sub.add_parser("classify", help="label facets flat/edge/corner/transitional")
    p_cls.add_argument("input")
    p_cls.add_argument("--k", type=float, default=4.0, help="patch radius scale")
    p_cls.add_argument("--out", default=None, help="output file (default stdout)")
    common(p_cls)
    p_cls.set_defaults(func=cmd_classify)

    if config_defaults:
        for p in (p_synth, p_train, p_den, p_eval, p_cls):
            known = {a.dest for a in p._actions}
            p.set_defaults(**{k: v for k, v in config_defaults.items() if k in known})
    return parser


def _load_mesh(path: str):
    if not Path(path).exists():
        raise CliError(f"no such mesh file: {path}")
    return load_obj(path)


def cmd_synth(args) -> int:
    if args.level is None:
        raise CliError("--level is required (flag or config file)")
    mesh = _load_mesh(args.input)
    spec = NoiseSpec(NoiseKind(args.kind), args.level, args.strength, args.seed)
    save_obj(add_noise(mesh, spec), args.output)
    return 0


def _read_manifest(path: str):
    if not Path(path).exists():
        raise CliError(f"no such manifest: {path}")
    pairs = []
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 2:
                problems.append(f"line {lineno}: expected noisy<TAB>clean")
                continue
            noisy_path, clean_path = parts
            try:
                noisy = load_obj(noisy_path)
                clean = load_obj(clean_path)
            except (OSError, MeshError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            if not np.array_equal(noisy.faces, clean.faces):
                problems.append(f"line {lineno}: connectivity differs: {noisy_path} vs {clean_path}")
                continue
            pairs.append((noisy, clean))
    if problems:
        raise CliError("manifest validation failed:\n  " + "\n  ".join(problems))
    if not pairs:
        raise CliError("manifest lists no training pairs")
    return pairs


def cmd_train(args) -> int:
    from .report import plot_training_curves, write_training_log

    pairs = _read_manifest(args.manifest)
    if args.desk_scale:
        settings = desk_scale_settings()
    else:
        settings = TrainSettings()
    overrides = dict(
        stages=args.stages,
        k=args.k,
        node_budget=args.nodes,
        knn=args.knn,
        balance_ratio=args.balance_ratio,
        seed=args.seed,
        val_fraction=args.val_fraction,
        vertex_iterations=args.vertex_iters,
        threads=args.threads,
    )
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.width_divisor is not None:
        overrides["width_divisor"] = args.width_divisor
    from dataclasses import replace

    settings = replace(settings, **overrides)

    resume = None
    if args.resume:
        if not Path(args.resume).exists():
            raise CliError(f"no such checkpoint: {args.resume}")
        resume = load_cascade(args.resume)

    out_path = Path(args.output)
    report_dir = Path(args.report_dir) if args.report_dir else out_path.parent
    report_dir.mkdir(parents=True, exist_ok=True)
    try:
        cascade, records, states = train_cascade(pairs, settings, resume=resume)
    except TrainingDiverged as exc:
        save_cascade(out_path, exc.cascade, exc.states)
        write_training_log(exc.records, report_dir / "training_log.tsv")
        print(f"error: {exc}; last valid checkpoint saved to {out_path}", file=sys.stderr)
        return 1
    save_cascade(out_path, cascade, states)
    write_training_log(records, report_dir / "training_log.tsv")
    plot_training_curves(records, report_dir / "training_curves.png")
    final = records[-1]
    print(f"trained {len(cascade.models)} stage(s); final validation E_a {final.val_ea:.2f}")
    return 0


def cmd_denoise(args) -> int:
    if not Path(args.model).exists():
        raise CliError(f"no such model file: {args.model}")
    cascade, _ = load_cascade(args.model)
    mesh = _load_mesh(args.input)
    params = DenoiseParams(
        refine_iterations=args.refine_iters,
        sigma_r=args.sigma_r,
        vertex_iterations=args.vertex_iters,
        stages=args.stages,
        batch_size=args.batch_size,
        threads=args.threads,
        seed=args.seed,
    )
    result = denoise_mesh(mesh, cascade, params)
    save_obj(result, args.output)
    if args.report:
        reference = _load_mesh(args.report)
        report = evaluate(result, reference, seed=args.seed)
        for line in report.lines():
            print(line)
        if args.report_dir:
            from .report import write_eval_report

            write_eval_report(report, args.report_dir)
    return 0


def cmd_eval(args) -> int:
    denoised = _load_mesh(args.denoised)
    reference = _load_mesh(args.ground_truth)
    try:
        report = evaluate(denoised, reference, args.samples_per_face, args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    for line in report.lines():
        print(line)
    if args.per_face:
        from .report import write_per_face_errors

        write_per_face_errors(report.per_face_degrees, args.per_face)
    if args.report_dir:
        from .report import write_eval_report

        write_eval_report(report, args.report_dir)
    return 0


def cmd_classify(args) -> int:
    mesh = _load_mesh(args.input)
    labels = classify_mesh(mesh, args.k)
    lines = [f"{i} {label.value}" for i, label in enumerate(labels)]
    if args.out:
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    config_defaults = None
    if "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 >= len(argv):
            print("error: --config needs a path", file=sys.stderr)
            return 2
        try:
            config_defaults = _load_config_file(argv[idx + 1])
        except CliError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    parser = build_parser(config_defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (CliError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
