"""Command-line entry points: gen, train, ablate, gradcheck, export-gates.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every failure
prints one line to stderr starting with ``usage error:`` or ``error:``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import figures, reports, trainer
from .avfs import AVFSError, read_avfs, write_avfs
from .config import ConfigError, ExperimentConfig, default_config, load_config, write_echo
from .metrics import EmotionTrack
from .synthdata import generate
from .trainer import AblationRow, HyperParams, TrainingDiverged

GRADCHECK_TOL = 1e-4
GRADCHECK_CONFIGS = 20


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="dcafusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode_flag=True):
        p.add_argument("--config", metavar="PATH", help="experiment config JSON")
        p.add_argument("--seed", type=_u64, metavar="U64", help="seed override")
        p.add_argument("--out", metavar="DIR", help="output directory override")
        if mode_flag:
            p.add_argument("--mode", choices=["ca", "dca"], help="fusion mode")

    p = sub.add_parser("gen", help="write synthetic feature files from config")
    common(p, mode_flag=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one fusion mode")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train all configured modes over several seeds")
    common(p, mode_flag=False)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the taped gradients")
    p.add_argument("--seed", type=_u64, metavar="U64", default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-gates", help="train a dca run and dump per-clip gate weights")
    common(p)
    p.set_defaults(func=cmd_export_gates)

    return parser


def _u64(text: str) -> int:
    value = int(text)
    if value < 0 or value >= 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=args.out)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _dataset(cfg: ExperimentConfig, out: Path):
    """Load features from AVFS files in the output dir when present, else generate."""
    train_path, val_path = out / "train.avfs", out / "val.avfs"
    if train_path.exists() and val_path.exists():
        data = read_avfs(train_path), read_avfs(val_path)
        print(f"loaded features from {train_path} and {val_path}")
        return data
    return generate(cfg.generator)


def cmd_gen(args) -> int:
    cfg, out = _resolve(args)
    if args.seed is not None:
        cfg = replace(cfg, generator=replace(cfg.generator, emission_seed=args.seed))
    train_seqs, val_seqs = generate(cfg.generator)
    write_avfs(out / "train.avfs", train_seqs)
    write_avfs(out / "val.avfs", val_seqs)
    write_echo(cfg, out / "config_echo.json")
    print(f"wrote {len(train_seqs)} train / {len(val_seqs)} val sequences to {out}")
    return 0


def _with_seed(cfg: ExperimentConfig, seed) -> ExperimentConfig:
    if seed is None:
        return cfg
    return replace(cfg, hyper=replace(cfg.hyper, seed=seed))


def cmd_train(args) -> int:
    if not args.mode:
        raise UsageError("train requires --mode <ca|dca>")
    cfg, out = _resolve(args)
    cfg = _with_seed(cfg, args.seed)
    data = _dataset(cfg, out)
    result = trainer.train(args.mode, data, cfg.hyper)
    rows = [
        AblationRow(result.mode, result.seed, result.ccc_valence, result.ccc_arousal,
                    result.best_epoch)
    ]
    reports.write_results_csv(out / "results.csv", rows)
    write_echo(cfg, out / "config_echo.json")
    figures.save_loss_curves([result], out / "loss_history.png")
    first_val = data[1][0]
    fused, _, _ = trainer.fuse_forward(first_val.xa, first_val.xv, result.final_params,
                                       result.mode)
    pred = EmotionTrack.from_matrix(
        trainer.regression_head(fused, result.final_params.head_W, result.final_params.head_b)
    )
    figures.save_prediction_traces(pred, first_val.labels, out / "predictions.png")
    if cfg.export_gates and result.mode == "dca":
        reports.export_gates(result, data[1], out / "gates.csv")
        figures.save_gate_traces(result, data[1], out / "gates.png")
    print(f"{'mode':<6} {'seed':<6} {'ccc_valence':<14} {'ccc_arousal':<14} epochs_to_best")
    print(f"{result.mode:<6} {result.seed:<6} {result.ccc_valence:<14.4f} "
          f"{result.ccc_arousal:<14.4f} {result.best_epoch}")
    print(f"results written to {out / 'results.csv'}")
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _resolve(args)
    cfg = _with_seed(cfg, args.seed)
    data = _dataset(cfg, out)
    if args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = [cfg.hyper.seed + i for i in range(cfg.n_seeds)]
    table = trainer.ablate(data, seeds, list(cfg.modes), cfg.hyper)
    reports.write_results_csv(out / "results.csv", table.rows)
    write_echo(cfg, out / "config_echo.json")
    figures.save_loss_curves(table.runs, out / "loss_history.png")
    figures.save_ablation_bars(table.summary, out / "ablation_ccc.png")
    if cfg.export_gates:
        for run in table.runs:
            if run.mode == "dca":
                reports.export_gates(run, data[1], out / "gates.csv")
                figures.save_gate_traces(run, data[1], out / "gates.png")
                break
    print(reports.format_summary(table.summary))
    print(f"results written to {out / 'results.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    err = trainer.model_gradient_check(args.seed, configs=GRADCHECK_CONFIGS)
    print(
        f"gradient check: max relative error {err:.3e} over {GRADCHECK_CONFIGS} configs "
        f"(tolerance {GRADCHECK_TOL:.0e})"
    )
    if err >= GRADCHECK_TOL:
        raise TrainingDiverged(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOL:.0e}")
    return 0


def cmd_export_gates(args) -> int:
    mode = args.mode or "dca"
    if mode != "dca":
        raise UsageError("export-gates needs a dca-mode run; ca produces no gates")
    cfg, out = _resolve(args)
    cfg = _with_seed(cfg, args.seed)
    data = _dataset(cfg, out)
    result = trainer.train(mode, data, cfg.hyper)
    reports.export_gates(result, data[1], out / "gates.csv")
    figures.save_gate_traces(result, data[1], out / "gates.png")
    write_echo(cfg, out / "config_echo.json")
    rows = len(data[1]) * data[1][0].clips * 2
    print(f"wrote {rows} gate rows to {out / 'gates.csv'}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, AVFSError, TrainingDiverged, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
