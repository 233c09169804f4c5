from __future__ import annotations

import argparse
import sys
from collections.abc import Callable
from pathlib import Path

import numpy as np
from ddsr import (
    DivergenceError,
    FormatError,
    ShapeError,
    SpecError,
    TrainConfig,
    apply_ablation,
    build_dataset,
    build_dataset_spec,
    build_train_config,
    evaluate,
    infer_model_config,
    load_checkpoint,
    load_cube,
    load_prepared,
    normalize,
    pad_bands,
    param_count,
    read_key_values,
    run_ablation,
    save_checkpoint,
    save_cube,
    train,
    write_prepared,
)
from ddsr.config import extract_override_flags, render_key_values, seed_from_env
from ddsr.constants import GROUP_SIZE
from ddsr.data import audit_splits, padded_band_count, ungroup_bands
from ddsr.logging import console_callback, make_component_logger, set_log_callback, timed
from ddsr.train_log import write_train_log
from ddsr.trainer import ABLATIONS, ablation_table, predict_groups
from dotenv import load_dotenv
from pydantic import ValidationError

EXIT_OK = 0
EXIT_IO = 2
EXIT_SPEC = 3
EXIT_DIVERGED = 4

emit_cli_log = make_component_logger("cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddsr",
        description="Dual-domain hyperspectral super-resolution: prepare, train, evaluate, apply.",
    )
    parser.add_argument("--verbose", action="store_true", help="Echo log records to stderr")
    subparsers = parser.add_subparsers(dest="command")

    prepare_parser = subparsers.add_parser("prepare", help="Build a prepared dataset directory")
    prepare_parser.add_argument("--input", required=True, type=Path, help="HSR1 scene cube")
    prepare_parser.add_argument("--config", required=True, type=Path, help="key=value manifest")
    prepare_parser.add_argument("--out", required=True, type=Path)

    train_parser = subparsers.add_parser("train", help="Train on a prepared dataset")
    train_parser.add_argument("--data", required=True, type=Path)
    train_parser.add_argument("--config", default=None, type=Path)
    train_parser.add_argument(
        "--ablation",
        default=None,
        choices=[flag for flag, _ in ABLATIONS],
        help="Remove one model component",
    )
    train_parser.add_argument("--out", required=True, type=Path)

    eval_parser = subparsers.add_parser("eval", help="Score a checkpoint on the test split")
    eval_parser.add_argument("--checkpoint", required=True, type=Path)
    eval_parser.add_argument("--data", required=True, type=Path)
    eval_parser.add_argument(
        "--passthrough",
        action="store_true",
        help="Score the reference against itself (sanity mode)",
    )

    sr_parser = subparsers.add_parser("sr", help="Super-resolve a low-resolution cube")
    sr_parser.add_argument("--checkpoint", required=True, type=Path)
    sr_parser.add_argument("--input", required=True, type=Path)
    sr_parser.add_argument("--scale", required=True, type=int)
    sr_parser.add_argument("--out", required=True, type=Path)

    ablate_parser = subparsers.add_parser("ablate", help="Run the component ablation study")
    ablate_parser.add_argument("--data", required=True, type=Path)
    ablate_parser.add_argument("--config", default=None, type=Path)
    ablate_parser.add_argument("--out", required=True, type=Path)

    info_parser = subparsers.add_parser("info", help="Describe a checkpoint and/or dataset")
    info_parser.add_argument("--checkpoint", default=None, type=Path)
    info_parser.add_argument("--data", default=None, type=Path)
    info_parser.add_argument("--scale", default=None, type=int)
    return parser


def resolve_train_config(config_path: Path | None, overrides: dict[str, str]) -> TrainConfig:
    values = read_key_values(config_path) if config_path is not None else {}
    values.update(overrides)
    seed = seed_from_env()
    if seed is not None:
        values["seed"] = str(seed)
    return build_train_config(values)


def prepare_command(args: argparse.Namespace) -> None:
    values = read_key_values(args.config)
    values.update(args.overrides)
    seed = seed_from_env()
    if seed is not None:
        values["seed"] = str(seed)
    spec = build_dataset_spec(values)
    data = build_dataset(load_cube(args.input), spec)
    audit = write_prepared(data, args.out)
    print(audit.to_text(), end="")


def train_command(args: argparse.Namespace) -> None:
    config = apply_ablation(resolve_train_config(args.config, args.overrides), args.ablation)
    data = load_prepared(args.data)
    result = train(config, data)
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out_dir / "best.ckpt")
    write_train_log(result.log, out_dir)
    resolved = config.model_copy(update={"model": result.model})
    _ = (out_dir / "config.txt").write_text(render_key_values(resolved))
    print(
        f"BEST epoch={result.log.best_epoch} val={result.log.best_val:.10g} "
        f"epochs={len(result.log.epochs)} parameters={param_count(result.params)}"
    )


def eval_command(args: argparse.Namespace) -> None:
    data = load_prepared(args.data)
    params = load_checkpoint(args.checkpoint)
    model = infer_model_config(params, data.spec.scale)
    report = evaluate(params, data, model, passthrough=args.passthrough)
    print(report.to_text(), end="")


def sr_command(args: argparse.Namespace) -> None:
    params = load_checkpoint(args.checkpoint)
    model = infer_model_config(params, args.scale)
    cube = normalize(load_cube(args.input))
    target = padded_band_count(cube.bands, model.channels)
    cube = pad_bands(cube, target, group_size=min(model.channels, GROUP_SIZE))
    predicted = ungroup_bands(predict_groups(params, model, cube.values), cube.original_bands)
    if cube.scaling is None:
        raise SpecError(f"{args.input} could not be normalized")
    restored = cube.scaling.denormalize(np.clip(predicted, 0.0, 1.0))
    output = cube.model_copy(update={"values": restored, "scaling": None})
    save_cube(output, args.out)
    print(f"wrote {args.out} ({output.bands}x{output.height}x{output.width})")


def ablate_command(args: argparse.Namespace) -> None:
    config = resolve_train_config(args.config, args.overrides)
    data = load_prepared(args.data)
    table = ablation_table(run_ablation(config, data))
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    _ = (out_dir / "ablation.txt").write_text(table)
    print(table, end="")


def info_command(args: argparse.Namespace) -> None:
    if args.checkpoint is None and args.data is None:
        raise SpecError("info needs --checkpoint and/or --data")
    scale = args.scale
    if args.data is not None:
        data = load_prepared(args.data)
        scale = scale or data.spec.scale
        audit = audit_splits(data.records)
        print(f"dataset: {data.spec.name}")
        print(f"bands: {data.original_bands} (padded {data.padded_bands})")
        print(f"size: {data.cubes[0].height}x{data.cubes[0].width}")
        print(f"scale: {data.spec.scale}")
        print(audit.to_text(), end="")
    if args.checkpoint is not None:
        params = load_checkpoint(args.checkpoint)
        model = infer_model_config(params, scale or 4)
        print(f"checkpoint: {args.checkpoint}")
        print(f"tensors: {len(params)}")
        print(f"parameters: {param_count(params)}")
        print(render_key_values(model), end="")


COMMANDS: dict[str, Callable[[argparse.Namespace], None]] = {
    "prepare": prepare_command,
    "train": train_command,
    "eval": eval_command,
    "sr": sr_command,
    "ablate": ablate_command,
    "info": info_command,
}


def run(argv: list[str]) -> int:
    """Dispatch one command and map library errors onto exit codes."""
    parser = build_parser()
    argv_without_overrides, overrides = extract_override_flags(argv)
    args = parser.parse_args(argv_without_overrides)
    args.overrides = overrides
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_IO
    if args.verbose:
        _ = set_log_callback(console_callback())

    try:
        with timed(emit_cli_log, args.command):
            COMMANDS[args.command](args)
    except DivergenceError as error:
        print(f"error: training diverged: {error}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, OSError) as error:
        parser.print_usage(sys.stderr)
        print(f"error: {error}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, SpecError, ValidationError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_SPEC
    return EXIT_OK


def main() -> None:
    env_file = Path.cwd() / ".env"
    if env_file.exists():
        load_dotenv(env_file)
    else:
        load_dotenv()
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
