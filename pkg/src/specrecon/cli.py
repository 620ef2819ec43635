"""Command-line entry point: ``specrecon {synth-rgb,train,eval,predict,gradcheck}``.

Exit codes: 0 success, 1 validation error (bad input, shapes, files),
2 runtime or numerical error (divergence, failed gradient check).
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .data import (FoldSplit, build_patch_dataset, cie1964, load_response_csv, make_folds, read_split_file,
                   synthesize_rgb, write_split_file)
from .errors import SpecReconError, TrainingDiverged
from .formats import load_cube, load_params, load_rgb_png, save_cube, save_rgb_png
from .gradcheck import FAULTS, inject_fault, run_gradcheck, summary
from .inference import enhanced_predict, predict_image
from .metrics import MetricReport, MissingModelError, evaluate_dataset
from .model import ModelConfig, init_params, pass_counter, receptive_field
from .optim import TrainConfig, load_checkpoint, train

log = logging.getLogger("specrecon")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class CommandFailed(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers

def resolve_response(spec):
    if spec in (None, "cie1964"):
        return cie1964()
    path = Path(spec)
    if not path.is_file():
        raise FileNotFoundError(f"response file not found: {path}")
    return load_response_csv(path)


def load_cube_dir(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    paths = sorted(data_dir.glob("*.hscb"))
    if not paths:
        raise FileNotFoundError(f"no .hscb cubes in {data_dir}")
    return {p.stem: load_cube(p) for p in paths}


def find_checkpoint(path):
    path = Path(path)
    if path.is_dir():
        ckpts = sorted((path / "checkpoints").glob("iter_*.srck")) or sorted(path.glob("iter_*.srck"))
        if not ckpts:
            raise FileNotFoundError(f"no checkpoints under {path}")
        return ckpts[-1]
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def source_revision():
    root = Path(__file__).resolve().parent
    digest = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        digest.update(p.relative_to(root).as_posix().encode())
        digest.update(p.read_bytes())
    try:
        git = subprocess.run(["git", "rev-parse", "HEAD"], cwd=root, capture_output=True,
                             text=True, timeout=10).stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        git = None
    return {"git": git, "source_sha256": digest.hexdigest(), "version": __version__}


def write_manifest(directory, args, **resolved):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "arguments": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"},
        "revision": source_revision(),
        "kernel_backend": kernels.BACKEND,
    }
    manifest.update(resolved)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def model_config_from(args):
    return ModelConfig(n_res_blocks=args.n_res_blocks, n_features=args.n_features,
                       n_bottleneck=args.n_bottleneck, out_channels=args.out_channels,
                       long_skip=args.long_skip)


def train_config_from(args, model_cfg):
    patch_in = args.patch_in
    if patch_in is None:
        patch_in = args.patch_out + receptive_field(model_cfg) - 1
    return TrainConfig(lr0=args.lr0, decay_factor=args.decay_factor, decay_every=args.decay_every,
                       total_iters=args.total_iters, batch_size=args.batch_size, patch_in=patch_in,
                       patch_out=args.patch_out, stride=args.stride, seed=args.seed,
                       log_every=args.log_every, checkpoint_every=args.checkpoint_every)


# ---------------------------------------------------------------- commands

def cmd_synth_rgb(args):
    response = resolve_response(args.response)
    for path in map(Path, args.cubes):
        cube = load_cube(path)
        rgb = synthesize_rgb(cube, response)
        stem = path.with_suffix("")
        np.save(f"{stem}.rgb.npy", rgb)
        save_rgb_png(rgb, f"{stem}.rgb.png")
        print(f"{path} -> {stem}.rgb.npy, {stem}.rgb.png")
    return EXIT_OK


def _select_split(args, names):
    if args.split_file:
        split = read_split_file(args.split_file)
        missing = [n for n in names if n not in split.assignments]
        if missing:
            raise ValueError(f"images missing from split file {args.split_file}: {missing}")
        return split
    return make_folds(names, "two_fold", seed=args.seed)


def cmd_train(args):
    model_cfg = model_config_from(args)
    cfg = train_config_from(args, model_cfg)
    cubes = load_cube_dir(args.data_dir)
    response = resolve_response(args.response)
    run_dir = Path(args.run_dir)

    names = list(cubes)
    split = None
    if args.fold is not None:
        split = _select_split(args, names)
        fold = int(args.fold) if split.mode == "two_fold" else args.fold
        names = split.train_names(fold)
        if not names:
            raise ValueError(f"fold {args.fold!r} leaves no training images")

    state, start = None, 0
    if args.resume:
        params, state, start = load_checkpoint(find_checkpoint(args.resume))
        if params.config != model_cfg:
            log.warning("resuming with checkpoint config %s (flags ignored)", params.config)
            cfg = dataclasses.replace(cfg, patch_in=cfg.patch_out + receptive_field(params.config) - 1)
    else:
        params = init_params(model_cfg, seed=args.seed)

    images = []
    for n in names:
        cube = cubes[n].check_radiance()
        images.append((synthesize_rgb(cube, response), cube.data))
    dataset = build_patch_dataset(images, cfg.patch_in, cfg.patch_out, cfg.stride,
                                  augmentation=not args.no_augment)
    log.info("training on %d images, %d patches", len(names), len(dataset))

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "reports").mkdir(exist_ok=True)
    if split is not None:
        write_split_file(split, run_dir / "split.csv")
    write_manifest(run_dir, args, model_config=dataclasses.asdict(params.config),
                   train_config=dataclasses.asdict(cfg), train_images=names, start_iter=start,
                   response=getattr(response, "name", None))
    result = train(params, cfg, dataset, run_dir=run_dir, start_iter=start, state=state)
    final = result.history[-1][2] if result.history else float("nan")
    print(f"trained {cfg.total_iters - start} iterations, final loss {final:.6g}; run dir {run_dir}")
    return EXIT_OK


def _parse_models(entries):
    models = {}
    for entry in entries or []:
        fold, sep, path = entry.partition("=")
        if not sep:
            raise ValueError(f"--model expects FOLD=PATH, got {entry!r}")
        key = int(fold) if fold.lstrip("-").isdigit() else fold
        models[key] = load_params(find_checkpoint(path))
    return models


def cmd_eval(args):
    cubes = load_cube_dir(args.data_dir)
    report_dir = Path(args.report_dir)
    if args.estimates_dir:
        split = read_split_file(args.split_file) if args.split_file else None
        names = [n for f in split.eval_folds() for n in split.test_names(f)] if split else list(cubes)
        report = MetricReport()
        for n in names:
            est_path = Path(args.estimates_dir) / f"{n}.hscb"
            if not est_path.is_file():
                raise FileNotFoundError(f"missing estimate {est_path}")
            report.add(n, load_cube(est_path), cubes[n])
    else:
        models = _parse_models(args.model)
        if not models:
            raise MissingModelError("eval needs --model FOLD=CHECKPOINT or --estimates-dir")
        response = resolve_response(args.response)
        if args.split_file:
            split = read_split_file(args.split_file)
        elif set(models) == {"all"}:
            split = None
        else:
            raise ValueError("--split-file is required when evaluating per-fold models")
        images = {n: (synthesize_rgb(c, response), c) for n, c in cubes.items()}
        if split is None:
            split = FoldSplit({n: "test" for n in cubes}, "provided")
            models = {"test": models["all"]}
        report = evaluate_dataset(models, split, images, enhanced=args.enhanced, tile=args.tile)

    report_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(report_dir / "metrics.csv")
    if args.band_csv:
        report.write_band_csv(report_dir / "band_rmse.csv")
    write_manifest(report_dir, args, images=[n for n, _ in report.rows])
    print(report.table())
    print(f"forward passes: {report.forward_passes}")
    return EXIT_OK


def _load_rgb(path):
    path = Path(path)
    if path.suffix == ".npy":
        rgb = np.load(path)
    else:
        rgb = load_rgb_png(path).astype(np.float32) / 255.0
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"{path}: expected (3, h, w) RGB, got {rgb.shape}")
    return rgb.astype(np.float32)


def cmd_predict(args):
    params = load_params(find_checkpoint(args.checkpoint))
    rgb = _load_rgb(args.rgb)
    fn = enhanced_predict if args.enhanced else predict_image
    cube = fn(params, rgb, tile=args.tile)
    save_cube(cube, args.out)
    print(f"wrote {args.out} ({cube.c} bands, {cube.h}x{cube.w})")
    return EXIT_OK


def cmd_gradcheck(args):
    with inject_fault(args.inject_fault):
        results = run_gradcheck(args.seed, full_width=not args.quick)
    print(summary(results))
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_RUNTIME
    print(f"all {len(results)} checks passed, worst {max(r.max_rel_err for r in results):.3e}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_model_flags(p):
    d = ModelConfig()
    p.add_argument("--n-res-blocks", "--res-blocks", type=int, default=d.n_res_blocks)
    p.add_argument("--n-features", "--features", type=int, default=d.n_features)
    p.add_argument("--n-bottleneck", "--bottleneck", type=int, default=d.n_bottleneck)
    p.add_argument("--out-channels", type=int, default=d.out_channels)
    p.add_argument("--long-skip", action="store_true",
                   help="add the pre-shrink features to the expansion output")


def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--lr0", type=float, default=d.lr0)
    p.add_argument("--decay-factor", type=float, default=d.decay_factor)
    p.add_argument("--decay-every", type=int, default=d.decay_every)
    p.add_argument("--total-iters", type=int, default=d.total_iters)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--patch-in", type=int, default=None,
                   help="input patch side (default: patch-out + receptive field - 1)")
    p.add_argument("--patch-out", "--patch-size", type=int, default=d.patch_out)
    p.add_argument("--stride", type=int, default=d.stride)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--log-every", type=int, default=d.log_every)
    p.add_argument("--checkpoint-every", type=int, default=d.checkpoint_every)


def build_parser():
    parser = argparse.ArgumentParser(prog="specrecon", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-rgb", help="render RGB images from HSCB cubes")
    p.add_argument("cubes", nargs="+")
    p.add_argument("--response", default="cie1964", help="'cie1964' or a wavelength,r,g,b CSV")
    p.set_defaults(func=cmd_synth_rgb)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--response", default="cie1964")
    p.add_argument("--split-file", help="name,fold lines; default is a seeded two-fold split")
    p.add_argument("--fold", help="held-out fold; omit to train on every image")
    p.add_argument("--resume", help="checkpoint file or run directory to continue from")
    p.add_argument("--no-augment", action="store_true")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score held-out images")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--report-dir", required=True)
    p.add_argument("--model", action="append", metavar="FOLD=PATH",
                   help="model for an evaluation fold (0, 1, test, or 'all')")
    p.add_argument("--split-file")
    p.add_argument("--estimates-dir", help="score precomputed <name>.hscb estimates instead")
    p.add_argument("--response", default="cie1964")
    p.add_argument("--enhanced", action="store_true", help="average over the 8 rotations/flips")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--band-csv", action="store_true", help="also write per-band RMSE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="reconstruct one RGB image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True, help=".npy (3, h, w) float or 8-bit PNG")
    p.add_argument("--out", required=True)
    p.add_argument("--enhanced", action="store_true")
    p.add_argument("--tile", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="skip the full-width model check")
    p.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SpecReconError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (RuntimeError, FloatingPointError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
