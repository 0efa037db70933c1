"""Single command-line entry point wiring all modules.

Subcommands: gen, augment, train, eval, kfold, featmap, predict. Every
subcommand reads the same flat key-value run config (``--config``), accepts a
few overriding flags, and is fully reproducible: (config, seed) determines
every output byte on a given platform and backend. Directory outputs are
staged and atomically renamed, so failed runs never leave partial artifacts.

Exit codes: 0 success, 1 config parse error, 2 validation error, 3 I/O error.
Failures print one machine-readable line on stderr:
``error code=<n> type=<config|validation|io> message=<text>``.
"""

import argparse
import contextlib
import csv
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import config as runcfg
from . import nn
from .augment import check_augmented_size, iter_augmented_items
from .data import LABELS_FILENAME, LABELS_HEADER, Dataset, item_filename
from .errors import ConfigError, ValidationError
from .evalreport import evaluate, feature_maps, predict, robustness_suite
from .nn.weights_io import WeightsError
from .raster import PpmError, read_ppm, write_ppm_bytes
from .seeding import derive_seed
from .train import generate_dataset, kfold, pretrain_base, train_two_stage

# seed-path tags for internal streams
TAG_AUX_DATA = 101
TAG_INIT = 202

WEIGHTS_NAME = "weights.a2j"
BASE_NAME = "base.a2j"
METRICS_NAME = "metrics.csv"


def _fail_line(code: int, kind: str, exc: BaseException):
    msg = str(exc).replace("\n", " ")
    print(f"error code={code} type={kind} message={msg}", file=sys.stderr)


@contextlib.contextmanager
def _staged_dir(target):
    """Create outputs under a staging dir, renamed to target only on success."""
    target = Path(target)
    if target.exists():
        raise FileExistsError(f"{target}: output path already exists; pick a fresh one")
    if target.parent != Path("") :
        target.parent.mkdir(parents=True, exist_ok=True)
    stage = target.with_name(target.name + ".staging")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir()
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    os.replace(stage, target)


def _write_file_atomic(target, text: str):
    target = Path(target)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, target)


def _load_config(args) -> runcfg.RunConfig:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
    else:
        text = ""
    cfg = runcfg.parse(text, preset_override=args.preset)
    # eval/featmap/predict reuse --out for single files; only dataset/run
    # directories live in paths_out
    dir_out = getattr(args, "out", None) if args.command in ("gen", "augment", "train") \
        else None
    return runcfg.with_overrides(
        cfg,
        seed=args.seed,
        threads=args.threads,
        backend=args.backend,
        gen_count=getattr(args, "n", None),
        augment_copies=getattr(args, "copies", None),
        paths_data=getattr(args, "data", None),
        paths_out=dir_out,
    )


def _make_base_state(cfg, spec, base_path):
    """Load the pretrained base, or pretrain one on auxiliary synthetic data."""
    if base_path:
        return nn.load_weights(spec, base_path)
    aux = generate_dataset(cfg.pretrain_count, cfg.arm_config(), cfg.camera_config(),
                           derive_seed(cfg.seed, TAG_AUX_DATA))
    return pretrain_base(spec, aux, cfg.pretrain_epochs, cfg.pretrain_lr,
                         seed=derive_seed(cfg.seed, TAG_INIT),
                         batch_size=cfg.train_batch)


def cmd_gen(cfg, args) -> int:
    arm = cfg.arm_config()
    cam = cfg.camera_config()
    with _staged_dir(cfg.paths_out) as stage:
        generate_dataset(cfg.gen_count, arm, cam, cfg.seed, stage)
    print(f"gen: wrote {cfg.gen_count} images + {LABELS_FILENAME} to {cfg.paths_out}")
    return 0


def cmd_augment(cfg, args) -> int:
    base = Dataset.load_dir(cfg.paths_data)
    specs = cfg.specs()
    total = check_augmented_size(base, specs, cfg.augment_copies, cfg.augment_max_items)
    with _staged_dir(cfg.paths_out) as stage:
        rows = []
        for k, (img, q) in enumerate(
                iter_augmented_items(base, specs, cfg.augment_copies, cfg.seed)):
            name = item_filename(k)
            write_ppm_bytes(img, stage / name)
            rows.append((name, repr(q)))
        with open(stage / LABELS_FILENAME, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(LABELS_HEADER)
            writer.writerows(rows)
    print(f"augment: wrote {total} images ({len(base)} base + "
          f"{total - len(base)} corrupted) to {cfg.paths_out}")
    return 0


def cmd_train(cfg, args) -> int:
    data = Dataset.load_dir(cfg.paths_data)
    spec = cfg.model_spec()
    tc = cfg.train_config()
    base_state = _make_base_state(cfg, spec, args.base)
    with _staged_dir(cfg.paths_out) as stage:
        nn.save_weights(spec, base_state, stage / BASE_NAME)
        best, report = train_two_stage(spec, base_state, data, tc)
        nn.save_weights(spec, best, stage / WEIGHTS_NAME)
        (stage / METRICS_NAME).write_text(report.metrics_csv())
    secs = sum(r.seconds for r in report.rows)
    print(f"train: {len(report.rows)} epochs in {secs:.1f}s; "
          f"best val mse {report.best_val_mse!r}; "
          f"test mse {report.final_test_mse!r} mae {report.final_test_mae!r}")
    print(f"train: wrote {WEIGHTS_NAME}, {BASE_NAME}, {METRICS_NAME} to {cfg.paths_out}")
    return 0


def cmd_eval(cfg, args) -> int:
    data = Dataset.load_dir(cfg.paths_data)
    spec = cfg.model_spec()
    state = nn.load_weights(spec, args.weights)
    report = evaluate(spec, state, data, cfg.eval_bin_width, cfg.train_batch)
    _write_file_atomic(args.out, report.to_csv())
    print(f"eval: {len(report)} items; mse {report.mse!r} mae {report.mae!r}; "
          f"mean inference {report.mean_inference_seconds:.4f}s/item")
    print(f"eval: wrote {args.out}")
    return 0


def cmd_kfold(cfg, args) -> int:
    data = Dataset.load_dir(cfg.paths_data)
    spec = cfg.model_spec()
    tc = cfg.train_config()
    base_state = _make_base_state(cfg, spec, args.base)
    maes, variance = kfold(spec, data, args.k, tc, base_state)
    lines = ["fold,mae"]
    for i, mae in enumerate(maes, start=1):
        lines.append(f"{i},{float(mae)!r}")
    lines.append(f"# variance = {variance!r}")
    _write_file_atomic(args.out, "\n".join(lines) + "\n")
    print(f"kfold: {args.k} folds; mae per fold "
          f"{[round(float(m), 4) for m in maes]}; variance {variance!r}")
    print(f"kfold: wrote {args.out}")
    return 0


def cmd_featmap(cfg, args) -> int:
    spec = cfg.model_spec()
    state = nn.load_weights(spec, args.weights)
    img = read_ppm(args.image)
    grid = feature_maps(spec, state, img, args.layer, args.out)
    print(f"featmap: layer {args.layer} grid {grid.shape[1]}x{grid.shape[0]} "
          f"-> {args.out}")
    return 0


def cmd_predict(cfg, args) -> int:
    spec = cfg.model_spec()
    state = nn.load_weights(spec, args.weights)
    q_hat, seconds = predict(spec, state, args.image)
    print(f"q_hat = {q_hat!r}")
    print(f"seconds = {seconds!r}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arm2joint",
        description="synthetic continuum-arm image-to-joint regression pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run-config file (key = value lines)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, help="cap kernel worker threads")
        p.add_argument("--backend", choices=("auto", "numba", "numpy"),
                       help="kernel backend override")
        p.add_argument("--preset", choices=("desk", "paper"),
                       help="model/training preset override")
        p.add_argument("--dump-config", action="store_true",
                       help="print the resolved config and exit")
        p.set_defaults(func=func)
        return p

    p = add("gen", cmd_gen, "render a synthetic labeled dataset")
    p.add_argument("--n", type=int, help="number of images (gen.count)")
    p.add_argument("--out", help="output dataset directory")

    p = add("augment", cmd_augment, "corrupt a dataset with the configured specs")
    p.add_argument("--data", help="input dataset directory")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--copies", type=int, help="corrupted copies per spec per image")

    p = add("train", cmd_train, "run the two-stage training protocol")
    p.add_argument("--data", help="input dataset directory")
    p.add_argument("--out", help="output run directory")
    p.add_argument("--base", help="pretrained base weights file "
                                  "(default: pretrain on auxiliary synthetic data)")

    p = add("eval", cmd_eval, "evaluate weights on a dataset's test split")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", help="input dataset directory")
    p.add_argument("--out", default="eval.csv", help="per-item report CSV")

    p = add("kfold", cmd_kfold, "contiguous unshuffled k-fold cross-validation")
    p.add_argument("--data", help="input dataset directory")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--base", help="pretrained base weights file")
    p.add_argument("--out", default="kfold.csv", help="per-fold report CSV")

    p = add("featmap", cmd_featmap, "export an activation grid as PGM")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True, help="input PPM image")
    p.add_argument("--layer", type=int, default=4,
                   help="architecture-table row (1 = input)")
    p.add_argument("--out", default="featmap.pgm")

    p = add("predict", cmd_predict, "predict the joint variable for one image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True, help="input PPM image")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.dump_config:
            sys.stdout.write(runcfg.dump(cfg))
            return 0
        nn.kernels.set_backend(None if cfg.backend == "auto" else cfg.backend)
        nn.kernels.set_threads(cfg.threads)
        return args.func(cfg, args)
    except ConfigError as exc:
        _fail_line(1, "config", exc)
        return 1
    except ValidationError as exc:
        _fail_line(2, "validation", exc)
        return 2
    except (OSError, PpmError, WeightsError) as exc:
        _fail_line(3, "io", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
