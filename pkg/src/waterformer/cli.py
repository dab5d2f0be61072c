"""Command-line entry point: synthesize, train, enhance, evaluate, ablate,
inspect. Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error.
Logs go to stderr, data to stdout or files.
"""

import argparse
import sys
import time
from pathlib import Path

import yaml

from . import data as data_mod
from . import metrics as metrics_mod
from . import training
from .errors import (CheckpointError, ConfigurationError, DimensionError,
                     DomainError, IngestionError)
from .model import ModelConfig, count_macs, count_params


def _log(msg):
    print(msg, file=sys.stderr)


def _load_config_file(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"config file not found: {path}")
    loaded = yaml.safe_load(path.read_text()) or {}
    if not isinstance(loaded, dict):
        raise IngestionError(f"config file {path} must hold a key-value mapping")
    return loaded


def _merge_configs(args):
    """File section defaults, then variant registry, then CLI flags."""
    file_cfg = _load_config_file(args.config)
    model_dict = ModelConfig().to_dict()
    model_dict.update(file_cfg.get("model", {}))
    train_dict = training.TrainConfig().to_dict()
    train_dict.update(file_cfg.get("train", {}))

    variant = args.variant or train_dict.get("variant", "v5")
    model_cfg, train_cfg = training.variant_configs(
        variant, ModelConfig.from_dict(model_dict),
        training.TrainConfig.from_dict(train_dict))

    train_dict = train_cfg.to_dict()
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("lr0", "lr0"), ("seed", "seed"), ("size", "image_size")):
        value = getattr(args, flag, None)
        if value is not None:
            train_dict[key] = value
    if getattr(args, "no_augment", False):
        train_dict["augment"] = False
    return model_cfg, training.TrainConfig.from_dict(train_dict)


def cmd_synthesize(args):
    clean_dir = Path(args.clean_dir)
    if args.generate_clean:
        if not clean_dir.is_dir() or not any(clean_dir.iterdir()):
            _log(f"generating {args.count} procedural clean images in {clean_dir}")
            data_mod.generate_clean_images(clean_dir, args.count,
                                           size=args.size or 64, seed=args.seed)
    types = [t.strip() for t in args.types.split(",") if t.strip()]
    manifest = data_mod.build_synthetic_corpus(
        clean_dir, args.out_dir, types, (args.depth_min, args.depth_max),
        args.count, args.seed, size=args.size)
    _log(f"wrote {len(manifest.entries)} pairs under {args.out_dir}")
    print(Path(args.out_dir) / "manifest.txt")
    return 0


def cmd_train(args):
    manifest = data_mod.load_manifest(args.data)
    model_cfg, train_cfg = _merge_configs(args)
    result = training.train(manifest, model_cfg, train_cfg, args.out, log=_log)
    print(result["checkpoint"])
    return 0


def cmd_enhance(args):
    model, payload = training.load_model(args.checkpoint)
    in_path = Path(args.input)
    if not in_path.exists():
        raise IngestionError(f"input not found: {in_path}")
    paths = data_mod.list_images(in_path) if in_path.is_dir() else [in_path]
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)

    _log(f"model: {count_params(model) / 1e6:.3f}M params, "
         f"{count_macs(model, 256, 256) / 1e9:.3f}G MACs at 256x256")
    for path in paths:
        img = data_mod.decode_image(path)
        t0 = time.perf_counter()
        out = model.enhance(data_mod.to_tensor(img))
        dt = time.perf_counter() - t0
        out_path = out_dir / (path.stem + ".png")
        data_mod.encode_image(data_mod.to_image(out), out_path)
        _log(f"{path.name}: {dt:.3f}s -> {out_path}")
    print(out_dir)
    return 0


def cmd_evaluate(args):
    pred_paths = {p.stem: p for p in data_mod.list_images(args.pred)}
    report = metrics_mod.MetricReport()
    if args.no_ref:
        for stem in sorted(pred_paths):
            pred = data_mod.decode_image(pred_paths[stem])
            report.add(stem, **{k: v for k, v in
                                metrics_mod.evaluate_pair(stem, pred).items()
                                if k != "id"})
    else:
        if args.ref is None:
            raise ConfigurationError("either --ref or --no-ref is required")
        ref_paths = {p.stem: p for p in data_mod.list_images(args.ref)}
        orphans = sorted(set(pred_paths) ^ set(ref_paths))
        if orphans:
            raise IngestionError(
                "basename mismatch between --pred and --ref: " + ", ".join(orphans))
        for stem in sorted(pred_paths):
            pred = data_mod.decode_image(pred_paths[stem])
            ref = data_mod.decode_image(ref_paths[stem])
            row = metrics_mod.evaluate_pair(stem, pred, ref,
                                            nrmse_normalization=args.nrmse_norm)
            report.add(stem, **{k: v for k, v in row.items() if k != "id"})

    csv_text = report.to_csv()
    print(csv_text, end="")
    if args.out:
        Path(args.out).write_text(csv_text)
    _log(report.summary())
    return 0


def _flag(value):
    return "✓" if value else "w/o"


def cmd_ablate(args):
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in training.VARIANTS:
            raise ConfigurationError(
                f"unknown variant {v!r}; known: {', '.join(sorted(training.VARIANTS))}")
    manifest = data_mod.load_manifest(args.data)
    args.variant = None
    _, base_train = _merge_configs(args)

    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for name in variants:
        _log(f"--- variant {name}")
        results.append(training.run_variant(
            name, manifest, base_train,
            out_dir=out_dir / name if out_dir else None, log=_log))

    header = "variant,crb,cfb,chroma,sobel,ssim,psnr"
    lines = [header]
    for r in results:
        f = r["flags"]
        lines.append(",".join([
            r["variant"], _flag(f["crb"]), _flag(f["cfb"]),
            _flag(f["chroma"]), _flag(f["sobel"]),
            f"{r['ssim']:.4f}", f"{r['psnr']:.2f}"]))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if out_dir:
        (out_dir / "ablation.csv").write_text(table)
    return 0


def cmd_inspect(args):
    if args.checkpoint:
        model, payload = training.load_model(args.checkpoint)
        cfg = model.cfg
        print(f"checkpoint: {args.checkpoint}")
        print(f"epoch: {payload['epoch']}  global_step: {payload['global_step']}  "
              f"seed: {payload['seed']}")
    else:
        args.variant = args.variant or "v5"
        args.config = getattr(args, "config", None)
        model_cfg, _ = _merge_configs(args)
        from .model import WaterFormer
        model = WaterFormer(model_cfg)
        cfg = model_cfg
    print(f"config: {cfg.to_dict()}")
    print(f"params: {count_params(model)} ({count_params(model) / 1e6:.3f}M)")
    macs = count_macs(model, args.size, args.size)
    print(f"macs@{args.size}x{args.size}: {macs} ({macs / 1e9:.3f}G)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="waterformer",
        description="Underwater image enhancement: synthesis, training, "
                    "inference, evaluation, and ablations.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synthesize", help="build a synthetic paired corpus")
    p.add_argument("--clean-dir", required=True, help="directory of clean source images")
    p.add_argument("--out-dir", required=True, help="corpus output directory")
    p.add_argument("--types", default="I,3", help="comma-separated water types")
    p.add_argument("--depth-min", type=float, default=1.0, help="minimum depth in meters")
    p.add_argument("--depth-max", type=float, default=8.0, help="maximum depth in meters")
    p.add_argument("--count", type=int, default=10, help="number of clean images to use")
    p.add_argument("--seed", type=int, default=0, help="corpus RNG seed")
    p.add_argument("--size", type=int, default=None, help="resize clean images to this square size")
    p.add_argument("--generate-clean", action="store_true",
                   help="fill an empty --clean-dir with procedural images first")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="train a model on a manifest")
    p.add_argument("--data", required=True, help="path to manifest.txt")
    p.add_argument("--out", required=True, help="output directory for checkpoints")
    p.add_argument("--config", default=None, help="YAML config file (CLI flags override)")
    p.add_argument("--variant", default=None, help="ablation variant name")
    p.add_argument("--epochs", type=int, default=None, help="training epochs")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size", help="batch size")
    p.add_argument("--lr0", type=float, default=None, help="initial learning rate")
    p.add_argument("--seed", type=int, default=None, help="training seed")
    p.add_argument("--size", type=int, default=None, help="training image size")
    p.add_argument("--no-augment", action="store_true", help="disable flip/rotation augmentation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="run a checkpoint over images")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, help="image file or directory")
    p.add_argument("--output", required=True, help="output directory for PNGs")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score predictions")
    p.add_argument("--pred", required=True, help="directory of predicted images")
    p.add_argument("--ref", default=None, help="directory of reference images")
    p.add_argument("--no-ref", action="store_true",
                   help="no-reference mode: UCIQE/UIQM only")
    p.add_argument("--nrmse-norm", choices=("frobenius", "minmax"),
                   default="frobenius", dest="nrmse_norm",
                   help="NRMSE normalization variant")
    p.add_argument("--out", default=None, help="also write the CSV table here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score ablation variants")
    p.add_argument("--variants", required=True, help="comma-separated variant names")
    p.add_argument("--data", required=True, help="path to manifest.txt")
    p.add_argument("--out", default=None, help="output directory for per-variant runs")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--epochs", type=int, default=None, help="epochs per variant")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size", help="batch size")
    p.add_argument("--lr0", type=float, default=None, help="initial learning rate")
    p.add_argument("--seed", type=int, default=None, help="seed shared by all variants")
    p.add_argument("--size", type=int, default=None, help="training image size")
    p.add_argument("--no-augment", action="store_true", help="disable augmentation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="report params, MACs, and config")
    p.add_argument("--checkpoint", default=None, help="checkpoint to inspect")
    p.add_argument("--variant", default=None, help="registry variant to inspect")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--size", type=int, default=256, help="resolution for the MAC count")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        _log(f"usage error: {exc}")
        return 2
    except (IngestionError, CheckpointError, DomainError, DimensionError) as exc:
        _log(f"data error: {exc}")
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _log(f"runtime error: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
