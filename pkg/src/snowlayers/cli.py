"""Command-line entry point: ``snowlayers <command> ...``.

Every option can also be supplied through an environment variable named
``SNOWLAYERS_<OPTION>`` (upper case, dashes as underscores); flags given on
the command line win. Exit status: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import accum, benchmark, data, evaluation, postproc, report, wavelet
from .model import VARIANTS, ModelConfig, Network
from .train import PRESETS, TrainConfig, load_checkpoint, train

ENV_PREFIX = "SNOWLAYERS_"


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    p.add_argument("--threads", type=_positive_int, default=1, help="BLAS threads; 1 gives bitwise determinism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snowlayers", description="Trace snow layers in radar echograms.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--images", type=_positive_int, default=8)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--layers", type=_positive_int, default=6)
    p.add_argument("--speckle", type=float, default=0.5)
    p.add_argument("--blur", type=float, default=0.7)
    p.add_argument("--decay", type=float, default=0.08)
    p.add_argument("--meters-per-row", type=float, default=data.DEFAULT_METERS_PER_ROW)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--arch", choices=VARIANTS, default="skipwavenet")
    p.add_argument("--wavelet", choices=wavelet.available_banks() + ["db"], default="haar")
    p.add_argument("--width", type=_positive_int, default=4, help="base channel width (64 = full VGG-16 plan)")
    p.add_argument("--side-outputs", default=None, help="comma-separated active side outputs, e.g. 1,2,3,4")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk-scale")
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=_positive_int, default=None)
    p.add_argument("--lam", type=float, default=None, help="class-balance weight")
    p.add_argument("--max-iterations", type=_positive_int, default=None)
    p.add_argument("--augment", action="store_true", help="apply the 5x scale/flip augmentation")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = sub.add_parser("predict", help="run a checkpoint over a manifest")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("nms", help="thin predictions with column-wise non-maximum suppression")
    _add_common(p)
    p.add_argument("--predictions", required=True, type=Path, help="predictions manifest from `predict`")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--radius", type=_positive_int, default=1)

    p = sub.add_parser("eval", help="ODS/OIS/AP of thinned predictions")
    _add_common(p)
    p.add_argument("--predictions", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="EvalReport JSON")
    p.add_argument("--thresholds", type=_positive_int, default=evaluation.DEFAULT_THRESHOLDS)
    p.add_argument("--tol", type=float, default=None, help="match distance in pixels (default from image diagonal)")
    p.add_argument("--curve-csv", type=Path, default=None)
    p.add_argument("--matching", choices=evaluation.MATCHINGS, default="optimal")

    p = sub.add_parser("depth", help="extract layers at the ODS threshold and add depth MAE to a report")
    _add_common(p)
    p.add_argument("--predictions", required=True, type=Path)
    p.add_argument("--report", required=True, type=Path, help="EvalReport JSON, updated in place unless --out")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--min-pixels", type=int, default=evaluation.DEFAULT_MIN_PIXELS)

    p = sub.add_parser("accum", help="water-equivalent accumulation rates from a layer CSV")
    _add_common(p)
    p.add_argument("--layers", required=True, type=Path)
    p.add_argument("--density", required=True, type=Path, help="CSV depth_m,density_kgm3")
    p.add_argument("--mode", choices=accum.MODES, default="piecewise-linear")
    p.add_argument("--meta", type=Path, default=None)
    p.add_argument("--meters-per-row", type=float, default=None)
    p.add_argument("--mae", type=float, default=None, help="tracing MAE in pixels for uncertainty")
    p.add_argument("--years-per-layer", type=float, default=1.0)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("report", help="SVG with PR curve and layer overlay")
    _add_common(p)
    p.add_argument("--eval", required=True, type=Path, dest="eval_report")
    p.add_argument("--echogram", required=True, type=Path)
    p.add_argument("--layers", type=Path, default=None, help="ground-truth layer CSV")
    p.add_argument("--pred-layers", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("pipeline", help="predict, nms, eval and depth in one go")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--radius", type=_positive_int, default=1)
    p.add_argument("--thresholds", type=_positive_int, default=evaluation.DEFAULT_THRESHOLDS)
    p.add_argument("--matching", choices=evaluation.MATCHINGS, default="optimal")

    p = sub.add_parser("benchmark", help="train and compare all variants on synthetic data")
    _add_common(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--train-images", type=_positive_int, default=64)
    p.add_argument("--test-images", type=_positive_int, default=16)
    p.add_argument("--iterations", type=_positive_int, default=400)
    p.add_argument("--seeds", type=_positive_int, default=3, help="number of training seeds per variant")
    p.add_argument("--wavelet", choices=wavelet.available_banks() + ["db"], default="haar")
    p.add_argument("--width", type=_positive_int, default=4)

    p = sub.add_parser("wavelet", help="wavelet utilities")
    wsub = p.add_subparsers(dest="wavelet_command", required=True)
    d = wsub.add_parser("dump-filters", help="write filter taps as CSV")
    _add_common(d)
    d.add_argument("--names", default="haar,db2,dmey")
    d.add_argument("--out", type=Path, default=None)

    _apply_env(parser)
    return parser


def _subparsers(parser):
    yield parser
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                yield from _subparsers(child)


def _apply_env(parser):
    """Environment defaults; required flags satisfied from the environment become optional.

    String defaults go through the option's type converter at parse time, so a
    malformed value is reported as a usage error.
    """
    for p in _subparsers(parser):
        for action in p._actions:
            if not action.option_strings or action.dest == "help":
                continue
            raw = os.environ.get(ENV_PREFIX + action.dest.upper())
            if raw is None:
                continue
            if isinstance(action, argparse._StoreTrueAction):
                action.default = raw.lower() in ("1", "true", "yes", "on")
            else:
                action.default = raw
            action.required = False


def _check_choices(parser, args):
    # argparse does not validate defaults against choices; env values arrive as defaults
    for p in _subparsers(parser):
        for action in p._actions:
            if action.choices is None or not action.option_strings:
                continue
            value = getattr(args, action.dest, None)
            if p.prog.split()[-1] in (args.command, getattr(args, "wavelet_command", None)) \
                    and value is not None and value not in action.choices:
                p.error(f"argument {action.option_strings[0]}: invalid choice: {value!r} "
                        f"(choose from {', '.join(map(repr, action.choices))})")


def _limit_threads(n):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load_pairs(manifest):
    entries = data.read_manifest(manifest)
    return entries, [data.load_entry(e) for e in entries]


def cmd_synth(args):
    args.out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.images)
    entries = []
    for i, s in enumerate(seeds):
        params = data.SynthParams(seed=int(s), rows=args.rows, cols=args.cols, layer_count=args.layers,
                                  speckle=args.speckle, blur=args.blur, decay=args.decay,
                                  meters_per_row=args.meters_per_row)
        image, layers = data.synthesize(params)
        stem = f"echogram_{i:04d}"
        data.write_egm(args.out / f"{stem}.egm", image)
        data.write_layers_csv(args.out / f"{stem}.csv", layers)
        data.write_meta(args.out / f"{stem}.json", meters_per_row=args.meters_per_row, seed=int(s))
        entries.append({"image": f"{stem}.egm", "layers": f"{stem}.csv", "meta": f"{stem}.json"})
    data.write_manifest(args.out / "manifest.json", entries)
    print(f"wrote {len(entries)} echograms and {args.out / 'manifest.json'}")


def cmd_train(args):
    _, pairs = _load_pairs(args.manifest)
    if args.augment:
        pairs = data.augment_dataset(pairs)
    samples = [(img[0], data.rasterize(layers, *img.shape[-2:])) for img, layers in pairs]
    sides = None if args.side_outputs is None else tuple(int(s) for s in args.side_outputs.split(","))
    mcfg = ModelConfig(variant=args.arch, wavelet=args.wavelet, base_width=args.width, active_side_outputs=sides)
    overrides = {"epochs": args.epochs, "learning_rate": args.lr, "batch_size": args.batch_size, "lam": args.lam,
                 "max_iterations": args.max_iterations}
    tcfg = TrainConfig.from_preset(args.preset, seed=args.seed, **{k: v for k, v in overrides.items() if v is not None})
    resume = load_checkpoint(args.resume, mcfg) if args.resume else None
    result = train(mcfg, samples, tcfg, out_dir=args.out, resume=resume)
    (args.out / "config.json").write_text(json.dumps(
        {"model": mcfg.to_dict(), "train": {k: getattr(tcfg, k) for k in tcfg.__dataclass_fields__}},
        indent=2, sort_keys=True) + "\n")
    last = result.log[-1]["loss"] if result.log else float("nan")
    print(f"trained {len(result.log)} iterations, final loss {last:.6g}; checkpoint {result.checkpoint_path}")


def _predict(checkpoint, manifest, out: Path):
    ckpt = load_checkpoint(checkpoint)
    net = Network(ckpt.model_config)
    entries = data.read_manifest(manifest)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, e in enumerate(entries):
        image = data.read_egm(e["image"])
        pred = net.predict(ckpt.params, image)
        name = f"prediction_{i:04d}.egm"
        data.write_egm(out / name, pred)
        rec = {"image": os.path.relpath(e["image"], out), "prediction": name,
               "layers": os.path.relpath(e["layers"], out)}
        if e.get("meta"):
            rec["meta"] = os.path.relpath(e["meta"], out)
        records.append(rec)
    path = out / "predictions.json"
    path.write_text(json.dumps(records, indent=2) + "\n")
    return path


def _read_predictions(path: Path):
    records = json.loads(Path(path).read_text())
    base = Path(path).parent
    out = []
    for r in records:
        if "prediction" not in r or "layers" not in r:
            raise data.FormatError(f"{path}: each record needs 'prediction' and 'layers'")
        out.append({k: str(base / v) for k, v in r.items()})
    return out


def _nms(predictions: Path, out: Path, radius: int):
    out.mkdir(parents=True, exist_ok=True)
    cfg = postproc.NmsConfig(radius)
    records = []
    for i, r in enumerate(_read_predictions(predictions)):
        thin = postproc.nms_vertical(data.read_egm(r["prediction"]), cfg)
        name = f"nms_{i:04d}.egm"
        data.write_egm(out / name, thin)
        rec = {k: os.path.relpath(v, out) for k, v in r.items()}
        rec["prediction"] = name
        records.append(rec)
    path = out / "predictions.json"
    path.write_text(json.dumps(records, indent=2) + "\n")
    return path


def _gt_layers(record):
    mpr = data.read_meta(record["meta"])["meters_per_row"] if record.get("meta") else data.DEFAULT_METERS_PER_ROW
    return data.read_layers_csv(record["layers"], mpr)


def _eval(predictions: Path, out: Path, thresholds, tol, curve_csv=None, matching="optimal"):
    records = _read_predictions(predictions)
    pairs = []
    for r in records:
        pred = data.read_egm(r["prediction"])[0, 0]
        pairs.append((pred, data.rasterize(_gt_layers(r), *pred.shape)))
    scores = evaluation.ods_ois(pairs, thresholds, tol, matching)
    rep = evaluation.EvalReport(scores["curve"], scores["ods"], scores["ois"], scores["ap"])
    Path(out).write_text(rep.to_json())
    if curve_csv:
        Path(curve_csv).write_text(rep.curve_csv())
    return rep


def _depth(predictions: Path, report_path: Path, out: Path, min_pixels):
    rep = evaluation.EvalReport.from_dict(json.loads(Path(report_path).read_text()))
    records = _read_predictions(predictions)
    preds = [data.read_egm(r["prediction"])[0, 0] for r in records]
    gts = [_gt_layers(r) for r in records]
    evaluation.add_depth_metrics(rep, preds, gts, min_pixels)
    out = Path(out)
    out.write_text(rep.to_json())
    layer_dir = out.parent / "predicted_layers"
    layer_dir.mkdir(exist_ok=True)
    for i, (pred, gt) in enumerate(zip(preds, gts)):
        layers = evaluation.mask_to_layers(postproc.binarize(pred, rep.ods["threshold"]), min_pixels,
                                           gt.meters_per_row)
        data.write_layers_csv(layer_dir / f"layers_{i:04d}.csv", layers)
    return rep


def cmd_predict(args):
    print(f"wrote {_predict(args.checkpoint, args.manifest, args.out)}")


def cmd_nms(args):
    print(f"wrote {_nms(args.predictions, args.out, args.radius)}")


def cmd_eval(args):
    rep = _eval(args.predictions, args.out, args.thresholds, args.tol, args.curve_csv, args.matching)
    print(f"ODS {rep.ods['f']:.4f} @ {rep.ods['threshold']:.2f}  OIS {rep.ois:.4f}  AP {rep.ap:.4f}")


def cmd_depth(args):
    rep = _depth(args.predictions, args.report, args.out or args.report, args.min_pixels)
    mae = "n/a" if rep.mae_overall is None else f"{rep.mae_overall:.4f}"
    print(f"MAE {mae} px, coverage {rep.coverage:.3f}")


def cmd_pipeline(args):
    pred = _predict(args.checkpoint, args.manifest, args.out / "raw")
    thin = _nms(pred, args.out / "nms", args.radius)
    report_path = args.out / "eval_report.json"
    _eval(thin, report_path, args.thresholds, None, args.out / "pr_curve.csv", args.matching)
    rep = _depth(thin, report_path, report_path, evaluation.DEFAULT_MIN_PIXELS)
    mae = "n/a" if rep.mae_overall is None else f"{rep.mae_overall:.4f}"
    print(f"ODS {rep.ods['f']:.4f}  OIS {rep.ois:.4f}  AP {rep.ap:.4f}  MAE {mae}; report {report_path}")


def cmd_accum(args):
    layers = data.read_layers_csv(args.layers)
    mpr = args.meters_per_row
    if mpr is None:
        mpr = data.read_meta(args.meta)["meters_per_row"] if args.meta else data.DEFAULT_METERS_PER_ROW
    profile = accum.read_density_csv(args.density, args.mode)
    rep = accum.water_equivalent_rates(layers, profile, mpr, args.years_per_layer, args.mae)
    args.out.write_text(rep.to_json())
    print(f"wrote {len(rep.layers)} layer rates to {args.out}")


def cmd_report(args):
    try:
        rep = evaluation.EvalReport.from_dict(json.loads(args.eval_report.read_text()))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise data.FormatError(f"{args.eval_report}: malformed evaluation report ({exc})") from None
    image = data.read_egm(args.echogram)
    gt = data.read_layers_csv(args.layers) if args.layers else None
    pred = data.read_layers_csv(args.pred_layers) if args.pred_layers else None
    args.out.write_text(report.render_svg(rep, image, gt, pred))
    print(f"wrote {args.out}")


def cmd_benchmark(args):
    seeds = tuple(args.seed + k for k in range(args.seeds))
    result = benchmark.run_benchmark(args.train_images, args.test_images, wavelet=args.wavelet, seeds=seeds,
                                     iterations=args.iterations, base_width=args.width, data_seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "benchmark.json").write_text(benchmark.to_json(result))
    table = benchmark.format_table(result)
    (args.out / "benchmark.md").write_text(table)
    print(table, end="")


def cmd_wavelet(args):
    text = wavelet.dump_filters_csv([n.strip() for n in args.names.split(",") if n.strip()])
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "nms": cmd_nms, "eval": cmd_eval,
    "depth": cmd_depth, "accum": cmd_accum, "report": cmd_report, "pipeline": cmd_pipeline,
    "benchmark": cmd_benchmark, "wavelet": cmd_wavelet,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_choices(parser, args)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with _limit_threads(args.threads):
            COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"snowlayers {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
