"""Batch command line: analyze, heatmap, rank, calibrate, synth.

Every batch command keeps going when one input fails, reports the failure on
stderr and exits with status 2 at the end.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import laplace_regressor as lr
from . import synth
from .errors import SpineCurveError
from .integral_curvature import DEFAULT_GRID_STEP, DEFAULT_RADIUS, composite, heatmap_values
from .mask_io import ScanGrid, load_scan, load_softmask, save_scan, write_ppm
from .dsm_angle import DEFAULT_MIN_DEVIATION
from .pipeline import AnalysisParams, analyze_mask, report_dict

EXIT_OK = 0
EXIT_FAILED = 2
JOBS_ENV = "SPINECURVE_JOBS"


def _pair(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return lo, hi


def _scan_id(path) -> str:
    name = Path(path).name
    for suffix in (".report.json", ".smask"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(name).stem


def _params(args) -> AnalysisParams:
    return AnalysisParams(radius=args.radius, grid_step=args.grid_step, min_deviation=args.min_deviation,
                          percentiles=tuple(args.percentiles), curve_smoothing=args.smooth)


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get(JOBS_ENV, "").strip()
    return max(1, int(env)) if env.isdigit() else 1


def _run_batch(func, items, jobs):
    """Apply ``func`` to every item, in input order, optionally in worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(func, items))


def _guarded(func, *args):
    try:
        return func(*args), None
    except (SpineCurveError, OSError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


# analyze


def _analyze_one(task):
    path, params, model_dict = task

    def work():
        mask = load_softmask(path)
        analysis = analyze_mask(mask, params)
        prediction = None
        if model_dict is not None:
            model = lr.RegressorModel.from_dict(model_dict)
            prediction = lr.predict_angle(model, analysis.report.max_curvature)
        return report_dict(analysis, _scan_id(path), Path(path).name, params, prediction)

    return _guarded(work)


def _load_model_dict(path):
    if path is None:
        return None
    return lr.RegressorModel.load(path).to_dict()


def cmd_analyze(args) -> int:
    params = _params(args)
    model_dict = _load_model_dict(args.model)
    results = _run_batch(_analyze_one, [(p, params, model_dict) for p in args.inputs], _jobs(args))
    status = EXIT_OK
    for path, (report, error) in zip(args.inputs, results):
        if error is not None:
            print(f"{path}: {error}", file=sys.stderr)
            status = EXIT_FAILED
            continue
        out = Path(f"{path}.report.json")
        out.write_text(json.dumps(report, indent=2) + "\n")
        if args.verbose:
            print(f"{path}: angle {report['max_angle_deg']:.2f} deg, kappa {report['max_curvature']:.4f}, "
                  f"noc {report['noc_class']}")
    return status


# heatmap


def _heatmap_one(path, args):
    mask = load_softmask(path)
    analysis = analyze_mask(mask, _params(args))
    heat = heatmap_values(analysis.profile, mask, kappa_range=args.absolute)
    out = Path(args.output) if args.output and len(args.inputs) == 1 else Path(f"{path}.heatmap.pgm")
    if args.ppm or out.suffix.lower() == ".ppm":
        if out.suffix.lower() != ".ppm":
            out = out.with_suffix(".ppm")
        if args.background:
            background = load_scan(args.background)
        else:
            background = ScanGrid(np.max(mask.channels, axis=0).astype(np.float64))
        write_ppm(composite(heat, background, args.alpha), out)
    else:
        save_scan(heat, out, "pgm", binary=not args.ascii, maxval=255)
    return out


def cmd_heatmap(args) -> int:
    status = EXIT_OK
    for path in args.inputs:
        out, error = _guarded(_heatmap_one, path, args)
        if error is not None:
            print(f"{path}: {error}", file=sys.stderr)
            status = EXIT_FAILED
        elif args.verbose:
            print(out)
    return status


# rank


def _rank_one(task):
    path, params = task

    def work():
        if str(path).endswith(".report.json"):
            report = json.loads(Path(path).read_text())
            return report["scan_id"], float(report["max_curvature"]), bool(report["scoliosis_flag"])
        analysis = analyze_mask(load_softmask(path), params)
        rep = analysis.report
        return _scan_id(path), float(rep.max_curvature), bool(rep.scoliosis_flag)

    return _guarded(work)


def cmd_rank(args) -> int:
    params = _params(args)
    results = _run_batch(_rank_one, [(p, params) for p in args.inputs], _jobs(args))
    model = lr.RegressorModel.load(args.model) if args.model else None
    status = EXIT_OK
    entries = []
    for path, (entry, error) in zip(args.inputs, results):
        if error is not None:
            print(f"{path}: {error}", file=sys.stderr)
            status = EXIT_FAILED
            continue
        scan_id, kappa, flag = entry
        predicted = lr.predict_angle(model, kappa)[0] if model is not None else None
        entries.append({"scan_id": scan_id, "max_curvature": kappa, "predicted_angle_deg": predicted,
                        "scoliosis_flag": flag})
    entries.sort(key=lambda e: (-e["max_curvature"], e["scan_id"]))
    if args.format == "json":
        print(json.dumps(entries, indent=2))
    else:
        print("scan_id\tmax_curvature\tpredicted_angle_deg\tscoliosis_flag")
        for e in entries:
            pred = "NA" if e["predicted_angle_deg"] is None else f"{e['predicted_angle_deg']:.4f}"
            print(f"{e['scan_id']}\t{e['max_curvature']!r}\t{pred}\t{str(e['scoliosis_flag']).lower()}")
    return status


# calibrate


def cmd_calibrate(args) -> int:
    try:
        train_data = lr.read_training_csv(args.train_csv)
        val_data = lr.read_training_csv(args.val_csv)
        config = lr.TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, max_epochs=args.max_epochs,
                                patience=args.patience, seed=args.seed)
        model, log = lr.train(train_data, config, val_data=val_data)
    except (SpineCurveError, OSError) as exc:
        print(f"calibrate: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    out = Path(args.output)
    model.save(out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    lr.write_log_csv(log, log_path)
    pred, _ = lr.predict_angle(model, val_data[0])
    mae = float(np.mean(np.abs(pred - val_data[1])))
    print(f"epochs {len(log)}  best val loss {min(r['val_loss'] for r in log):.4f}  val MAE {mae:.3f} deg")
    return EXIT_OK


# synth


def _single_spec(args, i):
    noise_seed = args.seed + i
    kw = dict(noise_sigma=args.noise, seed=noise_seed)
    rows = synth.CANONICAL_ROWS
    if args.shape == "straight":
        return synth.SynthSpec("straight", {}, **kw)
    if args.shape == "arc":
        return synth.SynthSpec("arc", {"radius": args.arc_radius}, **kw)
    if args.shape == "sinusoid":
        return synth.SynthSpec("sinusoid", {"amplitude": args.amplitude, "wavelength": args.wavelength}, **kw)
    if args.shape == "vshape":
        return synth.vshape_for_angle(args.angle, (rows - 1) // 2, **kw)
    return synth.scurve_for_angles(args.angle, args.angle, (round(0.3 * (rows - 1)), round(0.7 * (rows - 1))), **kw)


def cmd_synth(args) -> int:
    try:
        if args.shape == "corpus":
            specs = synth.corpus_specs(args.n, args.angle_range, args.seed, args.noise)
        else:
            specs = [_single_spec(args, i) for i in range(args.n)]
        out_dir = Path(args.out_dir)
        width = max(3, len(str(len(specs) - 1)))
        samples = []
        for i, spec in enumerate(specs):
            mask, truth = synth.generate_softmask(spec)
            samples.append(synth.write_sample(mask, truth, out_dir, f"{args.prefix}{i:0{width}d}"))
    except (SpineCurveError, OSError) as exc:
        print(f"synth: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    manifest = {
        "generator": {"shape": args.shape, "n": args.n, "seed": args.seed, "noise_sigma": args.noise,
                      "angle_range": list(args.angle_range)},
        "samples": samples,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(samples)} sample(s) to {out_dir}")
    return EXIT_OK


def _add_analysis_flags(p):
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS, help="probe disk radius in px")
    p.add_argument("--grid-step", type=float, default=DEFAULT_GRID_STEP, help="area quadrature step in px")
    p.add_argument("--min-deviation", type=float, default=DEFAULT_MIN_DEVIATION,
                   help="segments closer than this to the baseline (px) count as noise")
    p.add_argument("--percentiles", type=_pair, default=(3.0, 97.0), metavar="LO,HI",
                   help="row percentiles of the baseline endpoints")
    p.add_argument("--smooth", type=float, default=AnalysisParams.curve_smoothing,
                   help="Gaussian midcurve smoothing in rows (0 disables)")
    p.add_argument("--jobs", type=int, default=None, help=f"worker processes (default ${JOBS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinecurve", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="write <input>.report.json for each soft mask")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--model", help="regressor JSON; adds a predicted angle to each report")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("heatmap", parents=[common], help="render the curvature heatmap of soft masks")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", help="output path (single input only); .ppm selects a colour composite")
    p.add_argument("--absolute", type=_pair, default=None, metavar="LO,HI",
                   help="fixed kappa range mapped onto 0..255")
    p.add_argument("--ppm", action="store_true", help="composite the colour ramp over a background")
    p.add_argument("--background", help="scan (PGM/CSV) shown under the composite")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--ascii", action="store_true", help="write plain P2 instead of binary P5")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("rank", parents=[common], help="order scans by maximum curvature")
    p.add_argument("inputs", nargs="+", help=".smask files or existing .report.json files")
    p.add_argument("--model", help="regressor JSON for predicted angles")
    p.add_argument("--format", choices=("tsv", "json"), default="tsv")
    _add_analysis_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("calibrate", parents=[common], help="train the curvature-to-angle regressor")
    p.add_argument("train_csv")
    p.add_argument("val_csv")
    p.add_argument("-o", "--output", default="model.json")
    p.add_argument("--log", help="per-epoch loss CSV (default <output>.log.csv)")
    defaults = lr.TrainConfig()
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--max-epochs", type=int, default=defaults.max_epochs)
    p.add_argument("--patience", type=int, default=defaults.patience)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic soft masks with ground truth")
    p.add_argument("--shape", choices=("corpus",) + synth.SHAPES, default="corpus")
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="synth_out")
    p.add_argument("--prefix", default="sample_")
    p.add_argument("--noise", type=float, default=None, help="midline noise sigma in px")
    p.add_argument("--angle", type=float, default=10.0, help="apex angle for vshape / s_curve")
    p.add_argument("--angle-range", type=_pair, default=(1.0, 45.0), metavar="LO,HI")
    p.add_argument("--arc-radius", type=float, default=400.0)
    p.add_argument("--amplitude", type=float, default=5.0)
    p.add_argument("--wavelength", type=float, default=400.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "synth" and args.noise is None:
        args.noise = 0.3 if args.shape == "corpus" else 0.0
    if getattr(args, "jobs", None) is not None and args.jobs < 1:
        raise SystemExit("--jobs must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
