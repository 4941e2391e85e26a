"""Command-line front end.

Subcommands wire the library into complete workflows: color conversion,
training-crop ingestion, autoencoder training, single-frame matching,
sequence tracking, error-model calibration, synthetic sequence
generation, and standalone report generation.

Every run writes a ``run_manifest.json`` (command, arguments, seed,
versions) next to its outputs.  All randomness flows from one --seed
flag; when absent, an entropy seed is drawn once and echoed into the
manifest.  Exit codes: 0 success, 2 invalid input, 3 numeric failure,
4 I/O failure.

The environment variable ``DFE_TRACK_THREADS``, when set before startup,
caps the linear-algebra thread pools used for internal parallelism.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("DFE_TRACK_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()

import numpy as np  # noqa: E402  (thread caps must precede the import)

from . import __version__, evalstat, matchcore, raster, svgplot, synthgen, tracker, trainpipe  # noqa: E402
from .dfe import CaeConfig, load_model, loss_curve_to_csv, save_model, train  # noqa: E402
from .errors import DfeTrackError, InvalidInputError, NumericError  # noqa: E402

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _resolve_seed(args) -> int:
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = secrets.randbits(32)
    return int(seed)


def _write_run_manifest(out_dir, args, seed: int) -> None:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": args.command,
        "arguments": {
            k: v for k, v in sorted(vars(args).items())
            if k not in ("func",) and not k.startswith("_")
        },
        "seed": seed,
        "versions": {"dfetrack": __version__, "numpy": np.__version__},
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_labels(path) -> np.ndarray:
    rows = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "frame,x,y":
            raise InvalidInputError(f"{path}: labels header must be frame,x,y, got {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            frame, x, y = line.split(",")
            rows[int(frame)] = (float(x), float(y))
    if not rows:
        raise InvalidInputError(f"{path}: no labels")
    n = max(rows) + 1
    if sorted(rows) != list(range(n)):
        raise InvalidInputError(f"{path}: labels must cover frames 0..{n - 1}")
    return np.array([rows[i] for i in range(n)])


def _load_frames(frames_dir) -> list:
    names = sorted(
        f for f in os.listdir(frames_dir)
        if f.lower().endswith((".png", ".ppm", ".pgm"))
    )
    if len(names) < 1:
        raise InvalidInputError(f"{frames_dir}: no raster frames found")
    return [raster.read_image(os.path.join(frames_dir, n)) for n in names]


def _condition_model(name: str) -> evalstat.ErrorModel:
    catalog = evalstat.load_error_models()
    if name not in catalog:
        raise InvalidInputError(
            f"unknown condition {name!r}; available: {', '.join(sorted(catalog))}"
        )
    return catalog[name]


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_convert(args) -> int:
    targets = {"cielab": raster.CIELAB, "lab01": raster.LAB01, "gray": raster.GRAY01}
    space = targets[args.to]

    def convert_one(src, dst):
        img = raster.read_image(src)
        if args.resize:
            w, h = (int(v) for v in args.resize.lower().split("x"))
            img = raster.resize_bilinear(img, w, h)
        if space == raster.GRAY01:
            out = img if img.space == raster.GRAY01 else raster.to_grayscale(img)
        else:
            if img.space != raster.RGB01:
                raise InvalidInputError(f"{src}: need an RGB source to reach {args.to}")
            lab = raster.rgb_to_cielab(img)
            out = lab if space == raster.CIELAB else raster.normalize_lab(lab)
        raster.write_image(out, dst)

    if os.path.isdir(args.input):
        os.makedirs(args.output, exist_ok=True)
        names = sorted(
            f for f in os.listdir(args.input)
            if f.lower().endswith((".png", ".ppm", ".pgm"))
        )
        for name in names:
            convert_one(os.path.join(args.input, name), os.path.join(args.output, name))
        _write_run_manifest(args.output, args, _resolve_seed(args))
    else:
        convert_one(args.input, args.output)
    return EXIT_OK


def cmd_ingest(args) -> int:
    seed = _resolve_seed(args)
    manifest = trainpipe.build_manifest(
        args.image_dir, seed=seed, heldout_fraction=args.heldout, stride=args.stride
    )
    trainpipe.write_manifest(manifest, args.manifest)
    out_dir = os.path.dirname(os.path.abspath(args.manifest))
    _write_run_manifest(out_dir, args, seed)
    if manifest.skipped:
        print(f"skipped {len(manifest.skipped)} unreadable files", file=sys.stderr)
    print(
        f"{len(manifest)} crops ({len(manifest.split(trainpipe.HELDOUT))} heldout) "
        f"-> {args.manifest}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    manifest = trainpipe.read_manifest(args.manifest, seed=seed)
    image_dir = args.image_dir or os.path.dirname(os.path.abspath(args.manifest))
    crops = trainpipe.load_crops(manifest, image_dir, split=trainpipe.TRAIN)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        raw.setdefault("latent_dim", 128)
        raw["seed"] = seed
        config = CaeConfig.from_dict(raw)
    else:
        config = CaeConfig(seed=seed)
    result = train(
        config,
        crops,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        checkpoint_path=args.checkpoint,
        checkpoint_every=args.checkpoint_every,
        resume_from=args.resume,
        log=lambda e, v: print(f"epoch {e}: training mse {v:.6g}", file=sys.stderr),
    )
    held = trainpipe.load_crops(manifest, image_dir, split=trainpipe.HELDOUT)
    metadata = {"epochs": args.epochs, "final_mse": result.loss_curve[-1][1]}
    if len(held):
        metadata["heldout_mse"] = result.model.reconstruction_loss(held)
        print(f"heldout mse {metadata['heldout_mse']:.6g}", file=sys.stderr)
    save_model(result.model, args.model, metadata=metadata)
    loss_curve_to_csv(result.loss_curve, str(args.model) + ".losses.csv")
    out_dir = os.path.dirname(os.path.abspath(args.model))
    _write_run_manifest(out_dir, args, seed)
    return EXIT_OK


def _lab01(img) -> "raster.PlanarImage":
    if img.space == raster.LAB01:
        return img
    return raster.normalize_lab(raster.rgb_to_cielab(img))


def cmd_match(args) -> int:
    model, _ = load_model(args.model)
    ref = _lab01(raster.read_image(args.ref_frame))
    target = _lab01(raster.read_image(args.target_frame))
    matcher = tracker.DfeMatcher(model)
    matcher.set_reference(ref, (args.ref_x, args.ref_y))
    result, land = matcher.locate_with_landscape(target)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "match.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "pixel_pos": list(result.pixel_pos),
                "subpixel_pos": list(result.subpixel_pos),
                "ssr_min": result.ssr_min,
                "curvature": result.curvature,
                "nn_ratio": result.nn_ratio,
                "accepted": result.accepted,
                "diagnostic": result.diagnostic,
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    if args.emit_landscape:
        matchcore.landscape_to_csv(land, os.path.join(out_dir, "landscape.csv"))
        with open(os.path.join(out_dir, "landscape.svg"), "w", encoding="utf-8") as fh:
            fh.write(svgplot.heatmap(land.ssr, "SSR landscape"))
    _write_run_manifest(out_dir, args, _resolve_seed(args))
    print(f"match at {result.subpixel_pos} (accepted={result.accepted})")
    return EXIT_OK


def cmd_track(args) -> int:
    seed = _resolve_seed(args)
    frames = _load_frames(args.frames_dir)
    labels = _load_labels(args.labels) if args.labels else None
    if args.start:
        sx, sy = (float(v) for v in args.start.split(","))
    elif labels is not None:
        sx, sy = labels[0]
    else:
        raise InvalidInputError("need --start x,y or a labels file for the start point")
    model = None
    if args.matcher == "dfe":
        if not args.model:
            raise InvalidInputError("--matcher dfe requires --model")
        model, _ = load_model(args.model)
    matcher = tracker.make_matcher(args.matcher, model=model)
    scheme = tracker.TrackScheme(
        mode=tracker.FIXED_REFERENCE if args.scheme == "fixed" else tracker.PREVIOUS_FRAME,
        unmatched_policy=(
            tracker.ASSIGN_DIAGONAL if args.unmatched == "assign-diagonal" else tracker.HOLD_LAST
        ),
        ratio_threshold=args.ratio_threshold,
    )
    error_model = _condition_model(args.condition) if args.condition else None
    if labels is not None and len(labels) < len(frames):
        raise InvalidInputError(
            f"labels cover {len(labels)} frames but {len(frames)} frames were read"
        )
    preds, report = tracker.track(
        frames, (sx, sy), matcher, scheme,
        labels=labels, model=error_model,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    if report is None:
        tracker.predictions_to_csv(preds, os.path.join(args.out_dir, "predictions.csv"))
    else:
        tracker.report_to_csv(report, os.path.join(args.out_dir, "track.csv"))
        tracker.report_to_json(report, os.path.join(args.out_dir, "summary.json"))
        _write_report_plots(report, args.out_dir)
    _write_run_manifest(args.out_dir, args, seed)
    if report is not None:
        print(f"mean error {report.mean_error:.3f} px over {len(report.errors)} frames")
    else:
        print(f"tracked {len(preds)} frames (no labels; predictions only)")
    return EXIT_OK


def _write_report_plots(report, out_dir) -> None:
    n = len(report.errors)
    idx = np.arange(1, n + 1)
    with open(os.path.join(out_dir, "sorted_errors.svg"), "w", encoding="utf-8") as fh:
        fh.write(
            svgplot.line_chart(
                {"errors": (idx, np.asarray(report.sorted_errors))},
                "Sorted errors (descending)", "rank", "error [px]",
            )
        )
    with open(os.path.join(out_dir, "cumulative.svg"), "w", encoding="utf-8") as fh:
        fh.write(
            svgplot.line_chart(
                {
                    "cumulative": (idx, np.asarray(report.cumulative)),
                    "99% CI": (idx, np.asarray(report.ci)),
                },
                "Cumulative standardized squared error", "frame", "cumulative",
                log_y=True,
            )
        )
    if n >= 2:
        values = np.sort(report.e_std)
        theo = np.array([evalstat.chi2_cdf(float(v), 2) for v in values])
        emp = (np.arange(n) + 0.5) / n
        with open(os.path.join(out_dir, "pp.svg"), "w", encoding="utf-8") as fh:
            fh.write(
                svgplot.line_chart(
                    {"P-P": (theo, emp)},
                    "P-P against chi-square(2)", "theoretical", "empirical",
                    diagonal=True,
                )
            )


def cmd_calibrate(args) -> int:
    relabels: dict[str, list[tuple[float, float]]] = {}
    with open(args.relabels, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "image_id,attempt,x,y":
            raise InvalidInputError(
                f"{args.relabels}: header must be image_id,attempt,x,y, got {header!r}"
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            image_id, _attempt, x, y = line.rsplit(",", 3)
            relabels.setdefault(image_id, []).append((float(x), float(y)))
    model = evalstat.calibrate_error_model(relabels, condition=args.condition or "custom")
    payload = {
        "condition": model.condition,
        "sigma_x": model.sigma_x,
        "sigma_y": model.sigma_y,
        "samples": sum(len(v) for v in relabels.values()),
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    path_spec = raw.pop("path", None)
    if path_spec:
        kind = path_spec.pop("kind")
        n = raw.get("frame_count", 40)
        if kind == "sinusoidal":
            raw["displacements"] = synthgen.sinusoidal_path(n, **path_spec)
        elif kind == "jitter":
            raw["displacements"] = synthgen.jitter_path(n, **path_spec)
        else:
            raise InvalidInputError(f"unknown path kind {kind!r}")
    gain_ramp = raw.pop("gain_ramp", None)
    if gain_ramp:
        raw["gains"] = synthgen.linear_ramp(raw.get("frame_count", 40), *gain_ramp)
    if "feature" in raw and raw["feature"] is not None:
        raw["feature"] = tuple(raw["feature"])
    spec = synthgen.SynthSpec(**raw)
    frames, truth = synthgen.generate(spec)
    synthgen.export_sequence(frames, truth, args.out_dir)
    _write_run_manifest(args.out_dir, args, _resolve_seed(args))
    print(f"{len(frames)} frames -> {args.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    seed = _resolve_seed(args)
    errors = []
    with open(args.errors, "r", encoding="utf-8") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
        if "err_px" in header:
            col = header.index("err_px")
        elif "err" in header:
            col = header.index("err")
        else:
            raise InvalidInputError(
                f"{args.errors}: need an err_px (or err) column, got {header}"
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            errors.append(float(line.split(",")[col]))
    if not errors:
        raise InvalidInputError(f"{args.errors}: no error rows")
    model = _condition_model(args.condition)
    os.makedirs(args.out_dir, exist_ok=True)
    cdf = evalstat.simulate_distance_cdf(model, samples=args.samples, seed=seed)

    thresholds = {}
    for alpha in (0.5, 0.05, 0.01):
        thresholds[str(alpha)] = {
            "threshold_px": cdf.quantile(1.0 - alpha),
            "mc_stderr_px": cdf.quantile_stderr(1.0 - alpha),
        }
    frame_errors = [
        evalstat.FrameError(frame=i, dx=e, dy=0.0) for i, e in enumerate(errors)
    ]
    weighted = [evalstat.weighted_error(e, model, cdf) for e in errors]
    chi2 = evalstat.chi2_statistic(frame_errors, model)
    summary = {
        "condition": model.condition,
        "frames": len(errors),
        "mean_error": float(np.mean(errors)),
        "max_error": float(np.max(errors)),
        "weighted_mean_error": float(np.mean(weighted)),
        "thresholds": thresholds,
        "chi2_statistic": chi2.statistic,
        "chi2_dof": chi2.dof,
        "chi2_p_value": chi2.p_value,
        "chi2_p_underflow": chi2.underflow,
        "mc_samples": args.samples,
    }
    with open(os.path.join(args.out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    n = len(errors)
    srt = sorted(errors, reverse=True)
    with open(os.path.join(args.out_dir, "sorted_errors.csv"), "w", encoding="utf-8") as fh:
        fh.write("rank,err_px\n")
        for i, e in enumerate(srt):
            fh.write(f"{i + 1},{repr(float(e))}\n")

    # Simulated labelling-error distance CDF on a quantile grid.
    qs = np.linspace(0.001, 0.999, 200)
    xs = [cdf.quantile(float(q)) for q in qs]
    with open(os.path.join(args.out_dir, "cdf.csv"), "w", encoding="utf-8") as fh:
        fh.write("distance_px,probability\n")
        for x, q in zip(xs, qs):
            fh.write(f"{repr(float(x))},{repr(float(q))}\n")
    with open(os.path.join(args.out_dir, "cdf.svg"), "w", encoding="utf-8") as fh:
        fh.write(
            svgplot.line_chart(
                {model.condition: (np.asarray(xs), qs)},
                "Simulated labelling-error distance CDF", "distance [px]", "probability",
            )
        )
    pp = evalstat.pp_plot_data(frame_errors, model) if n >= 2 else []
    with open(os.path.join(args.out_dir, "pp.csv"), "w", encoding="utf-8") as fh:
        fh.write("theoretical,empirical\n")
        for t, e in pp:
            fh.write(f"{repr(float(t))},{repr(float(e))}\n")
    if pp:
        with open(os.path.join(args.out_dir, "pp.svg"), "w", encoding="utf-8") as fh:
            arr = np.asarray(pp)
            fh.write(
                svgplot.line_chart(
                    {"P-P": (arr[:, 0], arr[:, 1])},
                    "P-P against chi-square(2)", "theoretical", "empirical",
                    diagonal=True,
                )
            )
    with open(os.path.join(args.out_dir, "sorted_errors.svg"), "w", encoding="utf-8") as fh:
        fh.write(
            svgplot.line_chart(
                {"errors": (np.arange(1, n + 1), np.asarray(srt))},
                "Sorted errors (descending)", "rank", "error [px]",
            )
        )
    _write_run_manifest(args.out_dir, args, seed)
    print(json.dumps({"mean_error": summary["mean_error"], "chi2_p_value": chi2.p_value}))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfetrack",
        description="Skin-feature matching and tracking toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert raster files between color spaces")
    p.add_argument("input", help="input file or directory")
    p.add_argument("output", help="output file or directory")
    p.add_argument("--to", required=True, choices=["cielab", "lab01", "gray"])
    p.add_argument("--resize", help="bilinear resize to WxH before conversion")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("ingest", help="build a training-crop manifest from images")
    p.add_argument("image_dir")
    p.add_argument("manifest", help="output manifest CSV path")
    p.add_argument("--stride", type=int, default=30)
    p.add_argument("--heldout", type=float, default=0.1)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the crop autoencoder")
    p.add_argument("manifest")
    p.add_argument("model", help="output weights file")
    p.add_argument("--image-dir", help="root for manifest image paths")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--config", help="JSON architecture config")
    p.add_argument("--checkpoint")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("match", help="match one reference feature in a target frame")
    p.add_argument("model")
    p.add_argument("ref_frame")
    p.add_argument("ref_x", type=int)
    p.add_argument("ref_y", type=int)
    p.add_argument("target_frame")
    p.add_argument("--out", default=".")
    p.add_argument("--emit-landscape", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("track", help="track a feature through a frame directory")
    p.add_argument("frames_dir")
    p.add_argument("out_dir")
    p.add_argument("--labels", help="ground-truth CSV (frame,x,y)")
    p.add_argument("--start", help="start point x,y (defaults to labels frame 0)")
    p.add_argument("--matcher", choices=["dfe", "lk", "pixel"], default="dfe")
    p.add_argument("--model", help="weights file for the dfe matcher")
    p.add_argument("--scheme", choices=["fixed", "previous"], default="fixed")
    p.add_argument("--condition", help="error-model condition for the report")
    p.add_argument("--ratio-threshold", type=float)
    p.add_argument(
        "--unmatched", choices=["assign-diagonal", "hold-last"], default="assign-diagonal"
    )
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("calibrate", help="estimate an error model from relabels")
    p.add_argument("relabels", help="CSV with header image_id,attempt,x,y")
    p.add_argument("--condition")
    p.add_argument("--out", help="write the model JSON here")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth sequence")
    p.add_argument("spec", help="JSON sequence spec")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="reports and thresholds from an error CSV")
    p.add_argument("errors", help="CSV with an err_px column")
    p.add_argument("--condition", required=True)
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DfeTrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
