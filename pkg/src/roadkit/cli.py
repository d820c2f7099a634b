"""Command-line interface: every pipeline stage as a subcommand.

All commands accept ``--config`` (a JSON file mirroring the pipeline
config, unknown keys rejected) and ``--seed``; flags always override the
file.  Exit codes: 0 success, 1 operation error, 2 usage error.
Diagnostics go to standard error, results to files and standard out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields as dataclass_fields
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import annotations as annot
from .annotations import (
    VocParseError,
    distribution_stats,
    format_voc,
    read_manifest,
    split_dataset,
    write_manifest,
    write_stats_csv,
    write_yolo,
)
from .geometry import crop_annotations, is_large, lower_left_region
from .metrics import best_f1_sweep, f1_at, f1_sweep, map50, per_class_ap, pr_curve, write_eval_csv
from .numerics import (
    BatchNormParams,
    Conv2dParams,
    Tensor3,
    batchnorm_infer,
    conv2d,
    fuse_conv_bn,
    load_weight_arrays,
    save_weight_arrays,
)
from .orchestrator import (
    LatencyReport,
    OnnxBackend,
    StubBackend,
    read_detections_jsonl,
    run_pipeline,
    write_challenge_csv,
    write_detections_jsonl,
    write_latency_csv,
)
from .seeding import rng_for
from .types import (
    Annotation,
    Box,
    DamageClass,
    ImageRecord,
    PipelineConfig,
    Split,
    validate_config,
)

logger = logging.getLogger(__name__)

CONFIG_PATH_KEYS = frozenset({"dataset_root", "model_normal", "model_large", "output_dir"})


class UsageError(Exception):
    """Bad invocation or unusable input file; maps to exit code 2."""


def load_cli_config(path: str | Path) -> tuple[PipelineConfig, dict[str, str]]:
    """Read a JSON config file; returns (pipeline config, path entries).

    Keys are either pipeline fields or the path entries (dataset_root,
    model_normal, model_large, output_dir); anything else is rejected.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise UsageError("config must be a JSON object")
    known = {f.name for f in dataclass_fields(PipelineConfig)}
    unknown = set(payload) - known - CONFIG_PATH_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg_kwargs = {k: v for k, v in payload.items() if k in known}
    try:
        cfg = PipelineConfig(**cfg_kwargs)
    except TypeError as exc:
        raise UsageError(f"bad config value: {exc}") from exc
    problems = validate_config(cfg)
    if problems:
        raise UsageError("invalid config: " + "; ".join(problems))
    paths = {k: str(payload[k]) for k in CONFIG_PATH_KEYS if k in payload}
    return cfg, paths


def _resolve_config(args: argparse.Namespace) -> tuple[PipelineConfig, dict[str, str]]:
    cfg, paths = PipelineConfig(), {}
    if getattr(args, "config", None):
        cfg, paths = load_cli_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg, paths


def _open_manifest(path: str) -> list[ImageRecord]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    try:
        return read_manifest(p)
    except ValueError as exc:
        raise UsageError(f"bad manifest {p}: {exc}") from exc


# --- subcommands ---


def cmd_convert(args: argparse.Namespace) -> int:
    voc_dir = Path(args.voc_dir)
    if not voc_dir.is_dir():
        raise UsageError(f"not a directory: {voc_dir}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    converted = errored = skipped_objects = 0
    for xml_path in sorted(voc_dir.rglob("*.xml")):
        try:
            result = annot.parse_voc(xml_path.read_text())
            if result.object_errors:
                raise VocParseError("; ".join(result.object_errors))
        except (VocParseError, OSError) as exc:
            errored += 1
            print(f"{xml_path}: {exc}", file=sys.stderr)
            continue
        skipped_objects += result.skipped
        lines = write_yolo(result.annotations, result.image_dims)
        target = out_dir / xml_path.relative_to(voc_dir).with_suffix(".txt")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("\n".join(lines) + ("\n" if lines else ""))
        converted += 1
    print(f"converted {converted} errored {errored} skipped_objects {skipped_objects}")
    if errored and not args.keep_going:
        return 1
    return 0


def cmd_crop(args: argparse.Namespace) -> int:
    cfg, _ = _resolve_config(args)
    size = args.size if args.size is not None else cfg.crop_size
    if size <= 0:
        raise UsageError(f"crop size must be positive, got {size}")
    records = _open_manifest(args.manifest)
    thresholds = (cfg.large_min_width, cfg.large_min_height)
    out: list[ImageRecord] = []
    cropped = kept = dropped = modified = 0
    for rec in records:
        large = is_large((rec.width, rec.height), thresholds)
        if large and rec.width >= size and rec.height >= size:
            region = lower_left_region((rec.width, rec.height), size)
            outcome = crop_annotations(rec.annotations, region)
            cropped += 1
            kept += len(outcome.kept)
            dropped += outcome.dropped
            modified += outcome.modified
            out.append(
                ImageRecord(
                    id=rec.id,
                    folder=rec.folder + args.folder_suffix,
                    width=size,
                    height=size,
                    annotations=outcome.kept,
                    split=rec.split,
                )
            )
        else:
            kept += len(rec.annotations)
            out.append(rec)
    write_manifest(out, args.out_manifest)
    print(f"cropped {cropped} images; labels kept {kept} modified {modified} dropped {dropped}")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    cfg, _ = _resolve_config(args)
    if not 0.0 < args.val_fraction < 1.0:
        raise UsageError(f"--val-fraction must be in (0,1), got {args.val_fraction}")
    records = _open_manifest(args.manifest)
    out = split_dataset(records, args.val_fraction, cfg.seed, frozenset(args.train_only))
    write_manifest(out, args.out_manifest)
    counts = {s: 0 for s in Split}
    for rec in out:
        counts[rec.split] += 1
    summary = " ".join(f"{s.value} {n}" for s, n in counts.items() if n)
    print(f"split {len(out)} images: {summary}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    records = _open_manifest(args.manifest)
    report = distribution_stats(records)
    out_csv = Path(args.out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", encoding="utf-8") as fh:
        write_stats_csv(report, fh)
    if not args.no_figure:
        from .report import save_distribution_figure

        save_distribution_figure(report, out_csv.with_suffix(".png"))
    print(
        f"{report.total_images()} images, {report.total_labels()} labels "
        f"across {len(report.class_counts)} folders -> {out_csv}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg, _ = _resolve_config(args)
    det_path = Path(args.detections)
    if not det_path.is_file():
        raise UsageError(f"detections file not found: {det_path}")
    with open(det_path, "r", encoding="utf-8") as fh:
        preds_by_image = read_detections_jsonl(fh)
    preds = [d for dets in preds_by_image.values() for d in dets]
    records = _open_manifest(args.manifest)
    gts = {r.id: r.annotations for r in records}

    conf = args.conf if args.conf is not None else cfg.conf_normal
    ap = per_class_ap(preds, gts, args.iou)
    mean_ap = map50(preds, gts, args.iou)
    precision, recall, f1 = f1_at(preds, gts, conf, args.iou, average="micro")
    points = f1_sweep(preds, gts, iou_thresh=args.iou)
    best = best_f1_sweep(preds, gts, iou_thresh=args.iou)

    out_csv = Path(args.out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", encoding="utf-8") as fh:
        write_eval_csv(fh, ap, mean_ap, (conf, precision, recall, f1), points)
    if not args.no_figure:
        from .report import save_f1_sweep_figure, save_pr_figure

        save_f1_sweep_figure(points, out_csv.with_suffix(".f1.png"), best)
        curves = {cls: pr_curve(preds, gts, cls, args.iou) for cls in ap}
        save_pr_figure(curves, out_csv.with_suffix(".pr.png"))
    print(
        f"mAP@{args.iou:g} {mean_ap:.4f}  F1 {f1:.4f} at conf {conf:.2f} "
        f"(precision {precision:.4f}, recall {recall:.4f}); "
        f"best F1 {best[1]:.4f} at conf {best[0]:.3f}"
    )
    return 0


def _stub_backends(
    cfg: PipelineConfig, records: Sequence[ImageRecord], input_size: int
) -> dict[str, list]:
    """Two normal-path stubs (an ensemble) plus one large-path stub.

    The large stub shares the first stub's rules so both views of an
    image agree; the second stub gets an independent rule set.
    """
    primary = StubBackend.from_seed(cfg.seed, records, name="stub-a", input_size=input_size)
    secondary = StubBackend.from_seed(cfg.seed + 1, records, name="stub-b", input_size=input_size)
    large = StubBackend(rules=primary.rules, name="stub-large", input_size=cfg.crop_size)
    return {"normal": [primary, secondary], "large": [large]}


def cmd_infer(args: argparse.Namespace) -> int:
    cfg, paths = _resolve_config(args)
    for name in ("batch_large", "batch_normal"):
        value = getattr(args, name)
        if value is not None:
            cfg = replace(cfg, **{name: value})
    records = _open_manifest(args.manifest)
    out_dir = Path(args.out_dir or paths.get("output_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.backend == "stub":
        backends = _stub_backends(cfg, records, args.input_size)
    else:
        model_normal = args.model_normal or paths.get("model_normal")
        model_large = args.model_large or paths.get("model_large")
        if not model_normal or not model_large:
            raise UsageError("onnx backend needs --model-normal and --model-large")
        backends = {
            "normal": [OnnxBackend(model_normal)],
            "large": [OnnxBackend(model_large)],
        }

    result = run_pipeline(records, backends, cfg, jobs=args.jobs)
    rows = list(result.latency.rows)
    for run in range(2, args.repetitions + 1):
        rows.extend(run_pipeline(records, backends, cfg, jobs=args.jobs, run_index=run).latency.rows)
    report = LatencyReport(tuple(rows))

    with open(out_dir / "detections.jsonl", "w", encoding="utf-8") as fh:
        write_detections_jsonl(result.detections, fh)
    with open(out_dir / "detections.csv", "w", encoding="utf-8") as fh:
        write_challenge_csv(result.detections, fh)
    if not args.no_timing:
        with open(out_dir / "latency.csv", "w", encoding="utf-8") as fh:
            write_latency_csv(report, fh)
        if not args.no_figure:
            from .report import save_latency_figure

            save_latency_figure(report, out_dir / "latency.png")
    for image_id, reason in result.failures.items():
        print(f"failed {image_id}: {reason}", file=sys.stderr)

    total = sum(len(d) for d in result.detections.values())
    line = (
        f"{len(result.detections)} images, {total} detections, "
        f"{len(result.failures)} failures -> {out_dir}"
    )
    if not args.no_timing:
        line += f"; {report.mean_seconds_per_image:.4f} s/image"
    print(line)
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg, _ = _resolve_config(args)
    base = Path(args.weights)
    if not base.with_suffix(".json").is_file():
        raise UsageError(f"weights fixture not found: {base.with_suffix('.json')}")
    arrays, meta = load_weight_arrays(base)
    needed = {"conv.weight", "conv.bias", "bn.gamma", "bn.beta", "bn.running_mean", "bn.running_var"}
    missing = needed - set(arrays)
    if missing:
        raise UsageError(f"weights fixture lacks arrays: {', '.join(sorted(missing))}")
    conv = Conv2dParams(
        weights=arrays["conv.weight"],
        bias=arrays["conv.bias"],
        stride=int(meta.get("stride", 1)),
        padding=int(meta.get("padding", 0)),
    )
    bn = BatchNormParams(
        gamma=arrays["bn.gamma"],
        beta=arrays["bn.beta"],
        running_mean=arrays["bn.running_mean"],
        running_var=arrays["bn.running_var"],
        eps=float(meta.get("eps", 1e-5)),
    )
    fused = fuse_conv_bn(conv, bn)
    save_weight_arrays(
        Path(args.out),
        {"conv.weight": fused.weights, "conv.bias": fused.bias},
        meta={"stride": conv.stride, "padding": conv.padding, "fused": 1},
    )

    rng = np.random.default_rng(cfg.seed)
    probe = Tensor3(rng.standard_normal((conv.c_in, args.probe_size, args.probe_size)))
    reference = batchnorm_infer(conv2d(probe, conv), bn)
    folded = conv2d(probe, fused)
    max_error = float(np.max(np.abs(reference.data - folded.data))) if reference.data.size else 0.0
    print(f"max equivalence error {max_error:.3e}")
    return 0


DEMO_FOLDERS = ("Czech", "Japan", "Norway", "United_States")


def _demo_records(count: int, seed: int) -> list[ImageRecord]:
    records = []
    for index in range(count):
        folder = DEMO_FOLDERS[index % len(DEMO_FOLDERS)]
        image_id = f"{folder}_{index:06d}"
        if folder == "Norway":
            width, height = 4040, 2041
        elif folder == "Japan":
            width, height = 720, 720
        else:
            width, height = 640, 640
        rng = rng_for(seed, image_id)
        anns = []
        for _ in range(int(rng.integers(0, 4))):
            w = int(rng.integers(10, width // 4))
            h = int(rng.integers(10, height // 4))
            x = int(rng.integers(0, width - w))
            y = int(rng.integers(0, height - h))
            anns.append(
                Annotation(DamageClass(int(rng.integers(0, 4))), Box(x, y, x + w, y + h))
            )
        records.append(ImageRecord(image_id, folder, width, height, tuple(anns)))
    return records


def cmd_demo(args: argparse.Namespace) -> int:
    cfg, _ = _resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = _demo_records(args.images, cfg.seed)
    write_manifest(records, out_dir / "manifest.jsonl")
    voc_dir = out_dir / "voc"
    voc_dir.mkdir(exist_ok=True)
    for rec in records:
        (voc_dir / f"{rec.id}.xml").write_text(format_voc(rec))
    config = {f.name: getattr(cfg, f.name) for f in dataclass_fields(PipelineConfig)}
    (out_dir / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    print(
        f"wrote {len(records)} records: {out_dir / 'manifest.jsonl'}, "
        f"VOC XMLs in {voc_dir}, config in {out_dir / 'config.json'}"
    )
    return 0


# --- parser wiring ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadkit",
        description="Road damage detection toolkit: annotation conversion, "
        "dataset preparation, evaluation, and batched inference.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (unknown keys rejected)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("convert", help="convert a VOC XML tree to YOLO label files")
    p.add_argument("voc_dir", help="directory containing VOC XML files")
    p.add_argument("out_dir", help="directory for the YOLO .txt files")
    p.add_argument("--keep-going", action="store_true", help="exit 0 even if some files fail")
    common(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("crop", help="crop large images to their lower-left square")
    p.add_argument("manifest", help="input manifest (JSON lines)")
    p.add_argument("out_manifest", help="output manifest path")
    p.add_argument("--size", type=int, default=None, help="crop side length (default from config)")
    p.add_argument(
        "--folder-suffix",
        default="1",
        help="suffix appended to the folder name of cropped images (default: 1)",
    )
    common(p)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("split", help="assign train/val splits per folder")
    p.add_argument("manifest")
    p.add_argument("out_manifest")
    p.add_argument("--val-fraction", type=float, default=0.1, help="validation share (default 0.1)")
    p.add_argument(
        "--train-only",
        action="append",
        default=[],
        metavar="FOLDER",
        help="folder that goes entirely to train (repeatable)",
    )
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="label distribution CSV and histogram figure")
    p.add_argument("manifest")
    p.add_argument("out_csv")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG histogram")
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score detections against a ground-truth manifest")
    p.add_argument("detections", help="detections JSONL (from `roadkit infer`)")
    p.add_argument("manifest", help="ground-truth manifest")
    p.add_argument("out_csv", help="evaluation CSV output path")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold (default 0.5)")
    p.add_argument("--conf", type=float, default=None, help="operating confidence (default from config)")
    p.add_argument("--no-figure", action="store_true", help="skip the F1/PR figures")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run the dual-path batched inference pipeline")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None, help="output directory (default from config or .)")
    p.add_argument("--backend", choices=("stub", "onnx"), default="stub")
    p.add_argument("--model-normal", default=None, help="interchange model for normal images")
    p.add_argument("--model-large", default=None, help="interchange model for large images")
    p.add_argument("--input-size", type=int, default=640, help="stub backend input size")
    p.add_argument("--batch-large", type=int, default=None, help="override large-path batch size")
    p.add_argument("--batch-normal", type=int, default=None, help="override normal-path batch size")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers (results job-count independent)")
    p.add_argument("--repetitions", type=int, default=1, help="timing repetitions")
    p.add_argument("--no-timing", action="store_true", help="omit latency outputs (golden-file runs)")
    p.add_argument("--no-figure", action="store_true", help="skip the latency PNG")
    common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("fuse", help="fold batch norm into conv weights and verify")
    p.add_argument("weights", help="weight fixture base path (expects .json + .bin)")
    p.add_argument("out", help="fused fixture base path")
    p.add_argument("--probe-size", type=int, default=8, help="spatial size of the probe input")
    common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("demo", help="generate a synthetic dataset to try the toolkit")
    p.add_argument("out_dir")
    p.add_argument("--images", type=int, default=12, help="number of records (default 12)")
    common(p)
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse printed its own message (--help or usage error)
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # operation error
        logger.debug("unhandled failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
