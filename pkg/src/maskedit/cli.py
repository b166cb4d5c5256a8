"""Command line entry point: ``maskedit {edit,invert,metrics,synth}``.

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path


from . import config as cfgmod
from . import tensorfile
from .codec import ToyCodec
from .conditioning import build_bundle
from .denoiser import DenoiserModel
from .imageio import LoadError, load_frames, load_masks, write_frames
from .metrics import MetricError, MetricRow, metric_rows
from .pipeline import ConfigError, EditMode, EditRequest, Task, frame_to_tensor, run_edit, validate_request
from .scheduler import invert_to_final, make_schedule
from .synth import KINDS, synth_video

log = logging.getLogger("maskedit")

CSV_HEADER = ("frame", "psnr_db", "ssim", "temporal_mse")
MANIFEST_NAME = "run_manifest.json"
TIMINGS_NAME = "timings.json"
LATENTS_NAME = "inverted_latents.tie"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    if value == float("inf"):
        return "inf"
    return f"{value:.6f}"


def metrics_csv_text(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.frame_index, _fmt(r.psnr_db), _fmt(r.ssim), _fmt(r.temporal_mse)])
    return buf.getvalue()


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--input-dir", dest="input_dir")
    p.add_argument("--mask-dir", dest="mask_dir")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--metrics-csv", dest="metrics_csv")
    p.add_argument("--weights", help="denoiser weight file (TIE1 format)")
    p.add_argument("--gs", dest="guidance_scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", dest="num_steps", type=int)
    p.add_argument("--mode", help=f"one of: {', '.join(m.value for m in EditMode)}")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--task", help=f"one of: {', '.join(t.value for t in Task)}")
    p.add_argument("--prompt")
    p.add_argument("--composite", dest="composite_unmasked", action="store_true", default=None)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="maskedit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _add_overrides(sub.add_parser("edit", help="edit a masked clip"))
    _add_overrides(sub.add_parser("invert", help="write last-step DDIM inversion latents"))

    m = sub.add_parser("metrics", help="compare two frame directories")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.add_argument("--masks")
    m.add_argument("--csv", required=True)

    s = sub.add_parser("synth", help="generate a synthetic clip")
    s.add_argument("--kind", required=True, help=f"one of: {', '.join(KINDS)}")
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="writes OUT/frames and OUT/masks")
    return parser


def _run_config(args) -> cfgmod.RunConfig:
    json_values = cfgmod.load_json(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in cfgmod.FIELD_NAMES if hasattr(args, k)}
    return cfgmod.resolve(json_values, overrides)


def _load_inputs(cfg: cfgmod.RunConfig):
    frames = load_frames(cfg.input_dir)
    masks = load_masks(cfg.mask_dir, len(frames), size=frames[0].shape[:2])
    return frames, masks


def _model(cfg: cfgmod.RunConfig) -> DenoiserModel:
    return DenoiserModel.load(cfg.weights) if cfg.weights else DenoiserModel.from_seed()


def _request(cfg: cfgmod.RunConfig, frames, masks) -> EditRequest:
    return EditRequest(
        frames=frames, masks=masks, prompt=cfg.prompt, guidance_scale=float(cfg.guidance_scale),
        seed=cfg.seed, num_steps=cfg.num_steps, batch_size=cfg.batch_size, mode=EditMode(cfg.mode),
        composite_unmasked=cfg.composite_unmasked, task=Task(cfg.task), workers=cfg.workers,
        with_metrics=bool(cfg.metrics_csv),
    )


def cmd_edit(args) -> int:
    cfg = _run_config(args)
    cfgmod.validate_paths(cfg)
    frames, masks = _load_inputs(cfg)
    request = _request(cfg, frames, masks)
    result = run_edit(request, model=_model(cfg))

    out = Path(cfg.output_dir)
    paths = write_frames(out, result.edited_frames)
    manifest = {k: v for k, v in result.run_manifest.items() if k != "timings"}
    manifest["frames_sha256"] = [hashlib.sha256(p.read_bytes()).hexdigest() for p in paths]
    manifest["config"] = cfg.as_dict()
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    # wall times vary run to run; kept out of the manifest so it stays reproducible
    (out / TIMINGS_NAME).write_text(json.dumps(result.run_manifest["timings"], indent=2, sort_keys=True) + "\n")
    if cfg.metrics_csv:
        if result.per_frame_metrics is None:
            raise MetricError("frames too small for SSIM; metrics unavailable")
        Path(cfg.metrics_csv).write_text(metrics_csv_text(result.per_frame_metrics))
    log.info("wrote %d frames to %s", len(paths), out)
    return 0


def cmd_invert(args) -> int:
    cfg = _run_config(args)
    cfgmod.validate_paths(cfg)
    frames, masks = _load_inputs(cfg)
    validate_request(_request(cfg, frames, masks))
    codec = ToyCodec()
    images = [frame_to_tensor(f) for f in frames]
    bundles = [build_bundle(img, m[None], cfg.prompt, codec) for img, m in zip(images, masks)]
    latents = invert_to_final([codec.encode(img) for img in images], _model(cfg), bundles,
                              make_schedule(num_inference=cfg.num_steps))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorfile.save_tensors(out / LATENTS_NAME, {f"frame_{i:05d}": z for i, z in enumerate(latents)})
    return 0


def cmd_metrics(args) -> int:
    ref = load_frames(args.ref)
    test = load_frames(args.test)
    if len(ref) != len(test):
        raise ConfigError(f"reference has {len(ref)} frames, test has {len(test)}")
    masks = load_masks(args.masks, len(test), size=test[0].shape[:2]) if args.masks else None
    Path(args.csv).write_text(metrics_csv_text(metric_rows(ref, test, masks)))
    return 0


def cmd_synth(args) -> int:
    if args.kind not in KINDS:
        raise ConfigError(f"unknown synth kind {args.kind!r}; valid kinds: {', '.join(KINDS)}")
    out = Path(args.out)
    synth_video(args.kind, args.frames, args.width, args.height, args.seed, out / "frames", out / "masks")
    return 0


COMMANDS = {"edit": cmd_edit, "invert": cmd_invert, "metrics": cmd_metrics, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger("maskedit").setLevel(logging.INFO)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (LoadError, MetricError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
