"""Command-line surface: simulate, track, evaluate, plot.

Exit codes: 0 success, 1 input/configuration error, 2 undefined metric
(no ground truth).  All randomness is seeded, so identical invocations
produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .bev import BevGrid, read_feature_map
from .errors import BevTrackError, NoGroundTruth
from .metrics import load_points_csv
from .pipeline import load_pipeline_config, pipeline_from_dict, provenance_block, \
    run_evaluation, run_tracking, write_tracks_csv
from .sim import export_scene, load_scene, simulate


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevtrack",
        description="Multi-camera BEV detection and tracking on simulated scenes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a scene config into a scene directory")
    p_sim.add_argument("--config", required=True, help="scene JSON file")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the scene seed")

    p_track = sub.add_parser("track", help="run the lift/detect/track pipeline")
    p_track.add_argument("--in", dest="in_dir", required=True, help="simulated scene directory")
    p_track.add_argument("--out", required=True, help="output track CSV")
    p_track.add_argument("--config", default=None, help="pipeline JSON file (defaults used if omitted)")
    p_track.add_argument("--method", default=None,
                         choices=["perspective", "bilinear", "depth_splat", "deformable"],
                         help="override the lifting method")

    p_eval = sub.add_parser("evaluate", help="score a hypothesis CSV against ground truth")
    p_eval.add_argument("--gt", required=True, help="ground-truth CSV (frame,id,x,y)")
    p_eval.add_argument("--hyp", required=True, help="hypothesis CSV (frame,id,x,y,score)")
    p_eval.add_argument("--mode", required=True, choices=["detection", "tracking"])
    p_eval.add_argument("--out", default=None, help="write the report JSON here")
    p_eval.add_argument("--radius", type=float, default=None,
                        help="match radius in meters (default 0.5 detection / 1.0 tracking)")

    p_plot = sub.add_parser("plot", help="render a feature map to PGM or tracks to SVG")
    p_plot.add_argument("--input", required=True, help=".bin feature map or .csv tracks")
    p_plot.add_argument("--out", required=True, help="output .pgm or .svg file")
    p_plot.add_argument("--channel", type=int, default=0, help="feature channel for PGM")
    p_plot.add_argument("--gt", default=None, help="optional ground-truth CSV for SVG")
    p_plot.add_argument("--grid", default=None,
                        help="SVG grid outline as ox,oy,cell,width,height")
    return parser


def _cmd_simulate(args) -> int:
    config = load_scene(args.config)
    if args.seed is not None:
        from dataclasses import replace
        config = replace(config, seed=args.seed)
    frames = simulate(config)
    export_scene(frames, config, args.out)
    print(f"simulated {len(frames)} frames, {len(config.cameras)} cameras -> {args.out}")
    return 0


def _cmd_track(args) -> int:
    if args.config is not None:
        payload = Path(args.config).read_bytes()
        config = load_pipeline_config(args.config)
    else:
        payload = b"{}"
        config = pipeline_from_dict({})
    if args.method is not None:
        from dataclasses import replace
        config = replace(config, method=args.method)
    records = run_tracking(args.in_dir, config)
    write_tracks_csv(args.out, records)
    n_tracks = len({r.track_id for r in records})
    print(f"tracked {n_tracks} identities over {len(records)} records -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    provenance = provenance_block(
        f"{args.mode}:{args.radius}".encode(), seed=None
    )
    report = run_evaluation(args.gt, args.hyp, args.mode, args.out, args.radius,
                            provenance)
    d = report.to_dict()
    if args.mode == "detection":
        print(f"MODA {d['moda']:.4f}  MODP {d['modp']:.4f}  "
              f"precision {d['precision']:.4f}  recall {d['recall']:.4f}")
    else:
        print(f"MOTA {d['mota']:.4f}  IDF1 {d['idf1']:.4f}  MOTP {d['motp']:.4f}m  "
              f"MT {d['mt']:.4f}  ML {d['ml']:.4f}")
    return 0


def _write_pgm(path: Path, channel: np.ndarray) -> None:
    lo = float(channel.min())
    hi = float(channel.max())
    if hi > lo:
        scaled = np.round((channel - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.full(channel.shape, 128, dtype=np.uint8)
    header = f"P5\n{channel.shape[1]} {channel.shape[0]}\n255\n".encode()
    path.write_bytes(header + scaled.tobytes())


def _track_color(track_id: int) -> str:
    hue = (zlib.crc32(str(track_id).encode()) % 360)
    return f"hsl({hue},70%,45%)"


def _parse_grid_arg(arg: str) -> BevGrid:
    parts = arg.split(",")
    if len(parts) != 5:
        raise BevTrackError(f"--grid expects ox,oy,cell,width,height, got {arg!r}")
    ox, oy, cell = float(parts[0]), float(parts[1]), float(parts[2])
    width, height = int(parts[3]), int(parts[4])
    return BevGrid(origin=(ox, oy), cell_size=cell, width=width, height=height)


def _write_tracks_svg(path: Path, hyp_path: str, gt_path: str | None,
                      grid: BevGrid | None) -> None:
    import csv as _csv

    tracks: dict[int, list[tuple[int, float, float]]] = {}
    with open(hyp_path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "id", "x", "y", "score"]:
            raise BevTrackError(f"{hyp_path}: expected track CSV header frame,id,x,y,score")
        for row in reader:
            if not row:
                continue
            frame, tid = int(row[0]), int(row[1])
            tracks.setdefault(tid, []).append((frame, float(row[2]), float(row[3])))
    gt_points: list[tuple[float, float]] = []
    if gt_path:
        with open(gt_path, newline="") as fh:
            reader = _csv.reader(fh)
            next(reader, None)
            for row in reader:
                if row:
                    gt_points.append((float(row[2]), float(row[3])))
    xs = [p[1] for pts in tracks.values() for p in pts] + [p[0] for p in gt_points]
    ys = [p[2] for pts in tracks.values() for p in pts] + [p[1] for p in gt_points]
    if grid is not None:
        x_min, x_max, y_min, y_max = grid.extent()
    elif xs:
        x_min, x_max = min(xs) - 1, max(xs) + 1
        y_min, y_max = min(ys) - 1, max(ys) + 1
    else:
        x_min, x_max, y_min, y_max = 0.0, 1.0, 0.0, 1.0
    scale = 20.0  # svg px per meter

    def sx(x: float) -> float:
        return (x - x_min) * scale

    def sy(y: float) -> float:
        return (y_max - y) * scale

    w = (x_max - x_min) * scale
    h = (y_max - y_min) * scale
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
        f'viewBox="0 0 {w:.1f} {h:.1f}">',
        f'<rect x="0" y="0" width="{w:.1f}" height="{h:.1f}" fill="white" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for x, y in gt_points:
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="none" '
                     f'stroke="gray" stroke-width="1"/>')
    for tid in sorted(tracks):
        pts = sorted(tracks[tid])
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for _, x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{_track_color(tid)}" stroke-width="1.5"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _cmd_plot(args) -> int:
    src = Path(args.input)
    dst = Path(args.out)
    if dst.suffix.lower() == ".pgm":
        fm = read_feature_map(src)
        if not (0 <= args.channel < fm.channels):
            raise BevTrackError(f"channel {args.channel} out of range for {fm.channels} channels")
        _write_pgm(dst, np.asarray(fm.data[args.channel], dtype=np.float64))
    elif dst.suffix.lower() == ".svg":
        grid = _parse_grid_arg(args.grid) if args.grid else None
        _write_tracks_svg(dst, str(src), args.gt, grid)
    else:
        raise BevTrackError(f"unsupported output type {dst.suffix!r}; use .pgm or .svg")
    print(f"wrote {dst}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "track": _cmd_track,
        "evaluate": _cmd_evaluate,
        "plot": _cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except NoGroundTruth as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BevTrackError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
