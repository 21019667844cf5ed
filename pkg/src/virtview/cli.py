"""Command-line interface: synth, render, train, eval, bench.

All configuration comes from one JSON file (``--config``) with flag
overrides taking precedence.  Commands print a human-readable summary on
stdout and write machine-readable artifacts at the declared paths.  Errors
exit with a category code (2 config, 3 data, 4 numeric) and one JSON line
on stderr: ``{"error": "<category>", "detail": "..."}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .confidence import (
    StudentParams,
    TeacherParams,
    init_student_params,
    init_teacher_params,
    train_student,
    train_teacher_joint,
)
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NonFiniteLoss, VirtviewError
from .estimator import EstimatorParams, init_estimator_params, train_estimator
from .fusion import AllParams, infer, prepare_training_frames
from .geometry import sample_virtual_views, unproject, centroid as cloud_centroid
from .metrics import bench_fps, config_hash, mean_joint_error
from .renderer import crop_hand, render_all
from .synthdata import default_pose_sampler, generate_dataset, read_dataset, write_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _env_threads() -> int | None:
    env = os.environ.get("VIRTVIEW_THREADS", "").strip()
    return int(env) if env else None


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pipeline_over = {}
    if getattr(args, "mode", None) is not None:
        pipeline_over["mode"] = args.mode
    if getattr(args, "views", None) is not None:
        pipeline_over["n_select"] = args.views
    threads = args.threads if args.threads is not None else _env_threads()
    if threads is not None:
        pipeline_over["threads"] = threads
    return cfg.with_overrides(seed=args.seed, threads=threads, pipeline=pipeline_over)


def _add_common(parser):
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--threads", type=int, help="worker threads (default: VIRTVIEW_THREADS or core count)")
    parser.add_argument("--out", type=Path, required=True, help="output path")


def _dataset_frames(args):
    if not args.dataset:
        raise DataError("--dataset is required")
    frames, header = read_dataset(args.dataset)
    return frames, header


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _log_history(stage: str, history) -> None:
    for rec in history:
        line = {"stage": stage}
        line.update(rec)
        print(json.dumps(line, sort_keys=True))


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    n = args.frames if args.frames is not None else cfg.n_frames
    frames = generate_dataset(
        cfg.hand_spec(), n, default_pose_sampler, cfg.seed, cfg.intrinsics()
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(args.out, frames, cfg.hand_spec())
    print(f"wrote {n} frames to {args.out}")
    return EXIT_OK


def _write_pgm16(path: Path, values: np.ndarray) -> None:
    """16-bit binary PGM (big-endian sample order per the format)."""
    h, w = values.shape
    data = np.clip(np.rint(values), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def cmd_render(args) -> int:
    cfg = _load_run_config(args)
    frames, _ = _dataset_frames(args)
    if not (0 <= args.frame < len(frames)):
        raise DataError(f"frame index {args.frame} outside [0, {len(frames)})")
    frame = frames[args.frame]
    cloud = unproject(frame.depth)
    center = cloud_centroid(cloud)
    views = sample_virtual_views(
        center, float(np.linalg.norm(center)),
        cfg.pipeline.grid_rows, cfg.pipeline.grid_cols,
        cfg.pipeline.zenith_range, cfg.pipeline.azimuth_range,
    )
    render_cfg = cfg.pipeline.render_config(frame.depth.intrinsics)
    threads = cfg.pipeline.threads
    images = render_all(cloud, views, frame.depth.intrinsics, render_cfg, threads=threads)
    args.out.mkdir(parents=True, exist_ok=True)
    meta = []
    for view, img in zip(views.views, images):
        name = f"view_{view.id:02d}.pgm"
        _write_pgm16(args.out / name, img.values)
        meta.append(
            {
                "id": view.id,
                "zenith_rad": view.zenith,
                "azimuth_rad": view.azimuth,
                "rotation": view.to_original.rotation.tolist(),
                "translation_mm": view.to_original.translation.tolist(),
                "file": name,
            }
        )
    _write_json(args.out / "views.json", {"frame": args.frame, "views": meta})
    print(f"rendered {len(images)} views of frame {args.frame} to {args.out}")
    return EXIT_OK


def _build_params(cfg: RunConfig, checkpoint: Path | None) -> AllParams:
    params = AllParams()
    if checkpoint:
        sections, _ = load_checkpoint(checkpoint)
        if "estimator" in sections:
            params.estimator = EstimatorParams.from_section(sections["estimator"])
        if "teacher" in sections:
            params.teacher = TeacherParams.from_section(sections["teacher"])
        if "student" in sections:
            params.student = StudentParams.from_section(sections["student"])
    if params.estimator is None and cfg.pipeline.estimator == "anchor":
        params.estimator = init_estimator_params(cfg.estimator_config, cfg.seed)
    return params


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    frames, _ = _dataset_frames(args)
    pipe = cfg.pipeline

    estimator = None
    if pipe.estimator == "anchor":
        estimator = init_estimator_params(cfg.estimator_config, cfg.seed)
        pairs = []
        for frame in frames:
            crop = crop_hand(frame.depth, frame.centroid_mm, pipe.crop)
            pairs.append((crop, frame.gt))
        estimator = train_estimator(
            pairs, estimator, replace(cfg.train, epochs=cfg.epochs.estimator)
        )
        _log_history("estimator", estimator.history)

    bundles = prepare_training_frames(frames, pipe, frame_offset=0)
    teacher0 = init_teacher_params(cfg.teacher_config(), cfg.seed + 1)
    est_out, teacher = train_teacher_joint(
        bundles, estimator, teacher0,
        replace(cfg.train, epochs=cfg.epochs.teacher),
        freeze_estimator=(pipe.estimator == "oracle"),
    )
    if est_out is not None:
        estimator = est_out
    _log_history("teacher", teacher.history)

    student0 = init_student_params(cfg.student_config(), cfg.seed + 2)
    student = train_student(
        bundles, teacher, estimator, student0,
        replace(cfg.train, epochs=cfg.epochs.student),
    )
    _log_history("student", student.history)

    sections = {"teacher": teacher.to_section(), "student": student.to_section()}
    if estimator is not None:
        sections["estimator"] = estimator.to_section()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out, sections, cfg.seed)
    print(f"saved checkpoint with {sorted(sections)} to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    frames, _ = _dataset_frames(args)
    params = _build_params(cfg, args.checkpoint)
    pipe = cfg.pipeline
    preds, gts = [], []
    for i, frame in enumerate(frames):
        pose, _, _ = infer(frame.depth, pipe, params, gt=frame.gt, frame_index=i)
        preds.append(pose)
        gts.append(frame.gt)
    report = mean_joint_error(preds, gts)
    payload = report.to_json_dict()
    payload["mode"] = pipe.mode
    payload["n_select"] = pipe.n_select
    payload["config_hash"] = config_hash(pipe)
    _write_json(args.out, payload)
    csv_path = args.out.with_suffix(".success.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.success_csv())
    print(
        f"mode={pipe.mode} N={pipe.n_select}: mean joint error "
        f"{report.mean_joint_error_mm:.3f} mm over {report.n_frames} frames "
        f"-> {args.out}"
    )
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_run_config(args)
    frames, _ = _dataset_frames(args)
    if args.frames is not None:
        frames = frames[: args.frames]
    params = _build_params(cfg, args.checkpoint)
    if cfg.pipeline.estimator == "anchor" and params.estimator is None:
        raise ConfigError("bench with the anchor estimator needs estimator params")
    report = bench_fps(
        cfg.pipeline,
        [f.depth for f in frames],
        params,
        repetitions=args.repetitions,
        gts=[f.gt for f in frames],
    )
    _write_json(args.out, report.to_json_dict())
    print(
        f"mode={cfg.pipeline.mode} N={cfg.pipeline.n_select}: "
        f"{report.frames_per_second:.2f} fps over {report.n_frames} frames -> {args.out}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="virtview",
        description="Virtual-view selection and fusion for depth-based hand pose estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset file")
    _add_common(p_synth)
    p_synth.add_argument("--frames", type=int, help="number of frames")
    p_synth.set_defaults(func=cmd_synth)

    p_render = sub.add_parser("render", help="render one frame's virtual views to PGM images")
    _add_common(p_render)
    p_render.add_argument("--dataset", type=Path, required=True)
    p_render.add_argument("--frame", type=int, default=0)
    p_render.set_defaults(func=cmd_render)

    p_train = sub.add_parser("train", help="train estimator, teacher, and student")
    _add_common(p_train)
    p_train.add_argument("--dataset", type=Path, required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a pipeline mode on a dataset")
    _add_common(p_eval)
    p_eval.add_argument("--dataset", type=Path, required=True)
    p_eval.add_argument("--checkpoint", type=Path)
    p_eval.add_argument("--mode", choices=("uniform", "select_teacher", "select_light", "random"))
    p_eval.add_argument("--views", type=int, dest="views", help="number of fused views (N)")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="measure pipeline throughput")
    _add_common(p_bench)
    p_bench.add_argument("--dataset", type=Path, required=True)
    p_bench.add_argument("--checkpoint", type=Path)
    p_bench.add_argument("--mode", choices=("uniform", "select_teacher", "select_light", "random"))
    p_bench.add_argument("--views", type=int, dest="views")
    p_bench.add_argument("--frames", type=int, help="limit benchmark frames")
    p_bench.add_argument("--repetitions", type=int, default=3)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except NonFiniteLoss as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except DataError as exc:
        return _fail("data", exc, EXIT_DATA)
    except VirtviewError as exc:
        return _fail("data", exc, EXIT_DATA)
    except ValueError as exc:
        return _fail("config", exc, EXIT_CONFIG)


def _fail(category: str, exc: Exception, code: int) -> int:
    print(json.dumps({"error": category, "detail": str(exc)}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
