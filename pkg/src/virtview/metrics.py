"""Evaluation metrics and the FPS benchmark harness.

A frame counts as a success at threshold ``t`` when its *maximum* joint
error is within ``t`` millimeters, so the success curve is the fraction of
frames with all joints inside the threshold.  Timing uses the monotonic
performance counter and excludes dataset I/O.
"""

from __future__ import annotations

import hashlib
import json
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .errors import FrameMismatch, LengthMismatch
from .fusion import AllParams, PipelineConfig, infer


@dataclass(frozen=True)
class EvalReport:
    mean_joint_error_mm: float
    per_joint_error_mm: np.ndarray
    success_curve: tuple  # ((threshold_mm, fraction), ...)
    n_frames: int

    def to_json_dict(self) -> dict:
        return {
            "mean_joint_error_mm": self.mean_joint_error_mm,
            "per_joint_error_mm": [float(x) for x in self.per_joint_error_mm],
            "success_curve": [[float(t), float(f)] for t, f in self.success_curve],
            "n_frames": self.n_frames,
        }

    def success_csv(self) -> str:
        lines = ["threshold_mm,fraction"]
        lines += [f"{t:g},{f:.6f}" for t, f in self.success_curve]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FpsReport:
    stage_seconds: dict
    frames_per_second: float
    thread_count: int
    config_hash: str
    repetitions: int
    n_frames: int

    def to_json_dict(self) -> dict:
        return {
            "stage_seconds": {k: float(v) for k, v in self.stage_seconds.items()},
            "frames_per_second": self.frames_per_second,
            "thread_count": self.thread_count,
            "config_hash": self.config_hash,
            "repetitions": self.repetitions,
            "n_frames": self.n_frames,
        }


def mean_joint_error(preds, gts, thresholds=None) -> EvalReport:
    """Euclidean joint errors averaged over frames and joints (mm)."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if not preds:
        raise LengthMismatch("need at least one frame")
    for p, g in zip(preds, gts):
        if p.frame_id != g.frame_id:
            raise FrameMismatch(f"{p.frame_id!r} vs {g.frame_id!r}")
        if p.joint_count != g.joint_count:
            raise LengthMismatch("joint counts differ")
    errors = np.stack(
        [np.linalg.norm(p.joints - g.joints, axis=1) for p, g in zip(preds, gts)]
    )  # (F, K)
    if thresholds is None:
        thresholds = np.arange(0.0, 81.0, 1.0)
    max_per_frame = errors.max(axis=1)
    curve = tuple(
        (float(t), float((max_per_frame <= t).mean())) for t in thresholds
    )
    return EvalReport(
        float(errors.mean()), errors.mean(axis=0), curve, len(preds)
    )


def selection_agreement(ids_a, ids_b) -> float:
    """Fractional overlap of two same-size selections."""
    a, b = set(ids_a), set(ids_b)
    if len(a) != len(b):
        raise LengthMismatch("selections have different sizes")
    return len(a & b) / len(a)


def config_hash(cfg: PipelineConfig) -> str:
    payload = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def bench_fps(
    cfg: PipelineConfig,
    frames,
    params: AllParams,
    repetitions: int = 3,
    gts=None,
) -> FpsReport:
    """Median-of-repetitions pipeline throughput with per-stage breakdown.

    One warm-up pass (excluded) precedes the ``repetitions`` timed passes;
    ``gts`` is required by the oracle estimator.
    """
    if repetitions < 3:
        raise ValueError("need at least 3 repetitions")
    frames = list(frames)
    gt_list = list(gts) if gts is not None else [None] * len(frames)

    def one_pass():
        stages: dict = {}
        t0 = time.perf_counter()
        for i, depth in enumerate(frames):
            _, _, report = infer(depth, cfg, params, gt=gt_list[i], frame_index=i)
            for key, val in report.stage_seconds.items():
                stages[key] = stages.get(key, 0.0) + val
        return time.perf_counter() - t0, stages

    one_pass()  # warm-up (JIT compilation, caches)
    totals, stage_runs = [], []
    for _ in range(repetitions):
        total, stages = one_pass()
        totals.append(total)
        stage_runs.append(stages)
    med = statistics.median(totals)
    med_idx = totals.index(med) if med in totals else int(np.argsort(totals)[len(totals) // 2])
    return FpsReport(
        stage_runs[med_idx],
        len(frames) / med,
        cfg.threads,
        config_hash(cfg),
        repetitions,
        len(frames),
    )
