"""Top-N view selection, confidence-weighted pose fusion, and the
end-to-end inference pipeline.

Fusion happens in the original camera frame: each selected view's pose is
mapped through its ``to_original`` extrinsics and the results are combined
with the softmax confidence weights (or uniformly for the plain-average
baseline).  ``infer`` wires the whole pipeline for four modes:

* ``uniform``       - render/estimate a fixed uniformly-spread subset;
* ``select_teacher``- render and estimate all M views, score them with the
  teacher over the estimator features, fuse the top N;
* ``select_light``  - score views with the student from the original crop
  alone, then render/estimate only the top N;
* ``random``        - N views at uniformly random sphere angles.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .confidence import (
    ConfidenceVector,
    StudentParams,
    TeacherParams,
    softmax_select,
    student_confidence,
    teacher_confidence,
)
from .errors import ConfigError, FrameMismatch, LengthMismatch
from .estimator import (
    EstimatorOutput,
    EstimatorParams,
    OracleNoiseModel,
    estimate,
    oracle_estimate,
)
from .geometry import (
    DepthImage,
    HandPose,
    RigidTransform,
    VirtualView,
    VirtualViewSet,
    centroid,
    invert,
    sample_virtual_views,
    split_view_frame_id,
    transform_pose,
    uniform_subset,
    unproject,
    view_rotation,
)
from .renderer import CropConfig, RenderConfig, crop_hand, render_depth, resize_nearest

MODES = ("uniform", "select_teacher", "select_light", "random")
ESTIMATORS = ("oracle", "anchor")


@dataclass(frozen=True)
class PipelineConfig:
    grid_rows: int = 5
    grid_cols: int = 5
    zenith_range: tuple = (-math.pi / 3, math.pi / 3)
    azimuth_range: tuple = (-math.pi / 3, math.pi / 3)
    n_select: int = 3
    mode: str = "uniform"
    estimator: str = "oracle"
    weighted: bool = False  # confidence-weighted fusion in uniform mode
    splat_radius: int = 1
    max_range_mm: float = 2000.0
    crop: CropConfig = field(default_factory=CropConfig)
    noise: OracleNoiseModel = field(default_factory=OracleNoiseModel)
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}")
        if not (1 <= self.n_select <= self.m_views):
            raise ConfigError(
                f"n_select={self.n_select} outside [1, M={self.m_views}]"
            )
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def m_views(self) -> int:
        return self.grid_rows * self.grid_cols

    def render_config(self, intr) -> RenderConfig:
        return RenderConfig(intr.width, intr.height, self.splat_radius, self.max_range_mm)

    def to_dict(self) -> dict:
        return {
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "zenith_range": list(self.zenith_range),
            "azimuth_range": list(self.azimuth_range),
            "n_select": self.n_select,
            "mode": self.mode,
            "estimator": self.estimator,
            "weighted": self.weighted,
            "splat_radius": self.splat_radius,
            "max_range_mm": self.max_range_mm,
            "crop": {
                "crop_size": self.crop.crop_size,
                "cube_mm": self.crop.cube_mm,
                "normalize": self.crop.normalize,
            },
            "noise": {
                "base_sigma_mm": self.noise.base_sigma_mm,
                "occlusion_gain_mm": self.noise.occlusion_gain_mm,
                "rng_seed": self.noise.rng_seed,
                "occlusion_margin_mm": self.noise.occlusion_margin_mm,
                "occlusion_window": self.noise.occlusion_window,
            },
            "threads": self.threads,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        crop = d.get("crop", {})
        noise = d.get("noise", {})
        base = PipelineConfig()
        return PipelineConfig(
            grid_rows=int(d.get("grid_rows", base.grid_rows)),
            grid_cols=int(d.get("grid_cols", base.grid_cols)),
            zenith_range=tuple(d.get("zenith_range", base.zenith_range)),
            azimuth_range=tuple(d.get("azimuth_range", base.azimuth_range)),
            n_select=int(d.get("n_select", base.n_select)),
            mode=d.get("mode", base.mode),
            estimator=d.get("estimator", base.estimator),
            weighted=bool(d.get("weighted", base.weighted)),
            splat_radius=int(d.get("splat_radius", base.splat_radius)),
            max_range_mm=float(d.get("max_range_mm", base.max_range_mm)),
            crop=CropConfig(**crop) if crop else base.crop,
            noise=OracleNoiseModel(**noise) if noise else base.noise,
            threads=int(d.get("threads", base.threads)),
            seed=int(d.get("seed", base.seed)),
        )


@dataclass
class AllParams:
    estimator: EstimatorParams | None = None
    teacher: TeacherParams | None = None
    student: StudentParams | None = None


@dataclass
class InferReport:
    stage_seconds: dict
    render_calls: int = 0
    estimate_calls: int = 0

    @property
    def total_seconds(self) -> float:
        return sum(self.stage_seconds.values())


def fuse_poses(poses, conf: ConfidenceVector, views: VirtualViewSet) -> HandPose:
    """Confidence-weighted fusion in the original frame.

    ``poses[i]`` must live in the frame of view ``conf.selected_ids[i]``;
    the result is ``sum_i w_i * (R_i @ pose_i + t_i)``.
    """
    if len(poses) != len(conf.selected_ids):
        raise LengthMismatch(
            f"{len(poses)} poses for {len(conf.selected_ids)} selected views"
        )
    base = None
    acc = None
    for pose, weight, vid in zip(poses, conf.weights, conf.selected_ids):
        pose_base, pose_vid = split_view_frame_id(pose.frame_id)
        if pose_vid != vid:
            raise FrameMismatch(
                f"pose frame {pose.frame_id!r} does not match selected view {vid}"
            )
        if base is None:
            base = pose_base
        elif base != pose_base:
            raise FrameMismatch(f"mixed base frames {base!r} and {pose_base!r}")
        transformed = views.views[vid].to_original.apply(pose.joints)
        acc = weight * transformed if acc is None else acc + weight * transformed
    return HandPose(acc, base)


def average_fuse(poses, views: VirtualViewSet) -> HandPose:
    """Unweighted fusion baseline; view ids are parsed from pose frames."""
    ids = [split_view_frame_id(p.frame_id)[1] for p in poses]
    conf = ConfidenceVector.uniform(ids, len(views))
    return fuse_poses(poses, conf, views)


def random_views(
    center_mm,
    radius_mm: float,
    n: int,
    seed,
    zenith_range=(-math.pi / 3, math.pi / 3),
    azimuth_range=(-math.pi / 3, math.pi / 3),
) -> VirtualViewSet:
    """``n`` views at i.i.d. uniform sphere angles; seeded-deterministic."""
    if n < 1:
        raise ConfigError("need at least one random view")
    center = np.asarray(center_mm, dtype=np.float64)
    rng = np.random.default_rng(seed)
    zeniths = rng.uniform(zenith_range[0], zenith_range[1], n)
    azimuths = rng.uniform(azimuth_range[0], azimuth_range[1], n)
    direction = center / np.linalg.norm(center)
    views = []
    for i in range(n):
        rot = view_rotation(zeniths[i], azimuths[i])
        pos = center - radius_mm * (rot @ direction)
        to_orig = RigidTransform(rot, pos)
        views.append(
            VirtualView(i, float(zeniths[i]), float(azimuths[i]), to_orig, invert(to_orig))
        )
    return VirtualViewSet(views, center, float(radius_mm), (0, 0))


def _estimate_at_view(
    view: VirtualView,
    rendered: DepthImage,
    center_mm,
    cfg: PipelineConfig,
    params: AllParams,
    gt: HandPose | None,
    frame_noise_seed: int,
) -> EstimatorOutput:
    if cfg.estimator == "oracle":
        if gt is None:
            raise ConfigError("oracle estimator requires ground truth")
        noise = replace(cfg.noise, rng_seed=frame_noise_seed)
        return oracle_estimate(gt, view, None, noise, rendered=rendered)
    center_view = view.from_original.apply(np.asarray(center_mm))
    crop = crop_hand(rendered, center_view, cfg.crop)
    return estimate(crop, params.estimator)


def infer(
    depth: DepthImage,
    cfg: PipelineConfig,
    params: AllParams,
    gt: HandPose | None = None,
    frame_index: int = 0,
):
    """Run the full pipeline on one frame.

    Returns ``(fused pose, confidence vector, InferReport)``.  ``gt`` is
    required only by the oracle estimator (a test/benchmark pathway).
    """
    report = InferReport(
        {"setup": 0.0, "render": 0.0, "estimate": 0.0, "confidence": 0.0, "fuse": 0.0}
    )
    frame_noise_seed = int(
        np.random.SeedSequence([cfg.noise.rng_seed, frame_index]).generate_state(
            1, np.uint64
        )[0]
    )

    t0 = time.perf_counter()
    cloud = unproject(depth)
    center = centroid(cloud)
    radius = float(np.linalg.norm(center))
    if cfg.mode == "random":
        views = random_views(
            center, radius, cfg.n_select, [cfg.seed, frame_index],
            cfg.zenith_range, cfg.azimuth_range,
        )
        work_ids = list(range(cfg.n_select))
    else:
        views = sample_virtual_views(
            center, radius, cfg.grid_rows, cfg.grid_cols,
            cfg.zenith_range, cfg.azimuth_range,
        )
        work_ids = None
    render_cfg = cfg.render_config(depth.intrinsics)
    report.stage_seconds["setup"] += time.perf_counter() - t0

    conf = None
    if cfg.mode == "uniform":
        work_ids = uniform_subset(views, cfg.n_select)
    elif cfg.mode == "select_teacher":
        work_ids = list(range(len(views)))
    elif cfg.mode == "select_light":
        t0 = time.perf_counter()
        orig_crop = crop_hand(depth, center, cfg.crop)
        student_in = resize_nearest(
            orig_crop.image.values, params.student.config.input_size
        )
        raw = student_confidence(student_in, params.student)
        conf = softmax_select(raw, cfg.n_select)
        work_ids = sorted(conf.selected_ids)
        report.stage_seconds["confidence"] += time.perf_counter() - t0

    rendered = {}
    outputs = {}
    for vid in work_ids:
        view = views.views[vid]
        t0 = time.perf_counter()
        img = render_depth(cloud, view, depth.intrinsics, render_cfg)
        report.stage_seconds["render"] += time.perf_counter() - t0
        report.render_calls += 1
        rendered[vid] = img

        t0 = time.perf_counter()
        outputs[vid] = _estimate_at_view(
            view, img, center, cfg, params, gt, frame_noise_seed
        )
        report.stage_seconds["estimate"] += time.perf_counter() - t0
        report.estimate_calls += 1

    if cfg.mode == "select_teacher" or (cfg.mode == "uniform" and cfg.weighted):
        t0 = time.perf_counter()
        feats = [outputs[vid].feature for vid in work_ids]
        raw_sub = teacher_confidence(feats, params.teacher)
        raw = np.zeros(len(views))
        raw[np.asarray(work_ids)] = raw_sub
        sub_sel = softmax_select(raw_sub, cfg.n_select)
        ids = [work_ids[i] for i in sub_sel.selected_ids]
        conf = ConfidenceVector(raw, ids, sub_sel.weights)
        report.stage_seconds["confidence"] += time.perf_counter() - t0
    elif cfg.mode == "uniform":
        conf = ConfidenceVector.uniform(work_ids, len(views))
    elif cfg.mode == "random":
        conf = ConfidenceVector.uniform(work_ids, len(views))

    t0 = time.perf_counter()
    poses = [outputs[vid].pose for vid in conf.selected_ids]
    fused = fuse_poses(poses, conf, views)
    report.stage_seconds["fuse"] += time.perf_counter() - t0
    return fused, conf, report


def prepare_training_frames(
    frames,
    cfg: PipelineConfig,
    params: AllParams | None = None,
    frame_offset: int = 0,
):
    """Build per-frame view bundles for the confidence trainers.

    Renders every view of every frame once.  With the oracle estimator the
    per-view outputs are precomputed (frozen); with the anchor estimator the
    per-view crops and ground truths are attached so the joint trainer can
    recompute estimator outputs each step.  Frame indices (used to derive
    per-frame noise seeds) start at ``frame_offset``.
    """
    from .confidence import TrainingFrame

    bundles = []
    for i, frame in enumerate(frames):
        idx = frame_offset + i
        cloud = unproject(frame.depth)
        center = centroid(cloud)
        views = sample_virtual_views(
            center, float(np.linalg.norm(center)), cfg.grid_rows, cfg.grid_cols,
            cfg.zenith_range, cfg.azimuth_range,
        )
        render_cfg = cfg.render_config(frame.depth.intrinsics)
        frame_noise_seed = int(
            np.random.SeedSequence([cfg.noise.rng_seed, idx]).generate_state(
                1, np.uint64
            )[0]
        )
        original_crop = crop_hand(frame.depth, center, cfg.crop)
        outputs = None
        crops = None
        view_gts = None
        if cfg.estimator == "oracle":
            noise = replace(cfg.noise, rng_seed=frame_noise_seed)
            outputs = []
            for view in views.views:
                img = render_depth(cloud, view, frame.depth.intrinsics, render_cfg)
                outputs.append(oracle_estimate(frame.gt, view, None, noise, rendered=img))
        else:
            crops, view_gts = [], []
            for view in views.views:
                img = render_depth(cloud, view, frame.depth.intrinsics, render_cfg)
                center_view = view.from_original.apply(center)
                crops.append(crop_hand(img, center_view, cfg.crop))
                view_gts.append(transform_pose(frame.gt, view.from_original, img.frame_id))
        bundles.append(
            TrainingFrame(
                views=views,
                gt=frame.gt,
                outputs=outputs,
                crops=crops,
                view_gts=view_gts,
                original_crop=original_crop,
            )
        )
    return bundles
