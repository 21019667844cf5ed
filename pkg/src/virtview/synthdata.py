"""Synthetic articulated-hand depth frames with exact ground-truth joints.

The hand is a capsule proxy: a palm fan (root to wrist/forearm and to each
knuckle) plus two capsule segments per finger and three for the thumb.
Forward kinematics is closed form, so joint labels are exact by
construction; surfaces are densely point-sampled per unit area and splatted
through the renderer, which gives realistic self-occlusion for the view
selection experiments.  Depth values are quantized to whole millimeters,
matching the on-disk format.

Dataset container layout (format version 1):

* magic ``VVDS`` + little-endian uint32 header length + UTF-8 JSON header
  with ``format_version``, ``joint_count``, ``frame_count``, ``width``,
  ``height``, ``frame_id``, ``intrinsics`` and ``spec_hash``;
* per frame, little-endian: depth as uint16 millimeters (row-major),
  ground-truth joints as float32 (K x 3, mm), centroid (3 x float32),
  frame seed (uint64).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import AnglesOutOfRange, DataError
from .geometry import (
    DepthImage,
    HandPose,
    Intrinsics,
    centroid as cloud_centroid,
    rotation_about_axis,
    unproject,
)

_MAGIC = b"VVDS"
FORMAT_VERSION = 1

JOINT_NAMES = (
    "palm",
    "wrist",
    "forearm",
    "thumb_base",
    "thumb_mid",
    "thumb_tip",
    "index_mid",
    "index_tip",
    "middle_mid",
    "middle_tip",
    "ring_mid",
    "ring_tip",
    "pinky_mid",
    "pinky_tip",
)

# Canonical flat hand, palm facing the camera (-z), fingers up (-y), mm.
_KNUCKLES = {
    "thumb": (-48.0, 18.0, 0.0),
    "index": (-31.0, -42.0, 0.0),
    "middle": (-10.0, -46.0, 0.0),
    "ring": (11.0, -44.0, 0.0),
    "pinky": (31.0, -38.0, 0.0),
}
_FINGER_DIRS = {
    "thumb": (-0.74, -0.67, 0.0),
    "index": (-0.12, -0.99, 0.0),
    "middle": (0.0, -1.0, 0.0),
    "ring": (0.10, -0.99, 0.0),
    "pinky": (0.22, -0.97, 0.0),
}
_FINGER_LENGTHS = {
    "thumb": (36.0, 30.0),
    "index": (40.0, 30.0),
    "middle": (44.0, 33.0),
    "ring": (41.0, 31.0),
    "pinky": (33.0, 26.0),
}
_FINGER_RADII = {
    "thumb": (11.0, 9.0),
    "index": (9.0, 8.0),
    "middle": (9.5, 8.0),
    "ring": (9.0, 7.5),
    "pinky": (8.0, 7.0),
}
_PALM_RADIUS = 13.0
_WRIST_RADIUS = 16.0
_FOREARM_RADIUS = 18.0

ANGLE_NAMES = (
    "root_rx",
    "root_ry",
    "root_rz",
    "thumb_flex1",
    "thumb_flex2",
    "index_flex1",
    "index_flex2",
    "middle_flex1",
    "middle_flex2",
    "ring_flex1",
    "ring_flex2",
    "pinky_flex1",
    "pinky_flex2",
)

_FINGERS = ("thumb", "index", "middle", "ring", "pinky")
_PALM_NORMAL = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class SynthHandSpec:
    parents: tuple = (-1, 0, 1, 0, 3, 4, 0, 6, 0, 8, 0, 10, 0, 12)
    density: float = 0.22  # surface points per mm^2
    # Root rotation stays moderate and finger curls stay below ~0.75 rad so
    # that oblique views foreshorten (and self-occlude) more than the input
    # view on average; larger curls invert that relationship.
    angle_limits: tuple = (
        (-0.5, 0.5),
        (-0.5, 0.5),
        (-0.45, 0.45),
        (-0.15, 0.7),
        (-0.1, 0.75),
        (-0.15, 0.7),
        (-0.1, 0.75),
        (-0.15, 0.7),
        (-0.1, 0.75),
        (-0.15, 0.7),
        (-0.1, 0.75),
        (-0.15, 0.7),
        (-0.1, 0.75),
    )

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def angle_count(self) -> int:
        return len(self.angle_limits)

    def spec_hash(self) -> str:
        payload = json.dumps(
            {
                "parents": list(self.parents),
                "density": self.density,
                "angle_limits": [list(x) for x in self.angle_limits],
                "knuckles": {k: list(v) for k, v in _KNUCKLES.items()},
                "lengths": {k: list(v) for k, v in _FINGER_LENGTHS.items()},
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AugmentConfig:
    scale_range: tuple = (0.9, 1.1)
    centroid_jitter_mm: float = 10.0
    camera_rotation_jitter_rad: float = 0.1
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.scale_range
        if lo <= 0 or hi < lo:
            raise ValueError("scale_range must be positive and ordered")
        if self.centroid_jitter_mm < 0 or self.camera_rotation_jitter_rad < 0:
            raise ValueError("jitters must be >= 0")


@dataclass
class Frame:
    depth: DepthImage
    gt: HandPose
    centroid_mm: np.ndarray
    meta: dict = field(default_factory=dict)


def check_angles(spec: SynthHandSpec, angles) -> np.ndarray:
    a = np.asarray(angles, dtype=np.float64)
    if a.shape != (spec.angle_count,):
        raise AnglesOutOfRange(f"expected {spec.angle_count} angles, got {a.shape}")
    for i, (lo, hi) in enumerate(spec.angle_limits):
        if not (lo - 1e-12 <= a[i] <= hi + 1e-12):
            raise AnglesOutOfRange(
                f"angle {ANGLE_NAMES[i]}={a[i]:.4f} outside [{lo}, {hi}]"
            )
    return a


def _finger_chain(name: str, flex1: float, flex2: float):
    """Local-frame mid and tip positions of one finger chain."""
    knuckle = np.asarray(_KNUCKLES[name])
    d = np.asarray(_FINGER_DIRS[name])
    d = d / np.linalg.norm(d)
    axis = np.cross(d, _PALM_NORMAL)
    axis = axis / np.linalg.norm(axis)
    l1, l2 = _FINGER_LENGTHS[name]
    mid = knuckle + rotation_about_axis(axis, flex1) @ (l1 * d)
    tip = mid + rotation_about_axis(axis, flex1 + flex2) @ (l2 * d)
    return knuckle, mid, tip


def forward_kinematics(spec: SynthHandSpec, angles) -> tuple[np.ndarray, list]:
    """Joint positions (K, 3) in the camera frame given the hand at origin.

    Also returns the capsule list as (p0, p1, radius) triples (includes the
    non-joint knuckle anchor points of the palm fan).
    """
    a = check_angles(spec, angles)
    local = np.zeros((spec.joint_count, 3))
    local[1] = (0.0, 55.0, 0.0)
    local[2] = (0.0, 105.0, 0.0)
    capsules = [
        (local[0].copy(), local[1].copy(), _WRIST_RADIUS),
        (local[1].copy(), local[2].copy(), _FOREARM_RADIUS),
    ]
    for fi, name in enumerate(_FINGERS):
        knuckle, mid, tip = _finger_chain(name, a[3 + 2 * fi], a[4 + 2 * fi])
        if name == "thumb":
            local[3], local[4], local[5] = knuckle, mid, tip
        else:
            base = 6 + 2 * (fi - 1)
            local[base] = mid
            local[base + 1] = tip
        r1, r2 = _FINGER_RADII[name]
        capsules.append((local[0].copy(), knuckle, _PALM_RADIUS))
        capsules.append((knuckle, mid, r1))
        capsules.append((mid, tip, r2))

    rot = (
        rotation_about_axis(np.array([0.0, 0.0, 1.0]), a[2])
        @ rotation_about_axis(np.array([0.0, 1.0, 0.0]), a[1])
        @ rotation_about_axis(np.array([1.0, 0.0, 0.0]), a[0])
    )
    joints = local @ rot.T
    capsules = [(rot @ p0, rot @ p1, r) for p0, p1, r in capsules]
    return joints, capsules


def sample_capsule_surface(p0, p1, radius: float, density: float, rng) -> np.ndarray:
    """Uniform-by-area surface samples of the capsule from p0 to p1."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    seg = p1 - p0
    length = np.linalg.norm(seg)
    axis = seg / length if length > 0 else np.array([0.0, 0.0, 1.0])
    area_cyl = 2.0 * np.pi * radius * length
    area_caps = 4.0 * np.pi * radius * radius
    total = max(1, int(np.rint((area_cyl + area_caps) * density)))
    n_cyl = int(np.rint(total * area_cyl / (area_cyl + area_caps)))
    n_caps = total - n_cyl

    helper = np.array([0.0, 0.0, 1.0])
    if abs(axis @ helper) > 0.9:
        helper = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)

    parts = []
    if n_cyl:
        t = rng.uniform(0.0, length, n_cyl)
        phi = rng.uniform(0.0, 2.0 * np.pi, n_cyl)
        ring = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        parts.append(p0 + t[:, None] * axis + radius * ring)
    if n_caps:
        v = rng.standard_normal((n_caps, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        half = n_caps // 2
        lo = v[:half]
        lo[lo @ axis > 0] *= -1.0
        hi = v[half:]
        hi[hi @ axis < 0] *= -1.0
        parts.append(p0 + radius * lo)
        parts.append(p1 + radius * hi)
    return np.concatenate(parts, axis=0)


def default_pose_sampler(rng, spec: SynthHandSpec) -> np.ndarray:
    """Uniform pose angles across the full joint limits."""
    limits = np.asarray(spec.angle_limits)
    return rng.uniform(limits[:, 0], limits[:, 1])


def _frame_rngs(seed: int):
    return (
        np.random.default_rng([int(seed), 0]),  # pose angles
        np.random.default_rng([int(seed), 1]),  # surface sampling
    )


def generate_frame(
    spec: SynthHandSpec,
    pose_angles,
    camera: Intrinsics,
    seed: int,
    root_position_mm=(0.0, 0.0, 500.0),
    splat_radius: int = 1,
    max_range_mm: float = 2000.0,
    frame_id: str = "cam",
) -> Frame:
    """Render one synthetic frame; deterministic given arguments."""
    joints, capsules = forward_kinematics(spec, pose_angles)
    root = np.asarray(root_position_mm, dtype=np.float64)
    joints = joints + root

    _, rng_surface = _frame_rngs(seed)
    points = np.concatenate(
        [
            sample_capsule_surface(p0 + root, p1 + root, r, spec.density, rng_surface)
            for p0, p1, r in capsules
        ]
    )
    buf = _kernels.splat_points(
        points,
        np.eye(3),
        np.zeros(3),
        camera.fx,
        camera.fy,
        camera.cx,
        camera.cy,
        camera.width,
        camera.height,
        splat_radius,
        max_range_mm,
    )
    depth = DepthImage(
        camera.width, camera.height, np.rint(buf), camera, frame_id
    )
    center = cloud_centroid(unproject(depth))
    gt = HandPose(joints, frame_id)
    meta = {"seed": int(seed), "pose_angles": np.asarray(pose_angles, dtype=np.float64)}
    return Frame(depth, gt, center, meta)


def generate_dataset(
    spec: SynthHandSpec,
    n_frames: int,
    pose_sampler,
    seed: int,
    camera: Intrinsics,
    root_position_mm=(0.0, 0.0, 500.0),
) -> list:
    """Seeded list of frames; per-frame seeds derive from (seed, index)."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    frames = []
    for i in range(n_frames):
        frame_seed = int(
            np.random.SeedSequence([int(seed), i]).generate_state(1, np.uint64)[0]
        )
        rng_angles, _ = _frame_rngs(frame_seed)
        angles = pose_sampler(rng_angles, spec)
        frames.append(
            generate_frame(spec, angles, camera, frame_seed, root_position_mm)
        )
    return frames


def write_dataset(path, frames, spec: SynthHandSpec) -> None:
    if not frames:
        raise DataError("cannot write an empty dataset")
    first = frames[0]
    intr = first.depth.intrinsics
    header = {
        "format_version": FORMAT_VERSION,
        "joint_count": first.gt.joint_count,
        "frame_count": len(frames),
        "width": first.depth.width,
        "height": first.depth.height,
        "frame_id": first.depth.frame_id,
        "intrinsics": {
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        },
        "spec_hash": spec.spec_hash(),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for frame in frames:
            fh.write(frame.depth.values.astype("<u2").tobytes())
            fh.write(frame.gt.joints.astype("<f4").tobytes())
            fh.write(np.asarray(frame.centroid_mm).astype("<f4").tobytes())
            fh.write(struct.pack("<Q", int(frame.meta["seed"])))


def read_dataset(path) -> tuple[list, dict]:
    try:
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise DataError(f"{path}: not a dataset file")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise DataError(f"{path}: unsupported format version")
            w, h = header["width"], header["height"]
            k = header["joint_count"]
            hintr = header["intrinsics"]
            intr = Intrinsics(
                hintr["fx"], hintr["fy"], hintr["cx"], hintr["cy"],
                hintr["width"], hintr["height"],
            )
            frames = []
            for _ in range(header["frame_count"]):
                depth_raw = np.frombuffer(fh.read(2 * w * h), dtype="<u2")
                joints = np.frombuffer(fh.read(4 * k * 3), dtype="<f4")
                center = np.frombuffer(fh.read(12), dtype="<f4")
                (fseed,) = struct.unpack("<Q", fh.read(8))
                if depth_raw.size != w * h or joints.size != k * 3:
                    raise DataError(f"{path}: truncated frame data")
                depth = DepthImage(
                    w, h,
                    depth_raw.astype(np.float64).reshape(h, w),
                    intr,
                    header["frame_id"],
                )
                gt = HandPose(joints.astype(np.float64).reshape(k, 3), header["frame_id"])
                frames.append(
                    Frame(depth, gt, center.astype(np.float64), {"seed": int(fseed)})
                )
    except (OSError, struct.error, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"failed to read dataset {path}: {exc}") from exc
    return frames, header


def augment(frame: Frame, cfg: AugmentConfig) -> Frame:
    """Scale depth about the centroid, jitter the crop centroid, and record
    a view-rotation jitter seed for multi-view rendering.

    Ground truth is transformed with exactly the same depth map (each pixel
    and each joint moves along its own camera ray), so labels stay exact.
    """
    rng = np.random.default_rng([int(cfg.seed), int(frame.meta.get("seed", 0))])
    lo, hi = cfg.scale_range
    scale = float(rng.uniform(lo, hi))
    jitter = (
        rng.uniform(-cfg.centroid_jitter_mm, cfg.centroid_jitter_mm, 3)
        if cfg.centroid_jitter_mm > 0
        else np.zeros(3)
    )
    rot_seed = int(rng.integers(0, 2**63 - 1))

    cz = float(frame.centroid_mm[2])
    if scale == 1.0:
        depth = frame.depth
        gt = frame.gt
        center = frame.centroid_mm.copy()
    else:
        vals = frame.depth.values.copy()
        valid = vals != 0.0
        vals[valid] = cz + scale * (vals[valid] - cz)
        depth = DepthImage(
            frame.depth.width, frame.depth.height, vals,
            frame.depth.intrinsics, frame.depth.frame_id,
        )
        jz = frame.gt.joints[:, 2]
        new_z = cz + scale * (jz - cz)
        gt = HandPose(frame.gt.joints * (new_z / jz)[:, None], frame.gt.frame_id)
        center = cloud_centroid(unproject(depth))

    meta = dict(frame.meta)
    meta.update(
        {
            "augment_scale": scale,
            "augment_centroid_jitter": jitter,
            "view_rotation_jitter_rad": cfg.camera_rotation_jitter_rad,
            "view_rotation_jitter_seed": rot_seed,
        }
    )
    return Frame(depth, gt, center + jitter, meta)
