"""Camera models, rigid transforms, and spherical virtual-view sampling.

Conventions (used everywhere in this package):

* Right-handed camera frame: +x right, +y down, +z along the optical axis,
  depth in millimeters.
* Pixel centers sit at integer coordinates, so the pinhole model is
  ``u = fx * x / z + cx`` with ``u`` equal to the column index.
* ``RigidTransform`` maps points as ``R @ p + t``.  A view's ``to_original``
  maps view-frame points into the original camera frame.

Virtual views are sampled on a sphere around a center point (normally the
hand centroid): the reference (0, 0) view sits on the ray from the original
camera through the center, and every other view is that reference camera
rotated rigidly about the center point.  Zenith rotates about the camera's
horizontal (+x) axis, azimuth about its up (-y) axis.  When the center lies
on the original optical axis and the radius equals the camera-to-center
distance, this construction is exactly the roll-free look-at sphere and the
(0, 0) view is exactly the original camera pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllPixelsInvalid,
    EmptyCloud,
    FrameMismatch,
    InvalidRange,
    UnknownSubset,
)

DEFAULT_MAX_RANGE_MM = 2000.0

# Default subset masks on the row-major 5x5 view grid (id = row*5 + col).
# Nested: {center} in all; 3-mask is the center row's extremes plus center;
# 9-mask is the corner-aligned 3x3 subgrid; 15 adds the edge midpoints of
# the remaining rows/cols.
_SUBSET_MASKS_5X5 = {
    1: (12,),
    3: (10, 12, 14),
    9: (0, 2, 4, 10, 12, 14, 20, 22, 24),
    15: (0, 2, 4, 6, 8, 10, 11, 12, 13, 14, 16, 18, 20, 22, 24),
    25: tuple(range(25)),
}


def view_frame_id(base: str, view_id: int) -> str:
    """Frame label of a virtual view derived from camera frame ``base``."""
    return f"{base}:view{view_id}"


def split_view_frame_id(frame_id: str) -> tuple[str, int]:
    """Inverse of :func:`view_frame_id`; raises FrameMismatch if not a view frame."""
    base, sep, tail = frame_id.rpartition(":view")
    if not sep or not tail.isdigit():
        raise FrameMismatch(f"{frame_id!r} is not a virtual-view frame label")
    return base, int(tail)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64)
        )
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rigid transform needs a 3x3 rotation and 3-vector")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max error {err:.3e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to one 3-vector or an (N, 3) array."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -(t.rotation.T @ t.translation))


@dataclass(frozen=True)
class DepthImage:
    """Rectangular grid of metric depth samples (mm); 0 marks a hole.

    ``values`` is an (height, width) float64 array.  Crops produced with
    ``normalize=True`` reuse this type with values in [-1, 1]; the metric
    invariants below only apply to metric images.
    """

    width: int
    height: int
    values: np.ndarray
    intrinsics: Intrinsics
    frame_id: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {vals.shape} != (height, width)=({self.height}, {self.width})"
            )
        object.__setattr__(self, "values", vals)

    def valid_mask(self) -> np.ndarray:
        return self.values != 0.0

    def validate_range(self, max_range_mm: float = DEFAULT_MAX_RANGE_MM) -> None:
        vals = self.values[self.valid_mask()]
        if vals.size and (vals.min() <= 0.0 or vals.max() >= max_range_mm):
            raise ValueError(
                f"depth values outside (0, {max_range_mm}) mm: "
                f"[{vals.min():.3f}, {vals.max():.3f}]"
            )


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame_id: str

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class HandPose:
    joints: np.ndarray
    frame_id: str

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError(f"joints must be (K, 3), got {j.shape}")
        object.__setattr__(self, "joints", j)

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]


@dataclass(frozen=True)
class VirtualView:
    id: int
    zenith: float
    azimuth: float
    to_original: RigidTransform
    from_original: RigidTransform


@dataclass(frozen=True)
class VirtualViewSet:
    views: tuple
    center_mm: np.ndarray
    radius_mm: float
    grid_shape: tuple = field(default=(0, 0))

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(
            self, "center_mm", np.asarray(self.center_mm, dtype=np.float64)
        )
        ids = [v.id for v in self.views]
        if ids != list(range(len(ids))):
            raise ValueError("view ids must be 0..M-1 without gaps")
        if self.radius_mm <= 0:
            raise ValueError("radius must be positive")

    def __len__(self) -> int:
        return len(self.views)

    def center_view_id(self) -> int:
        """Id of the unique (zenith, azimuth) = (0, 0) view."""
        hits = [v.id for v in self.views if v.zenith == 0.0 and v.azimuth == 0.0]
        if len(hits) != 1:
            raise InvalidRange(f"expected exactly one (0,0) view, found {len(hits)}")
        return hits[0]


def unproject(depth: DepthImage) -> PointCloud:
    """One 3D point (mm) per valid pixel, in the image's camera frame."""
    mask = depth.valid_mask()
    if not mask.any():
        raise AllPixelsInvalid("depth image has no valid pixel")
    vs, us = np.nonzero(mask)
    z = depth.values[vs, us]
    intr = depth.intrinsics
    x = (us - intr.cx) * z / intr.fx
    y = (vs - intr.cy) * z / intr.fy
    return PointCloud(np.stack([x, y, z], axis=1), depth.frame_id)


def project(cloud: PointCloud, intr: Intrinsics) -> np.ndarray:
    """Continuous (u, v, z) rows for each point; raises NonPositiveDepth."""
    pts = cloud.points
    bad = np.nonzero(pts[:, 2] <= 0.0)[0]
    if bad.size:
        raise NonPositiveDepth(bad)
    z = pts[:, 2]
    u = intr.fx * pts[:, 0] / z + intr.cx
    v = intr.fy * pts[:, 1] / z + intr.cy
    return np.stack([u, v, z], axis=1)


def centroid(cloud: PointCloud) -> np.ndarray:
    if len(cloud) == 0:
        raise EmptyCloud("cannot take the centroid of an empty cloud")
    return cloud.points.mean(axis=0)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit axis."""
    ax = np.asarray(axis, dtype=np.float64)
    ax = ax / np.linalg.norm(ax)
    k = np.array(
        [[0.0, -ax[2], ax[1]], [ax[2], 0.0, -ax[0]], [-ax[1], ax[0], 0.0]]
    )
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def _check_angle_range(rng, name: str) -> tuple:
    lo, hi = float(rng[0]), float(rng[1])
    if not (-math.pi / 2 < lo <= hi < math.pi / 2):
        raise InvalidRange(f"{name} range {rng} exceeds (-pi/2, pi/2)")
    if abs(lo + hi) > 1e-12:
        raise InvalidRange(f"{name} range {rng} is not symmetric about 0")
    return lo, hi


def _grid_angles(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return np.linspace(lo, hi, n)


def view_rotation(zenith: float, azimuth: float) -> np.ndarray:
    """Rotation placing a view at (zenith, azimuth) on the sampling sphere.

    Zenith about the camera's +x axis, azimuth about its up (-y) axis,
    azimuth applied last.
    """
    r_zen = rotation_about_axis(np.array([1.0, 0.0, 0.0]), zenith)
    r_az = rotation_about_axis(np.array([0.0, -1.0, 0.0]), azimuth)
    return r_az @ r_zen


def sample_virtual_views(
    center_mm: np.ndarray,
    radius_mm: float,
    grid_rows: int,
    grid_cols: int,
    zenith_range=(-math.pi / 3, math.pi / 3),
    azimuth_range=(-math.pi / 3, math.pi / 3),
) -> VirtualViewSet:
    """Endpoint-inclusive grid of cameras on a sphere around ``center_mm``.

    Views are ordered row-major: id = zenith_row * grid_cols + azimuth_col.
    Each camera is the (0, 0) reference camera rotated rigidly about the
    sphere center; with ``radius_mm`` equal to the distance from the
    original camera to the center, the (0, 0) view is exactly the original
    camera pose (identity ``to_original``).
    """
    center = np.asarray(center_mm, dtype=np.float64)
    dist = np.linalg.norm(center)
    if dist <= 0:
        raise InvalidRange("sphere center must not coincide with the camera")
    if radius_mm <= 0:
        raise InvalidRange("radius must be positive")
    if grid_rows < 1 or grid_cols < 1:
        raise InvalidRange("grid must have at least one row and column")
    if grid_rows % 2 == 0 or grid_cols % 2 == 0:
        raise InvalidRange("grid rows/cols must be odd so a (0,0) view exists")
    zen_lo, zen_hi = _check_angle_range(zenith_range, "zenith")
    az_lo, az_hi = _check_angle_range(azimuth_range, "azimuth")

    direction = center / dist
    zeniths = _grid_angles(zen_lo, zen_hi, grid_rows)
    azimuths = _grid_angles(az_lo, az_hi, grid_cols)

    views = []
    for row, zen in enumerate(zeniths):
        for col, az in enumerate(azimuths):
            vid = row * grid_cols + col
            if zen == 0.0 and az == 0.0:
                rot = np.eye(3)
            else:
                rot = view_rotation(zen, az)
            pos = center - radius_mm * (rot @ direction)
            to_orig = RigidTransform(rot, pos)
            views.append(
                VirtualView(vid, float(zen), float(az), to_orig, invert(to_orig))
            )
    return VirtualViewSet(views, center, float(radius_mm), (grid_rows, grid_cols))


def uniform_subset(view_set: VirtualViewSet, n: int, mask=None) -> list:
    """Deterministic ids of ``n`` uniformly spread views.

    Default masks exist for n in {1, 3, 9, 15, 25} on the 5x5 grid and are
    nested (1 in 3 in 9 in 25); every default mask contains the (0, 0) view.
    Arbitrary ``n`` requires an explicit ``mask``.
    """
    m = len(view_set)
    if mask is not None:
        ids = [int(i) for i in mask]
        if len(ids) != n:
            raise UnknownSubset(f"mask has {len(ids)} ids, expected {n}")
        if any(i < 0 or i >= m for i in ids):
            raise UnknownSubset("mask contains ids outside the view set")
        return ids
    if n == m:
        return list(range(m))
    if n == 1:
        return [view_set.center_view_id()]
    if view_set.grid_shape == (5, 5) and n in _SUBSET_MASKS_5X5:
        return list(_SUBSET_MASKS_5X5[n])
    raise UnknownSubset(f"no default mask for n={n} on grid {view_set.grid_shape}")


def transform_pose(pose: HandPose, t: RigidTransform, frame_id: str) -> HandPose:
    """Apply ``R @ j + t`` to every joint; the caller names the new frame."""
    return HandPose(t.apply(pose.joints), frame_id)


def jitter_views(views: VirtualViewSet, max_angle_rad: float, seed: int) -> VirtualViewSet:
    """Perturb each view's orientation by a small random rotation.

    Camera positions are unchanged; used as augmentation during multi-view
    rendering.  Deterministic given the seed; ``max_angle_rad == 0`` returns
    the input set unchanged.
    """
    if max_angle_rad == 0.0:
        return views
    rng = np.random.default_rng([int(seed), 17])
    out = []
    for v in views.views:
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, max_angle_rad)
        rot = v.to_original.rotation @ rotation_about_axis(axis, angle)
        to_orig = RigidTransform(rot, v.to_original.translation)
        out.append(VirtualView(v.id, v.zenith, v.azimuth, to_orig, invert(to_orig)))
    return VirtualViewSet(out, views.center_mm, views.radius_mm, views.grid_shape)
