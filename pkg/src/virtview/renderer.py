"""Re-render point clouds into virtual-view depth maps and crop hand regions.

Rendering is plain z-buffer point splatting: holes are left at 0, never
filled, so sparse or wrongly-occluded regions stay visible to downstream
consumers.  ``render_all`` fans out across views on a thread pool; every
view is rendered independently, so the output is bit-identical for any
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import CenterBehindCamera, EmptyCloud, ShapeMismatch
from .geometry import (
    DepthImage,
    Intrinsics,
    PointCloud,
    VirtualView,
    VirtualViewSet,
    view_frame_id,
)


def default_thread_count() -> int:
    env = os.environ.get("VIRTVIEW_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RenderConfig:
    out_width: int
    out_height: int
    splat_radius: int = 1
    max_range_mm: float = 2000.0

    def __post_init__(self):
        if self.out_width <= 0 or self.out_height <= 0:
            raise ValueError("output dimensions must be positive")
        if not (0 <= self.splat_radius <= 3):
            raise ValueError("splat_radius must be in [0, 3]")


@dataclass(frozen=True)
class CropConfig:
    crop_size: int = 176
    cube_mm: float = 150.0
    normalize: bool = True

    def __post_init__(self):
        if self.crop_size <= 0 or self.cube_mm <= 0:
            raise ValueError("crop_size and cube_mm must be positive")


@dataclass(frozen=True)
class Crop:
    """A resampled hand crop plus the geometry needed to decode it.

    ``image`` is a DepthImage whose intrinsics describe the crop itself
    (the crop window is a principal-point shift plus zoom of the source
    camera), so crop-pixel coordinates unproject directly into the source
    camera frame.  ``center_mm`` / ``cube_mm`` fix the depth normalization:
    value -1 maps to center z - cube, +1 to center z + cube, holes to +1.
    """

    image: DepthImage
    center_mm: np.ndarray
    cube_mm: float
    normalized: bool

    def __post_init__(self):
        object.__setattr__(
            self, "center_mm", np.asarray(self.center_mm, dtype=np.float64)
        )

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        """Map normalized values back to mm (holes stay wherever +1 maps)."""
        if not self.normalized:
            return values
        return self.center_mm[2] + values * self.cube_mm


def render_depth(
    cloud: PointCloud,
    view: VirtualView,
    intr: Intrinsics,
    cfg: RenderConfig,
    backend: str | None = None,
) -> DepthImage:
    """Splat ``cloud`` into the view's camera and return its depth map."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot render an empty cloud")
    f = view.from_original
    buf = _kernels.splat_points(
        cloud.points,
        f.rotation,
        f.translation,
        intr.fx,
        intr.fy,
        intr.cx,
        intr.cy,
        cfg.out_width,
        cfg.out_height,
        cfg.splat_radius,
        cfg.max_range_mm,
        backend=backend,
    )
    out_intr = Intrinsics(intr.fx, intr.fy, intr.cx, intr.cy, cfg.out_width, cfg.out_height)
    return DepthImage(
        cfg.out_width,
        cfg.out_height,
        buf,
        out_intr,
        view_frame_id(cloud.frame_id, view.id),
    )


def render_all(
    cloud: PointCloud,
    views: VirtualViewSet,
    intr: Intrinsics,
    cfg: RenderConfig,
    threads: int = 1,
    view_ids=None,
    backend: str | None = None,
) -> list:
    """Render the given views (default: all), ordered by view id."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    ids = sorted(view_ids) if view_ids is not None else list(range(len(views)))
    targets = [views.views[i] for i in ids]
    if threads == 1 or len(targets) <= 1:
        return [render_depth(cloud, v, intr, cfg, backend=backend) for v in targets]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [
            pool.submit(render_depth, cloud, v, intr, cfg, backend=backend)
            for v in targets
        ]
        return [f.result() for f in futs]


def crop_window(depth_intr: Intrinsics, center_mm, cube_mm: float):
    """Source-image window (u0, v0, half extents in px) of the metric cube."""
    cx3 = np.asarray(center_mm, dtype=np.float64)
    cz = cx3[2]
    if cz <= 0:
        raise CenterBehindCamera(f"crop center depth {cz} <= 0")
    uc = depth_intr.fx * cx3[0] / cz + depth_intr.cx
    vc = depth_intr.fy * cx3[1] / cz + depth_intr.cy
    half_u = depth_intr.fx * cube_mm / cz
    half_v = depth_intr.fy * cube_mm / cz
    return uc - half_u, vc - half_v, half_u, half_v


def crop_hand(depth: DepthImage, center_mm, cfg: CropConfig) -> Crop:
    """Resample the metric cube around ``center_mm`` to a square crop.

    Nearest-neighbor sampling only: no interpolation across holes.  With
    ``cfg.normalize``, valid depths map linearly to [-1, 1] (clamped) and
    holes to +1.
    """
    center = np.asarray(center_mm, dtype=np.float64)
    u0, v0, half_u, half_v = crop_window(depth.intrinsics, center, cfg.cube_mm)
    s = cfg.crop_size
    su = s / (2.0 * half_u)
    sv = s / (2.0 * half_v)

    cols = np.rint(u0 + np.arange(s) / su).astype(np.int64)
    rows = np.rint(v0 + np.arange(s) / sv).astype(np.int64)
    ok_c = (cols >= 0) & (cols < depth.width)
    ok_r = (rows >= 0) & (rows < depth.height)
    out = np.zeros((s, s))
    if ok_r.any() and ok_c.any():
        sub = depth.values[np.ix_(rows[ok_r], cols[ok_c])]
        out[np.ix_(ok_r, ok_c)] = sub

    if cfg.normalize:
        valid = out != 0.0
        vals = np.clip((out - center[2]) / cfg.cube_mm, -1.0, 1.0)
        vals[~valid] = 1.0
    else:
        vals = out

    src = depth.intrinsics
    crop_intr = Intrinsics(src.fx * su, src.fy * sv, (src.cx - u0) * su, (src.cy - v0) * sv, s, s)
    img = DepthImage(s, s, vals, crop_intr, depth.frame_id)
    return Crop(img, center, cfg.cube_mm, cfg.normalize)


def resize_nearest(values: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor square resize (exact strided pick when divisible)."""
    h, w = values.shape
    if h != w:
        raise ShapeMismatch(f"expected a square image, got {values.shape}")
    if h == size:
        return values.copy()
    if h % size == 0:
        step = h // size
        return values[step // 2 :: step, step // 2 :: step][:size, :size].copy()
    idx = np.rint(np.arange(size) * (h / size)).astype(np.int64)
    idx = np.clip(idx, 0, h - 1)
    return values[np.ix_(idx, idx)].copy()
