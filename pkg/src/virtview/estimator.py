"""Per-view 3D pose estimators.

Two implementations share the ``EstimatorOutput`` contract:

* an anchor-voting regressor: a small conv backbone over the normalized
  crop, dense anchors at a fixed pixel stride, and per-joint softmax
  voting over (anchor + offset) for the in-plane coordinates plus a
  depth-offset vote relative to the crop center depth;
* an oracle estimator that perturbs ground truth with occlusion-dependent
  Gaussian noise, used to exercise view selection and fusion without
  full-scale training.

All gradients of the anchor-voting path are computed analytically and are
verified against finite differences in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import (
    EmptyDataset,
    FrameMismatch,
    NonFiniteLoss,
    ShapeMismatch,
)
from .geometry import (
    DepthImage,
    HandPose,
    Intrinsics,
    PointCloud,
    VirtualView,
    transform_pose,
)
from .renderer import Crop, RenderConfig, render_depth

DEFAULT_LAMBDA = 3.0


@dataclass(frozen=True)
class EstimatorConfig:
    crop_size: int = 176
    anchor_stride: int = 16
    joint_count: int = 14
    channels: tuple = (8, 16, 32, 32)
    feature_tap: int = 2

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ValueError("backbone uses exactly 4 conv layers")
        if not (1 <= self.feature_tap <= 4):
            raise ValueError("feature_tap must be in [1, 4]")

    @property
    def anchors_per_side(self) -> int:
        return math.ceil(self.crop_size / self.anchor_stride)

    def to_dict(self) -> dict:
        return {
            "crop_size": self.crop_size,
            "anchor_stride": self.anchor_stride,
            "joint_count": self.joint_count,
            "channels": list(self.channels),
            "feature_tap": self.feature_tap,
        }

    @staticmethod
    def from_dict(d: dict) -> "EstimatorConfig":
        return EstimatorConfig(
            crop_size=int(d["crop_size"]),
            anchor_stride=int(d["anchor_stride"]),
            joint_count=int(d["joint_count"]),
            channels=tuple(d["channels"]),
            feature_tap=int(d["feature_tap"]),
        )


@dataclass(frozen=True)
class AnchorGrid:
    stride: int
    positions: np.ndarray  # (A, 2) crop-pixel (u, v), row-major over (v, u)

    @staticmethod
    def build(crop_size: int, stride: int) -> "AnchorGrid":
        n = math.ceil(crop_size / stride)
        centers = (np.arange(n) + 0.5) * stride - 0.5
        vv, uu = np.meshgrid(centers, centers, indexing="ij")
        return AnchorGrid(stride, np.stack([uu.ravel(), vv.ravel()], axis=1))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class EstimatorParams:
    config: EstimatorConfig
    tensors: dict
    rng_seed: int
    history: list = field(default_factory=list, compare=False, repr=False)

    def copy(self) -> "EstimatorParams":
        return EstimatorParams(
            self.config, {k: v.copy() for k, v in self.tensors.items()}, self.rng_seed
        )

    def to_section(self) -> tuple:
        cfg = self.config.to_dict()
        cfg["rng_seed"] = self.rng_seed
        return cfg, self.tensors

    @staticmethod
    def from_section(section: tuple) -> "EstimatorParams":
        cfg, tensors = section
        seed = int(cfg.pop("rng_seed", 0))
        return EstimatorParams(EstimatorConfig.from_dict(cfg), dict(tensors), seed)


@dataclass(frozen=True)
class EstimatorOutput:
    pose: HandPose
    feature: np.ndarray
    per_anchor: dict
    crop: Crop | None = None
    cache: dict | None = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class OracleNoiseModel:
    base_sigma_mm: float = 2.0
    occlusion_gain_mm: float = 8.0
    rng_seed: int = 0
    occlusion_margin_mm: float = 15.0
    occlusion_window: int = 2

    def __post_init__(self):
        if self.base_sigma_mm < 0 or self.occlusion_gain_mm < 0:
            raise ValueError("noise sigmas must be >= 0")


ORACLE_FEATURE_SHAPE = (4, 8, 8)


def init_estimator_params(cfg: EstimatorConfig, seed: int) -> EstimatorParams:
    rng = np.random.default_rng(seed)
    c1, c2, c3, c4 = cfg.channels
    k = cfg.joint_count
    t = {}
    for i, (cin, cout) in enumerate(zip((1, c1, c2, c3), (c1, c2, c3, c4)), start=1):
        t[f"conv{i}_w"] = nn.he_normal(rng, (cout, cin, 3, 3), cin * 9)
        t[f"conv{i}_b"] = np.zeros(cout)
    # Offset/depth heads start near zero so initial votes sit on the anchors
    # at the crop-center depth.
    t["head_w_w"] = nn.he_normal(rng, (c4, k), c4)
    t["head_w_b"] = np.zeros(k)
    t["head_off_w"] = 0.01 * nn.he_normal(rng, (c4, 2 * k), c4)
    t["head_off_b"] = np.zeros(2 * k)
    t["head_dep_w"] = 0.01 * nn.he_normal(rng, (c4, k), c4)
    t["head_dep_b"] = np.zeros(k)
    return EstimatorParams(cfg, t, seed)


def _forward_batch(x, intr_arr, center_z, params: EstimatorParams, want_cache: bool):
    """x: (N, 1, S, S); intr_arr: (N, 4) columns fx, fy, cx, cy; center_z: (N,)."""
    cfg = params.config
    t = params.tensors
    n_side = cfg.anchors_per_side
    a_count = n_side * n_side
    k = cfg.joint_count

    acts, caches, masks = [x], [], []
    h = x
    for i in range(1, 5):
        y, cache = nn.conv2d_forward(h, t[f"conv{i}_w"], t[f"conv{i}_b"], stride=2, pad=1)
        h, mask = nn.relu_forward(y)
        acts.append(h)
        caches.append(cache)
        masks.append(mask)
    top = h  # (N, C, n, n)
    if top.shape[2] != n_side or top.shape[3] != n_side:
        raise ShapeMismatch(
            f"backbone output {top.shape[2:]} does not match anchor grid {n_side}"
        )
    n_batch = x.shape[0]
    c_top = top.shape[1]
    p = top.reshape(n_batch, c_top, a_count).transpose(0, 2, 1)  # (N, A, C)

    w_logits = p @ t["head_w_w"] + t["head_w_b"]  # (N, A, K)
    s = nn.softmax(w_logits, axis=1)
    off = (p @ t["head_off_w"] + t["head_off_b"]).reshape(n_batch, a_count, k, 2)
    dep = p @ t["head_dep_w"] + t["head_dep_b"]  # (N, A, K)

    grid = AnchorGrid.build(cfg.crop_size, cfg.anchor_stride)
    au = grid.positions[:, 0]
    av = grid.positions[:, 1]
    u = np.einsum("nak,a->nk", s, au) + np.einsum("nak,nak->nk", s, off[..., 0])
    v = np.einsum("nak,a->nk", s, av) + np.einsum("nak,nak->nk", s, off[..., 1])
    z = center_z[:, None] + np.einsum("nak,nak->nk", s, dep)

    fx, fy, cx, cy = (intr_arr[:, i][:, None] for i in range(4))
    jx = (u - cx) * z / fx
    jy = (v - cy) * z / fy
    joints = np.stack([jx, jy, z], axis=2)  # (N, K, 3)

    out = {
        "joints": joints,
        "u": u,
        "v": v,
        "z": z,
        "s": s,
        "w_logits": w_logits,
        "off": off,
        "dep": dep,
        "feature": acts[cfg.feature_tap],
        "top": top,
    }
    if want_cache:
        out["cache"] = {
            "p": p,
            "caches": caches,
            "masks": masks,
            "grid": grid,
            "intr_arr": intr_arr,
            "center_z": center_z,
            "x_shape": x.shape,
        }
    return out


def _backward_batch(fwd, params: EstimatorParams, djoints, ds_extra=None, dfeature=None):
    """Backprop d(loss)/d(tensors) given upstream gradients.

    ``djoints``: (N, K, 3) gradient on the metric joints; ``ds_extra``:
    optional extra gradient on the anchor softmax (used by the informative
    anchor term); ``dfeature``: optional gradient injected at the feature
    tap (used when a confidence network consumes the features).
    """
    cfg = params.config
    t = params.tensors
    cache = fwd["cache"]
    p = cache["p"]
    grid = cache["grid"]
    intr_arr = cache["intr_arr"]
    s = fwd["s"]
    off = fwd["off"]
    dep = fwd["dep"]
    u, v, z = fwd["u"], fwd["v"], fwd["z"]

    fx, fy, cx, cy = (intr_arr[:, i][:, None] for i in range(4))
    gx = djoints[..., 0]
    gy = djoints[..., 1]
    gz = djoints[..., 2]
    du = gx * z / fx
    dv = gy * z / fy
    dz = gx * (u - cx) / fx + gy * (v - cy) / fy + gz

    au = grid.positions[:, 0]
    av = grid.positions[:, 1]
    ds = (
        du[:, None, :] * (au[None, :, None] + off[..., 0])
        + dv[:, None, :] * (av[None, :, None] + off[..., 1])
        + dz[:, None, :] * dep
    )
    if ds_extra is not None:
        ds = ds + ds_extra
    doff = np.empty_like(off)
    doff[..., 0] = du[:, None, :] * s
    doff[..., 1] = dv[:, None, :] * s
    ddep = dz[:, None, :] * s
    dw_logits = nn.softmax_backward(ds, s, axis=1)

    n_batch, a_count, k = dw_logits.shape
    dp = dw_logits @ t["head_w_w"].T
    dp += doff.reshape(n_batch, a_count, 2 * k) @ t["head_off_w"].T
    dp += ddep @ t["head_dep_w"].T

    doff_flat = doff.reshape(n_batch, a_count, 2 * k)
    grads = {
        "head_w_w": np.tensordot(p, dw_logits, axes=([0, 1], [0, 1])),
        "head_w_b": dw_logits.sum(axis=(0, 1)),
        "head_off_w": np.tensordot(p, doff_flat, axes=([0, 1], [0, 1])),
        "head_off_b": doff_flat.sum(axis=(0, 1)),
        "head_dep_w": np.tensordot(p, ddep, axes=([0, 1], [0, 1])),
        "head_dep_b": ddep.sum(axis=(0, 1)),
    }

    c_top = fwd["top"].shape[1]
    n_side = cfg.anchors_per_side
    dh = dp.transpose(0, 2, 1).reshape(n_batch, c_top, n_side, n_side)
    for i in range(4, 0, -1):
        if dfeature is not None and i == cfg.feature_tap:
            dh = dh + dfeature
        dy = nn.relu_backward(dh, fwd["cache"]["masks"][i - 1])
        dh, dw, db = nn.conv2d_backward(dy, fwd["cache"]["caches"][i - 1])
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return grads


def _crop_batch_arrays(crops):
    xs = np.stack([c.image.values for c in crops])[:, None, :, :]
    intr_arr = np.array(
        [[c.image.intrinsics.fx, c.image.intrinsics.fy, c.image.intrinsics.cx, c.image.intrinsics.cy] for c in crops]
    )
    center_z = np.array([c.center_mm[2] for c in crops])
    return xs, intr_arr, center_z


def estimate(crop: Crop, params: EstimatorParams) -> EstimatorOutput:
    """Run the anchor-voting regressor on one crop."""
    if crop.image.values.shape != (params.config.crop_size, params.config.crop_size):
        raise ShapeMismatch(
            f"crop {crop.image.values.shape} != configured "
            f"{params.config.crop_size}x{params.config.crop_size}"
        )
    xs, intr_arr, center_z = _crop_batch_arrays([crop])
    fwd = _forward_batch(xs, intr_arr, center_z, params, want_cache=False)
    pose = HandPose(fwd["joints"][0], crop.image.frame_id)
    grid = AnchorGrid.build(params.config.crop_size, params.config.anchor_stride)
    per_anchor = {
        "weights": fwd["w_logits"][0],
        "softmax": fwd["s"][0],
        "offsets": fwd["off"][0],
        "depth": fwd["dep"][0],
        "anchors": grid.positions,
    }
    return EstimatorOutput(pose, fwd["feature"][0], per_anchor, crop)


_pose_error_grad = nn.smooth_l1_norm_loss


def a2j_loss(out: EstimatorOutput, gt: HandPose, lam: float = DEFAULT_LAMBDA) -> float:
    """Objective + informative-anchor loss, ``lam * L_obj + L_info``.

    ``L_obj`` penalizes the 3D joint error; ``L_info`` pulls the anchor-
    weight barycenter toward each joint's in-plane location (skipped for
    estimators without anchors, e.g. the oracle).
    """
    if out.pose.frame_id != gt.frame_id:
        raise FrameMismatch(f"{out.pose.frame_id!r} vs {gt.frame_id!r}")
    l_obj, _ = _pose_error_grad(out.pose.joints, gt.joints)
    l_info = 0.0
    anchors = out.per_anchor.get("anchors")
    if anchors is not None and out.crop is not None:
        s = out.per_anchor["softmax"]
        bary = s.T @ anchors
        l_info, _ = _pose_error_grad(bary, _gt_inplane(out.crop, gt))
    return float(lam * l_obj + l_info)


def _gt_inplane(crop: Crop, gt: HandPose) -> np.ndarray:
    intr = crop.image.intrinsics
    z = gt.joints[:, 2]
    gu = intr.fx * gt.joints[:, 0] / z + intr.cx
    gv = intr.fy * gt.joints[:, 1] / z + intr.cy
    return np.stack([gu, gv], axis=1)


def train_estimator(dataset, params: EstimatorParams, schedule) -> EstimatorParams:
    """Adam training of the anchor-voting regressor.

    ``dataset`` is a sequence of (Crop, HandPose) pairs with poses in the
    crop's frame; ``schedule`` needs lr / decay / epochs / seed and an
    optional batch size.  Returns new params; per-epoch losses are recorded
    on ``result.history``.
    """
    data = list(dataset)
    if not data:
        raise EmptyDataset("train_estimator needs at least one sample")
    out = params.copy()
    cfg = out.config
    lam = getattr(schedule, "lam", DEFAULT_LAMBDA)
    batch = getattr(schedule, "batch", 0) or len(data)
    rng = np.random.default_rng(schedule.seed)
    opt = nn.Adam(out.tensors, lr=schedule.lr)

    xs, intr_arr, center_z = _crop_batch_arrays([c for c, _ in data])
    gt3d = np.stack([g.joints for _, g in data])
    gtuv = np.stack([_gt_inplane(c, g) for c, g in data])
    grid = AnchorGrid.build(cfg.crop_size, cfg.anchor_stride)

    history = []
    for epoch in range(schedule.epochs):
        lr = nn.decayed_lr(schedule.lr, schedule.decay, epoch)
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for start in range(0, len(data), batch):
            idx = order[start : start + batch]
            fwd = _forward_batch(xs[idx], intr_arr[idx], center_z[idx], out, want_cache=True)
            n_b = len(idx)

            l_obj, djoints = _pose_error_grad(fwd["joints"], gt3d[idx])
            bary = np.einsum("nak,ad->nkd", fwd["s"], grid.positions)
            l_info, dbary = _pose_error_grad(bary, gtuv[idx])
            ds_extra = np.einsum("ad,nkd->nak", grid.positions, dbary) / n_b
            loss = (lam * l_obj + l_info) / n_b
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, start, loss)

            grads = _backward_batch(fwd, out, lam * djoints / n_b, ds_extra=ds_extra)
            opt.step(grads, lr=lr)
            epoch_loss += loss * n_b
        history.append(
            {"epoch": epoch, "loss": epoch_loss / len(data), "lr": lr}
        )
    out.history = history
    return out


def batched_estimate(crops, params: EstimatorParams):
    """Vectorized ``estimate`` over same-shaped crops; returns EstimatorOutputs."""
    if not crops:
        return []
    xs, intr_arr, center_z = _crop_batch_arrays(crops)
    fwd = _forward_batch(xs, intr_arr, center_z, params, want_cache=False)
    grid = AnchorGrid.build(params.config.crop_size, params.config.anchor_stride)
    outs = []
    for i, crop in enumerate(crops):
        per_anchor = {
            "weights": fwd["w_logits"][i],
            "softmax": fwd["s"][i],
            "offsets": fwd["off"][i],
            "depth": fwd["dep"][i],
            "anchors": grid.positions,
        }
        outs.append(
            EstimatorOutput(
                HandPose(fwd["joints"][i], crop.image.frame_id),
                fwd["feature"][i],
                per_anchor,
                crop,
            )
        )
    return outs


def occlusion_fractions(
    pose_view: HandPose, rendered: DepthImage, noise: OracleNoiseModel
) -> np.ndarray:
    """Per-joint fraction of the probe window hidden behind rendered geometry.

    A window pixel occludes the joint when its rendered depth is valid and
    closer than the joint by more than the margin (which absorbs the
    joint's own surface radius).
    """
    w = noise.occlusion_window
    span = 2 * w + 1
    intr = rendered.intrinsics
    occ = np.zeros(pose_view.joint_count)
    for k, joint in enumerate(pose_view.joints):
        if joint[2] <= 0:
            occ[k] = 1.0
            continue
        u = int(np.rint(intr.fx * joint[0] / joint[2] + intr.cx))
        v = int(np.rint(intr.fy * joint[1] / joint[2] + intr.cy))
        u_lo, u_hi = max(0, u - w), min(rendered.width, u + w + 1)
        v_lo, v_hi = max(0, v - w), min(rendered.height, v + w + 1)
        if u_lo >= u_hi or v_lo >= v_hi:
            occ[k] = 1.0
            continue
        win = rendered.values[v_lo:v_hi, u_lo:u_hi]
        blocked = (win > 0) & (win < joint[2] - noise.occlusion_margin_mm)
        occ[k] = blocked.sum() / (span * span)
    return occ


def oracle_feature(view: VirtualView, occ: np.ndarray) -> np.ndarray:
    """Fixed-size summary the confidence networks can train against."""
    feat = np.zeros(ORACLE_FEATURE_SHAPE)
    feat[0] = view.zenith
    feat[1] = view.azimuth
    feat[2] = occ.mean()
    flat = feat[3].ravel()
    flat[: occ.size] = occ
    return feat


def oracle_estimate(
    gt: HandPose,
    view: VirtualView,
    cloud: PointCloud | None,
    noise: OracleNoiseModel,
    rendered: DepthImage | None = None,
    intr: Intrinsics | None = None,
    render_cfg: RenderConfig | None = None,
) -> EstimatorOutput:
    """Ground truth in the view frame plus occlusion-dependent noise.

    ``rendered`` may be supplied to reuse an existing depth rendering of
    the view; otherwise the view is rendered here from ``cloud``.
    """
    if rendered is None:
        if cloud is None or intr is None or render_cfg is None:
            raise ValueError("oracle_estimate needs either `rendered` or cloud+intr+render_cfg")
        rendered = render_depth(cloud, view, intr, render_cfg)
    frame = rendered.frame_id
    pose_view = transform_pose(gt, view.from_original, frame)
    occ = occlusion_fractions(pose_view, rendered, noise)
    sigma = noise.base_sigma_mm + noise.occlusion_gain_mm * occ
    rng = np.random.default_rng([noise.rng_seed, view.id])
    joints = pose_view.joints + rng.standard_normal(pose_view.joints.shape) * sigma[:, None]
    return EstimatorOutput(
        HandPose(joints, frame), oracle_feature(view, occ), {"occlusion": occ}
    )
