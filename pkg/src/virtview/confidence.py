"""View-confidence networks and their losses.

The teacher scores each candidate view from its estimator features: a
3-layer conv encoder produces one 256-d vector per view, a single-head
scaled dot-product attention block (d_q = d_k = d_v = 64, with the usual
output projection back to 256) mixes information across views, and a
shared fully connected head maps each fused vector to a scalar score.

The student predicts all M scores directly from (a resized copy of) the
original depth crop, so no virtual view has to be rendered before
selection.  It is trained to regress the teacher's post-softmax
confidences with a scaled smooth-L1 loss.

Training never supervises confidences directly: the teacher is optimized
jointly with the pose loss of the confidence-weighted fusion over all M
views; the student is distilled from the frozen teacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import (
    BadN,
    EmptyDataset,
    FrameMismatch,
    LengthMismatch,
    NonFiniteLoss,
    ShapeMismatch,
)
from .estimator import (
    AnchorGrid,
    EstimatorParams,
    _backward_batch,
    _crop_batch_arrays,
    _forward_batch,
    _gt_inplane,
    a2j_loss,
)
from .geometry import HandPose, VirtualViewSet, transform_pose
from .renderer import Crop, resize_nearest


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.1
    lam: float = 3.0
    beta: float = 100.0
    lr: float = 0.001
    decay: float = 0.9
    epochs: int = 10
    seed: int = 0
    batch: int = 0

    def __post_init__(self):
        if self.gamma <= 0 or self.lam <= 0 or self.beta <= 0:
            raise ValueError("gamma, lam and beta must be positive")


@dataclass(frozen=True)
class TeacherConfig:
    in_channels: int
    conv_channels: tuple = (32, 64)
    feature_dim: int = 256
    attn_dim: int = 64
    n_head: int = 1

    def __post_init__(self):
        if self.n_head != 1:
            raise ValueError("the teacher uses a single attention head")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "conv_channels": list(self.conv_channels),
            "feature_dim": self.feature_dim,
            "attn_dim": self.attn_dim,
            "n_head": self.n_head,
        }

    @staticmethod
    def from_dict(d: dict) -> "TeacherConfig":
        return TeacherConfig(
            in_channels=int(d["in_channels"]),
            conv_channels=tuple(d["conv_channels"]),
            feature_dim=int(d["feature_dim"]),
            attn_dim=int(d["attn_dim"]),
            n_head=int(d["n_head"]),
        )


@dataclass
class TeacherParams:
    config: TeacherConfig
    tensors: dict
    rng_seed: int
    history: list = field(default_factory=list, compare=False, repr=False)

    def copy(self) -> "TeacherParams":
        return TeacherParams(
            self.config, {k: v.copy() for k, v in self.tensors.items()}, self.rng_seed
        )

    def to_section(self) -> tuple:
        cfg = self.config.to_dict()
        cfg["rng_seed"] = self.rng_seed
        return cfg, self.tensors

    @staticmethod
    def from_section(section: tuple) -> "TeacherParams":
        cfg, tensors = section
        seed = int(cfg.pop("rng_seed", 0))
        return TeacherParams(TeacherConfig.from_dict(cfg), dict(tensors), seed)


@dataclass(frozen=True)
class StudentConfig:
    input_size: int = 44
    channels: tuple = (8, 16, 32, 32)
    m_views: int = 25

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "channels": list(self.channels),
            "m_views": self.m_views,
        }

    @staticmethod
    def from_dict(d: dict) -> "StudentConfig":
        return StudentConfig(
            input_size=int(d["input_size"]),
            channels=tuple(d["channels"]),
            m_views=int(d["m_views"]),
        )


@dataclass
class StudentParams:
    config: StudentConfig
    tensors: dict
    rng_seed: int
    history: list = field(default_factory=list, compare=False, repr=False)

    def copy(self) -> "StudentParams":
        return StudentParams(
            self.config, {k: v.copy() for k, v in self.tensors.items()}, self.rng_seed
        )

    def to_section(self) -> tuple:
        cfg = self.config.to_dict()
        cfg["rng_seed"] = self.rng_seed
        return cfg, self.tensors

    @staticmethod
    def from_section(section: tuple) -> "StudentParams":
        cfg, tensors = section
        seed = int(cfg.pop("rng_seed", 0))
        return StudentParams(StudentConfig.from_dict(cfg), dict(tensors), seed)


@dataclass(frozen=True)
class ConfidenceVector:
    """Raw per-view scores plus softmax weights over the selected subset.

    ``selected_ids`` are ordered by descending raw score (ties broken by
    ascending view id); ``weights[i]`` belongs to ``selected_ids[i]``.
    """

    raw: np.ndarray
    selected_ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "raw", np.asarray(self.raw, dtype=np.float64))
        object.__setattr__(self, "selected_ids", tuple(int(i) for i in self.selected_ids))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        m = self.raw.shape[0]
        if len(self.selected_ids) != self.weights.shape[0]:
            raise LengthMismatch("selected_ids and weights differ in length")
        if any(i < 0 or i >= m for i in self.selected_ids):
            raise ValueError("selected ids outside [0, M)")
        if self.weights.size:
            if abs(self.weights.sum() - 1.0) > 1e-9 or (self.weights <= 0).any():
                raise ValueError("weights must be positive and sum to 1")

    @staticmethod
    def uniform(selected_ids, m: int) -> "ConfidenceVector":
        ids = list(selected_ids)
        return ConfidenceVector(
            np.zeros(m), ids, np.full(len(ids), 1.0 / len(ids))
        )


def init_teacher_params(cfg: TeacherConfig, seed: int) -> TeacherParams:
    rng = np.random.default_rng(seed)
    c1, c2 = cfg.conv_channels
    d = cfg.feature_dim
    a = cfg.attn_dim
    t = {}
    for i, (cin, cout) in enumerate(
        zip((cfg.in_channels, c1, c2), (c1, c2, d)), start=1
    ):
        t[f"conv{i}_w"] = nn.he_normal(rng, (cout, cin, 3, 3), cin * 9)
        t[f"conv{i}_b"] = np.zeros(cout)
    t["w_q"] = nn.he_normal(rng, (d, a), d)
    t["w_k"] = nn.he_normal(rng, (d, a), d)
    t["w_v"] = nn.he_normal(rng, (d, a), d)
    t["w_o"] = nn.he_normal(rng, (a, d), a)
    t["head_w"] = nn.he_normal(rng, (d,), d)
    t["head_b"] = np.zeros(1)
    return TeacherParams(cfg, t, seed)


def init_student_params(cfg: StudentConfig, seed: int) -> StudentParams:
    rng = np.random.default_rng(seed)
    c1, c2, c3, c4 = cfg.channels
    t = {}
    size = cfg.input_size
    for i, (cin, cout) in enumerate(zip((1, c1, c2, c3), (c1, c2, c3, c4)), start=1):
        t[f"conv{i}_w"] = nn.he_normal(rng, (cout, cin, 3, 3), cin * 9)
        t[f"conv{i}_b"] = np.zeros(cout)
        size = (size + 1) // 2
    flat = c4 * size * size
    t["fc_w"] = nn.he_normal(rng, (flat, cfg.m_views), flat)
    t["fc_b"] = np.zeros(cfg.m_views)
    return StudentParams(cfg, t, seed)


def attention_core(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """Scaled dot-product attention; returns (output, attention weights)."""
    scale = 1.0 / np.sqrt(q.shape[1])
    attn = nn.softmax(q @ k.T * scale, axis=1)
    return attn @ v, attn


def _teacher_forward_many(features: np.ndarray, params: TeacherParams, want_cache: bool):
    """features: (B, M, C, h, w) -> raw scores (B, M).

    The conv encoder runs on the flattened (B*M, ...) batch; attention is
    computed per frame over its M view vectors (batched matmuls).
    """
    cfg = params.config
    t = params.tensors
    if features.ndim != 5 or features.shape[2] != cfg.in_channels:
        raise ShapeMismatch(
            f"features {features.shape} do not match (B, M, {cfg.in_channels}, h, w)"
        )
    b, m = features.shape[:2]
    h = features.reshape(b * m, *features.shape[2:])
    caches, masks = [], []
    for i in range(1, 4):
        y, cache = nn.conv2d_forward(h, t[f"conv{i}_w"], t[f"conv{i}_b"], stride=2, pad=1)
        h, mask = nn.relu_forward(y)
        caches.append(cache)
        masks.append(mask)
    x_flat, gap_shape = nn.global_avg_pool_forward(h)
    x = x_flat.reshape(b, m, cfg.feature_dim)

    q = x @ t["w_q"]
    k = x @ t["w_k"]
    v = x @ t["w_v"]
    scale = 1.0 / np.sqrt(cfg.attn_dim)
    attn = nn.softmax(np.matmul(q, k.transpose(0, 2, 1)) * scale, axis=2)
    h_att = np.matmul(attn, v)
    fused = h_att @ t["w_o"]
    raw = fused @ t["head_w"] + t["head_b"][0]
    if not want_cache:
        return raw, None
    cache = {
        "caches": caches,
        "masks": masks,
        "gap_shape": gap_shape,
        "x": x,
        "q": q,
        "k": k,
        "v": v,
        "attn": attn,
        "h_att": h_att,
        "fused": fused,
        "scale": scale,
    }
    return raw, cache


def _teacher_backward_many(draw: np.ndarray, params: TeacherParams, cache, want_dfeatures=False):
    """draw: (B, M) upstream gradient on the raw scores."""
    t = params.tensors
    x = cache["x"]  # (B, M, D)
    b, m, d = x.shape
    grads = {}
    grads["head_b"] = np.array([draw.sum()])
    grads["head_w"] = np.einsum("bmd,bm->d", cache["fused"], draw)
    dfused = draw[..., None] * t["head_w"]
    grads["w_o"] = np.einsum("bma,bmd->ad", cache["h_att"], dfused)
    dh_att = dfused @ t["w_o"].T
    dattn = np.matmul(dh_att, cache["v"].transpose(0, 2, 1))
    dv = np.matmul(cache["attn"].transpose(0, 2, 1), dh_att)
    dscores = nn.softmax_backward(dattn, cache["attn"], axis=2) * cache["scale"]
    dq = np.matmul(dscores, cache["k"])
    dk = np.matmul(dscores.transpose(0, 2, 1), cache["q"])
    grads["w_q"] = np.einsum("bmd,bma->da", x, dq)
    grads["w_k"] = np.einsum("bmd,bma->da", x, dk)
    grads["w_v"] = np.einsum("bmd,bma->da", x, dv)
    dx = dq @ t["w_q"].T + dk @ t["w_k"].T + dv @ t["w_v"].T
    dh = nn.global_avg_pool_backward(dx.reshape(b * m, d), cache["gap_shape"])
    for i in range(3, 0, -1):
        dy = nn.relu_backward(dh, cache["masks"][i - 1])
        dh, dw, db = nn.conv2d_backward(dy, cache["caches"][i - 1])
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    if not want_dfeatures:
        return grads, None
    return grads, dh.reshape(b, m, *dh.shape[1:])


def _teacher_forward(features: np.ndarray, params: TeacherParams, want_cache: bool):
    """features: (M, C, h, w) -> raw scores (M,)."""
    raw, cache = _teacher_forward_many(features[None], params, want_cache)
    return raw[0], cache


def _teacher_backward(draw: np.ndarray, params: TeacherParams, cache, want_dfeatures=False):
    grads, dfeat = _teacher_backward_many(draw[None], params, cache, want_dfeatures)
    return grads, (dfeat[0] if dfeat is not None else None)


def teacher_confidence(features, params: TeacherParams) -> np.ndarray:
    """Raw (pre-softmax) confidence score per view."""
    feats = np.stack([np.asarray(f, dtype=np.float64) for f in features])
    raw, _ = _teacher_forward(feats, params, want_cache=False)
    return raw


def _student_forward(x: np.ndarray, params: StudentParams, want_cache: bool):
    """x: (N, 1, S, S) -> raw scores (N, M)."""
    t = params.tensors
    h = x
    caches, masks = [], []
    for i in range(1, 5):
        y, cache = nn.conv2d_forward(h, t[f"conv{i}_w"], t[f"conv{i}_b"], stride=2, pad=1)
        h, mask = nn.relu_forward(y)
        caches.append(cache)
        masks.append(mask)
    n = x.shape[0]
    flat = h.reshape(n, -1)
    raw, lin_x = nn.linear_forward(flat, t["fc_w"], t["fc_b"])
    if not want_cache:
        return raw, None
    return raw, {"caches": caches, "masks": masks, "flat_shape": h.shape, "lin_x": lin_x}


def _student_backward(draw: np.ndarray, params: StudentParams, cache):
    t = params.tensors
    grads = {}
    dflat, grads["fc_w"], grads["fc_b"] = nn.linear_backward(draw, cache["lin_x"], t["fc_w"])
    dh = dflat.reshape(cache["flat_shape"])
    for i in range(4, 0, -1):
        dy = nn.relu_backward(dh, cache["masks"][i - 1])
        dh, dw, db = nn.conv2d_backward(dy, cache["caches"][i - 1])
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return grads


def student_confidence(crop_values: np.ndarray, params: StudentParams) -> np.ndarray:
    """Raw M-vector of view scores from the (resized) original crop."""
    vals = np.asarray(crop_values, dtype=np.float64)
    s = params.config.input_size
    if vals.shape != (s, s):
        raise ShapeMismatch(f"student input {vals.shape} != ({s}, {s})")
    raw, _ = _student_forward(vals[None, None], params, want_cache=False)
    return raw[0]


def softmax_select(raw: np.ndarray, n: int) -> ConfidenceVector:
    """Top-``n`` views by raw score; weights are softmax over the selection."""
    scores = np.asarray(raw, dtype=np.float64)
    m = scores.shape[0]
    if not (1 <= n <= m):
        raise BadN(f"n={n} outside [1, {m}]")
    order = np.argsort(-scores, kind="stable")
    ids = order[:n]
    return ConfidenceVector(scores, ids, nn.softmax(scores[ids]))


def fusion_loss(fused: HandPose, gt: HandPose) -> float:
    """Smooth-L1 of per-joint Euclidean error, summed over joints."""
    if fused.frame_id != gt.frame_id:
        raise FrameMismatch(f"{fused.frame_id!r} vs {gt.frame_id!r}")
    if fused.joint_count != gt.joint_count:
        raise LengthMismatch("poses have different joint counts")
    loss, _ = nn.smooth_l1_norm_loss(fused.joints, gt.joints)
    return loss


def joint_loss(a2j_terms, fused_loss: float, cfg: TrainConfig) -> float:
    """Mean per-view A2J-style loss plus ``gamma`` times the fusion loss."""
    terms = np.asarray(a2j_terms, dtype=np.float64)
    mean_term = float(terms.mean()) if terms.size else 0.0
    return mean_term + cfg.gamma * float(fused_loss)


def distill_loss(student_raw, teacher_post_softmax, beta: float) -> float:
    """Sum of smooth-L1 of the scaled teacher/student differences."""
    s = np.asarray(student_raw, dtype=np.float64)
    t = np.asarray(teacher_post_softmax, dtype=np.float64)
    if s.shape != t.shape:
        raise LengthMismatch(f"{s.shape} vs {t.shape}")
    return float(nn.smooth_l1(beta * (s - t)).sum())


@dataclass
class TrainingFrame:
    """Everything the confidence trainers need about one frame.

    ``outputs`` hold per-view estimator results in view-id order.  They
    are precomputed when the estimator is frozen (oracle or fixed weights);
    when the pose estimator itself is being trained jointly, ``crops`` and
    ``view_gts`` let the trainer recompute them every step.
    """

    views: VirtualViewSet
    gt: HandPose
    outputs: list | None = None
    crops: list | None = None
    view_gts: list | None = None
    original_crop: Crop | None = None


def train_teacher_joint(
    dataset,
    estimator_params: EstimatorParams | None,
    teacher_params: TeacherParams,
    cfg: TrainConfig,
    freeze_estimator: bool = True,
):
    """Jointly optimize the fusion objective over all M views (N = M).

    ``dataset`` is a sequence of :class:`TrainingFrame`.  With
    ``freeze_estimator`` (or precomputed oracle outputs) only the teacher
    updates and the estimator tensors are returned bit-unchanged; otherwise
    the pose estimator is trained through both its own loss and the fusion
    loss (including the feature path into the teacher).
    """
    frames = list(dataset)
    if not frames:
        raise EmptyDataset("train_teacher_joint needs at least one frame")
    teacher = teacher_params.copy()
    trainable_est = estimator_params is not None and not freeze_estimator
    est = estimator_params.copy() if trainable_est else estimator_params
    opt_t = nn.Adam(teacher.tensors, lr=cfg.lr)
    opt_e = nn.Adam(est.tensors, lr=cfg.lr) if trainable_est else None
    rng = np.random.default_rng(cfg.seed)

    if trainable_est:
        runner = _JointStep(frames, est, teacher, cfg, opt_e, opt_t)
    else:
        runner = _FrozenTeacherStep(frames, teacher, cfg, opt_t)

    history = []
    for epoch in range(cfg.epochs):
        lr = nn.decayed_lr(cfg.lr, cfg.decay, epoch)
        order = rng.permutation(len(frames))
        epoch_loss = runner.run_epoch(order, lr, epoch)
        history.append({"epoch": epoch, "loss": epoch_loss / len(frames), "lr": lr})
    teacher.history = history
    return est, teacher


class _FrozenTeacherStep:
    """Teacher-only updates over precomputed per-view estimator outputs.

    The per-view poses, features, and A2J terms are constants, so they are
    stacked once and each step is a handful of batched array ops.
    """

    def __init__(self, frames, teacher, cfg, opt):
        self.teacher = teacher
        self.cfg = cfg
        self.opt = opt
        self.feats = np.stack(
            [np.stack([o.feature for o in f.outputs]) for f in frames]
        )  # (F, M, C, h, w)
        self.transformed = np.stack(
            [
                np.stack(
                    [
                        f.views.views[i].to_original.apply(o.pose.joints)
                        for i, o in enumerate(f.outputs)
                    ]
                )
                for f in frames
            ]
        )  # (F, M, K, 3)
        self.gt = np.stack([f.gt.joints for f in frames])  # (F, K, 3)
        self.a2j_mean = np.array(
            [
                np.mean([a2j_loss(o, g, cfg.lam) for o, g in zip(f.outputs, _view_gts(f))])
                for f in frames
            ]
        )
        self.batch = cfg.batch or 32

    def run_epoch(self, order, lr, epoch):
        cfg = self.cfg
        epoch_loss = 0.0
        for start in range(0, len(order), self.batch):
            idx = order[start : start + self.batch]
            nb = len(idx)
            raw, cache = _teacher_forward_many(self.feats[idx], self.teacher, True)
            weights = nn.softmax(raw, axis=1)  # (B, M)
            trans = self.transformed[idx]
            fused = np.einsum("bm,bmkd->bkd", weights, trans)
            l_fuse, dfused = nn.smooth_l1_norm_loss(fused, self.gt[idx])
            loss = float(self.a2j_mean[idx].sum() + cfg.gamma * l_fuse) / nb
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, start, loss)
            epoch_loss += loss * nb
            dweights = np.einsum("bkd,bmkd->bm", dfused, trans) * (cfg.gamma / nb)
            draw = nn.softmax_backward(dweights, weights, axis=1)
            grads, _ = _teacher_backward_many(draw, self.teacher, cache)
            self.opt.step(grads, lr=lr)
        return epoch_loss


class _JointStep:
    """Per-frame joint updates of estimator and teacher (toy-network path)."""

    def __init__(self, frames, est, teacher, cfg, opt_e, opt_t):
        self.frames = frames
        self.est = est
        self.teacher = teacher
        self.cfg = cfg
        self.opt_e = opt_e
        self.opt_t = opt_t
        self.grid = AnchorGrid.build(est.config.crop_size, est.config.anchor_stride)

    def run_epoch(self, order, lr, epoch):
        cfg = self.cfg
        epoch_loss = 0.0
        for fi in order:
            frame = self.frames[fi]
            m = len(frame.views)
            xs, intr_arr, center_z = _crop_batch_arrays(frame.crops)
            fwd = _forward_batch(xs, intr_arr, center_z, self.est, want_cache=True)
            poses = fwd["joints"]
            gt_view = np.stack([g.joints for g in frame.view_gts])
            l_obj, djoints_obj = nn.smooth_l1_norm_loss(poses, gt_view)
            bary = np.einsum("mak,ad->mkd", fwd["s"], self.grid.positions)
            gtuv = np.stack(
                [_gt_inplane(c, g) for c, g in zip(frame.crops, frame.view_gts)]
            )
            l_info, dbary = nn.smooth_l1_norm_loss(bary, gtuv)
            a2j_mean = (cfg.lam * l_obj + l_info) / m

            raw, t_cache = _teacher_forward(fwd["feature"], self.teacher, True)
            weights = nn.softmax(raw)
            rot = np.stack([v.to_original.rotation for v in frame.views.views])
            trans_t = np.stack([v.to_original.translation for v in frame.views.views])
            transformed = np.einsum("mab,mkb->mka", rot, poses) + trans_t[:, None, :]
            fused = np.einsum("m,mkd->kd", weights, transformed)
            l_fuse, dfused = nn.smooth_l1_norm_loss(fused, frame.gt.joints)
            loss = a2j_mean + cfg.gamma * l_fuse
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, int(fi), loss)
            epoch_loss += loss

            dweights = np.einsum("kd,mkd->m", dfused, transformed) * cfg.gamma
            draw = nn.softmax_backward(dweights, weights)
            grads_t, dfeats = _teacher_backward(draw, self.teacher, t_cache, True)
            self.opt_t.step(grads_t, lr=lr)

            dposes = cfg.gamma * weights[:, None, None] * np.einsum(
                "mba,kb->mka", rot, dfused
            )
            djoints = cfg.lam * djoints_obj / m + dposes
            ds_extra = np.einsum("ad,mkd->mak", self.grid.positions, dbary) / m
            grads_e = _backward_batch(
                fwd, self.est, djoints, ds_extra=ds_extra, dfeature=dfeats
            )
            self.opt_e.step(grads_e, lr=lr)
        return epoch_loss


def _view_gts(frame: TrainingFrame):
    if frame.view_gts is not None:
        return frame.view_gts
    return [
        transform_pose(frame.gt, v.from_original, out.pose.frame_id)
        for v, out in zip(frame.views.views, frame.outputs)
    ]


def teacher_targets(frames, teacher_params: TeacherParams) -> np.ndarray:
    """Post-softmax teacher confidences over all views, per frame."""
    targets = []
    for frame in frames:
        feats = np.stack([o.feature for o in frame.outputs])
        raw, _ = _teacher_forward(feats, teacher_params, want_cache=False)
        targets.append(nn.softmax(raw))
    return np.stack(targets)


def train_student(
    dataset,
    frozen_teacher: TeacherParams,
    frozen_estimator: EstimatorParams | None,
    student_params: StudentParams,
    cfg: TrainConfig,
) -> StudentParams:
    """Distill the frozen teacher's post-softmax confidences into the student.

    ``dataset`` is a sequence of :class:`TrainingFrame` with
    ``original_crop`` set; teacher targets are computed once up front.
    The teacher and estimator parameters are never written to.
    """
    frames = list(dataset)
    if not frames:
        raise EmptyDataset("train_student needs at least one frame")
    size = student_params.config.input_size
    xs = np.stack(
        [resize_nearest(f.original_crop.image.values, size) for f in frames]
    )[:, None]
    targets = teacher_targets(frames, frozen_teacher)

    student = student_params.copy()
    opt = nn.Adam(student.tensors, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    batch = cfg.batch or len(frames)

    history = []
    for epoch in range(cfg.epochs):
        lr = nn.decayed_lr(cfg.lr, cfg.decay, epoch)
        order = rng.permutation(len(frames))
        epoch_loss = 0.0
        for start in range(0, len(frames), batch):
            idx = order[start : start + batch]
            raw, cache = _student_forward(xs[idx], student, want_cache=True)
            diff = cfg.beta * (raw - targets[idx])
            loss = float(nn.smooth_l1(diff).sum(axis=1).mean())
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, start, loss)
            draw = cfg.beta * nn.smooth_l1_grad(diff) / len(idx)
            grads = _student_backward(draw, student, cache)
            opt.step(grads, lr=lr)
            epoch_loss += loss * len(idx)
        history.append({"epoch": epoch, "loss": epoch_loss / len(frames), "lr": lr})
    student.history = history
    return student
