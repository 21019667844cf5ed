"""Run configuration: one JSON file covering every module, CLI flags win.

``RunConfig`` validates everything up front (value ranges, mode names,
path presence where required) so commands fail before any computation
starts.  The config round-trips losslessly through ``to_dict``/``from_dict``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .confidence import StudentConfig, TeacherConfig, TrainConfig
from .errors import ConfigError
from .estimator import ORACLE_FEATURE_SHAPE, EstimatorConfig
from .fusion import PipelineConfig
from .geometry import Intrinsics
from .synthdata import SynthHandSpec

DEFAULT_CAMERA = {
    "fx": 240.0,
    "fy": 240.0,
    "cx": 79.5,
    "cy": 79.5,
    "width": 160,
    "height": 160,
}


@dataclass(frozen=True)
class StageEpochs:
    estimator: int = 40
    teacher: int = 30
    student: int = 60


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int | None = None
    camera: dict = field(default_factory=lambda: dict(DEFAULT_CAMERA))
    hand_density: float = 0.22
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch=32))
    epochs: StageEpochs = field(default_factory=StageEpochs)
    estimator_config: EstimatorConfig = field(default_factory=EstimatorConfig)
    student_input_size: int = 44
    n_frames: int = 200
    paths: dict = field(default_factory=dict)

    def intrinsics(self) -> Intrinsics:
        c = self.camera
        return Intrinsics(
            float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
            int(c["width"]), int(c["height"]),
        )

    def hand_spec(self) -> SynthHandSpec:
        return SynthHandSpec(density=self.hand_density)

    def teacher_config(self) -> TeacherConfig:
        if self.pipeline.estimator == "oracle":
            in_ch = ORACLE_FEATURE_SHAPE[0]
        else:
            in_ch = self.estimator_config.channels[self.estimator_config.feature_tap - 1]
        return TeacherConfig(in_channels=in_ch)

    def student_config(self) -> StudentConfig:
        return StudentConfig(
            input_size=self.student_input_size, m_views=self.pipeline.m_views
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "camera": dict(self.camera),
            "hand_density": self.hand_density,
            "pipeline": self.pipeline.to_dict(),
            "train": {
                "gamma": self.train.gamma,
                "lam": self.train.lam,
                "beta": self.train.beta,
                "lr": self.train.lr,
                "decay": self.train.decay,
                "epochs": self.train.epochs,
                "seed": self.train.seed,
                "batch": self.train.batch,
            },
            "epochs": {
                "estimator": self.epochs.estimator,
                "teacher": self.epochs.teacher,
                "student": self.epochs.student,
            },
            "estimator_config": self.estimator_config.to_dict(),
            "student_input_size": self.student_input_size,
            "n_frames": self.n_frames,
            "paths": dict(self.paths),
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        base = RunConfig()
        try:
            pipeline = (
                PipelineConfig.from_dict(d["pipeline"])
                if "pipeline" in d
                else base.pipeline
            )
            train_d = d.get("train", {})
            train = TrainConfig(
                gamma=float(train_d.get("gamma", 0.1)),
                lam=float(train_d.get("lam", 3.0)),
                beta=float(train_d.get("beta", 100.0)),
                lr=float(train_d.get("lr", 0.001)),
                decay=float(train_d.get("decay", 0.9)),
                epochs=int(train_d.get("epochs", 10)),
                seed=int(train_d.get("seed", 0)),
                batch=int(train_d.get("batch", 32)),
            )
            ep = d.get("epochs", {})
            epochs = StageEpochs(
                estimator=int(ep.get("estimator", 40)),
                teacher=int(ep.get("teacher", 30)),
                student=int(ep.get("student", 60)),
            )
            est = (
                EstimatorConfig.from_dict(d["estimator_config"])
                if "estimator_config" in d
                else base.estimator_config
            )
            cfg = RunConfig(
                seed=int(d.get("seed", 0)),
                threads=(None if d.get("threads") is None else int(d["threads"])),
                camera=dict(d.get("camera", DEFAULT_CAMERA)),
                hand_density=float(d.get("hand_density", 0.22)),
                pipeline=pipeline,
                train=train,
                epochs=epochs,
                estimator_config=est,
                student_input_size=int(d.get("student_input_size", 44)),
                n_frames=int(d.get("n_frames", 200)),
                paths=dict(d.get("paths", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.intrinsics()
        except ValueError as exc:
            raise ConfigError(f"invalid camera: {exc}") from exc
        if self.hand_density <= 0:
            raise ConfigError("hand_density must be positive")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.student_input_size < 16:
            raise ConfigError("student_input_size must be >= 16")
        for name in ("estimator", "teacher", "student"):
            if getattr(self.epochs, name) < 1:
                raise ConfigError(f"epochs.{name} must be >= 1")
        # PipelineConfig / TrainConfig / EstimatorConfig validate themselves
        # on construction.

    def with_overrides(self, **kw) -> "RunConfig":
        try:
            pipeline = self.pipeline
            pipe_keys = {k: v for k, v in kw.pop("pipeline", {}).items() if v is not None}
            if pipe_keys:
                pipeline = replace(pipeline, **pipe_keys)
            clean = {k: v for k, v in kw.items() if v is not None}
            out = replace(self, pipeline=pipeline, **clean)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid override: {exc}") from exc
        out.validate()
        return out


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return RunConfig.from_dict(data)
