"""Virtual-view selection and fusion for 3D hand pose estimation from depth.

The pipeline unprojects a depth image to a point cloud, re-renders it from
virtual cameras sampled on a sphere around the hand, estimates a pose per
view, scores views with a confidence network (or its distilled lightweight
student), and fuses the top-scoring poses back in the original frame.
"""

__version__ = "0.1.0"

from .geometry import (
    DepthImage,
    HandPose,
    Intrinsics,
    PointCloud,
    RigidTransform,
    VirtualView,
    VirtualViewSet,
    centroid,
    compose,
    invert,
    project,
    sample_virtual_views,
    transform_pose,
    uniform_subset,
    unproject,
)
from .renderer import Crop, CropConfig, RenderConfig, crop_hand, render_all, render_depth
from .estimator import (
    AnchorGrid,
    EstimatorConfig,
    EstimatorOutput,
    EstimatorParams,
    OracleNoiseModel,
    a2j_loss,
    estimate,
    oracle_estimate,
    train_estimator,
)
from .confidence import (
    ConfidenceVector,
    StudentConfig,
    StudentParams,
    TeacherConfig,
    TeacherParams,
    TrainConfig,
    distill_loss,
    fusion_loss,
    joint_loss,
    softmax_select,
    student_confidence,
    teacher_confidence,
    train_student,
    train_teacher_joint,
)
from .fusion import (
    AllParams,
    PipelineConfig,
    average_fuse,
    fuse_poses,
    infer,
    random_views,
)
from .synthdata import (
    AugmentConfig,
    Frame,
    SynthHandSpec,
    augment,
    generate_dataset,
    generate_frame,
    read_dataset,
    write_dataset,
)
from .metrics import EvalReport, FpsReport, bench_fps, mean_joint_error
