"""Action-conditioned sequence-level VAE for articulated-body motion synthesis."""

from . import errors
from .body import (
    BodyModel,
    FramePose,
    Motion,
    Skeleton,
    SkeletonBody,
    canonicalize_frontal,
    chain_skeleton,
    default_skeleton,
    forward_kinematics,
    load_skeleton,
    root_center,
    surface_points,
)
from .data import (
    DatasetSpec,
    add_noise,
    generate_dataset,
    load_dataset,
    load_motion,
    save_dataset,
    save_motion,
    split_motions,
)
from .evaluation import (
    EvalReport,
    FeatureSet,
    MotionRecognizer,
    accuracy,
    diversity,
    evaluate,
    extract_features,
    fid,
    multimodality,
    train_recognizer,
)
from .losses import LossWeights, kl_loss, loss_joints, loss_pose, loss_vertices, total_loss
from .model import (
    ModelConfig,
    MotionVAE,
    build_variant,
    positional_encoding,
    reparameterize,
)
from .applications import (
    augment_train_classifier,
    denoise,
    interpolate_latent,
    jitter_score,
)
from .training import (
    Checkpoint,
    TrainConfig,
    finetune_variable,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
