"""Multi-view 2D segmentation masks fused into 3D point pseudo-labels, a
per-point feature model distilled from them, and the evaluation harness."""

from .attention import attention_weights, filter_predictions, fuse_pseudo_labels, unify_query
from .bundle import (
    read_bundle,
    read_checkpoint,
    read_fused,
    read_result,
    write_bundle,
    write_checkpoint,
    write_fused,
    write_metrics_report,
    write_result,
)
from .errors import (
    AllViewsFiltered,
    BehindCamera,
    CorruptHeader,
    DegenerateEmbeddings,
    DimensionMismatch,
    DimMismatch,
    EmptyPairSet,
    EmptyQuerySet,
    MissingFile,
    NoFeaturePairs,
    NonFiniteLoss,
    OutOfFrame,
    PipelineError,
    ZeroVector,
)
from .evaluate import acc_at_k, infer_mask, iou, miou
from .geometry import (
    Projection,
    bilinear_sample,
    build_correspondences,
    project_point,
    unproject_pixel,
    visibility_test,
)
from .learner import (
    FeatureModel,
    TrainBatch,
    TrainState,
    backward,
    forward_features,
    init_model,
    loss_mms,
    loss_spatial,
    project_query,
    semantic_logits,
    sgd_step,
    total_loss,
    train,
)
from .pipeline import FuseOutcome, ablate, fuse_scene, fused_iou, infer_scene, train_scene
from .synth import SynthSpec, corrupt_predictions, gen_scene, render_predictions, synth_bundle
from .tensorfile import read_tensor, write_tensor
from .types import (
    CameraView,
    CorrespondenceSet,
    FusedLabels,
    PipelineConfig,
    PointCloud,
    QueryResult,
    SceneBundle,
    UnifiedQuery,
    ValidationReport,
    ViewPrediction,
    validate_scene,
)

__version__ = "0.1.0"
