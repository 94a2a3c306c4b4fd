"""Anchor-distance multi-object distance estimation from a single image.

Distances of labeled objects are clustered into anchor distances; a
grid of predictors decodes box and distance logits against those
anchors, is trained with a complete-IoU box loss plus a squared
distance loss, and evaluates with the standard monocular depth metrics.
"""

from .anchors import (
    AnchorSet,
    ClusterReport,
    DistanceFormat,
    average_bbox,
    average_distance,
    build_bbox_anchor_set,
    build_distance_anchor_set,
    cluster_variance_report,
    kmeans_boxes_iou,
    kmeans_distances,
)
from .data import (
    BBox2D,
    ObjectLabel,
    Scene,
    SynthConfig,
    generate_synthetic_scene,
    letterbox_scene,
    load_dataset,
    parse_kitti_calib,
    parse_kitti_label,
    render_scene,
    save_dataset,
)
from .errors import ConfigError, DomainError, ParseError
from .geometry import (
    CameraIntrinsics,
    Ray,
    depth_of,
    distance_of,
    locate_object,
    pixel_to_ray,
    project_to_image,
    to_bev,
)
from .head import (
    Assignment,
    DecodedPrediction,
    GridSpec,
    assign_all,
    assign_predictor,
    decode,
    encode,
    responsible_cell,
)
from .losses import LossBreakdown, ciou_loss, distance_l2_loss, finite_diff_check, iou, loss_and_grad
from .metrics import (
    DepthMetrics,
    ErrorBins,
    bin_errors_by_distance,
    compute_depth_metrics,
    select_prediction_for_gt,
)
from .train import (
    TinyModel,
    TrainConfig,
    backward_step,
    evaluate_model,
    forward,
    load_checkpoint,
    save_checkpoint,
    specialization_report,
    train,
)

__version__ = "0.1.0"
