"""laneshape: end-to-end lane curve prediction at desk scale.

Projective lane curve geometry, a Kuhn-Munkres set matching loss, a minimal
reverse-mode tensor engine, a small transformer curve regressor, synthetic
scenes with exact ground truth, and benchmark-style evaluation metrics.
"""

from .geometry import (
    CameraModel,
    GroundCurve,
    ImageCurveParams,
    LanePolyline,
    TiltedCurveParams,
    eval_image_curve,
    eval_tilted_curve,
    fit_tilted_curve,
    project_ground_to_image,
    sample_lane,
    tilt_reparameterize,
    untilt_pixel,
)
from .matching import (
    Assignment,
    GroundTruthItem,
    GroundTruthSet,
    LossWeights,
    PredictionItem,
    PredictionSet,
    hungarian_fitting_loss,
    hungarian_solve,
    matching_cost,
)
from .autograd import (
    ParameterStore,
    Tensor,
    backward,
    conv2d,
    finite_difference_check,
    layer_norm,
    matmul,
    row_softmax,
    scaled_dot_product_attention,
)
from .model import (
    LaneCurveModel,
    ModelConfig,
    build_positional_embedding,
    count_macs,
    train_step,
)
from .optim import Adam
from .synthetic import GenConfig, SyntheticScene, synth_generate
from .annotations import AnnotationRecord, parse_annotations
from .augment import flip_horizontal, scale_uniform
from .metrics import EvalResult, evaluate, scaled_threshold
from .checkpoint import load_tensors, save_tensors

__all__ = [
    "Adam", "AnnotationRecord", "Assignment", "CameraModel", "EvalResult",
    "GenConfig", "GroundCurve", "GroundTruthItem", "GroundTruthSet",
    "ImageCurveParams", "LaneCurveModel", "LanePolyline", "LossWeights",
    "ModelConfig", "ParameterStore", "PredictionItem", "PredictionSet",
    "SyntheticScene", "Tensor", "TiltedCurveParams", "backward",
    "build_positional_embedding", "conv2d", "count_macs", "evaluate",
    "eval_image_curve", "eval_tilted_curve", "finite_difference_check",
    "fit_tilted_curve", "flip_horizontal", "hungarian_fitting_loss",
    "hungarian_solve", "layer_norm", "load_tensors", "matching_cost",
    "matmul", "parse_annotations", "project_ground_to_image", "row_softmax",
    "sample_lane", "save_tensors", "scale_uniform", "scaled_threshold",
    "scaled_dot_product_attention", "synth_generate", "tilt_reparameterize",
    "train_step", "untilt_pixel",
]
