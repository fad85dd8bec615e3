"""Saliency masks for CNN classifiers via guided feature inversion.

The mask that explains one prediction is parameterized as a nonnegative
weighted sum of high-layer channel activations and optimized in two
stages: first to reproduce the input's deep representation, then to be
discriminative for the target class. Evaluation protocols (localization,
pointing game, salient-object metrics) and a small bundled benchmark are
included.
"""

__version__ = "0.1.0"

from .backend import (ArchitectureEntry, LayerSpec, ModelAdapter,
                      get_architecture, load_registry)
from .errors import (ConfigurationError, FormatError, GfiError,
                     IngestionError, InputError, SolverError)
from .evaluation import (AnnotationRecord, BoundingBox, EvalConfig, binarize,
                         center_baseline, fgsm_attack, iou,
                         localization_error, localization_sweep, mae_metric,
                         pointing_game, precision_recall_f,
                         salient_object_scores, tightest_bbox)
from .image import ImageTensor, from_pixels
from .mask import build_mask, channel_mask, clip_nonneg, minmax_normalize, upsample_bilinear
from .objectives import InversionTarget, LossBreakdown, inversion_loss, l1_norm, target_loss
from .perturbation import (BaselineKind, BaselineSpec, compose_background,
                           compose_foreground, make_baseline)
from .solver import (ExplanationResult, GuidedInversionExplainer,
                     InterpretConfig, IterationRecord)

__all__ = [
    "__version__",
    "ArchitectureEntry", "LayerSpec", "ModelAdapter", "get_architecture",
    "load_registry",
    "GfiError", "ConfigurationError", "InputError", "IngestionError",
    "FormatError", "SolverError",
    "AnnotationRecord", "BoundingBox", "EvalConfig", "binarize",
    "center_baseline", "fgsm_attack", "iou", "localization_error",
    "localization_sweep", "mae_metric", "pointing_game",
    "precision_recall_f", "salient_object_scores", "tightest_bbox",
    "ImageTensor", "from_pixels",
    "build_mask", "channel_mask", "clip_nonneg", "minmax_normalize",
    "upsample_bilinear",
    "InversionTarget", "LossBreakdown", "inversion_loss", "l1_norm",
    "target_loss",
    "BaselineKind", "BaselineSpec", "compose_background",
    "compose_foreground", "make_baseline",
    "ExplanationResult", "GuidedInversionExplainer", "InterpretConfig",
    "IterationRecord",
]
