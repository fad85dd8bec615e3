"""Saliency evaluation protocols.

Covers mean-threshold binarization, tightest-box extraction, IOU-based
weakly supervised localization (with a threshold-multiplier sweep), the
pointing game, precision/recall/F-measure and MAE against ground-truth
masks, a center-point baseline, and a one-step gradient-sign attack for
probing explanation robustness.

Thresholding and IOU success both use strict inequalities: a pixel is on
when it exceeds alpha times the map mean, a localization counts when the
IOU exceeds 0.5.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputError
from .image import ImageTensor, from_pixels, normalize_pixels

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = tuple(np.arange(0.0, 10.0 + 1e-9, 0.5))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with inclusive pixel bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise InputError(f"inverted box {self.as_tuple()}")
        if min(self.x_min, self.y_min) < 0:
            raise InputError(f"negative box coordinate {self.as_tuple()}")

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self):
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    def contains(self, row, col):
        return self.y_min <= row <= self.y_max and self.x_min <= col <= self.x_max


@dataclass
class AnnotationRecord:
    """One annotated image: labeled boxes, optionally a ground-truth mask."""

    image_id: str
    boxes: list  # (label, BoundingBox) pairs
    image_path: str | None = None
    mask_path: str | None = None
    source_size: tuple | None = None  # (width, height) of the original file

    def labels(self):
        seen = []
        for label, _ in self.boxes:
            if label not in seen:
                seen.append(label)
        return seen

    def boxes_for(self, label):
        return [box for lab, box in self.boxes if lab == label]


@dataclass(frozen=True)
class EvalConfig:
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    iou_success_threshold: float = 0.5
    fbeta_sq: float = 0.3
    fgsm_epsilon: float = 8.0 / 255.0

    def __post_init__(self):
        if any(a < 0 for a in self.alpha_grid):
            raise InputError("alpha values must be >= 0")
        if not 0 < self.iou_success_threshold <= 1:
            raise InputError("IOU success threshold must be in (0, 1]")


def binarize(s: np.ndarray, alpha: float) -> np.ndarray:
    """Pixels strictly above alpha times the map's mean intensity."""
    if alpha < 0:
        raise InputError(f"alpha must be >= 0, got {alpha}")
    s = np.asarray(s)
    return s > alpha * s.mean()


def tightest_bbox(binary: np.ndarray):
    """Minimal box covering all set pixels; None when nothing is set."""
    binary = np.asarray(binary, dtype=bool)
    rows = np.flatnonzero(binary.any(axis=1))
    cols = np.flatnonzero(binary.any(axis=0))
    if rows.size == 0:
        return None
    return BoundingBox(x_min=int(cols[0]), y_min=int(rows[0]),
                       x_max=int(cols[-1]), y_max=int(rows[-1]))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union with inclusive pixel areas."""
    ix_min, iy_min = max(a.x_min, b.x_min), max(a.y_min, b.y_min)
    ix_max, iy_max = min(a.x_max, b.x_max), min(a.y_max, b.y_max)
    if ix_min > ix_max or iy_min > iy_max:
        return 0.0
    inter = (ix_max - ix_min + 1) * (iy_max - iy_min + 1)
    return inter / (a.area + b.area - inter)


def center_baseline(shape) -> tuple:
    """The central pixel (floor rule for even dimensions), as (row, col)."""
    h, w = int(shape[0]), int(shape[1])
    return (h // 2, w // 2)


def argmax_pixel(s: np.ndarray) -> tuple:
    """Location of the map maximum; ties break to the lowest row-major index."""
    r, c = np.unravel_index(int(np.argmax(s)), s.shape)
    return (int(r), int(c))


@dataclass
class LocalizationRow:
    image_id: str
    label: object
    alpha: float
    iou: float
    success: bool
    predicted_box: tuple | None


@dataclass
class LocalizationResult:
    alpha: float
    error: float
    n_images: int
    n_skipped: int
    rows: list = field(default_factory=list)


def _localize_one(mask, gt_boxes, alpha, threshold):
    box = tightest_bbox(binarize(mask, alpha))
    if box is None:
        return 0.0, False, None
    best = max(iou(box, gt) for gt in gt_boxes)
    return best, best > threshold, box.as_tuple()


def localization_error(records, mask_fn, alpha, iou_threshold=0.5) -> LocalizationResult:
    """Fraction of (image, label) instances whose tightest box fails the
    IOU test against that label's ground-truth boxes.

    ``mask_fn(record, label)`` must return the saliency map for one
    instance. Records without boxes are skipped with a warning and
    tallied separately; an empty binarized mask counts as an error.
    """
    points = localization_sweep(records, mask_fn, alphas=[alpha],
                                iou_threshold=iou_threshold)
    return points[0]


def localization_sweep(records, mask_fn, alphas=None,
                       iou_threshold=0.5) -> list:
    """Run the localization protocol over a threshold-multiplier grid.

    Masks are computed once per (record, label) instance and re-binarized
    at every alpha. Returns one LocalizationResult per alpha.
    """
    if alphas is None:
        alphas = DEFAULT_ALPHA_GRID
    instances = []
    n_skipped = 0
    for record in records:
        if not record.boxes:
            log.warning("record %s has no boxes; skipped", record.image_id)
            n_skipped += 1
            continue
        for label in record.labels():
            instances.append((record, label, mask_fn(record, label)))

    results = []
    for alpha in alphas:
        rows = []
        failures = 0
        for record, label, mask in instances:
            best, success, box = _localize_one(
                mask, record.boxes_for(label), alpha, iou_threshold)
            failures += not success
            rows.append(LocalizationRow(record.image_id, label, float(alpha),
                                        best, success, box))
        error = failures / len(instances) if instances else 0.0
        results.append(LocalizationResult(alpha=float(alpha), error=error,
                                          n_images=len(instances),
                                          n_skipped=n_skipped, rows=rows))
    return results


def best_sweep_point(points) -> "LocalizationResult":
    """Sweep point with the lowest error (ties break to the lowest alpha)."""
    return min(points, key=lambda p: (p.error, p.alpha))


@dataclass
class PointingGameResult:
    per_class: dict
    mean_accuracy: float
    hits: int
    misses: int


def pointing_game(records, mask_fn) -> PointingGameResult:
    """Hit when the map's argmax lies inside a ground-truth box of the class.

    Accuracy is computed per class as hits / (hits + misses), then the
    class accuracies are averaged unweighted.
    """
    tallies = {}
    for record in records:
        for label in record.labels():
            point = argmax_pixel(mask_fn(record, label))
            hit = any(box.contains(*point) for box in record.boxes_for(label))
            h, m = tallies.get(label, (0, 0))
            tallies[label] = (h + hit, m + (not hit))
    per_class = {label: h / (h + m) for label, (h, m) in tallies.items()}
    hits = sum(h for h, _ in tallies.values())
    misses = sum(m for _, m in tallies.values())
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return PointingGameResult(per_class=per_class, mean_accuracy=mean,
                              hits=hits, misses=misses)


def center_point_game(records, shape) -> PointingGameResult:
    """Pointing game for the baseline that always picks the image center."""
    center = center_baseline(shape)
    point_mask = np.zeros(shape)
    point_mask[center] = 1.0
    return pointing_game(records, lambda record, label: point_mask)


def precision_recall_f(pred: np.ndarray, gt: np.ndarray, beta_sq=0.3) -> tuple:
    """Precision, recall, and F-measure of a binary prediction.

    Empty predictions give precision 0 by convention; an empty ground
    truth is rejected.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise InputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    if not gt.any():
        raise InputError("ground-truth mask is empty")
    tp = float(np.logical_and(pred, gt).sum())
    n_pred = float(pred.sum())
    n_gt = float(gt.sum())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt
    denom = beta_sq * precision + recall
    f = (1 + beta_sq) * precision * recall / denom if denom else 0.0
    return precision, recall, f


def mae_metric(s: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute pixel difference between a map and a mask, both in [0, 1]."""
    s = np.asarray(s, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if s.shape != gt.shape:
        raise InputError(f"mask shapes differ: {s.shape} vs {gt.shape}")
    for name, arr in (("saliency", s), ("ground truth", gt)):
        if arr.min() < 0 or arr.max() > 1:
            raise InputError(f"{name} values outside [0, 1]")
    return float(np.abs(s - gt).mean())


def salient_object_scores(s: np.ndarray, gt: np.ndarray, beta_sq=0.3) -> dict:
    """Salient-object-detection scores for one map: binarize at twice the
    map mean for P/R/F, plus MAE of the continuous map."""
    pred = binarize(s, 2.0)
    p, r, f = precision_recall_f(pred, gt, beta_sq=beta_sq)
    return {"precision": p, "recall": r, "f_measure": f,
            "mae": mae_metric(s, np.asarray(gt, dtype=float))}


def fgsm_attack(x: ImageTensor, c: int, epsilon: float, adapter) -> ImageTensor:
    """One-step gradient-sign perturbation against the true class.

    The cross-entropy gradient is taken with respect to the pixel-space
    image; the perturbed pixels are clipped to [0, 1] and renormalized.
    """
    if epsilon < 0:
        raise InputError(f"epsilon must be >= 0, got {epsilon}")
    c = int(c)
    if not 0 <= c < adapter.entry.n_classes:
        raise InputError(f"class index {c} out of range [0, {adapter.entry.n_classes})")
    pixel = x.pixel.to(adapter.dtype).clone().requires_grad_(True)
    logits = adapter.model(normalize_pixels(pixel, x.mean, x.std)[None])
    loss = F.cross_entropy(logits, torch.tensor([c]))
    (grad,) = torch.autograd.grad(loss, pixel)
    perturbed = (pixel.detach() + epsilon * grad.sign()).clamp(0.0, 1.0)
    return from_pixels(perturbed, x.mean, x.std, dtype=adapter.dtype,
                       source_path=x.source_path, source_size=x.source_size)
