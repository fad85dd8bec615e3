"""File formats: image ingestion, annotations, mask files, overlays,
run manifests, and flat config files.

The mask file is a tiny fixed binary layout (magic ``GFIMASK1``, two
little-endian uint32 dimensions, float32 row-major payload) so masks can
be reloaded bit-exactly by any tool.
"""

import dataclasses
import json
import struct
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from . import __version__
from .backend import ArchitectureEntry
from .errors import FormatError, IngestionError, InputError
from .evaluation import AnnotationRecord, BoundingBox, EvalConfig
from .image import ImageTensor, from_pixels
from .perturbation import BaselineSpec
from .solver import InterpretConfig

MASK_MAGIC = b"GFIMASK1"
_HEADER = struct.Struct("<8sII")

# modes PIL reports for images without color channels
_GRAY_MODES = {"1", "L", "LA", "I", "I;16", "F"}


def load_image(path, entry: ArchitectureEntry) -> ImageTensor:
    """Read, resize, and normalize an image for a registry architecture.

    A single bilinear resize to the registry input size (no cropping);
    pixel values scaled to [0, 1] then normalized per channel.
    """
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    source_size = img.size
    if entry.input_channels == 3:
        if img.mode in _GRAY_MODES:
            raise IngestionError(
                f"{path}: greyscale image, but {entry.name!r} expects RGB input")
        img = img.convert("RGB")
    elif entry.input_channels == 1:
        img = img.convert("L")
    else:
        raise InputError(f"unsupported channel count {entry.input_channels}")
    h, w = entry.input_size
    img = img.resize((w, h), Image.BILINEAR)
    pixel = np.asarray(img, dtype=np.float64) / 255.0
    if pixel.ndim == 2:
        pixel = pixel[:, :, None]
    return from_pixels(pixel, entry.mean, entry.std, dtype=entry.torch_dtype,
                       source_path=str(path), source_size=source_size)


def _scale_box(raw, scale_x, scale_y, width, height):
    x_min = min(max(int(np.floor(raw[0] * scale_x)), 0), width - 1)
    y_min = min(max(int(np.floor(raw[1] * scale_y)), 0), height - 1)
    x_max = min(max(int(np.floor(raw[2] * scale_x)), 0), width - 1)
    y_max = min(max(int(np.floor(raw[3] * scale_y)), 0), height - 1)
    return BoundingBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)


def ingest_annotations(path, input_size, images_root=None) -> list:
    """Read newline-delimited JSON annotations, rescaled to the input frame.

    Each line: ``{"image": ..., "boxes": [{"label", "xmin", "ymin",
    "xmax", "ymax"}, ...], "width"?, "height"?, "mask"?}``. When the
    original size is not given it is read from the image file under
    ``images_root``. Inverted or malformed boxes reject the record with
    the offending line number.
    """
    path = Path(path)
    th, tw = int(input_size[0]), int(input_size[1])
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                image_name = raw["image"]
                raw_boxes = raw["boxes"]
            except (KeyError, TypeError) as exc:
                raise IngestionError(
                    f"{path}:{lineno}: record needs 'image' and 'boxes'") from exc
            if not isinstance(raw_boxes, list) or not raw_boxes:
                raise IngestionError(f"{path}:{lineno}: record has no boxes")

            image_path = None
            if images_root is not None:
                image_path = str(Path(images_root) / image_name)
            if "width" in raw and "height" in raw:
                ow, oh = int(raw["width"]), int(raw["height"])
            else:
                probe = image_path or image_name
                try:
                    with Image.open(probe) as img:
                        ow, oh = img.size
                except (OSError, UnidentifiedImageError) as exc:
                    raise IngestionError(
                        f"{path}:{lineno}: no width/height and cannot read "
                        f"{probe}: {exc}") from exc
            if ow <= 0 or oh <= 0:
                raise IngestionError(f"{path}:{lineno}: bad original size {ow}x{oh}")

            boxes = []
            for b in raw_boxes:
                try:
                    coords = (float(b["xmin"]), float(b["ymin"]),
                              float(b["xmax"]), float(b["ymax"]))
                    label = b["label"]
                except (KeyError, TypeError, ValueError) as exc:
                    raise IngestionError(
                        f"{path}:{lineno}: malformed box {b!r}") from exc
                if coords[0] > coords[2] or coords[1] > coords[3]:
                    raise IngestionError(
                        f"{path}:{lineno}: inverted box {coords}")
                try:
                    boxes.append((label, _scale_box(coords, tw / ow, th / oh, tw, th)))
                except InputError as exc:
                    raise IngestionError(f"{path}:{lineno}: {exc}") from exc

            mask_name = raw.get("mask")
            mask_path = None
            if mask_name is not None:
                root = Path(images_root) if images_root is not None else path.parent
                mask_path = str(root / mask_name)
            records.append(AnnotationRecord(
                image_id=str(image_name), boxes=boxes, image_path=image_path,
                mask_path=mask_path, source_size=(ow, oh)))
    return records


def convert_voc_xml(xml_paths) -> list:
    """Convert VOC-style XML annotations to the JSONL record scheme.

    Reads the filename, image size, and each object's name and bndbox;
    VOC's 1-based inclusive coordinates become 0-based.
    """
    out = []
    for xml_path in xml_paths:
        try:
            root = ET.parse(xml_path).getroot()
            filename = root.findtext("filename")
            width = int(root.findtext("size/width"))
            height = int(root.findtext("size/height"))
            boxes = []
            for obj in root.iter("object"):
                name = obj.findtext("name")
                bb = obj.find("bndbox")
                boxes.append({
                    "label": name,
                    "xmin": float(bb.findtext("xmin")) - 1,
                    "ymin": float(bb.findtext("ymin")) - 1,
                    "xmax": float(bb.findtext("xmax")) - 1,
                    "ymax": float(bb.findtext("ymax")) - 1,
                })
        except (ET.ParseError, TypeError, ValueError, AttributeError) as exc:
            raise IngestionError(f"cannot parse VOC XML {xml_path}: {exc}") from exc
        if not boxes:
            raise IngestionError(f"{xml_path}: no objects")
        out.append({"image": filename, "width": width, "height": height,
                    "boxes": boxes})
    return out


def write_annotations(records, path):
    """Write raw record dicts as one JSON object per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_gt_mask(record: AnnotationRecord, input_size) -> np.ndarray:
    """Load a record's ground-truth binary mask, resized to the input frame."""
    if record.mask_path is None:
        raise IngestionError(f"record {record.image_id} has no ground-truth mask")
    try:
        with Image.open(record.mask_path) as img:
            img = img.convert("L").resize((input_size[1], input_size[0]),
                                          Image.NEAREST)
            mask = np.asarray(img) > 127
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"cannot read mask {record.mask_path}: {exc}") from exc
    if not mask.any():
        raise IngestionError(f"{record.mask_path}: empty ground-truth mask")
    return mask


def save_mask(path, mask: np.ndarray):
    """Serialize a [0, 1] saliency map as a GFIMASK1 file (float32)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InputError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isfinite(mask).all() or mask.min() < 0 or mask.max() > 1:
        raise InputError("mask values must be finite and within [0, 1]")
    payload = mask.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MASK_MAGIC, mask.shape[0], mask.shape[1]))
        fh.write(payload.tobytes(order="C"))


def load_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, h, w = _HEADER.unpack(header)
        if magic != MASK_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        body = fh.read()
    expected = h * w * 4
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload is {len(body)} bytes, expected {expected}")
    mask = np.frombuffer(body, dtype="<f4").reshape(h, w)
    if not np.isfinite(mask).all() or mask.min() < 0 or mask.max() > 1:
        raise FormatError(f"{path}: payload values outside [0, 1]")
    return mask.copy()


OVERLAY_ALPHA = 0.5
OVERLAY_COLORMAP = "jet"


def render_overlay(image, mask: np.ndarray, overlay_path, gray_path=None):
    """Write a heat overlay (and optionally the bare grayscale map).

    The heat color is alpha-blended with weight ``OVERLAY_ALPHA * mask``,
    so unmasked pixels show the plain image. Presentation only; metrics
    never read these files.
    """
    from matplotlib import colormaps

    if isinstance(image, ImageTensor):
        pixels = image.pixel.detach().numpy()
        pixels = np.moveaxis(pixels, 0, -1)
    else:
        pixels = np.asarray(image, dtype=float)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.shape[-1] == 1:
        pixels = np.repeat(pixels, 3, axis=-1)
    if pixels.shape[:2] != mask.shape:
        raise InputError(
            f"image {pixels.shape[:2]} and mask {mask.shape} sizes differ")

    heat = colormaps[OVERLAY_COLORMAP](np.asarray(mask, dtype=float))[:, :, :3]
    alpha = (OVERLAY_ALPHA * np.asarray(mask, dtype=float))[:, :, None]
    blended = pixels * (1.0 - alpha) + heat * alpha
    Image.fromarray((blended * 255).round().astype(np.uint8)).save(overlay_path)
    if gray_path is not None:
        gray = (np.asarray(mask, dtype=float) * 255).round().astype(np.uint8)
        Image.fromarray(gray).save(gray_path)


def interpret_config_to_dict(cfg: InterpretConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["baseline"]["kind"] = cfg.baseline.kind.value
    return out


def interpret_config_from_dict(raw: dict) -> InterpretConfig:
    raw = dict(raw)
    base = raw.pop("baseline", {})
    return InterpretConfig(baseline=BaselineSpec(**base), **raw)


@dataclass
class RunManifest:
    """Everything needed to re-run an invocation bit-for-bit (given the
    same model weights) plus where its outputs went."""

    architecture: str
    config: dict
    seed: int
    version: str = __version__
    command: str = ""
    eval_config: dict | None = None
    images: list = field(default_factory=list)
    total_wall_time_seconds: float = 0.0
    created_unix: float = field(default_factory=time.time)

    def add_image(self, **info):
        self.images.append(info)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise FormatError(f"{path}: not a run manifest: {exc}") from exc


def parse_config_file(path) -> dict:
    """Flat ``key = value`` config text; '#' starts a comment.

    Values parse as JSON scalars when possible, else raw strings. Keys
    use the CLI flag names (dashes or underscores).
    """
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = text.partition("=")
            key = key.strip().replace("-", "_")
            value = value.strip()
            if not key:
                raise FormatError(f"{path}:{lineno}: empty key")
            try:
                out[key] = json.loads(value)
            except json.JSONDecodeError:
                out[key] = value
    return out
