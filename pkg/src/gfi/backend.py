"""Adapter around a pretrained CNN: tapped activations, class probabilities,
and gradients of scalar objectives.

Architectures are described by a registry (JSON) mapping a name to the
layer taps, channel counts, input size, and preprocessing constants. The
adapter freezes the network, runs it in eval mode, and exposes

* ``forward_with_taps`` — intermediate activations at named layers,
* ``class_prob`` / ``logits`` — softmax scores over the classes,
* ``grad_of`` — d(objective)/d(weights) via autograd,
* ``vanilla_gradient_saliency`` — the plain input-gradient baseline map.
"""

import copy
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import torch
from torch import nn

from . import zoo
from .errors import ConfigurationError, GfiError, InputError
from .image import ImageTensor

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class LayerSpec:
    """Which layers drive a run: the inversion tap l0 and the channel base l1."""

    inversion_layer_id: str
    base_channel_layer_id: str
    n_channels: int
    base_spatial: tuple


@dataclass(frozen=True)
class LayerEntry:
    path: str
    channels: int
    spatial: tuple


@dataclass(frozen=True)
class ArchitectureEntry:
    name: str
    model: str
    input_size: tuple
    input_channels: int
    mean: tuple
    std: tuple
    dtype: str
    n_classes: int
    inversion_layer: str
    base_channel_layer: str
    layers: dict = field(default_factory=dict)

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    def layer_spec(self, inversion_layer=None, base_channel_layer=None) -> LayerSpec:
        """Resolve a LayerSpec, defaulting to the registry's l0/l1 choice."""
        l0 = inversion_layer or self.inversion_layer
        l1 = base_channel_layer or self.base_channel_layer
        for lid in (l0, l1):
            if lid not in self.layers:
                raise ConfigurationError(
                    f"unknown layer {lid!r} for architecture {self.name!r}; "
                    f"declared layers: {sorted(self.layers)}"
                )
        base = self.layers[l1]
        return LayerSpec(l0, l1, base.channels, tuple(base.spatial))


def _parse_entry(name, raw) -> ArchitectureEntry:
    try:
        layers = {
            lid: LayerEntry(spec["path"], int(spec["channels"]), tuple(spec["spatial"]))
            for lid, spec in raw["layers"].items()
        }
        return ArchitectureEntry(
            name=name,
            model=raw["model"],
            input_size=tuple(raw["input_size"]),
            input_channels=int(raw["input_channels"]),
            mean=tuple(raw["mean"]),
            std=tuple(raw["std"]),
            dtype=raw["dtype"],
            n_classes=int(raw["n_classes"]),
            inversion_layer=raw["inversion_layer"],
            base_channel_layer=raw["base_channel_layer"],
            layers=layers,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed registry entry {name!r}: {exc}") from exc


def load_registry(path=None) -> dict:
    """Load the architecture registry (packaged JSON unless a path is given)."""
    if path is None:
        text = (resources.files("gfi") / "data" / "architectures.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    return {name: _parse_entry(name, spec) for name, spec in raw.items()}


def get_architecture(name, registry_path=None) -> ArchitectureEntry:
    registry = load_registry(registry_path)
    if name not in registry:
        raise ConfigurationError(
            f"unknown architecture {name!r}; registered: {sorted(registry)}"
        )
    return registry[name]


def build_model(entry: ArchitectureEntry, pretrained=True) -> nn.Module:
    """Construct the network for a registry entry.

    Bundled models always load their packaged weights. torchvision models
    fetch ImageNet weights when ``pretrained`` is true, which requires the
    weight files to be reachable (network or local torch hub cache).
    """
    if entry.model == "toy":
        return zoo.toy_cnn(dtype=entry.torch_dtype)
    if entry.model == "shapes96":
        return zoo.shapes_cnn(dtype=entry.torch_dtype)
    if entry.model.startswith("torchvision:"):
        from torchvision import models as tv_models

        arch = entry.model.split(":", 1)[1]
        factory = getattr(tv_models, arch, None)
        if factory is None:
            raise ConfigurationError(f"torchvision has no model {arch!r}")
        try:
            model = factory(weights="IMAGENET1K_V1" if pretrained else None)
        except Exception as exc:
            raise ConfigurationError(
                f"could not load weights for {arch!r} (offline?); "
                f"pass pretrained=False for a randomly initialized network: {exc}"
            ) from exc
        return model.to(entry.torch_dtype).eval()
    raise ConfigurationError(f"unknown model builder {entry.model!r}")


@dataclass
class Snapshot:
    """Activations captured at named layers during one forward pass."""

    values: dict
    detached: bool

    def __getitem__(self, layer_id):
        return self.values[layer_id]

    def __contains__(self, layer_id):
        return layer_id in self.values

    def __len__(self):
        return len(self.values)

    def keys(self):
        return self.values.keys()


class ModelAdapter:
    """Frozen classifier with named intermediate taps.

    The network is put in eval mode and its parameters never receive
    gradients; only objectives built on top of the adapter's outputs do.
    Forward evaluation is read-only, so one adapter may serve several
    workers; ``clone`` gives an independent copy when isolation is wanted.
    """

    def __init__(self, model: nn.Module, entry: ArchitectureEntry, validate=True):
        self.entry = entry
        self.model = model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self._modules = dict(self.model.named_modules())
        for lid, layer in entry.layers.items():
            if layer.path not in self._modules:
                raise ConfigurationError(
                    f"layer {lid!r} maps to module path {layer.path!r}, "
                    f"which does not exist in the {entry.name!r} model"
                )
        if validate:
            self._validate_declared_shapes()

    @classmethod
    def from_registry(cls, name, pretrained=True, registry_path=None, validate=True):
        entry = get_architecture(name, registry_path)
        return cls(build_model(entry, pretrained=pretrained), entry, validate=validate)

    def clone(self):
        return ModelAdapter(copy.deepcopy(self.model), self.entry, validate=False)

    @property
    def dtype(self):
        return self.entry.torch_dtype

    @property
    def input_shape(self):
        return (self.entry.input_channels, *self.entry.input_size)

    def _validate_declared_shapes(self):
        probe = torch.zeros(self.input_shape, dtype=self.dtype)
        snap = self.forward_with_taps(probe, set(self.entry.layers))
        for lid, layer in self.entry.layers.items():
            got = tuple(snap[lid].shape)
            want = (layer.channels, *layer.spatial)
            if got != want:
                raise ConfigurationError(
                    f"registry declares layer {lid!r} as {want} but the "
                    f"{self.entry.name!r} model produces {got}"
                )

    def _as_batch(self, x):
        if isinstance(x, ImageTensor):
            x = x.normalized
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise InputError(
                f"expected input of shape {self.input_shape}, got {tuple(x.shape)}"
            )
        return x.to(self.dtype)

    def _resolve(self, layer_id):
        if layer_id not in self.entry.layers:
            raise ConfigurationError(
                f"unknown layer {layer_id!r} for architecture {self.entry.name!r}; "
                f"declared layers: {sorted(self.entry.layers)}"
            )
        return self._modules[self.entry.layers[layer_id].path]

    def forward_with_taps(self, x, layers, detach=True) -> Snapshot:
        """Run one forward pass and capture activations at the given layers.

        With ``detach=True`` (the default) values are constants suitable
        for use as optimization targets; with ``detach=False`` gradients
        flow through the captured tensors.
        """
        layers = set(layers)
        if not layers:
            return Snapshot({}, detached=detach)
        batched = not (isinstance(x, ImageTensor) or x.ndim == 3)
        x = self._as_batch(x)

        captured = {}
        handles = []
        by_module = {}
        for lid in layers:
            by_module.setdefault(self._resolve(lid), []).append(lid)

        def make_hook(lids):
            def hook(_module, _inputs, output):
                for lid in lids:
                    captured[lid] = output
            return hook

        for module, lids in by_module.items():
            handles.append(module.register_forward_hook(make_hook(lids)))
        try:
            if detach:
                with torch.no_grad():
                    self.model(x)
            else:
                self.model(x)
        finally:
            for h in handles:
                h.remove()
        missing = layers - set(captured)
        if missing:
            raise ConfigurationError(
                f"layers {sorted(missing)} were never executed by the model"
            )
        values = {}
        for lid, out in captured.items():
            if not batched:
                out = out[0]
            values[lid] = out.detach() if detach else out
        return Snapshot(values, detached=detach)

    def logits(self, x, detach=True) -> torch.Tensor:
        batched = not (isinstance(x, ImageTensor) or x.ndim == 3)
        x = self._as_batch(x)
        if detach:
            with torch.no_grad():
                out = self.model(x)
        else:
            out = self.model(x)
        return out if batched else out[0]

    def class_prob(self, x, detach=True) -> torch.Tensor:
        """Softmax probabilities over all classes; sums to 1 per input."""
        return torch.softmax(self.logits(x, detach=detach), dim=-1)

    def grad_of(self, objective: torch.Tensor, wrt: torch.Tensor) -> torch.Tensor:
        """d(objective)/d(wrt) for a scalar objective built on this adapter."""
        if objective.numel() != 1:
            raise InputError("objective must be a scalar")
        try:
            (grad,) = torch.autograd.grad(objective, wrt, allow_unused=False)
        except RuntimeError as exc:
            raise GfiError(f"objective is not differentiable in the weights: {exc}") from exc
        if grad is None:
            raise GfiError("objective is not connected to the weights")
        return grad

    def vanilla_gradient_saliency(self, x: ImageTensor, c) -> np.ndarray:
        """Input-gradient baseline: max over channels of |d score_c / d x|,
        min-max normalized to [0, 1]."""
        if not 0 <= int(c) < self.entry.n_classes:
            raise InputError(f"class index {c} out of range [0, {self.entry.n_classes})")
        inp = x.normalized.to(self.dtype).clone().requires_grad_(True)
        score = self.model(inp[None])[0, int(c)]
        (grad,) = torch.autograd.grad(score, inp)
        sal = grad.abs().amax(dim=0)
        lo, hi = sal.min(), sal.max()
        if hi == lo:
            return torch.zeros_like(sal).numpy()
        return ((sal - lo) / (hi - lo)).numpy()
