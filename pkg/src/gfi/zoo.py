"""Bundled CNN classifiers with serialized weights.

Two small networks ship with the package so the whole pipeline can run
and be tested without downloading anything:

* ``toy_cnn`` — a fixed-seed 2-conv-layer net on 8x8 single-channel
  inputs with a 3-class softmax head. Small enough that gradients can be
  checked against finite differences in double precision.
* ``shapes_cnn`` — a 4-conv-block net trained on the synthetic shapes
  benchmark (see :mod:`gfi.synthetic`); stands in for a pretrained
  ImageNet model on machines without the torchvision weight files.

Both load their parameters from ``.npz`` files under ``gfi/data``.
"""

from importlib import resources

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError


class ToyCNN(nn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, 3, padding=1)
        self.act1 = nn.ReLU()
        self.pool1 = nn.MaxPool2d(2)
        self.conv2 = nn.Conv2d(6, 4, 3, padding=1)
        self.act2 = nn.ReLU()
        self.pool2 = nn.MaxPool2d(2)
        self.fc = nn.Linear(4 * 2 * 2, 3)

    def forward(self, x):
        x = self.pool1(self.act1(self.conv1(x)))
        x = self.pool2(self.act2(self.conv2(x)))
        return self.fc(torch.flatten(x, 1))


class ShapesCNN(nn.Module):
    def __init__(self, n_classes=6):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.act1 = nn.ReLU()
        self.pool1 = nn.MaxPool2d(2)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.act2 = nn.ReLU()
        self.pool2 = nn.MaxPool2d(2)
        self.conv3 = nn.Conv2d(32, 48, 3, padding=1)
        self.act3 = nn.ReLU()
        self.pool3 = nn.MaxPool2d(2)
        self.conv4 = nn.Conv2d(48, 64, 3, padding=1)
        self.act4 = nn.ReLU()
        self.conv5 = nn.Conv2d(64, 96, 3, padding=1)
        self.act5 = nn.ReLU()
        self.pool5 = nn.MaxPool2d(2)
        self.fc = nn.Linear(96 * 6 * 6, n_classes)

    def forward(self, x):
        x = self.pool1(self.act1(self.conv1(x)))
        x = self.pool2(self.act2(self.conv2(x)))
        x = self.pool3(self.act3(self.conv3(x)))
        x = self.act5(self.conv5(self.act4(self.conv4(x))))
        return self.fc(torch.flatten(self.pool5(x), 1))


def _data_path(name):
    return resources.files("gfi") / "data" / name


def save_weights(model: nn.Module, path):
    """Serialize a state dict as a compressed ``.npz`` (float64 arrays)."""
    arrays = {k: v.detach().cpu().numpy().astype(np.float64)
              for k, v in model.state_dict().items()}
    np.savez_compressed(path, **arrays)


def load_weights(model: nn.Module, path, dtype=torch.float32):
    with np.load(path) as payload:
        state = {k: torch.from_numpy(payload[k]).to(dtype) for k in payload.files}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise ConfigurationError(f"weight file {path} is missing parameters: {sorted(missing)}")
    model = model.to(dtype)
    model.load_state_dict(state)
    return model


def toy_cnn(dtype=torch.float64) -> nn.Module:
    """The fixed-seed toy classifier, in double precision by default."""
    model = load_weights(ToyCNN(), _data_path("toy_cnn.npz"), dtype=dtype)
    model.eval()
    return model


def shapes_cnn(dtype=torch.float32) -> nn.Module:
    """The bundled shapes classifier trained on the synthetic benchmark."""
    model = load_weights(ShapesCNN(), _data_path("shapes_cnn.npz"), dtype=dtype)
    model.eval()
    return model


def fresh_toy_cnn(seed=20240214) -> nn.Module:
    """Rebuild the toy net's parameters from the seed (used to regenerate
    the serialized file; tests load the file, never this)."""
    rng = np.random.default_rng(seed)
    model = ToyCNN().to(torch.float64)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                values = rng.uniform(0.0, 0.1, size=param.shape)
            else:
                values = rng.normal(0.0, 0.4, size=param.shape)
            param.copy_(torch.from_numpy(values))
    model.eval()
    return model
