"""Train the bundled shapes classifier and serialize its weights.

Run from the repo root: python3 tools/train_shapes_cnn.py
"""

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from gfi import synthetic, zoo

SEED = 1234
STEPS = 700
BATCH = 48
LR = 1e-3
LABEL_SMOOTHING = 0.30  # keeps probabilities off the ceiling so the class terms stay responsive
FEATURE_SCALE = 8.0  # see rescale note below


def main():
    torch.manual_seed(SEED)
    rng = np.random.default_rng(SEED)
    model = zoo.ShapesCNN().train()
    # He init keeps activation scale roughly constant through the conv
    # stack; the default init stalls this normalization-free net.
    for mod in model.modules():
        if isinstance(mod, (torch.nn.Conv2d, torch.nn.Linear)):
            torch.nn.init.kaiming_normal_(mod.weight, nonlinearity="relu")
            torch.nn.init.constant_(mod.bias, 0.02)
    opt = torch.optim.Adam(model.parameters(), lr=LR)

    for step in range(1, STEPS + 1):
        x, y = synthetic.training_batch(rng, BATCH)
        opt.zero_grad()
        loss = F.cross_entropy(model(x), y, label_smoothing=LABEL_SMOOTHING)
        loss.backward()
        opt.step()
        if step % 20 == 0:
            print(f"step {step:4d}  loss {loss.item():.4f}")

    model.eval()

    # Rescale the last conv block up and the head down by the same factor.
    # The classifier function is unchanged (ReLU and max-pool commute with
    # positive scaling), but the tapped features carry magnitudes closer to
    # a large pretrained backbone's, which the default mask-fitting
    # hyperparameters are balanced for.
    x_probe, _ = synthetic.training_batch(np.random.default_rng(0), 4)
    with torch.no_grad():
        before = model(x_probe)
        model.conv5.weight *= FEATURE_SCALE
        model.conv5.bias *= FEATURE_SCALE
        model.fc.weight /= FEATURE_SCALE
        after = model(x_probe)
    assert torch.allclose(before, after, atol=1e-4), "rescale changed the function"

    val_rng = np.random.default_rng(SEED + 1)
    correct = total = 0
    with torch.no_grad():
        for _ in range(8):
            x, y = synthetic.training_batch(val_rng, 64)
            correct += (model(x).argmax(dim=1) == y).sum().item()
            total += len(y)
    print(f"val accuracy: {correct / total:.3f} ({correct}/{total})")

    out = Path(__file__).resolve().parents[1] / "src" / "gfi" / "data" / "shapes_cnn.npz"
    zoo.save_weights(model, out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
