"""Regenerate the serialized toy CNN weights from the fixed seed."""

from pathlib import Path

from gfi import zoo

out = Path(__file__).resolve().parents[1] / "src" / "gfi" / "data" / "toy_cnn.npz"
zoo.save_weights(zoo.fresh_toy_cnn(), out)
print(f"wrote {out}")
