"""Two-stage mask optimization.

Stage 1 fits the channel weights so the masked composite reproduces the
input's inversion-layer features; stage 2 fine-tunes the same weights to
make the mask class-discriminative, halving the learning rate every few
iterations. Both stages take Adam steps at a fixed per-iteration rate and
clip the weights to be nonnegative after every step.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .backend import LayerSpec, ModelAdapter
from .errors import InputError, SolverError
from .image import ImageTensor
from .mask import channel_mask, minmax_normalize, upsample_bilinear
from .objectives import InversionTarget, LossBreakdown, inversion_loss, target_loss
from .perturbation import BaselineSpec, make_baseline

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class InterpretConfig:
    """Everything a run needs besides the input and the model."""

    stage1_iters: int = 10
    stage2_iters: int = 70
    lr: float = 1e-2
    lr_halving_period: int = 10
    gamma: float = 10.0
    delta: float = 1.0
    lam: float = 1.0
    omega_init: float = 0.1
    baseline: BaselineSpec = field(default_factory=BaselineSpec)
    inversion_layer: str | None = None
    base_channel_layer: str | None = None
    seed: int = 0
    normalize_inversion_by_count: bool = False

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise InputError("iteration counts must be >= 0")
        if self.lr <= 0:
            raise InputError(f"learning rate must be > 0, got {self.lr}")
        if self.lr_halving_period < 1:
            raise InputError("lr halving period must be >= 1")
        if min(self.gamma, self.delta, self.lam) < 0:
            raise InputError("gamma, delta, lam must all be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    """One optimizer step: the loss evaluated before the step and the
    learning rate the step used."""

    index: int
    lr: float
    loss: LossBreakdown
    degenerate: bool


@dataclass
class StageResult:
    weights: np.ndarray
    mask: np.ndarray
    mask_lowres: np.ndarray
    trace: list
    degenerate: bool


@dataclass
class ExplanationResult:
    """The explanation artifact for one (input, class) pair."""

    mask: np.ndarray
    mask_lowres: np.ndarray
    weights: np.ndarray
    target_class: int
    predicted_class: int
    predicted_prob: float
    stage1_trace: list
    stage2_trace: list
    degenerate_flag: bool
    wall_time_seconds: float
    layer_spec: LayerSpec
    config: InterpretConfig


def stage2_lr(base_lr: float, iteration: int, period: int) -> float:
    """Learning rate for a 1-indexed stage-2 iteration: halved after every
    completed block of ``period`` iterations."""
    return base_lr * 0.5 ** ((iteration - 1) // period)


class _RunContext:
    """Per-run constants: detached activations, inversion target, baseline."""

    def __init__(self, adapter: ModelAdapter, x: ImageTensor, cfg: InterpretConfig):
        self.layer_spec = adapter.entry.layer_spec(cfg.inversion_layer,
                                                   cfg.base_channel_layer)
        taps = {self.layer_spec.inversion_layer_id,
                self.layer_spec.base_channel_layer_id}
        snap = adapter.forward_with_taps(x, taps, detach=True)
        self.acts_l1 = snap[self.layer_spec.base_channel_layer_id]
        self.target = InversionTarget.from_features(
            snap[self.layer_spec.inversion_layer_id])
        self.baseline = make_baseline(cfg.baseline, x)


class GuidedInversionExplainer:
    """Runs the two-stage mask optimization against one model adapter.

    A single run owns its optimizer state; the adapter itself is
    read-only, so several explainer instances may share it.
    """

    def __init__(self, adapter: ModelAdapter):
        self.adapter = adapter

    def _finalize_stage(self, omega, ctx, x, trace, degenerate):
        with torch.no_grad():
            raw = channel_mask(omega, ctx.acts_l1)
            degenerate = degenerate or bool(raw.max() == raw.min())
            lowres = minmax_normalize(raw)
            mask = upsample_bilinear(lowres, x.spatial)
        return StageResult(
            weights=omega.detach().numpy().copy(),
            mask=mask.numpy().copy(),
            mask_lowres=lowres.numpy().copy(),
            trace=trace,
            degenerate=degenerate,
        )

    def _optimize(self, omega, lrs, eval_loss, stage_name):
        """Shared loop: evaluate, step, clip, record; abort on non-finite loss."""
        opt = torch.optim.Adam([omega], lr=lrs[0] if lrs else 1.0,
                               betas=ADAM_BETAS, eps=ADAM_EPS)
        trace = []
        degenerate_any = False
        for i, lr in enumerate(lrs, start=1):
            opt.param_groups[0]["lr"] = lr
            opt.zero_grad()
            total, breakdown, degenerate = eval_loss(omega)
            if not np.isfinite(breakdown.total):
                raise SolverError(
                    f"{stage_name} produced a non-finite loss at iteration {i}",
                    iteration=i,
                )
            total.backward()
            opt.step()
            with torch.no_grad():
                omega.clamp_(min=0)
            degenerate_any = degenerate_any or degenerate
            trace.append(IterationRecord(index=i, lr=lr, loss=breakdown,
                                         degenerate=degenerate))
        return trace, degenerate_any

    def run_stage1(self, x: ImageTensor, cfg: InterpretConfig,
                   _ctx=None) -> StageResult:
        """Guided feature inversion: fit the weights so the composite
        reproduces the input's inversion-layer features."""
        ctx = _ctx or _RunContext(self.adapter, x, cfg)
        omega = torch.full((ctx.layer_spec.n_channels,), cfg.omega_init,
                           dtype=self.adapter.dtype, requires_grad=True)

        def eval_loss(w):
            return inversion_loss(
                w, x, ctx.acts_l1, ctx.target, ctx.baseline, cfg.gamma,
                self.adapter, ctx.layer_spec.inversion_layer_id,
                normalize_by_count=cfg.normalize_inversion_by_count)

        lrs = [cfg.lr] * cfg.stage1_iters
        trace, degenerate = self._optimize(omega, lrs, eval_loss, "stage 1")
        return self._finalize_stage(omega, ctx, x, trace, degenerate)

    def run_stage2(self, x: ImageTensor, c: int, omega_init,
                   cfg: InterpretConfig, _ctx=None) -> StageResult:
        """Class-discriminative fine-tuning seeded by the stage-1 weights."""
        ctx = _ctx or _RunContext(self.adapter, x, cfg)
        omega_init = torch.as_tensor(omega_init, dtype=self.adapter.dtype)
        if omega_init.shape != (ctx.layer_spec.n_channels,):
            raise InputError(
                f"stage-2 weights must have shape ({ctx.layer_spec.n_channels},), "
                f"got {tuple(omega_init.shape)}")
        if (omega_init < 0).any():
            raise InputError("stage-2 initial weights must be nonnegative")
        omega = omega_init.clone().requires_grad_(True)

        def eval_loss(w):
            return target_loss(w, x, ctx.acts_l1, ctx.baseline, c,
                               cfg.lam, cfg.delta, self.adapter)

        lrs = [stage2_lr(cfg.lr, i, cfg.lr_halving_period)
               for i in range(1, cfg.stage2_iters + 1)]
        trace, degenerate = self._optimize(omega, lrs, eval_loss, "stage 2")
        return self._finalize_stage(omega, ctx, x, trace, degenerate)

    def explain(self, x: ImageTensor, c=None,
                cfg: InterpretConfig | None = None) -> ExplanationResult:
        """Full pipeline: stage 1, then stage 2 on its weights.

        When the target class is omitted, the model's own top prediction
        is explained.
        """
        cfg = cfg or InterpretConfig()
        start = time.perf_counter()
        probs = self.adapter.class_prob(x)
        predicted = int(probs.argmax())
        target_class = predicted if c is None else int(c)
        if not 0 <= target_class < self.adapter.entry.n_classes:
            raise InputError(
                f"class index {target_class} out of range "
                f"[0, {self.adapter.entry.n_classes})")

        ctx = _RunContext(self.adapter, x, cfg)
        s1 = self.run_stage1(x, cfg, _ctx=ctx)
        s2 = self.run_stage2(x, target_class, s1.weights, cfg, _ctx=ctx)
        return ExplanationResult(
            mask=s2.mask,
            mask_lowres=s2.mask_lowres,
            weights=s2.weights,
            target_class=target_class,
            predicted_class=predicted,
            predicted_prob=float(probs[predicted]),
            stage1_trace=s1.trace,
            stage2_trace=s2.trace,
            degenerate_flag=s1.degenerate or s2.degenerate,
            wall_time_seconds=time.perf_counter() - start,
            layer_spec=ctx.layer_spec,
            config=cfg,
        )
