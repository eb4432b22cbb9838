"""Supervision terms and their weighted combination.

All losses are means over voxels and channels, so the default term
weights behave the same across input sizes. Tensors may carry a leading
batch dimension or not; the channel axis is inferred from ndim.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .network import ModelVariantSpec
from .volume_io import ChannelMapStack

LOG_CLAMP = 1e-7


@dataclass
class LossWeights:
    """Term weights and per-term constants for the combined loss."""

    lambda_seg: float = 1.0
    lambda_contour: float = 20.0
    lambda_dt: float = 10.0
    lambda_penalty: float = 1.0
    bce_background_weight: float = 0.001
    bce_contour_weight: float = 0.999
    gd_epsilon: float = 1e-6

    def __post_init__(self):
        lambdas = (self.lambda_seg, self.lambda_contour, self.lambda_dt, self.lambda_penalty)
        if any(l < 0 for l in lambdas):
            raise ValueError(f"term weights must be non-negative, got {lambdas}")
        if abs(self.bce_background_weight + self.bce_contour_weight - 1.0) > 1e-9:
            raise ValueError("BCE class weights must sum to 1")
        if self.gd_epsilon <= 0:
            raise ValueError("gd_epsilon must be positive")


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, ChannelMapStack):
        x = x.values
    t = torch.as_tensor(x)
    if like is not None:
        t = t.to(dtype=like.dtype, device=like.device)
    return t


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def weighted_bce(contour_logits: torch.Tensor, contour_gt, weights: LossWeights) -> torch.Tensor:
    """Class-weighted binary cross-entropy on contour probabilities.

    The contour class carries almost all the weight because contour voxels
    are a tiny fraction of the volume.
    """
    y = _as_tensor(contour_gt, contour_logits)
    _check_shapes(contour_logits, y, "weighted_bce")
    p = torch.sigmoid(contour_logits).clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = -(
        weights.bce_contour_weight * y * torch.log(p)
        + weights.bce_background_weight * (1.0 - y) * torch.log(1.0 - p)
    )
    return loss.mean()


def mse_dt(dt_pred: torch.Tensor, dt_gt) -> torch.Tensor:
    """Mean squared error against the distance-transform targets."""
    y = _as_tensor(dt_gt, dt_pred)
    _check_shapes(dt_pred, y, "mse_dt")
    return ((y - dt_pred) ** 2).mean()


def penalty_energy(contour_logits: torch.Tensor, dt_pred: torch.Tensor) -> torch.Tensor:
    """Contour probability multiplied by the inverted clamped distance map.

    Zero exactly where predicted distances reach 1 (foreground interior),
    so contour responses are penalized only over predicted background.
    """
    _check_shapes(contour_logits, dt_pred, "penalty_energy")
    inverted = 1.0 - dt_pred.clamp(0.0, 1.0)
    return (torch.sigmoid(contour_logits) * inverted).mean()


def _channel_first(t: torch.Tensor) -> torch.Tensor:
    # (B, C, ...) -> (C, B*...) ; (C, ...) -> (C, ...)
    if t.ndim == 5:
        t = t.movedim(1, 0)
    return t.reshape(t.shape[0], -1)


def generalized_dice(probs, onehot, epsilon: float = 1e-6) -> torch.Tensor:
    """Generalized Dice loss with inverse-squared-volume class weights.

    Classes absent from the reference keep a finite weight through the
    epsilon term and contribute nothing to either sum.
    """
    p = _as_tensor(probs)
    r = _as_tensor(onehot, p)
    _check_shapes(p, r, "generalized_dice")
    p2 = _channel_first(p)
    r2 = _channel_first(r)
    w = 1.0 / (r2.sum(dim=1) ** 2 + epsilon)
    numerator = (w * (r2 * p2).sum(dim=1)).sum()
    denominator = (w * (r2 + p2).sum(dim=1)).sum()
    if denominator == 0:
        return torch.zeros((), dtype=p.dtype, device=p.device)
    return 1.0 - 2.0 * numerator / denominator


def total_loss(
    outputs: dict[str, torch.Tensor],
    targets: dict[str, torch.Tensor],
    weights: LossWeights,
    variant: ModelVariantSpec,
) -> tuple[torch.Tensor, dict[str, float | None]]:
    """Weighted sum of the active terms, with a per-term breakdown.

    Terms whose heads are absent from the variant are omitted entirely;
    a present head without its target is an error.
    """
    seg_logits = outputs["seg_logits"]
    if "onehot" not in targets:
        raise ValueError("missing 'onehot' segmentation target")
    probs = torch.softmax(seg_logits, dim=1 if seg_logits.ndim == 5 else 0)
    l_seg = generalized_dice(probs, targets["onehot"], weights.gd_epsilon)

    terms: dict[str, torch.Tensor | None] = {"L_O": l_seg, "L_C": None, "L_DT": None, "E_p": None}
    loss = weights.lambda_seg * l_seg

    if variant.has_ctn:
        if "contour_logits" not in outputs:
            raise ValueError(f"variant {variant.variant!r} expects contour logits in outputs")
        if "contour" not in targets:
            raise ValueError("missing 'contour' target for the contour head")
        l_c = weighted_bce(outputs["contour_logits"], targets["contour"], weights)
        terms["L_C"] = l_c
        loss = loss + weights.lambda_contour * l_c

    if variant.has_dttn:
        if "dt_pred" not in outputs:
            raise ValueError(f"variant {variant.variant!r} expects distance predictions in outputs")
        if "distance" not in targets:
            raise ValueError("missing 'distance' target for the distance head")
        l_dt = mse_dt(outputs["dt_pred"], targets["distance"])
        terms["L_DT"] = l_dt
        loss = loss + weights.lambda_dt * l_dt

    if variant.has_penalty:
        e_p = penalty_energy(outputs["contour_logits"], outputs["dt_pred"])
        terms["E_p"] = e_p
        loss = loss + weights.lambda_penalty * e_p

    breakdown: dict[str, float | None] = {
        "L": float(loss.detach()),
    }
    for name, value in terms.items():
        breakdown[name] = float(value.detach()) if value is not None else None
    return loss, breakdown
