"""Training losses on normalized (B, 3, H, W) predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autograd as ag
from .autograd import Tensor
from .errors import DimensionError, NumericError, ValidationError

COLOR_EPS = 1e-8
DEFAULT_LAMBDA = 0.1


def _check(pred: Tensor, gt: Tensor) -> tuple[Tensor, Tensor]:
    pred, gt = ag.as_tensor(pred), ag.as_tensor(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ")
    if pred.data.ndim != 4 or pred.shape[1] != 3:
        raise DimensionError(f"expected (B, 3, H, W), got {pred.shape}")
    return pred, gt


def l1_loss(pred, gt) -> Tensor:
    """Mean absolute error over every pixel and channel."""
    pred, gt = _check(pred, gt)
    return ag.mean(ag.tabs(ag.sub(pred, gt)))


def color_loss(pred, gt, eps: float = COLOR_EPS) -> Tensor:
    """Mean over pixels of 1 - <p, g> / (|p| |g| + eps), RGB vectors along axis 1."""
    pred, gt = _check(pred, gt)
    dot = ag.tsum(ag.mul(pred, gt), axis=1)
    denom = ag.add(ag.mul(ag.l2norm(pred, axis=1), ag.l2norm(gt, axis=1)), eps)
    return ag.sub(1.0, ag.mean(ag.div(dot, denom)))


@dataclass
class LossValue:
    l1: Tensor
    color: Tensor
    total: Tensor
    lam: float

    def values(self) -> tuple[float, float, float]:
        return self.l1.item(), self.color.item(), self.total.item()


def total_loss(pred, gt, lam: float = DEFAULT_LAMBDA) -> LossValue:
    if not lam >= 0:
        raise ValidationError(f"loss weight must be >= 0, got {lam}")
    l1 = l1_loss(pred, gt)
    col = color_loss(pred, gt)
    total = ag.add(l1, ag.mul(col, lam))
    if not (math.isfinite(l1.item()) and math.isfinite(col.item())):
        raise NumericError("loss is not finite")
    return LossValue(l1, col, total, lam)
