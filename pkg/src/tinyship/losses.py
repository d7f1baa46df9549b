"""Focal, soft-IoU and focal-IoU losses with exact analytic gradients.

All losses operate on plain numpy arrays: ``p`` is a probability map in
[0, 1], ``y`` a binary mask of the same shape. Gradients are reported with
respect to the pre-sigmoid logits ``x`` (p = sigmoid(x)), ready to seed a
reverse pass. Pure functions; safe to evaluate concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LossConfig:
    gamma: float = 2.0
    smooth: float = 1.0
    epsilon: float = 1e-7
    # When True the soft-IoU factor is differentiated through as well,
    # instead of being held constant during the backward pass.
    differentiate_iou: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.smooth <= 0:
            raise ValueError("smooth must be > 0")
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")


@dataclass
class LossOutput:
    value: float
    grad_logits: np.ndarray
    soft_iou: float


def _check(p: np.ndarray, y: np.ndarray):
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")


def _clamp(p: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(p, eps, 1.0 - eps)


def focal_pixelwise(p, y, gamma):
    """Per-pixel focal term and its derivative with respect to p."""
    fl = -y * (1 - p) ** gamma * np.log(p) - (1 - y) * p ** gamma * np.log(1 - p)
    dfl = (-(1 - y) * gamma * p ** (gamma - 1) * np.log(1 - p)
           + (1 - y) * p ** gamma / (1 - p)
           + y * gamma * (1 - p) ** (gamma - 1) * np.log(p)
           - y * (1 - p) ** gamma / p)
    return fl, dfl


def focal_loss(p: np.ndarray, y: np.ndarray, config: LossConfig | None = None) -> LossOutput:
    """Mean focal loss; hard pixels are up-weighted by (1-p)^gamma."""
    config = config or LossConfig()
    _check(p, y)
    pc = _clamp(p, config.epsilon)
    fl, dfl = focal_pixelwise(pc, y, config.gamma)
    n = p.size
    # d(mean FL)/dx through p = sigmoid(x); the clamp is flat at the rails.
    grad = dfl * pc * (1 - pc) / n
    return LossOutput(float(fl.mean()), grad, soft_iou(p, y, config))


def soft_iou(p: np.ndarray, y: np.ndarray, config: LossConfig | None = None) -> float:
    """Smoothed intersection-over-union of a probability map and a mask."""
    config = config or LossConfig()
    _check(p, y)
    inter = float((p * y).sum())
    return (config.smooth + inter) / (config.smooth + float(p.sum()) + float(y.sum()) - inter)


def soft_iou_loss(p: np.ndarray, y: np.ndarray, config: LossConfig | None = None) -> LossOutput:
    """1 - SoftIoU, differentiated through the ratio."""
    config = config or LossConfig()
    _check(p, y)
    s = soft_iou(p, y, config)
    num = config.smooth + float((p * y).sum())
    den = config.smooth + float(p.sum()) + float(y.sum()) - float((p * y).sum())
    ds_dp = (y * den - num * (1 - y)) / den ** 2
    grad = -ds_dp * p * (1 - p)
    return LossOutput(1.0 - s, grad, s)


def focal_iou_loss(p: np.ndarray, y: np.ndarray, config: LossConfig | None = None) -> LossOutput:
    """Composite loss 2 (1 - S) FL^((1 + S) / 2), S the soft IoU.

    By default S is treated as a constant in the backward pass, so the
    gradient is 2 (1 - S) e FL^(e-1) dFL/dx with e = (1 + S) / 2. With
    ``differentiate_iou`` the S-dependence is chained through as well.
    """
    config = config or LossConfig()
    _check(p, y)
    pc = _clamp(p, config.epsilon)
    s = soft_iou(p, y, config)
    fl, dfl = focal_pixelwise(pc, y, config.gamma)
    f = float(fl.mean())
    e = (1.0 + s) / 2.0
    value = 2.0 * (1.0 - s) * f ** e

    n = p.size
    df_dx = dfl * pc * (1 - pc) / n
    grad = 2.0 * (1.0 - s) * e * f ** (e - 1.0) * df_dx
    if config.differentiate_iou:
        num = config.smooth + float((p * y).sum())
        den = config.smooth + float(p.sum()) + float(y.sum()) - float((p * y).sum())
        ds_dp = (y * den - num * (1 - y)) / den ** 2
        ds_dx = ds_dp * p * (1 - p)
        # d/dS [2 (1-S) F^((1+S)/2)] = F^e (-2 + (1-S) ln F)
        grad = grad + f ** e * (-2.0 + (1.0 - s) * np.log(f)) * ds_dx
    return LossOutput(value, grad, s)


LOSSES = {
    "focaliou": focal_iou_loss,
    "focal": focal_loss,
    "softiou": soft_iou_loss,
}
