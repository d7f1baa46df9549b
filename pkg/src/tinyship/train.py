"""Training loop: Adagrad with cosine-annealed rate on a scene set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .data import Scene, normalize
from .losses import LOSSES, LossConfig
from .model import TinyShipNet
from .optim import Adagrad


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    ious: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["step,lr,loss,train_iou"]
        for s, lr, lo, io in zip(self.steps, self.lrs, self.losses, self.ious):
            lines.append(f"{s},{lr:.9g},{lo:.9g},{io:.9g}")
        return "\n".join(lines) + "\n"


def _hard_iou(probs: np.ndarray, masks: np.ndarray, tau: float = 0.5) -> float:
    pred = probs > tau
    union = np.logical_or(pred, masks).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, masks).sum() / union)


def dataset_iou(model: TinyShipNet, scenes: list[Scene], tau: float = 0.5) -> float:
    inter = union = 0
    for sc in scenes:
        pred = model.predict(normalize(sc.image)[None]) > tau
        inter += np.logical_and(pred, sc.mask).sum()
        union += np.logical_or(pred, sc.mask).sum()
    return float(inter / union) if union else 1.0


def train(model: TinyShipNet, scenes: list[Scene], steps: int,
          batch_size: int = 8, base_rate: float = 0.05, min_rate: float = 0.0,
          loss_name: str = "focaliou", loss_config: LossConfig | None = None,
          seed: int = 0) -> TrainLog:
    """Optimize the model in place; returns the per-step log.

    The loss is evaluated jointly over the whole batch (the soft-IoU factor
    sees all batch pixels at once); its analytic per-pixel logit gradient
    seeds one reverse pass per sample.
    """
    if loss_name not in LOSSES:
        raise ValueError(f"unknown loss '{loss_name}'")
    loss_fn = LOSSES[loss_name]
    loss_config = loss_config or LossConfig()
    rng = np.random.Generator(np.random.PCG64(seed))
    opt = Adagrad(model.parameters, base_rate=base_rate, min_rate=min_rate,
                  period=steps)
    images = [normalize(sc.image)[None] for sc in scenes]
    masks = [sc.mask.astype(np.float64) for sc in scenes]
    log = TrainLog()

    for step in range(1, steps + 1):
        idx = rng.choice(len(scenes), size=min(batch_size, len(scenes)),
                         replace=False)
        opt.zero_grad()
        logits_ts = []
        probs = []
        for i in idx:
            prob, logits = model.forward(Tensor(images[i]))
            logits_ts.append(logits)
            probs.append(prob.data)
        p = np.stack(probs)
        y = np.stack([masks[i] for i in idx])[:, None]
        out = loss_fn(p, y, loss_config)
        for logits, g in zip(logits_ts, out.grad_logits):
            logits.backward(g)
        lr = opt.step()
        log.steps.append(step)
        log.lrs.append(lr)
        log.losses.append(out.value)
        log.ious.append(_hard_iou(p, y > 0.5))
    return log
