"""Training recipe for the toy detector: Gaussian keypoint targets,
penalty-reduced focal loss (alpha=2, beta=4) and an L1 size loss (weight 0.1)."""
from __future__ import annotations

import logging
import math

import numpy as np
import torch
import torch.nn.functional as F

from catattack.detector.model import NUM_CLASSES, STRIDE, KeypointDetector, ToyCenterNet
from catattack.errors import TrainingDivergedError

log = logging.getLogger(__name__)

FOCAL_ALPHA = 2.0
FOCAL_BETA = 4.0
SIZE_WEIGHT = 0.1


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """CenterNet's radius bound so a shifted box keeps IoU >= ``min_overlap``."""
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * c1)) / 2
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 16 * c2)) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def draw_gaussian(heat: np.ndarray, row: int, col: int, radius: int) -> None:
    d = 2 * radius + 1
    sigma = d / 6
    ys, xs = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    h, w = heat.shape
    top, bottom = min(row, radius), min(h - row, radius + 1)
    left, right = min(col, radius), min(w - col, radius + 1)
    patch = heat[row - top:row + bottom, col - left:col + right]
    np.maximum(patch, g[radius - top:radius + bottom, radius - left:radius + right], out=patch)


def build_targets(objects, image_hw, num_classes=NUM_CLASSES, stride=STRIDE):
    """Heat, size and center-mask targets for one image's ``(category, box)`` objects."""
    h, w = image_hw[0] // stride, image_hw[1] // stride
    heat = np.zeros((num_classes, h, w), dtype=np.float32)
    size = np.zeros((2, h, w), dtype=np.float32)
    mask = np.zeros((h, w), dtype=np.float32)
    for cat, (x1, y1, x2, y2) in objects:
        bw, bh = (x2 - x1) / stride, (y2 - y1) / stride
        col = min(int((x1 + x2) / 2 / stride), w - 1)
        row = min(int((y1 + y2) / 2 / stride), h - 1)
        radius = max(0, int(gaussian_radius(bh, bw)))
        draw_gaussian(heat[cat], row, col, radius)
        heat[cat, row, col] = 1.0
        size[:, row, col] = (bw, bh)
        mask[row, col] = 1.0
    return heat, size, mask


def focal_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Penalty-reduced pixelwise focal loss, normalised by the number of peaks."""
    pos = target.eq(1).float()
    neg = 1.0 - pos
    log_p = F.logsigmoid(logits)
    log_1p = F.logsigmoid(-logits)
    p = torch.sigmoid(logits)
    pos_loss = ((1 - p) ** FOCAL_ALPHA * log_p * pos).sum()
    neg_loss = ((1 - target) ** FOCAL_BETA * p ** FOCAL_ALPHA * log_1p * neg).sum()
    num_pos = pos.sum().clamp(min=1.0)
    return -(pos_loss + neg_loss) / num_pos


def size_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.unsqueeze(1)
    return (torch.abs(pred - target) * m).sum() / (2 * m.sum()).clamp(min=1.0)


def train_toy_detector(dataset, epochs: int = 40, seed: int = 7, batch_size: int = 32,
                       lr: float = 2e-3, channels=(16, 32, 48)) -> KeypointDetector:
    """Train a :class:`ToyCenterNet` on a synthetic dataset.

    ``dataset`` needs ``images`` (N, H, W, 3) uint8 and ``annotations`` (a list of
    ``[(category, (x1, y1, x2, y2)), ...]`` per image). Bit-for-bit deterministic
    for a fixed seed on a single thread.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = ToyCenterNet(NUM_CLASSES, channels)
    images = np.asarray(dataset.images)
    n = len(images)
    hw = images.shape[1:3]
    targets = [build_targets(objs, hw) for objs in dataset.annotations]
    heat_t = torch.from_numpy(np.stack([t[0] for t in targets]))
    size_t = torch.from_numpy(np.stack([t[1] for t in targets]))
    mask_t = torch.from_numpy(np.stack([t[2] for t in targets]))
    x_all = torch.from_numpy(images).permute(0, 3, 1, 2).float() / 255.0

    opt = torch.optim.Adam(net.parameters(), lr=lr)
    milestone = int(0.75 * epochs)
    history = []
    for epoch in range(epochs):
        if epoch == milestone and epoch > 0:
            for group in opt.param_groups:
                group["lr"] = lr * 0.1
        net.train()
        order = rng.permutation(n)
        flips = rng.random(n) < 0.5
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, hb, sb, mb = x_all[idx], heat_t[idx], size_t[idx], mask_t[idx]
            flip = torch.from_numpy(flips[idx])
            if flip.any():
                xb, hb, sb, mb = (torch.where(flip.view(-1, *[1] * (t.dim() - 1)), t.flip(-1), t)
                                  for t in (xb, hb, sb, mb))
            logits, sizes = net(xb)
            loss = focal_loss(logits, hb) + SIZE_WEIGHT * size_loss(sizes, sb, mb)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss.item()} at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / n)
        log.info("epoch %d/%d loss %.4f", epoch + 1, epochs, history[-1])
    meta = {"epochs": epochs, "seed": seed, "batch_size": batch_size, "lr": lr,
            "train_size": n, "loss_history": history}
    return KeypointDetector(net, seed=seed, meta=meta)
