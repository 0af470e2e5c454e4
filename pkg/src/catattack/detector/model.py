"""Miniature CenterNet-style keypoint detector and its differentiable interface.

Images are ``(H, W, C)`` float arrays on the 0-255 scale. The detector emits a
per-category logistic heatmap at output stride ``R`` plus a 2-channel size map
(box width/height in heatmap units).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from catattack.errors import InvalidImageError, NumericalBlowupError

STRIDE = 4
CATEGORIES = ("circle", "square", "triangle", "cross")
NUM_CLASSES = len(CATEGORIES)
PIXEL_MIN = 0.0
PIXEL_MAX = 255.0


class Detector(Protocol):
    """What the attacks need from a detector.

    ``scores`` maps an ``(H, W, C)`` float64 tensor on the 0-255 scale to the
    ``(H/R, W/R, n)`` per-pixel category score (logit) vectors; the heatmap is
    their logistic. It must be differentiable w.r.t. its input.
    """

    stride: int
    num_classes: int

    def scores(self, x: torch.Tensor) -> torch.Tensor: ...


@dataclass(frozen=True)
class Heatmap:
    scores: np.ndarray
    stride: int = STRIDE

    def __post_init__(self):
        if self.scores.ndim != 3:
            raise ValueError(f"heatmap must be (h, w, n), got {self.scores.shape}")

    @property
    def categories(self) -> int:
        return self.scores.shape[2]

    @property
    def shape(self):
        return self.scores.shape


class ToyCenterNet(nn.Module):
    """Encoder-decoder convnet with stride-4 heatmap and size heads.

    Activations are SiLU so the input gradient is smooth, which keeps
    central finite differences meaningful.
    """

    def __init__(self, num_classes: int = NUM_CLASSES, channels=(16, 32, 48)):
        super().__init__()
        c0, c1, c2 = channels
        self.channels = tuple(channels)
        self.num_classes = num_classes
        self.stem = nn.Sequential(
            nn.Conv2d(3, c0, 3, 2, 1), nn.SiLU(),
            nn.Conv2d(c0, c1, 3, 2, 1), nn.SiLU(),
            nn.Conv2d(c1, c1, 3, 1, 1), nn.SiLU(),
        )
        self.down = nn.Sequential(
            nn.Conv2d(c1, c2, 3, 2, 1), nn.SiLU(),
            nn.Conv2d(c2, c2, 3, 1, 2, dilation=2), nn.SiLU(),
        )
        self.lateral = nn.Conv2d(c2, c1, 1)
        self.fuse = nn.Sequential(nn.Conv2d(c1, c1, 3, 1, 1), nn.SiLU())
        self.heat = nn.Conv2d(c1, num_classes, 1)
        self.size = nn.Conv2d(c1, 2, 1)
        # focal-loss prior: initial heat ~0.1 everywhere
        nn.init.constant_(self.heat.bias, -2.19)

    def forward(self, x):
        """``x``: (B, 3, H, W) in [0, 1]. Returns heat logits and sizes."""
        f = self.stem(x)
        d = self.down(f)
        up = F.interpolate(self.lateral(d), size=f.shape[-2:], mode="bilinear",
                           align_corners=False)
        g = self.fuse(f + up)
        return self.heat(g), self.size(g)


class KeypointDetector:
    """Float64 inference wrapper around a trained :class:`ToyCenterNet`.

    Immutable after construction; safe to share read-only between threads.
    """

    stride = STRIDE

    def __init__(self, net: ToyCenterNet, seed: int | None = None, meta: dict | None = None):
        self.net = net.double().eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.num_classes = net.num_classes
        self.seed = seed
        self.meta = dict(meta or {})

    def _run(self, x: torch.Tensor):
        batched = x.dim() == 4
        xb = x if batched else x.unsqueeze(0)
        logits, size = self.net(xb.permute(0, 3, 1, 2) / PIXEL_MAX)
        logits = logits.permute(0, 2, 3, 1)
        size = size.permute(0, 2, 3, 1)
        if not batched:
            logits, size = logits[0], size[0]
        return logits, size

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x)[0]

    def heatmap(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self._run(x)[0])

    def outputs(self, x: torch.Tensor):
        logits, size = self._run(x)
        return torch.sigmoid(logits), size

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.net.state_dict().items()}


def validate_image(image, stride: int = STRIDE) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidImageError(f"image must be (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    if h <= 0 or w <= 0 or h % stride or w % stride:
        raise InvalidImageError(f"image size {h}x{w} is not a multiple of stride {stride}")
    if not np.all(np.isfinite(arr)):
        raise InvalidImageError("image contains non-finite values")
    if arr.min() < PIXEL_MIN or arr.max() > PIXEL_MAX:
        raise InvalidImageError("pixel values must lie in [0, 255]")
    return arr


def as_tensor(image) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        return image.to(torch.float64)
    return torch.as_tensor(np.asarray(image, dtype=np.float64))


def forward(model: KeypointDetector, image) -> tuple[Heatmap, np.ndarray]:
    """Run the detector on one image; returns the heatmap and the size map."""
    arr = validate_image(image, model.stride)
    with torch.no_grad():
        heat, size = model.outputs(torch.from_numpy(arr))
    return Heatmap(heat.numpy().copy(), model.stride), size.numpy().copy()


def heatmap_of(model: Detector, x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(model.scores(x))


def score_gradient(model: Detector, image,
                   loss: Callable[[torch.Tensor], torch.Tensor]) -> np.ndarray:
    """Exact gradient of ``loss(heatmap)`` with respect to the input pixels."""
    x = as_tensor(image).detach().clone().requires_grad_(True)
    value = loss(heatmap_of(model, x))
    if not torch.is_tensor(value) or not value.requires_grad:
        # constant loss
        value_f = float(value)
        if not np.isfinite(value_f):
            raise NumericalBlowupError(f"loss is not finite: {value_f}")
        return np.zeros(tuple(x.shape))
    if not torch.isfinite(value).all():
        raise NumericalBlowupError(f"loss is not finite: {value.item()}")
    (grad,) = torch.autograd.grad(value, x, allow_unused=True)
    if grad is None:
        return np.zeros(tuple(x.shape))
    return grad.numpy().copy()
