from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from catattack.detector.model import Heatmap

K_MAX = 32
CONF_THRESHOLD = 0.3


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    category: int
    confidence: float
    peak: tuple[int, int] | None = None

    def to_dict(self):
        return {"box": [float(v) for v in self.box], "category": int(self.category),
                "confidence": float(self.confidence),
                "peak": None if self.peak is None else [int(v) for v in self.peak]}


def local_maxima(scores: np.ndarray) -> np.ndarray:
    """Boolean mask of cells equal to the max of their 3x3 neighbourhood, per channel."""
    h, w = scores.shape[:2]
    padded = np.pad(scores, ((1, 1), (1, 1), (0, 0)), constant_values=-np.inf)
    neigh = np.max(
        np.stack([padded[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)]),
        axis=0,
    )
    return scores >= neigh


def decode_detections(heatmap: Heatmap, sizemap: np.ndarray, k_max: int = K_MAX,
                      conf_threshold: float = CONF_THRESHOLD) -> list[Detection]:
    """Peak decoding: 3x3 local maxima above ``conf_threshold``, best ``k_max`` kept.

    Boxes are centred on the peak cell's footprint and sized by ``sizemap``
    (heatmap units) times the stride; ties go to the lowest row-major index
    of the ``(h, w, n)`` heatmap.
    """
    scores = heatmap.scores
    h, w, n = scores.shape
    r = heatmap.stride
    keep = local_maxima(scores) & (scores >= conf_threshold)
    flat = np.flatnonzero(keep.ravel())
    if flat.size == 0:
        return []
    vals = scores.ravel()[flat]
    order = np.lexsort((flat, -vals))[:k_max]
    img_h, img_w = h * r, w * r
    dets = []
    for idx in flat[order]:
        row, col, cat = np.unravel_index(idx, (h, w, n))
        cx, cy = (col + 0.5) * r, (row + 0.5) * r
        bw = max(float(sizemap[row, col, 0]), 0.0) * r
        bh = max(float(sizemap[row, col, 1]), 0.0) * r
        x1 = min(max(cx - bw / 2, 0.0), img_w - 1.0)
        y1 = min(max(cy - bh / 2, 0.0), img_h - 1.0)
        x2 = max(min(cx + bw / 2, float(img_w)), x1 + 1.0)
        y2 = max(min(cy + bh / 2, float(img_h)), y1 + 1.0)
        dets.append(Detection((x1, y1, x2, y2), int(cat), float(scores[row, col, cat]),
                              (int(row), int(col))))
    return dets
