"""Per-element pixel boxes that respect an L-inf radius exactly in float64."""
from __future__ import annotations

import numpy as np

from catattack.detector.model import PIXEL_MAX, PIXEL_MIN


def linf_box(clean, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """``[lo, hi]`` = ``[0, 255]`` intersected with ``clean -/+ radius``, shrunk by ulps where
    needed so that every value ``v`` in the box has ``|fl(v - clean)| <= radius``."""
    clean = np.asarray(clean, dtype=np.float64)
    lo = np.maximum(PIXEL_MIN, clean - radius)
    hi = np.minimum(PIXEL_MAX, clean + radius)
    while True:
        bad = hi - clean > radius
        if not bad.any():
            break
        hi = np.where(bad, np.nextafter(hi, -np.inf), hi)
    while True:
        bad = clean - lo > radius
        if not bad.any():
            break
        lo = np.where(bad, np.nextafter(lo, np.inf), lo)
    return lo, hi
