"""Category-wise target pixel sets: every heatmap cell above the attack threshold,
filed under its argmax category (detected peaks and their "potential" neighbours)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from catattack.detector.model import Detector, Heatmap, as_tensor
from catattack.errors import EmptyTargetSetError

T_ATTACK = 0.1

Pixel = tuple[int, int]


@dataclass
class TargetPixelSet:
    sets: dict[int, list[Pixel]] = field(default_factory=dict)
    threshold_used: float = T_ATTACK

    def __getitem__(self, category: int) -> list[Pixel]:
        return self.sets.get(category, [])

    def categories(self) -> list[int]:
        return sorted(k for k, v in self.sets.items() if v)

    def is_empty(self) -> bool:
        return not any(self.sets.values())

    def total(self) -> int:
        return sum(len(v) for v in self.sets.values())

    def copy(self) -> "TargetPixelSet":
        return TargetPixelSet({k: list(v) for k, v in self.sets.items()}, self.threshold_used)

    def to_dict(self):
        return {str(k): [list(p) for p in v] for k, v in sorted(self.sets.items())}


def select_targets(heatmap, t_attack: float = T_ATTACK) -> TargetPixelSet:
    scores = heatmap.scores if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    if not 0 < t_attack < 1:
        raise ValueError("t_attack must lie in (0, 1)")
    labels = np.argmax(scores, axis=-1)  # lowest index wins ties
    best = np.take_along_axis(scores, labels[..., None], axis=-1)[..., 0]
    rows, cols = np.nonzero(best > t_attack)
    sets: dict[int, list[Pixel]] = {}
    for r, c in zip(rows.tolist(), cols.tolist()):
        sets.setdefault(int(labels[r, c]), []).append((r, c))
    return TargetPixelSet(sets, t_attack)


def still_detected(clean_scores, scores, targets: TargetPixelSet, t_attack: float = T_ATTACK) -> int:
    """How many of ``targets`` (picked on the clean image) would still pass as their
    category at ``scores``: same argmax as on the clean image and above ``t_attack``."""
    count = 0
    for k, pixels in targets.sets.items():
        if not pixels:
            continue
        rows, cols = pixel_index(pixels)
        after = scores[rows, cols]
        same = torch.argmax(after, dim=-1) == torch.argmax(clean_scores[rows, cols], dim=-1)
        count += int((same & (torch.sigmoid(after[:, k]) > t_attack)).sum())
    return count


def pixel_index(pixels):
    rows = torch.tensor([p[0] for p in pixels], dtype=torch.long)
    cols = torch.tensor([p[1] for p in pixels], dtype=torch.long)
    return rows, cols


def category_score_from_scores(scores: torch.Tensor, pixels, category: int) -> float:
    if not pixels:
        raise EmptyTargetSetError("category score needs a non-empty pixel set")
    rows, cols = pixel_index(pixels)
    return float(torch.softmax(scores[rows, cols], dim=-1)[:, category].sum())


def category_score(model: Detector, image, pixels, category: int) -> float:
    """Sum over ``pixels`` of the softmax (over categories) component for ``category``."""
    with torch.no_grad():
        scores = model.scores(as_tensor(image))
    return category_score_from_scores(scores, pixels, category)
