"""Evaluation suite: VOC-style mAP, attack success / transfer ratios and perceptibility."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from catattack.errors import UndefinedMetricError

CHANGE_THRESHOLD = 0.5  # on the 0-255 scale


@dataclass
class EvalResult:
    map_clean: float
    map_attack: float
    asr: float
    p_l2: float
    p_l0: float
    atr: float | None = None
    per_category_ap: dict = field(default_factory=dict)
    per_category_ap_clean: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def box_iou(a, b) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(ix2 - ix1, 0.0) * max(iy2 - iy1, 0.0)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def ap_from_matches(tp: np.ndarray, n_gt: int) -> float:
    """All-points interpolated AP from a confidence-sorted TP indicator sequence."""
    if n_gt == 0:
        return 1.0 if len(tp) == 0 else 0.0
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _match_category(preds, gts, iou_threshold):
    """Greedy confidence-descending matching. ``preds``: (image, conf, box) triples."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1], i))
    used = {}
    tp = np.zeros(len(preds))
    for rank, i in enumerate(order):
        img, _, box = preds[i]
        cands = gts.get(img, [])
        best, best_j = -1.0, -1
        for j, g in enumerate(cands):
            iou = box_iou(box, g)
            if iou > best:
                best, best_j = iou, j
        # VOC rule: the best-overlap GT only; if it is taken this is a false positive
        if best >= iou_threshold and not used.get((img, best_j)):
            used[(img, best_j)] = True
            tp[rank] = 1.0
    return tp


def mean_average_precision(predictions, ground_truth, iou_threshold: float = 0.5,
                           num_classes: int | None = None):
    """mAP at one IoU threshold over a set of images.

    ``predictions``: per image, a list of ``(category, confidence, box)`` (or
    :class:`~catattack.detector.Detection`). ``ground_truth``: per image, a list of
    ``(category, box)``. The mean runs over categories present in the ground truth;
    categories with predictions but no ground truth score 0 in the per-category map.
    """
    if not 0 < iou_threshold < 1:
        raise ValueError("iou_threshold must lie in (0, 1)")
    preds_by_cat: dict[int, list] = {}
    gts_by_cat: dict[int, dict] = {}
    n_gt: dict[int, int] = {}
    for img, dets in enumerate(predictions):
        for d in dets:
            if hasattr(d, "category"):
                cat, conf, box = d.category, d.confidence, d.box
            else:
                cat, conf, box = d
            preds_by_cat.setdefault(int(cat), []).append((img, float(conf), tuple(box)))
    for img, objs in enumerate(ground_truth):
        for cat, box in objs:
            gts_by_cat.setdefault(int(cat), {}).setdefault(img, []).append(tuple(box))
            n_gt[int(cat)] = n_gt.get(int(cat), 0) + 1
    cats = set(preds_by_cat) | set(n_gt)
    if num_classes is not None:
        cats |= set(range(num_classes)) & set(n_gt)
    per_cat = {}
    for cat in sorted(cats):
        preds = preds_by_cat.get(cat, [])
        tp = _match_category(preds, gts_by_cat.get(cat, {}), iou_threshold)
        per_cat[cat] = ap_from_matches(tp, n_gt.get(cat, 0))
    present = [c for c in per_cat if n_gt.get(c, 0) > 0]
    if not present:
        # nothing to find: perfect unless something was predicted
        return (1.0 if not preds_by_cat else 0.0), per_cat
    return float(np.mean([per_cat[c] for c in present])), per_cat


def attack_success_rate(map_clean: float, map_attack: float) -> float:
    if map_clean <= 0:
        raise UndefinedMetricError("ASR is undefined when the clean mAP is 0")
    return 1.0 - map_attack / map_clean


def attack_transfer_ratio(asr_target: float, asr_origin: float) -> float:
    if asr_origin <= 0:
        raise UndefinedMetricError("ATR is undefined for a non-positive origin ASR")
    return asr_target / asr_origin


def perceptibility(clean, adv) -> tuple[float, float]:
    """``(p_l2, p_l0)``: RMS perturbation on the [0, 1] scale, and the fraction of
    pixel locations where any channel moved by more than 0.5/255."""
    clean = np.asarray(clean, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if clean.shape != adv.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {adv.shape}")
    r = (adv - clean) / 255.0
    p_l2 = float(np.sqrt(np.mean(r ** 2)))
    diff = np.abs(adv - clean)
    changed = diff.max(axis=-1) > CHANGE_THRESHOLD if diff.ndim == 3 else diff > CHANGE_THRESHOLD
    return p_l2, float(changed.mean())
