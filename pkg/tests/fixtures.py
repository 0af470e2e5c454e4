"""Hand-built detectors and PR-curve oracles shared by the tests."""
from __future__ import annotations

import itertools

import numpy as np
import torch

from catattack.attacks.sca import Hyperplane, pixel_bounds


class AffineDetector:
    """Scores affine in the image: ``f[r, c, k] = <W[r, c, k], x> + b[r, c, k]``.

    Gradients and decision boundaries are available in closed form, which
    makes it the oracle for the DeepFool / boundary / set-refresh tests.
    """

    stride = 4

    def __init__(self, weight: np.ndarray, bias: np.ndarray, scale: float = 1.0):
        self.W = torch.as_tensor(weight, dtype=torch.float64)
        self.b = torch.as_tensor(bias, dtype=torch.float64)
        self.scale = scale
        self.num_classes = self.W.shape[2]

    @classmethod
    def random(cls, rng: np.random.Generator, size: int = 8, n: int = 2, scale: float = 1.0):
        h = size // cls.stride
        weight = rng.normal(0, 0.01, size=(h, h, n, size, size, 3))
        bias = rng.normal(0, 1.0, size=(h, h, n))
        return cls(weight, bias, scale)

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        return self.scale * (torch.einsum("ijkabc,abc->ijk", self.W, x) + self.b)

    def heatmap(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.scores(x))

    def grad(self, r, c, k) -> np.ndarray:
        return self.scale * self.W[r, c, k].numpy()


class TableDetector:
    """Returns a fixed score map per registered image (keyed by its first pixel)."""

    stride = 4

    def __init__(self, maps: dict[float, np.ndarray]):
        self.maps = {k: torch.as_tensor(v, dtype=torch.float64) for k, v in maps.items()}
        self.num_classes = next(iter(maps.values())).shape[2]

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        return self.maps[float(x[0, 0, 0])]


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def brute_force_ap(confidences, is_tp, n_gt: int) -> float:
    """All-points AP from scratch: every prefix of the ranking is a PR point,
    precision is made monotone by a max over all later points."""
    order = sorted(range(len(confidences)), key=lambda i: -confidences[i])
    points = []
    tp = fp = 0
    for i in order:
        tp += bool(is_tp[i])
        fp += not is_tp[i]
        points.append((tp / n_gt, tp / (tp + fp)))
    ap, prev_recall = 0.0, 0.0
    for recall, _ in points:
        if recall > prev_recall:
            best = max(p for r, p in points if r >= recall)
            ap += (recall - prev_recall) * best
            prev_recall = recall
    return ap


def min_support_oracle(x, w, anchor, lo, hi):
    """Smallest number of coordinates that can reach ``w.(x' - anchor) >= 0``
    inside the box, by exhaustive search over supports; None if impossible."""
    x, w, anchor, lo, hi = map(np.asarray, (x, w, anchor, lo, hi))
    gap = -float(np.dot(w, x - anchor))
    if gap <= 0:
        return 0
    gain = np.where(w > 0, w * (hi - x), w * (lo - x))
    for k in range(1, len(x) + 1):
        for support in itertools.combinations(range(len(x)), k):
            if gain[list(support)].sum() >= gap - 1e-12:
                return k
    return None


def assert_matches_fd(fn, grad, x, rng, n: int = 20, h: float = 0.5, rtol: float = 1e-3,
                      atol: float = 1e-5) -> float:
    """Central differences of ``fn`` at ``n`` random coordinates of ``x`` against ``grad``.

    Entries with |analytic| < 1e-6 are compared absolutely. Returns the max relative error.
    """
    worst = 0.0
    for _ in range(n):
        c = tuple(int(rng.integers(0, s)) for s in x.shape)
        e = np.zeros_like(x)
        e[c] = h
        fd = (fn(x + e) - fn(x - e)) / (2 * h)
        an = grad[c]
        if abs(an) < 1e-6:
            assert abs(fd - an) < atol, (c, fd, an)
        else:
            err = abs(fd - an) / abs(an)
            worst = max(worst, err)
            assert err < rtol, (c, fd, an)
    return worst


def random_plane_instance(rng, d):
    """Random point, box and unit-normal hyperplane in ``d`` coordinates."""
    x = rng.uniform(0, 255, d)
    lo, hi = pixel_bounds(x.reshape(1, -1), rng.uniform(0.02, 0.5))
    w = rng.normal(size=d)
    w[rng.random(d) < 0.1] = 0.0
    if not w.any():
        w[0] = 1.0
    w /= np.linalg.norm(w)
    anchor = x + rng.normal(0, 30, d)
    return x, Hyperplane(w, anchor), lo.ravel(), hi.ravel()


def removal_oracle(before, after, pixels, k, t, mode):
    """Pixels kept by RemovePixels, re-evaluated one at a time from the heatmaps."""
    out = []
    for r, c in pixels:
        same = int(np.argmax(after[r, c])) == int(np.argmax(before[r, c]))
        above = after[r, c, k] > t
        keep = {"argmax": same, "threshold": above, "combined": same and above}[mode]
        if keep:
            out.append((r, c))
    return out
