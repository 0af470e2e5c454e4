"""Sparse Category-wise Attack.

Per outer iteration the category with the largest softmax mass over its target
pixels is attacked: a category-wise DeepFool run gives a dense boundary point,
the boundary is linearised there, and a greedy box-constrained linear solver
reaches that hyperplane by touching as few coordinates as possible. Pixels that
stop being detected are pruned until every category's set is empty.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from catattack.attacks.box import linf_box
from catattack.attacks.report import AttackReport
from catattack.detector.model import PIXEL_MAX, Detector, as_tensor, validate_image
from catattack.errors import DegenerateBoundaryError
from catattack.targets import (
    T_ATTACK,
    category_score_from_scores,
    pixel_index,
    select_targets,
    still_detected,
)

log = logging.getLogger(__name__)

REMOVAL_MODES = ("argmax", "threshold", "combined")
SCORE_MODES = ("sum", "difference")
DEGENERATE_NORM = 1e-12


@dataclass
class ScaConfig:
    t_attack: float = T_ATTACK
    eps_S: float = 0.1
    M_S: int = 20
    overshoot: float = 0.02
    df_max_iters: int = 50
    outer_guard: int = 200
    removal_mode: str = "threshold"
    deepfool_score_mode: str = "difference"

    def __post_init__(self):
        if not 0 <= self.eps_S <= 1:
            raise ValueError("eps_S must lie in [0, 1]")
        if self.M_S < 1:
            raise ValueError("M_S must be >= 1")
        if self.overshoot < 0:
            raise ValueError("overshoot must be >= 0")
        if not 0 < self.t_attack < 1:
            raise ValueError("t_attack must lie in (0, 1)")
        if self.removal_mode not in REMOVAL_MODES:
            raise ValueError(f"removal_mode must be one of {REMOVAL_MODES}")
        if self.deepfool_score_mode not in SCORE_MODES:
            raise ValueError(f"deepfool_score_mode must be one of {SCORE_MODES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class Hyperplane:
    normal: np.ndarray
    anchor: np.ndarray

    def side(self, x) -> float:
        return float(np.dot(self.normal.ravel(), np.ravel(x) - self.anchor.ravel()))


@dataclass
class DeepFoolResult:
    x_boundary: np.ndarray
    iterations: int
    complete: bool
    surviving: list


@dataclass
class SolverResult:
    x: np.ndarray
    crossed: bool
    changed: int
    margin: float


def _scores(model: Detector, x: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return model.scores(x)


def removal_keep(s_before: torch.Tensor, s_after: torch.Tensor, pixels, category: int,
                 t_attack: float = T_ATTACK, mode: str = "combined") -> list:
    """RemovePixels on precomputed score maps; returns the pixels that survive."""
    if not pixels:
        return []
    rows, cols = pixel_index(pixels)
    after = s_after[rows, cols]
    keep_arg = torch.argmax(after, dim=-1) == torch.argmax(s_before[rows, cols], dim=-1)
    keep_thr = torch.sigmoid(after[:, category]) > t_attack
    if mode == "argmax":
        keep = keep_arg
    elif mode == "threshold":
        keep = keep_thr
    elif mode == "combined":
        keep = keep_arg & keep_thr
    else:
        raise ValueError(f"unknown removal mode {mode!r}")
    return [p for p, k in zip(pixels, keep.tolist()) if k]


def remove_pixels(model: Detector, x_before, x_after, pixels, category: int,
                  t_attack: float = T_ATTACK, mode: str = "combined") -> list:
    """Keep the pixels of ``pixels`` that are still attacked-category detections.

    ``argmax``: argmax at ``x_after`` equals argmax at ``x_before``.
    ``threshold``: the ``category`` heatmap value at ``x_after`` still exceeds ``t_attack``.
    ``combined``: both hold (a pixel leaves when either criterion clears).
    """
    if not pixels:
        return []
    s0 = _scores(model, as_tensor(x_before))
    s1 = _scores(model, as_tensor(x_after))
    return removal_keep(s0, s1, pixels, category, t_attack, mode)


def _category_sums_and_grads(model: Detector, x: torch.Tensor, pixels):
    """Per-category score sums over ``pixels`` and their input gradients, (n,) and (n, *x)."""
    xg = x.detach().clone().requires_grad_(True)
    scores = model.scores(xg)
    rows, cols = pixel_index(pixels)
    sums = scores[rows, cols].sum(0)
    eye = torch.eye(sums.shape[0], dtype=sums.dtype)
    (grads,) = torch.autograd.grad(sums, xg, grad_outputs=eye, is_grads_batched=True)
    return sums.detach(), grads, scores.detach()


def cw_deepfool(model: Detector, image, pixels, target_category: int, guard: int = 50,
                t_attack: float = T_ATTACK, removal_mode: str = "threshold",
                score_mode: str = "difference") -> DeepFoolResult:
    """Category-wise DeepFool: dense minimal-L2 steps until the set is defeated.

    ``score_mode="sum"`` uses ``score_k = sum f_k``; ``"difference"`` uses the
    classical ``sum (f_k - f_target)``. The point is not clipped to the pixel box.
    """
    x = as_tensor(image).detach().clone()
    current = list(pixels)
    steps = 0
    while current and steps < guard:
        sums, grads, s_x = _category_sums_and_grads(model, x, current)
        best, best_k = None, None
        for k in range(sums.shape[0]):
            if k == target_category:
                continue
            w_k = grads[k] - grads[target_category]
            norm = float(torch.linalg.vector_norm(w_k))
            if norm == 0.0:
                continue
            score = sums[k] if score_mode == "sum" else sums[k] - sums[target_category]
            ratio = abs(float(score)) / norm
            if best is None or ratio < best:
                best, best_k = ratio, k
        if best_k is None:
            break
        w_l = grads[best_k] - grads[target_category]
        score_l = sums[best_k] if score_mode == "sum" else sums[best_k] - sums[target_category]
        pert = abs(float(score_l)) / float(torch.sum(w_l * w_l)) * w_l
        x_next = x + pert
        current = removal_keep(s_x, _scores(model, x_next), current, target_category,
                               t_attack, removal_mode)
        x = x_next
        steps += 1
    return DeepFoolResult(x.numpy().copy(), steps, not current, current)


def boundary_gradient(model: Detector, x_boundary, image, pixels) -> np.ndarray:
    """Unnormalised boundary normal ``w'``: gradient at ``x_boundary`` of the summed
    boundary-point-label scores minus the summed clean-label scores over ``pixels``."""
    xb = as_tensor(x_boundary).detach().clone().requires_grad_(True)
    rows, cols = pixel_index(pixels)
    clean_labels = torch.argmax(_scores(model, as_tensor(image))[rows, cols], dim=-1)
    vals = model.scores(xb)[rows, cols]
    adv_labels = torch.argmax(vals.detach(), dim=-1)
    idx = torch.arange(len(pixels))
    objective = vals[idx, adv_labels].sum() - vals[idx, clean_labels].sum()
    if not objective.requires_grad:
        return np.zeros(tuple(xb.shape))
    (w,) = torch.autograd.grad(objective, xb)
    return w.numpy().copy()


def approx_boundary(model: Detector, x_boundary, image, pixels) -> Hyperplane:
    """Linearised boundary at ``x_boundary``: :func:`boundary_gradient`, L2-normalised."""
    w = boundary_gradient(model, x_boundary, image, pixels)
    norm = float(np.linalg.norm(w))
    if norm < DEGENERATE_NORM:
        raise DegenerateBoundaryError(f"boundary normal norm {norm:.3g} below {DEGENERATE_NORM}")
    return Hyperplane(w / norm, np.asarray(x_boundary, dtype=np.float64).copy())


def threshold_boundary(model: Detector, x_boundary, pixels, category: int) -> Hyperplane:
    """Fallback plane for pixels defeated by the threshold rather than by a label
    flip: the linearised level set of ``sum f_category`` through ``x_boundary``,
    oriented towards lower scores."""
    xb = as_tensor(x_boundary).detach().clone().requires_grad_(True)
    rows, cols = pixel_index(pixels)
    objective = -model.scores(xb)[rows, cols, category].sum()
    (w,) = torch.autograd.grad(objective, xb)
    norm = float(torch.linalg.vector_norm(w))
    if norm < DEGENERATE_NORM:
        raise DegenerateBoundaryError(f"threshold normal norm {norm:.3g} below {DEGENERATE_NORM}")
    return Hyperplane((w / norm).numpy().copy(), xb.detach().numpy().copy())


def pixel_bounds(clean, eps_S: float) -> tuple[np.ndarray, np.ndarray]:
    return linf_box(clean, eps_S * PIXEL_MAX)


def linear_solver(x, plane: Hyperplane, lower, upper, overshoot: float = 0.0) -> SolverResult:
    """Greedy sparse move from ``x`` onto the half-space ``w^T (x' - x^B) >= 0``.

    Coordinates are taken in decreasing ``|w|``; each is pushed along ``sign(w)``
    to close the remaining gap, and saturated coordinates hand the rest of the
    gap to the next one. The displacement is then scaled by ``1 + overshoot`` and
    re-clipped to ``[lower, upper]``.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    xf = x.ravel()
    w = plane.normal.ravel()
    lo = np.broadcast_to(np.asarray(lower, dtype=np.float64), shape).ravel()
    hi = np.broadcast_to(np.asarray(upper, dtype=np.float64), shape).ravel()
    gap = -float(np.dot(w, xf - plane.anchor.ravel()))
    if gap <= 0:
        return SolverResult(x.copy(), True, 0, -gap)
    active = np.flatnonzero(w != 0)
    order = active[np.argsort(-np.abs(w[active]), kind="stable")]
    wo = w[order]
    room = np.where(wo > 0, hi[order] - xf[order], xf[order] - lo[order]).clip(min=0.0)
    contrib = np.abs(wo) * room
    cum = np.cumsum(contrib)
    new = xf.copy()
    hit = np.flatnonzero(cum >= gap)
    if hit.size == 0:
        sat = order
        new[sat] = np.where(w[sat] > 0, hi[sat], lo[sat])
        crossed = False
    else:
        m = int(hit[0])
        sat = order[:m]
        new[sat] = np.where(w[sat] > 0, hi[sat], lo[sat])
        remaining = gap - (cum[m - 1] if m > 0 else 0.0)
        i = order[m]
        new[i] = xf[i] + np.sign(w[i]) * remaining / abs(w[i])
        crossed = True
    if overshoot:
        new = xf + (1.0 + overshoot) * (new - xf)
    new = np.clip(new, lo, hi)
    margin = float(np.dot(w, new - plane.anchor.ravel()))
    changed = int(np.count_nonzero(new != xf))
    return SolverResult(new.reshape(shape), crossed, changed, margin)


def _inner_step(model, x, x_boundary, image, pixels, category, lower, upper, overshoot):
    """One sparse step towards the boundary. Planes are tried in order: the
    linearised boundary, then the threshold plane; a plane that leaves x where
    it is (degenerate, or x already on its far side) is skipped, and the last
    resort is the dense DeepFool point clipped to the box."""
    planes = (lambda: approx_boundary(model, x_boundary, image, pixels),
              lambda: threshold_boundary(model, x_boundary, pixels, category))
    for tried, make in enumerate(planes):
        try:
            x_new = linear_solver(x, make(), lower, upper, overshoot).x
        except DegenerateBoundaryError:
            continue
        if not np.array_equal(x_new, x):
            return x_new, tried
    return np.clip(x_boundary, lower, upper), len(planes)


def sca_attack(model: Detector, image, config: ScaConfig | None = None,
               trace: bool = False) -> AttackReport:
    cfg = config or ScaConfig()
    start = time.perf_counter()
    clean = validate_image(image, model.stride)
    x0 = torch.from_numpy(clean)
    lower, upper = pixel_bounds(clean, cfg.eps_S)
    s0 = _scores(model, x0)
    targets = select_targets(torch.sigmoid(s0).numpy(), cfg.t_attack)
    sets = {k: list(v) for k, v in targets.sets.items()}
    initial = targets.total()

    x = x0.clone()
    outer = inner_total = df_steps = incomplete = 0
    fallbacks = [0, 0]
    score_trace = []
    while any(sets.values()) and outer < cfg.outer_guard:
        outer += 1
        scores = {k: category_score_from_scores(_scores(model, x), v, k)
                  for k, v in sets.items() if v}
        K = max(sorted(scores), key=lambda k: scores[k])
        score_trace.append({"category": K, "score": scores[K]})
        p_target = sets[K]
        x_ij = x
        j = 1
        while j <= cfg.M_S and p_target:
            df = cw_deepfool(model, x_ij, p_target, K, cfg.df_max_iters, cfg.t_attack,
                             cfg.removal_mode, cfg.deepfool_score_mode)
            df_steps += df.iterations
            incomplete += not df.complete
            x_new, fell_back = _inner_step(model, x_ij.numpy(), df.x_boundary, x0, p_target, K,
                                           lower, upper, cfg.overshoot)
            if fell_back:
                fallbacks[fell_back - 1] += 1
            x_new = torch.from_numpy(x_new)
            p_target = removal_keep(_scores(model, x_ij), _scores(model, x_new), p_target, K,
                                    cfg.t_attack, cfg.removal_mode)
            x_ij = x_new
            j += 1
            inner_total += 1
        sets[K] = p_target
        x = x_ij
        # the point moved: drop pixels of other categories it already defeated
        s_x = _scores(model, x)
        for k in sets:
            if k != K and sets[k]:
                sets[k] = removal_keep(s0, s_x, sets[k], k, cfg.t_attack, cfg.removal_mode)

    adv = x.numpy().copy()
    surviving = sum(len(v) for v in sets.values())
    # pixels leave the sets for good; a later step can bring one back
    details = {"deepfool_steps": df_steps, "threshold_plane_steps": fallbacks[0],
               "dense_steps": fallbacks[1],
               "incomplete_deepfool": incomplete,
               "still_detected": still_detected(s0, _scores(model, x), targets, cfg.t_attack)}
    if trace:
        details["score_trace"] = score_trace
    return AttackReport.build("sca", clean, adv, surviving == 0, outer, initial, surviving,
                              elapsed=time.perf_counter() - start, inner_iterations=inner_total,
                              details=details)
