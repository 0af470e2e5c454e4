"""Dense Category-wise Attack: per-category cross-entropy gradients over the
target sets, each L-inf normalised, summed, and applied as signed steps of
``eps_D / M_D``."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from catattack.attacks.box import linf_box
from catattack.attacks.report import AttackReport
from catattack.attacks.sca import REMOVAL_MODES, removal_keep
from catattack.detector.model import Detector, as_tensor, validate_image
from catattack.errors import EmptyTargetSetError
from catattack.targets import T_ATTACK, pixel_index, select_targets, still_detected

log = logging.getLogger(__name__)

ZERO_GRADIENT = 1e-12


@dataclass
class DcaConfig:
    t_attack: float = T_ATTACK
    eps_D: float = 8.0
    M_D: int = 10
    removal_mode: str = "threshold"

    def __post_init__(self):
        if self.eps_D <= 0:
            raise ValueError("eps_D must be > 0")
        if self.M_D < 1:
            raise ValueError("M_D must be >= 1")
        if not 0 < self.t_attack < 1:
            raise ValueError("t_attack must lie in (0, 1)")
        if self.removal_mode not in REMOVAL_MODES:
            raise ValueError(f"removal_mode must be one of {REMOVAL_MODES}")

    @property
    def step(self) -> float:
        return self.eps_D / self.M_D

    def to_dict(self):
        return asdict(self)


def _loss_from_scores(scores: torch.Tensor, pixels, category: int) -> torch.Tensor:
    if not pixels:
        raise EmptyTargetSetError("category loss needs a non-empty pixel set")
    rows, cols = pixel_index(pixels)
    logp = torch.log_softmax(scores[rows, cols], dim=-1)
    return -logp[:, category].sum()


def category_loss(model: Detector, image, pixels, category: int) -> float:
    """Summed cross-entropy between softmax(f(x, p)) and ``category`` over ``pixels``."""
    with torch.no_grad():
        return float(_loss_from_scores(model.scores(as_tensor(image)), pixels, category))


def category_gradient(model: Detector, image, pixels, category: int,
                      normalize: bool = True) -> np.ndarray:
    """Ascent direction of :func:`category_loss`, scaled to unit L-inf norm.

    A vanishing gradient yields zeros (and a warning) instead of a division by zero.
    """
    x = as_tensor(image).detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(_loss_from_scores(model.scores(x), pixels, category), x)
    return _normalize(g, category).numpy().copy() if normalize else g.numpy().copy()


def _normalize(g: torch.Tensor, category: int) -> torch.Tensor:
    peak = float(g.abs().max())
    if peak < ZERO_GRADIENT:
        log.warning("category %d: gradient vanished (|g|_inf=%.3g), no contribution", category, peak)
        return torch.zeros_like(g)
    return g / peak


def dca_attack(model: Detector, image, config: DcaConfig | None = None,
               record_steps: bool = False) -> AttackReport:
    cfg = config or DcaConfig()
    start = time.perf_counter()
    clean = validate_image(image, model.stride)
    x0 = torch.from_numpy(clean)
    with torch.no_grad():
        s0 = model.scores(x0)
    targets = select_targets(torch.sigmoid(s0).numpy(), cfg.t_attack)
    sets = {k: list(v) for k, v in targets.sets.items()}
    initial = targets.total()
    low, high = map(torch.from_numpy, linf_box(clean, cfg.eps_D))

    x = x0.clone()
    i = 0
    steps = []
    while any(sets.values()) and i < cfg.M_D:
        xg = x.detach().clone().requires_grad_(True)
        s_g = model.scores(xg)
        active = [k for k in sorted(sets) if sets[k]]
        total = torch.zeros_like(x)
        for n, k in enumerate(active):
            loss = _loss_from_scores(s_g, sets[k], k)
            (g,) = torch.autograd.grad(loss, xg, retain_graph=n < len(active) - 1)
            total += _normalize(g, k)
        pert = cfg.step * torch.sign(total)
        # projecting on the eps-ball is a no-op in exact arithmetic; it pins the
        # budget against accumulated float rounding
        x_next = torch.minimum(torch.maximum(x + pert, low), high)
        if record_steps:
            steps.append(pert.numpy().copy())
        with torch.no_grad():
            s_next = model.scores(x_next)
        sets = {k: removal_keep(s_g.detach(), s_next, v, k, cfg.t_attack, cfg.removal_mode)
                for k, v in sets.items()}
        x = x_next
        i += 1

    adv = x.numpy().copy()
    surviving = sum(len(v) for v in sets.values())
    with torch.no_grad():
        revived = still_detected(s0, model.scores(x), targets, cfg.t_attack)
    return AttackReport.build("dca", clean, adv, surviving == 0, i, initial, surviving,
                              elapsed=time.perf_counter() - start, steps=steps,
                              details={"still_detected": revived})
