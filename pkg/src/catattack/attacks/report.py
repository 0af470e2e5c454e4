from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from catattack.metrics import perceptibility


@dataclass
class AttackReport:
    attack: str
    adversarial: np.ndarray
    success: bool
    iterations: int
    targets_initial: int
    targets_surviving: int
    linf: float
    p_l2: float
    p_l0: float
    elapsed: float = 0.0
    inner_iterations: int = 0
    details: dict = field(default_factory=dict)
    steps: list = field(default_factory=list, repr=False)

    @classmethod
    def build(cls, attack, clean, adv, success, iterations, initial, surviving, **kw):
        p_l2, p_l0 = perceptibility(clean, adv)
        linf = float(np.max(np.abs(adv - clean))) if adv.size else 0.0
        return cls(attack, adv, bool(success), int(iterations), int(initial), int(surviving),
                   linf, p_l2, p_l0, **kw)

    def to_record(self, timing: bool = False) -> dict:
        """JSON-able summary without the image; timing is opt-in so records stay reproducible."""
        rec = {
            "attack": self.attack, "success": self.success, "iterations": self.iterations,
            "inner_iterations": self.inner_iterations,
            "targets_initial": self.targets_initial, "targets_surviving": self.targets_surviving,
            "linf": self.linf, "p_l2": self.p_l2, "p_l0": self.p_l0, "details": self.details,
        }
        if timing:
            rec["elapsed"] = self.elapsed
        return rec
