from catattack.attacks.dca import DcaConfig, category_gradient, category_loss, dca_attack
from catattack.attacks.report import AttackReport
from catattack.attacks.sca import (
    Hyperplane,
    ScaConfig,
    approx_boundary,
    cw_deepfool,
    linear_solver,
    pixel_bounds,
    remove_pixels,
    removal_keep,
    sca_attack,
)

__all__ = [
    "AttackReport", "DcaConfig", "Hyperplane", "ScaConfig", "approx_boundary",
    "category_gradient", "category_loss", "cw_deepfool", "dca_attack", "linear_solver",
    "pixel_bounds", "remove_pixels", "removal_keep", "sca_attack",
]
