from catattack.detector.decode import CONF_THRESHOLD, K_MAX, Detection, decode_detections
from catattack.detector.io import FORMAT_VERSION, load_model, read_meta, save_model
from catattack.detector.model import (
    CATEGORIES,
    NUM_CLASSES,
    STRIDE,
    Detector,
    Heatmap,
    KeypointDetector,
    ToyCenterNet,
    as_tensor,
    forward,
    heatmap_of,
    score_gradient,
    validate_image,
)
from catattack.detector.train import train_toy_detector

__all__ = [
    "CATEGORIES", "CONF_THRESHOLD", "FORMAT_VERSION", "K_MAX", "NUM_CLASSES", "STRIDE",
    "Detection", "Detector", "Heatmap", "KeypointDetector", "ToyCenterNet", "as_tensor",
    "decode_detections", "forward", "heatmap_of", "load_model", "read_meta", "save_model",
    "score_gradient", "train_toy_detector", "validate_image",
]
