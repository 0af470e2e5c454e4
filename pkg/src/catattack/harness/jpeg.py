from __future__ import annotations

import io

import numpy as np
from PIL import Image

DEFAULT_QUALITY = 85


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64)), 0, 255).astype(np.uint8)


def encode_jpeg(image, quality: int = DEFAULT_QUALITY) -> bytes:
    if not 1 <= int(quality) <= 100:
        raise ValueError("JPEG quality must lie in [1, 100]")
    buf = io.BytesIO()
    # baseline, 4:4:4 so chroma is not the dominant loss on 96px images
    Image.fromarray(to_uint8(image)).save(buf, format="JPEG", quality=int(quality),
                                          subsampling=0, optimize=False, progressive=False)
    return buf.getvalue()


def decode_jpeg(data: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(data)).convert("RGB"), dtype=np.float64)


def jpeg_roundtrip(image, quality: int = DEFAULT_QUALITY) -> np.ndarray:
    """Baseline JPEG encode/decode; the input is rounded to 8 bits first."""
    return decode_jpeg(encode_jpeg(image, quality))
