"""Synthetic four-shape detection dataset (circle, square, triangle, cross)."""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from catattack.detector.model import CATEGORIES

IMAGE_SIZE = 96
SUPERSAMPLE = 4
MIN_EXTENT, MAX_EXTENT = 16.0, 34.0
MAX_OBJECTS = 4
DEFAULT_COUNTS = {"train": 2000, "test": 200}


@dataclass
class SyntheticScene:
    image: np.ndarray
    objects: list
    seed: int

    def annotation(self) -> dict:
        return {
            "seed": self.seed,
            "height": int(self.image.shape[0]),
            "width": int(self.image.shape[1]),
            "objects": [{"category": int(c), "name": CATEGORIES[c],
                         "box": [round(float(v), 4) for v in box]} for c, box in self.objects],
        }


@dataclass
class SceneSet:
    images: np.ndarray
    annotations: list
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    def subset(self, n: int) -> "SceneSet":
        return SceneSet(self.images[:n], self.annotations[:n], self.names[:n])


def _scene_seed(seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([seed, zlib.crc32(split.encode()), index])
    return int(ss.generate_state(1)[0])


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(40, 215, size=3)
    coarse = rng.normal(0, 18, size=(6, 6, 3))
    low = np.stack([
        np.asarray(Image.fromarray(coarse[..., c].astype(np.float32), mode="F")
                   .resize((size, size), Image.BICUBIC))
        for c in range(3)
    ], axis=-1)
    grain = rng.normal(0, 4, size=(size, size, 1))
    return np.clip(base + low + grain, 0, 255)


def _polygon(kind: int, cx: float, cy: float, extent: float, rng: np.random.Generator):
    half = extent / 2
    if kind == 1:
        theta = math.radians(rng.uniform(-20, 20))
        # scale so the rotated square's bounding box has the requested extent
        s = half / (abs(math.cos(theta)) + abs(math.sin(theta)))
        pts = [(-s, -s), (s, -s), (s, s), (-s, s)]
        c, si = math.cos(theta), math.sin(theta)
        return [(cx + x * c - y * si, cy + x * si + y * c) for x, y in pts]
    if kind == 2:
        theta = rng.uniform(0, 2 * math.pi)
        pts = [(math.cos(theta + k * 2 * math.pi / 3), math.sin(theta + k * 2 * math.pi / 3))
               for k in range(3)]
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        scale = extent / max(max(xs) - min(xs), max(ys) - min(ys))
        ox, oy = (max(xs) + min(xs)) / 2, (max(ys) + min(ys)) / 2
        return [(cx + (x - ox) * scale, cy + (y - oy) * scale) for x, y in pts]
    if kind == 3:
        t = half * rng.uniform(0.3, 0.45)
        h = half
        pts = [(-t, -h), (t, -h), (t, -t), (h, -t), (h, t), (t, t), (t, h), (-t, h),
               (-t, t), (-h, t), (-h, -t), (-t, -t)]
        return [(cx + x, cy + y) for x, y in pts]
    raise ValueError(kind)


def _box_of(kind, cx, cy, extent, poly):
    if kind == 0:
        r = extent / 2
        return (cx - r, cy - r, cx + r, cy + r)
    xs, ys = [p[0] for p in poly], [p[1] for p in poly]
    return (min(xs), min(ys), max(xs), max(ys))


def _overlaps(box, boxes, margin=2.0):
    return any(not (box[2] + margin <= b[0] or b[2] + margin <= box[0]
                    or box[3] + margin <= b[1] or b[3] + margin <= box[1]) for b in boxes)


def render_scene(seed: int, size: int = IMAGE_SIZE, return_masks: bool = False):
    """Render one scene; optionally also return per-object coverage masks in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = _background(rng, size)
    bg_mean = img.reshape(-1, 3).mean(0)
    n_obj = int(rng.integers(1, MAX_OBJECTS + 1))
    objects, masks = [], []
    big = size * SUPERSAMPLE
    for _ in range(n_obj):
        for _attempt in range(50):
            kind = int(rng.integers(0, len(CATEGORIES)))
            extent = float(rng.uniform(MIN_EXTENT, MAX_EXTENT))
            half = extent / 2
            cx = float(rng.uniform(half + 1, size - half - 1))
            cy = float(rng.uniform(half + 1, size - half - 1))
            poly = None if kind == 0 else _polygon(kind, cx, cy, extent, rng)
            box = _box_of(kind, cx, cy, extent, poly)
            if not _overlaps(box, [b for _, b in objects]):
                break
        else:
            continue
        while True:
            color = rng.uniform(0, 255, size=3)
            if np.linalg.norm(color - bg_mean) > 90:
                break
        layer = Image.new("L", (big, big), 0)
        draw = ImageDraw.Draw(layer)
        if kind == 0:
            draw.ellipse([(cx - half) * SUPERSAMPLE, (cy - half) * SUPERSAMPLE,
                          (cx + half) * SUPERSAMPLE, (cy + half) * SUPERSAMPLE], fill=255)
        else:
            draw.polygon([(x * SUPERSAMPLE, y * SUPERSAMPLE) for x, y in poly], fill=255)
        alpha = np.asarray(layer.resize((size, size), Image.BOX), dtype=np.float64) / 255.0
        img = img * (1 - alpha[..., None]) + color * alpha[..., None]
        objects.append((kind, box))
        masks.append(alpha)
    scene = SyntheticScene(np.clip(np.rint(img), 0, 255).astype(np.uint8), objects, seed)
    return (scene, masks) if return_masks else scene


def generate_scenes(count: int, seed: int = 0, split: str = "test") -> list[SyntheticScene]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [render_scene(_scene_seed(seed, split, i)) for i in range(count)]


def generate_dataset(out_dir, count: int, seed: int = 0, split: str = "test") -> Path:
    """Write ``count`` scenes as PNG + JSON sidecar pairs under ``out_dir/split``."""
    root = Path(out_dir) / split
    root.mkdir(parents=True, exist_ok=True)
    names = []
    for i, scene in enumerate(generate_scenes(count, seed, split)):
        name = f"{i:05d}"
        Image.fromarray(scene.image).save(root / f"{name}.png")
        (root / f"{name}.json").write_text(json.dumps(scene.annotation(), sort_keys=True, indent=1))
        names.append(name)
    manifest = {"count": count, "seed": seed, "split": split, "names": names,
                "categories": list(CATEGORIES), "image_size": IMAGE_SIZE}
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return root


def load_annotation(path) -> list:
    data = json.loads(Path(path).read_text())
    return [(o["category"], tuple(o["box"])) for o in data["objects"]]


def load_dataset(split_dir, limit: int | None = None) -> SceneSet:
    root = Path(split_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    names = manifest["names"][:limit] if limit else manifest["names"]
    images = np.stack([np.asarray(Image.open(root / f"{n}.png").convert("RGB")) for n in names])
    annotations = [load_annotation(root / f"{n}.json") for n in names]
    return SceneSet(images, annotations, list(names))


def scenes_to_set(scenes: list[SyntheticScene]) -> SceneSet:
    return SceneSet(np.stack([s.image for s in scenes]), [s.objects for s in scenes],
                    [f"{i:05d}" for i in range(len(scenes))])
