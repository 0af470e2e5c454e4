"""Attack campaigns: attack every test image, optionally JPEG round-trip the
result, evaluate on one or more detectors and persist reports and artifacts."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from catattack.attacks.dca import dca_attack
from catattack.attacks.sca import sca_attack
from catattack.detector import decode_detections, forward, load_model
from catattack.harness.config import CampaignConfig
from catattack.harness.data import SceneSet, load_dataset
from catattack.harness.jpeg import decode_jpeg, encode_jpeg, to_uint8
from catattack.metrics import (
    EvalResult,
    attack_success_rate,
    attack_transfer_ratio,
    mean_average_precision,
    perceptibility,
)

log = logging.getLogger(__name__)


@dataclass
class ImageOutcome:
    index: int
    name: str
    record: dict
    adversarial: np.ndarray
    evaluated: np.ndarray
    jpeg_bytes: bytes | None
    elapsed: float
    p_l2: float
    p_l0: float


@dataclass
class CampaignResult:
    results: dict
    rows: list
    outcomes: list = field(default_factory=list, repr=False)
    asr_lossless: float | None = None

    @property
    def origin(self) -> EvalResult:
        return next(iter(self.results.values()))


def detect(model, image):
    return decode_detections(*forward(model, image))


def _attack_one(model, cfg: CampaignConfig, index: int, name: str, image: np.ndarray) -> ImageOutcome:
    clean = image.astype(np.float64)
    try:
        if cfg.attack == "sca":
            report = sca_attack(model, clean, cfg.sca)
        else:
            report = dca_attack(model, clean, cfg.dca)
        adv = report.adversarial
        record = report.to_record()
        elapsed = report.elapsed
    except Exception as exc:  # recorded per image, never fatal for the campaign
        log.exception("attack failed on %s", name)
        adv, elapsed = clean.copy(), 0.0
        record = {"attack": cfg.attack, "success": False, "error": repr(exc)}
    if cfg.quantize:
        adv = to_uint8(adv).astype(np.float64)
    p_l2, p_l0 = perceptibility(clean, adv)
    record.update({"p_l2_stored": p_l2, "p_l0_stored": p_l0})
    jpeg_bytes = None
    evaluated = adv
    if cfg.jpeg_quality is not None:
        jpeg_bytes = encode_jpeg(adv, cfg.jpeg_quality)
        evaluated = decode_jpeg(jpeg_bytes)
    return ImageOutcome(index, name, record, adv, evaluated, jpeg_bytes, elapsed, p_l2, p_l0)


def attack_images(model, cfg: CampaignConfig, data: SceneSet) -> list[ImageOutcome]:
    jobs = list(enumerate(zip(data.names, data.images)))
    if cfg.workers == 1:
        return [_attack_one(model, cfg, i, n, im) for i, (n, im) in jobs]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(_attack_one, model, cfg, i, n, im) for i, (n, im) in jobs]
        return sorted((f.result() for f in futures), key=lambda o: o.index)


def evaluate(models: dict, data: SceneSet, outcomes: list[ImageOutcome],
             origin_key: str | None = None):
    """EvalResult per evaluation model; ATR is relative to ``origin_key``'s ASR."""
    p_l2 = float(np.mean([o.p_l2 for o in outcomes])) if outcomes else 0.0
    p_l0 = float(np.mean([o.p_l0 for o in outcomes])) if outcomes else 0.0
    results, per_image = {}, {}
    for key, model in models.items():
        clean_preds = [detect(model, im.astype(np.float64)) for im in data.images]
        adv_preds = [detect(model, o.evaluated) for o in outcomes]
        map_clean, ap_clean = mean_average_precision(clean_preds, data.annotations)
        map_attack, ap_attack = mean_average_precision(adv_preds, data.annotations)
        asr = attack_success_rate(map_clean, map_attack) if map_clean > 0 else float("nan")
        results[key] = EvalResult(map_clean, map_attack, asr, p_l2, p_l0,
                                  per_category_ap=ap_attack, per_category_ap_clean=ap_clean)
        per_image[key] = adv_preds
    origin = results[origin_key or next(iter(results))]
    for res in results.values():
        if origin.asr > 0:
            res.atr = attack_transfer_ratio(res.asr, origin.asr)
    return results, per_image


def run_campaign(cfg: CampaignConfig, data: SceneSet | None = None, models: dict | None = None,
                 persist: bool = True) -> CampaignResult:
    if data is None or models is None:
        cfg.check_paths()
    if data is None:
        data = load_dataset(cfg.data, cfg.limit)
    elif cfg.limit:
        data = data.subset(cfg.limit)
    if models is None:
        models = {str(cfg.model): load_model(cfg.model)}
        for p in cfg.eval_models:
            models.setdefault(str(p), load_model(p))
    origin_key = next(iter(models))
    attack_model = models[origin_key]

    outcomes = attack_images(attack_model, cfg, data)
    results, per_image = evaluate(models, data, outcomes, origin_key)

    asr_lossless = None
    if cfg.jpeg_quality is not None:
        lossless = [detect(attack_model, o.adversarial) for o in outcomes]
        m_l, _ = mean_average_precision(lossless, data.annotations)
        if results[origin_key].map_clean > 0:
            asr_lossless = attack_success_rate(results[origin_key].map_clean, m_l)

    rows = []
    for o in outcomes:
        row = {"index": o.index, "name": o.name, **o.record,
               "detections": [d.to_dict() for d in detect(attack_model, o.adversarial)]}
        if cfg.jpeg_quality is not None:
            row["detections_evaluated"] = {k: [d.to_dict() for d in per_image[k][o.index]]
                                           for k in per_image}
        rows.append(row)
    result = CampaignResult(results, rows, outcomes, asr_lossless)
    if persist:
        write_artifacts(cfg, result)
    return result


def write_artifacts(cfg: CampaignConfig, result: CampaignResult) -> Path:
    out = Path(cfg.out)
    (out / "adv").mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    for o in result.outcomes:
        Image.fromarray(to_uint8(o.adversarial)).save(out / "adv" / f"{o.name}.png")
        if not cfg.quantize:
            np.save(out / "adv" / f"{o.name}.npy", o.adversarial)
        if o.jpeg_bytes is not None:
            (out / "jpeg").mkdir(exist_ok=True)
            (out / "jpeg" / f"{o.name}.jpg").write_bytes(o.jpeg_bytes)
    # provenance: every row carries the settings that produced it; out and
    # workers are left off so a replay elsewhere writes identical bytes
    echo = {k: v for k, v in cfg.to_dict().items() if k not in ("out", "workers")}
    with open(out / "reports.jsonl", "w") as fh:
        for row in result.rows:
            fh.write(json.dumps({**row, "config": echo}, sort_keys=True) + "\n")
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "name", "attack", "seconds"])
        for o in result.outcomes:
            w.writerow([o.index, o.name, cfg.attack, f"{o.elapsed:.6f}"])
    summary = {
        "config": cfg.to_dict(),
        "results": {k: r.to_dict() for k, r in result.results.items()},
        "asr_lossless": result.asr_lossless,
        "images": len(result.rows),
        "success_rate": float(np.mean([r.get("success", False) for r in result.rows]))
        if result.rows else 0.0,
    }
    (out / "result.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    write_summary_csv(out / "summary.csv", [(cfg.attack, summary)])
    return out


SUMMARY_COLUMNS = ["run", "attack", "eval_model", "jpeg_quality", "map_clean", "map_attack",
                   "asr", "atr", "p_l2", "p_l0"]


def write_summary_csv(path, runs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for run, summary in runs:
            cfg = summary["config"]
            for key, res in summary["results"].items():
                w.writerow([run, cfg["attack"], key, cfg["jpeg_quality"] or "",
                            f"{res['map_clean']:.6f}", f"{res['map_attack']:.6f}",
                            f"{res['asr']:.6f}", "" if res["atr"] is None else f"{res['atr']:.6f}",
                            f"{res['p_l2']:.6g}", f"{res['p_l0']:.6g}"])


def aggregate_reports(run_dirs, out_csv) -> Path:
    runs = []
    for d in run_dirs:
        d = Path(d)
        runs.append((d.name, json.loads((d / "result.json").read_text())))
    write_summary_csv(out_csv, runs)
    return Path(out_csv)
