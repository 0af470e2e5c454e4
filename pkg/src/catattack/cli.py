"""Command line entry point: ``catattack <command> ...``.

Exit status is 0 when the requested job ran to completion, whatever the
resulting attack success rate; 1 on a runtime error; 2 on bad usage.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger("catattack")


def _campaign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI campaign file; flags override its values")
    p.add_argument("--attack", choices=["sca", "dca"])
    p.add_argument("--data", type=Path, help="dataset split directory (with manifest.json)")
    p.add_argument("--model", type=Path, help="model archive the attack is run against")
    p.add_argument("--out", type=Path, help="output directory for the run")
    p.add_argument("--eval-model", type=Path, action="append", default=None,
                   help="extra evaluation model (repeatable)")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--quantize", action="store_true", default=None,
                   help="round adversarial images to 8 bits before evaluation")
    g = p.add_argument_group("attack parameters")
    g.add_argument("--t-attack", type=float)
    g.add_argument("--removal-mode", choices=["argmax", "threshold", "combined"])
    g.add_argument("--eps-s", type=float, help="SCA per-pixel budget, fraction of 255")
    g.add_argument("--m-s", type=int, help="SCA inner iteration cap")
    g.add_argument("--overshoot", type=float)
    g.add_argument("--score-mode", choices=["sum", "difference"], help="DeepFool score")
    g.add_argument("--eps-d", type=float, help="DCA L-inf budget on the 0-255 scale")
    g.add_argument("--m-d", type=int, help="DCA iteration count")


def _build_config(args, jpeg_default=None):
    from catattack.harness.config import CampaignConfig, load_config

    base = dict(attack=args.attack, data=args.data, model=args.model, out=args.out,
                eval_models=args.eval_model, limit=args.limit, workers=args.workers,
                quantize=args.quantize, jpeg_quality=args.jpeg_quality)
    if args.config:
        cfg = load_config(args.config, **base)
    else:
        missing = [k for k in ("attack", "data", "model", "out") if base[k] is None]
        if missing:
            raise SystemExit(f"error: missing --{' --'.join(missing)} (or pass --config)")
        cfg = CampaignConfig(**{k: v for k, v in base.items() if v is not None})
    if cfg.jpeg_quality is None and jpeg_default is not None:
        cfg.jpeg_quality = jpeg_default
    shared = {"t_attack": args.t_attack, "removal_mode": args.removal_mode}
    sca = {**shared, "eps_S": args.eps_s, "M_S": args.m_s, "overshoot": args.overshoot,
           "deepfool_score_mode": args.score_mode}
    dca = {**shared, "eps_D": args.eps_d, "M_D": args.m_d}
    cfg.sca = dataclasses.replace(cfg.sca, **{k: v for k, v in sca.items() if v is not None})
    cfg.dca = dataclasses.replace(cfg.dca, **{k: v for k, v in dca.items() if v is not None})
    cfg.__post_init__()
    return cfg


def _print_results(result) -> None:
    for key, res in result.results.items():
        atr = "" if res.atr is None else f" atr={res.atr:.4f}"
        print(f"{key}: mAP clean={res.map_clean:.4f} attack={res.map_attack:.4f} "
              f"asr={res.asr:.4f}{atr} p_l2={res.p_l2:.3g} p_l0={res.p_l0:.4f}")
    if result.asr_lossless is not None:
        print(f"lossless asr on attacked model: {result.asr_lossless:.4f}")


def cmd_gen_data(args) -> int:
    from catattack.harness.data import generate_dataset

    for split, count in zip(args.splits, args.counts):
        root = generate_dataset(args.out, count, args.seed, split)
        print(f"wrote {count} images to {root}")
    return 0


def cmd_train(args) -> int:
    from catattack.detector import save_model, train_toy_detector
    from catattack.harness.data import load_dataset

    data = load_dataset(args.data, args.limit)
    model = train_toy_detector(data, epochs=args.epochs, seed=args.seed,
                               batch_size=args.batch_size, lr=args.lr)
    path = save_model(model, args.out)
    hist = model.meta.get("loss_history") or [float("nan")]
    print(f"trained {args.epochs} epochs on {len(data)} images, final loss {hist[-1]:.4f}; saved {path}")
    if args.eval_data:
        from catattack.harness.campaign import detect
        from catattack.metrics import mean_average_precision

        test = load_dataset(args.eval_data)
        preds = [detect(model, im.astype(np.float64)) for im in test.images]
        print(f"clean mAP@0.5 on {args.eval_data}: {mean_average_precision(preds, test.annotations)[0]:.4f}")
    return 0


def cmd_attack(args) -> int:
    from catattack.harness.campaign import run_campaign

    cfg = _build_config(args)
    cfg.check_paths()
    result = run_campaign(cfg)
    _print_results(result)
    print(f"artifacts in {cfg.out}")
    return 0


def cmd_transfer(args) -> int:
    from catattack.harness.campaign import run_campaign

    cfg = _build_config(args, jpeg_default=85)
    if len(cfg.eval_models) < 2 and not args.config:
        log.warning("transfer run with a single evaluation model; ATR is the self-transfer anchor")
    cfg.check_paths()
    result = run_campaign(cfg)
    _print_results(result)
    print(f"artifacts in {cfg.out}")
    return 0


def _load_adv(adv_dir: Path, name: str) -> np.ndarray:
    for ext in (".npy", ".png", ".jpg"):
        p = adv_dir / f"{name}{ext}"
        if p.exists():
            if ext == ".npy":
                return np.load(p).astype(np.float64)
            return np.asarray(Image.open(p).convert("RGB"), dtype=np.float64)
    raise FileNotFoundError(f"no adversarial image for {name} in {adv_dir}")


def cmd_eval(args) -> int:
    from catattack.detector import load_model
    from catattack.harness.campaign import detect
    from catattack.harness.data import load_dataset
    from catattack.metrics import attack_success_rate, mean_average_precision, perceptibility

    data = load_dataset(args.data, args.limit)
    out = {}
    for path in args.model:
        model = load_model(path)
        clean = [detect(model, im.astype(np.float64)) for im in data.images]
        m_clean, ap_clean = mean_average_precision(clean, data.annotations)
        entry = {"map_clean": m_clean, "per_category_ap_clean": ap_clean}
        if args.adv:
            advs = [_load_adv(args.adv, n) for n in data.names]
            preds = [detect(model, a) for a in advs]
            m_adv, ap_adv = mean_average_precision(preds, data.annotations)
            pairs = [perceptibility(c, a) for c, a in zip(data.images, advs)]
            entry.update(map_attack=m_adv, per_category_ap=ap_adv,
                         asr=attack_success_rate(m_clean, m_adv) if m_clean > 0 else None,
                         p_l2=float(np.mean([p[0] for p in pairs])),
                         p_l0=float(np.mean([p[1] for p in pairs])))
        out[str(path)] = entry
        print(f"{path}: " + " ".join(f"{k}={v:.4f}" for k, v in entry.items()
                                     if isinstance(v, float)))
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=1, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from catattack.harness.campaign import aggregate_reports

    path = aggregate_reports(args.runs, args.out)
    print(path.read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catattack",
                                     description="Category-wise attacks on a toy keypoint detector")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render synthetic shape datasets")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", nargs="+", default=["train", "test"])
    p.add_argument("--counts", nargs="+", type=int, default=[2000, 200])
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the toy detector")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--eval-data", type=Path, help="report clean mAP on this split after training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="white-box campaign against one model")
    _campaign_flags(p)
    p.add_argument("--jpeg-quality", type=int, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("transfer", help="campaign evaluated on other models after JPEG")
    _campaign_flags(p)
    p.add_argument("--jpeg-quality", type=int, default=None, help="default 85")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="mAP of models on clean or stored adversarial images")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, action="append", required=True)
    p.add_argument("--adv", type=Path, help="directory of adversarial images (.npy/.png/.jpg)")
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", type=Path, help="write results as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate run directories into one CSV")
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("summary.csv"))
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "counts", None) is not None and len(args.counts) != len(args.splits):
        print("error: --counts needs one value per split", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
