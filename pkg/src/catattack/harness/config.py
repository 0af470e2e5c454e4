"""Campaign configuration, stored as a sectioned key=value (INI) file."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from catattack.attacks.dca import DcaConfig
from catattack.attacks.sca import ScaConfig

ATTACKS = ("sca", "dca")


@dataclass
class CampaignConfig:
    attack: str
    data: Path
    model: Path
    out: Path
    eval_models: list = field(default_factory=list)
    limit: int | None = None
    jpeg_quality: int | None = None
    workers: int = 1
    quantize: bool = False
    sca: ScaConfig = field(default_factory=ScaConfig)
    dca: DcaConfig = field(default_factory=DcaConfig)

    def __post_init__(self):
        self.data, self.model, self.out = Path(self.data), Path(self.model), Path(self.out)
        self.eval_models = [Path(p) for p in self.eval_models] or [self.model]
        if self.attack not in ATTACKS:
            raise ValueError(f"attack must be one of {ATTACKS}, got {self.attack!r}")
        if self.jpeg_quality is not None and not 1 <= self.jpeg_quality <= 100:
            raise ValueError("jpeg_quality must lie in [1, 100]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def check_paths(self):
        missing = [p for p in [self.data, self.model, *self.eval_models] if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing campaign inputs: {', '.join(map(str, missing))}")

    @property
    def attack_config(self):
        return self.sca if self.attack == "sca" else self.dca

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["campaign"] = {
            "attack": self.attack, "data": str(self.data), "model": str(self.model),
            "out": str(self.out), "eval_models": ", ".join(map(str, self.eval_models)),
            "limit": "none" if self.limit is None else str(self.limit),
            "jpeg_quality": "none" if self.jpeg_quality is None else str(self.jpeg_quality),
            "workers": str(self.workers), "quantize": str(self.quantize).lower(),
        }
        cp["sca"] = {k: str(v) for k, v in self.sca.to_dict().items()}
        cp["dca"] = {k: str(v) for k, v in self.dca.to_dict().items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "attack": self.attack, "data": str(self.data), "model": str(self.model),
            "out": str(self.out), "eval_models": [str(p) for p in self.eval_models],
            "limit": self.limit, "jpeg_quality": self.jpeg_quality, "workers": self.workers,
            "quantize": self.quantize, "sca": self.sca.to_dict(), "dca": self.dca.to_dict(),
        }


def _optional_int(value: str | None):
    if value is None or value.strip().lower() in ("", "none", "null"):
        return None
    return int(value)


def _typed_section(cls, section):
    kwargs = {}
    for f in fields(cls):
        if f.name in section:
            raw = section[f.name]
            default = f.default
            if isinstance(default, bool):
                kwargs[f.name] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw.strip()
    return cls(**kwargs)


def parse_config(text: str, **overrides) -> CampaignConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    c = cp["campaign"] if cp.has_section("campaign") else {}
    values = {
        "attack": c.get("attack"), "data": c.get("data"), "model": c.get("model"),
        "out": c.get("out"),
        "eval_models": [s.strip() for s in c.get("eval_models", "").split(",") if s.strip()],
        "limit": _optional_int(c.get("limit")),
        "jpeg_quality": _optional_int(c.get("jpeg_quality")),
        "workers": int(c.get("workers", 1)),
        "quantize": str(c.get("quantize", "false")).strip().lower() in ("1", "true", "yes", "on"),
        "sca": _typed_section(ScaConfig, cp["sca"]) if cp.has_section("sca") else ScaConfig(),
        "dca": _typed_section(DcaConfig, cp["dca"]) if cp.has_section("dca") else DcaConfig(),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in ("attack", "data", "model", "out") if values.get(k) is None]
    if missing:
        raise ValueError(f"config is missing {', '.join(missing)}")
    return CampaignConfig(**values)


def load_config(path, **overrides) -> CampaignConfig:
    return parse_config(Path(path).read_text(), **overrides)
