"""Run configuration: every tunable, addressable by dotted key.

Config files are flat ``key = value`` lines (``#`` comments allowed); CLI
flags override file values. Unknown keys are hard errors so a typo in a
weight name cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 0

    # generator
    gen_lambda_mmd: float = 50.0
    gen_lambda_pair: float = 5.0
    gen_lambda_ort: float = 1.0
    gen_lambda_cls: float = 10.0
    gen_latent_dim: int = 128
    gen_base_width: int = 32
    gen_stages: int = 4
    gen_lr: float = 2e-4
    gen_steps: int = 1000
    gen_batch_size: int = 16
    gen_mode: str = "paired"
    gen_n_generated: int = 20000

    # anti-spoofing training
    fas_lambda_kl: float = 1e-3
    fas_lambda_g: float = 0.1
    fas_ratio_r: float = 0.75
    fas_batch_size: int = 16
    fas_lr: float = 1e-3
    fas_steps: int = 1000

    # backbone
    backbone_kind: str = "cdcn"
    backbone_cdc_theta: float = 0.7
    backbone_width: float = 1.0

    # data / run layout
    data_manifest: str = ""
    data_generated_manifest: str = ""
    data_image_size: int = 256
    data_pairing: str = "by_identity"
    run_out_dir: str = "run"
    eval_protocol: str = "intra"


KEY_MAP = {
    "seed": "seed",
    "gen.lambda_mmd": "gen_lambda_mmd",
    "gen.lambda_pair": "gen_lambda_pair",
    "gen.lambda_ort": "gen_lambda_ort",
    "gen.lambda_cls": "gen_lambda_cls",
    "gen.latent_dim": "gen_latent_dim",
    "gen.base_width": "gen_base_width",
    "gen.stages": "gen_stages",
    "gen.lr": "gen_lr",
    "gen.steps": "gen_steps",
    "gen.batch_size": "gen_batch_size",
    "gen.mode": "gen_mode",
    "gen.n_generated": "gen_n_generated",
    "fas.lambda_kl": "fas_lambda_kl",
    "fas.lambda_g": "fas_lambda_g",
    "fas.ratio_r": "fas_ratio_r",
    "fas.batch_size": "fas_batch_size",
    "fas.lr": "fas_lr",
    "fas.steps": "fas_steps",
    "backbone.kind": "backbone_kind",
    "backbone.cdc_theta": "backbone_cdc_theta",
    "backbone.width": "backbone_width",
    "data.manifest": "data_manifest",
    "data.generated_manifest": "data_generated_manifest",
    "data.image_size": "data_image_size",
    "data.pairing": "data_pairing",
    "run.out_dir": "run_out_dir",
    "eval.protocol": "eval_protocol",
}

_ATTR_TO_KEY = {v: k for k, v in KEY_MAP.items()}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path: Path | str) -> dict[str, str]:
    """Read ``key = value`` lines into a dotted-key dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _coerce(attr: str, raw: str):
    kind = _FIELD_TYPES[attr]
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {_ATTR_TO_KEY[attr]} = {raw!r}: {exc}") from exc


def load_run_config(
    config_path: Path | str | None = None, overrides: dict[str, str] | None = None
) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, and override pairs."""
    merged: dict[str, str] = {}
    if config_path is not None:
        merged.update(parse_config_file(config_path))
    if overrides:
        merged.update(overrides)
    cfg = RunConfig()
    for key, raw in merged.items():
        attr = KEY_MAP.get(key)
        if attr is None:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, attr, _coerce(attr, raw))
    return cfg


def config_snapshot(cfg: RunConfig) -> str:
    """Canonical textual form of a config, stable across runs."""
    lines = [f"{_ATTR_TO_KEY[f.name]} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(sorted(lines)) + "\n"
