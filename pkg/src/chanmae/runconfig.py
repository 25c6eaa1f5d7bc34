"""Flat key=value run configuration with a strict schema.

Files hold one ``dotted.key = value`` pair per line; ``#`` starts a
comment. Unknown keys are rejected. The full schema lives in
``configs/README.md`` next to the shipped presets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigError

_TASK_KINDS = (
    "extrapolation_antenna",
    "extrapolation_subcarrier",
    "feedback",
    "positioning",
)
_REGIMES = ("supervised", "frozen", "finetune")
_PATTERNS = ("interleaved", "contiguous")


def _enum(*values):
    def check(v: str) -> str:
        if v not in values:
            raise ValueError(f"must be one of {values}")
        return v

    return check


def _bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ValueError("must be a boolean")


# key -> (parser, default); default None means "no default" (required if used)
SCHEMA: dict[str, tuple] = {
    # dataset generation
    "gen.scenarios": (str, None),
    "gen.count": (int, None),
    "gen.val_count": (int, 0),
    "gen.seed": (int, 0),
    "gen.workers": (int, 1),
    "gen.num_subcarriers": (int, 64),
    "gen.bs_rows": (int, 4),
    "gen.bs_cols": (int, 4),
    "gen.subcarrier_spacing": (float, 30.0),
    "gen.cell_radius": (float, None),
    "gen.num_nlos_paths": (int, None),
    "gen.delay_spread_ns": (float, None),
    "gen.los_probability": (float, None),
    "gen.sector_deg": (float, None),
    "gen.out_dir": (str, "out"),
    # model architecture
    "model.patch_rows": (int, 4),
    "model.patch_cols": (int, 8),
    "model.embed_dim": (int, 64),
    "model.encoder_depth": (int, 4),
    "model.encoder_heads": (int, 4),
    "model.decoder_dim": (int, 32),
    "model.decoder_depth": (int, 2),
    "model.decoder_heads": (int, 4),
    "model.mlp_ratio": (float, 4.0),
    "model.mask_ratio": (float, 0.75),
    # optimizer
    "optim.lr": (float, 1e-3),
    "optim.warmup": (int, 50),
    "optim.beta1": (float, 0.9),
    "optim.beta2": (float, 0.999),
    "optim.eps": (float, 1e-8),
    "optim.head_lr": (float, 0.05),
    # pretraining
    "pretrain.data": (str, None),
    "pretrain.steps": (int, 300),
    "pretrain.batch_size": (int, 32),
    "pretrain.seed": (int, 0),
    "pretrain.eval_interval": (int, 50),
    "pretrain.eval_fraction": (float, 0.1),
    "pretrain.out_dir": (str, "out"),
    # task training
    "task.kind": (_enum(*_TASK_KINDS), None),
    "task.regime": (_enum(*_REGIMES), None),
    "task.pretrained": (str, ""),
    "task.data": (str, None),
    "task.val_data": (str, ""),
    "task.steps": (int, 300),
    "task.batch_size": (int, 32),
    "task.seed": (int, 0),
    "task.pattern": (_enum(*_PATTERNS), ""),
    "task.code_dim": (int, 128),
    "task.out_dir": (str, "out"),
    # standalone evaluation
    "eval.checkpoint": (str, None),
    "eval.data": (str, None),
    "eval.out_dir": (str, "out"),
    # zero-shot transfer
    "zeroshot.checkpoint": (str, None),
    "zeroshot.targets": (str, None),
    "zeroshot.out_dir": (str, "out"),
    # scaling sweep
    "sweep.data": (str, None),
    "sweep.val_data": (str, None),
    "sweep.data_sizes": (str, None),
    "sweep.models": (str, None),
    "sweep.task": (_enum(*_TASK_KINDS), "extrapolation_antenna"),
    "sweep.pretrain_steps": (int, 150),
    "sweep.probe_steps": (int, 150),
    "sweep.batch_size": (int, 32),
    "sweep.seed": (int, 0),
    "sweep.out_dir": (str, "out"),
}


@dataclass
class RunConfig:
    """Parsed, validated key=value configuration."""

    entries: dict

    def get(self, key: str):
        if key in self.entries:
            return self.entries[key]
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}", [key])
        default = SCHEMA[key][1]
        if default is None:
            raise ConfigError(f"missing required config key {key!r}", [key])
        return default

    def get_or(self, key: str, fallback):
        """Value of an optional key, or ``fallback`` when absent/empty."""
        value = self.entries.get(key, SCHEMA[key][1])
        if value in (None, ""):
            return fallback
        return value

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}", [key])
        self.entries[key] = value

    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.entries[k]!r}" for k in sorted(self.entries))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def parse_config(text: str) -> RunConfig:
    entries: dict = {}
    bad: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            bad.append(key)
            continue
        parser = SCHEMA[key][0]
        try:
            entries[key] = parser(value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}", [key]) from e
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(set(bad))}", sorted(set(bad)))
    return RunConfig(entries)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
