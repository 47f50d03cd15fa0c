"""Flat dotted-key configuration files.

One `key = value` per line, `#` comments, no nesting; every key is checked
against a schema so a typo fails loudly (naming the key) instead of silently
training with a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import UsageError

_MODALITIES = ("joint", "bone", "joint_motion", "bone_motion")


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"config key '{key}': expected a boolean, got {raw!r}")


def _parse_list(raw: str, cast, key: str):
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise UsageError(f"config key '{key}': bad list element ({exc})") from None


# key -> (type tag, default).  Tags: int, float, bool, str, ints, floats, strs.
SCHEMA: dict[str, tuple[str, Any]] = {
    "data.manifest": ("str", ""),
    "data.eval_manifest": ("str", ""),
    "data.modality": ("str", "joint"),
    "data.streams": ("strs", ("joint", "bone", "joint_motion", "bone_motion")),
    "data.text_features": ("str", ""),
    "model.channels": ("ints", (16, 16, 32, 32)),
    "model.temporal_kernel": ("int", 5),
    "model.adjacency_mode": ("str", "static"),
    "rgb.frames": ("int", 5),
    "rgb.crop_h": ("int", 32),
    "rgb.crop_w": ("int", 32),
    "align.tau": ("float", 0.1),
    "refine.n": ("int", 32),
    "refine.residual": ("bool", True),
    "train.preset": ("str", "desk"),
    "train.lr": ("float", 0.1),
    "train.epochs": ("int", 0),  # 0 = take from preset
    "train.batch_size": ("int", 0),
    "train.warmup_epochs": ("int", 5),
    "train.decay_epochs": ("ints", ()),
    "train.momentum": ("float", 0.9),
    "train.weight_decay": ("float", 4e-4),
    "train.lambda1": ("float", 0.1),
    "train.lambda2": ("float", 0.2),
    "train.seed": ("int", 0),
    "eval.topk": ("ints", (1, 5)),
    "eval.checkpoint": ("str", ""),
    "ensemble.weights": ("floats", ()),
    "ensemble.checkpoints": ("strs", ()),
    "transfer.mapping": ("str", "identity"),
    "transfer.manifest": ("str", ""),
    "transfer.refine": ("bool", False),
    "synth.classes": ("int", 4),
    "synth.train_per_class": ("int", 20),
    "synth.test_per_class": ("int", 8),
    "synth.frames": ("int", 24),
    "synth.noise": ("float", 0.05),
    "synth.seed": ("int", 0),
    "synth.rgb": ("bool", True),
    "out.dir": ("str", "runs/default"),
}


def _convert(key: str, raw: str) -> Any:
    tag = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"config key '{key}': expected a {tag}, got {raw!r}") from None
    if tag == "bool":
        return _parse_bool(raw, key)
    if tag == "str":
        return raw
    if tag == "ints":
        return _parse_list(raw, int, key)
    if tag == "floats":
        return _parse_list(raw, float, key)
    if tag == "strs":
        return _parse_list(raw, str, key)
    raise UsageError(f"config key '{key}': unknown schema tag {tag}")


@dataclass
class Config:
    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in self.values.items():
            if k not in SCHEMA:
                raise UsageError(f"unknown config key '{k}'")
            merged[k] = v
        self.values = merged
        m = self.values["data.modality"]
        if m not in _MODALITIES:
            raise UsageError(
                f"config key 'data.modality': must be one of {', '.join(_MODALITIES)}, got {m!r}"
            )
        for s in self.values["data.streams"]:
            if s not in _MODALITIES:
                raise UsageError(f"config key 'data.streams': unknown stream {s!r}")
        if self.values["model.adjacency_mode"] not in ("static", "dynamic"):
            raise UsageError(
                "config key 'model.adjacency_mode': must be static or dynamic, "
                f"got {self.values['model.adjacency_mode']!r}"
            )

    def __getitem__(self, key: str) -> Any:
        if key not in SCHEMA:
            raise UsageError(f"unknown config key '{key}'")
        return self.values[key]

    def override(self, assignments: list[str]) -> "Config":
        """Apply `key=value` strings (CLI -o flags) on top of this config."""
        updated = dict(self.values)
        for item in assignments:
            if "=" not in item:
                raise UsageError(f"override {item!r} is not of the form key=value")
            key, _, raw = item.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                raise UsageError(f"unknown config key '{key}'")
            updated[key] = _convert(key, raw)
        return Config(values=updated)


def parse_config_text(text: str, source: str = "<config>") -> Config:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise UsageError(f"{source}:{lineno}: unknown config key '{key}'")
        if key in values:
            raise UsageError(f"{source}:{lineno}: duplicate config key '{key}'")
        values[key] = _convert(key, raw)
    return Config(values=values)


def load_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))


def format_config(cfg: Config) -> str:
    """Render a config back to file text (sorted keys, list values comma-joined)."""
    lines = []
    for key in sorted(cfg.values):
        v = cfg.values[key]
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
