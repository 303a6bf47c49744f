"""Model configuration: every architecture hyperparameter and ablation flag,
parsed from flat ``key=value`` text with ``#`` comments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from typing import Tuple

from .errors import ConfigError

TASKS = ("der", "dbr", "tcr", "vbr")
MODALITIES = ("exterior", "interior", "joints")


@dataclass
class ModelConfig:
    frame_count: int = 16
    channels: int = 192
    height: int = 7
    width: int = 7
    view_height: int = 32
    view_width: int = 32
    state_dim: int = 16
    block_depth: int = 2
    joint_count: int = 17
    classes_der: int = 4
    classes_dbr: int = 4
    classes_tcr: int = 4
    classes_vbr: int = 4
    base_lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    no_mgmi: bool = False
    no_dual_scan: bool = False
    no_global_local: bool = False
    no_self_attention: bool = False
    no_multi_gating: bool = False
    drop_tasks: Tuple[str, ...] = ()
    drop_modalities: Tuple[str, ...] = ()

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.frame_count <= 0:
            raise ConfigError("frame_count: must be positive")
        if self.channels % self.frame_count != 0:
            raise ConfigError(
                f"channels: {self.channels} violates channels % frame_count == 0 "
                f"(frame_count={self.frame_count})")
        if self.channels % (3 * self.frame_count) != 0:
            raise ConfigError(
                f"channels: {self.channels} must divide into 3 views x "
                f"{self.frame_count} frames per branch")
        for name in ("height", "width", "view_height", "view_width",
                     "state_dim", "block_depth", "joint_count"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name}: must be positive")
        for task in TASKS:
            if getattr(self, f"classes_{task}") < 2:
                raise ConfigError(f"classes_{task}: need at least 2 classes")
        for t in self.drop_tasks:
            if t not in TASKS:
                raise ConfigError(f"drop_tasks: unknown task '{t}'")
        if set(self.drop_tasks) >= set(TASKS):
            raise ConfigError("drop_tasks: cannot drop every task")
        for m in self.drop_modalities:
            if m not in MODALITIES:
                raise ConfigError(f"drop_modalities: unknown modality '{m}'")
        if set(self.drop_modalities) >= set(MODALITIES):
            raise ConfigError("drop_modalities: cannot drop every modality")

    @property
    def active_tasks(self) -> Tuple[str, ...]:
        return tuple(t for t in TASKS if t not in self.drop_tasks)

    @property
    def active_modalities(self) -> Tuple[str, ...]:
        return tuple(m for m in MODALITIES if m not in self.drop_modalities)

    def num_classes(self, task: str) -> int:
        return int(getattr(self, f"classes_{task}"))

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha1(self.to_text().encode()).hexdigest()[:12]

    def replace(self, **kw) -> "ModelConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return ModelConfig(**vals)


_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{name}: expected a boolean, got '{raw}'")
        return _BOOL_VALUES[raw.lower()]
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got '{raw}'") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got '{raw}'") from None
    # tuple of strings
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def parse_config(text: str) -> ModelConfig:
    """Parse flat key=value lines; unknown keys and bad values are rejected."""
    kinds = {}
    for f in fields(ModelConfig):
        if f.type in ("int", int):
            kinds[f.name] = int
        elif f.type in ("float", float):
            kinds[f.name] = float
        elif f.type in ("bool", bool):
            kinds[f.name] = bool
        else:
            kinds[f.name] = tuple
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got '{line}'")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in kinds:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = _coerce(key, kinds[key], raw)
    return ModelConfig(**values)


def load_config(path) -> ModelConfig:
    with open(path) as fh:
        return parse_config(fh.read())
