"""Pipeline configuration: flat dotted keys, file + flag overrides.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Every key can be overridden on the command line; the master seed is
stretched into independent per-component seeds by hashing the component
name, so no two stochastic stages share a stream.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

from .errors import ConfigError

_DEFAULTS: dict[str, object] = {
    "data.train": "",
    "data.valid": "",
    "data.test": "",
    "scope": "train-only",
    "treatment.k": 2,
    "embed.dim": 32,
    "embed.walks": 10,
    "embed.walk_length": 40,
    "embed.window": 5,
    "embed.p": 1.0,
    "embed.q": 1.0,
    "embed.negatives": 5,
    "embed.epochs": 2,
    "embed.lr": 0.025,
    "encoder.layers": 6,
    "encoder.hidden": 32,
    "decoder.hidden": 64,
    "train.alpha": 0.1,
    "train.beta": 0.01,
    "train.lr": 5e-3,
    "train.batch": 32,
    "train.epochs": 20,
    "train.negatives": 32,
    "train.disc": "frobenius",
    "seed": 0,
    "out": "out",
}


@dataclass
class PipelineConfig:
    values: dict[str, object] = field(default_factory=lambda: dict(_DEFAULTS))

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def set(self, key: str, raw) -> None:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        default = _DEFAULTS[key]
        try:
            if isinstance(default, bool):
                self.values[key] = str(raw).lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                self.values[key] = int(raw)
            elif isinstance(default, float):
                self.values[key] = float(raw)
            else:
                self.values[key] = str(raw)
        except ValueError:
            raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None

    def component_seed(self, component: str) -> int:
        digest = hashlib.sha256(f"{self['seed']}:{component}".encode()).digest()
        return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF

    def data_paths(self) -> tuple[str, str, str]:
        base = os.environ.get("KGCF_DATA", "")
        paths = []
        for split in ("train", "valid", "test"):
            p = self[f"data.{split}"]
            if not p:
                p = os.path.join(base, f"{split}.txt")
            paths.append(p)
        return tuple(paths)

    def to_text(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))


def load_config(path) -> PipelineConfig:
    cfg = PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, raw = line.partition("=")
            cfg.set(key.strip(), raw.strip())
    return cfg
