"""Run configuration: built-in defaults < ``key = value`` config file < CLI flags."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any

from ._binio import read_file
from .deeplda import DeepLdaConfig
from .errors import ConfigError
from .neuralnet.regression import RegressionNetConfig

MODELS = ("rf", "reg_cosine", "reg_poisson", "deeplda")


@dataclass
class RfConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 2
    features_per_split: int = 3
    seed: int = 0


@dataclass
class RunConfig:
    model: str = "rf"
    seed: int | None = None
    rf: RfConfig = field(default_factory=RfConfig)
    reg: RegressionNetConfig = field(default_factory=RegressionNetConfig)
    deeplda: DeepLdaConfig = field(default_factory=DeepLdaConfig)

    def section(self, name: str):
        if name not in ("rf", "reg", "deeplda"):
            raise ConfigError(f"unknown config section {name!r}")
        return getattr(self, name)

    def effective(self) -> dict[str, Any]:
        """Flat dotted-key view of everything, for provenance."""
        out: dict[str, Any] = {"model": self.model, "seed": self.seed}
        for sec in ("rf", "reg", "deeplda"):
            obj = getattr(self, sec)
            for f in fields(obj):
                v = getattr(obj, f.name)
                out[f"{sec}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return out


def _coerce(raw: str, like: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(like, int) or like is None:
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def apply_setting(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    key = key.strip()
    if key == "model":
        if raw.strip() not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        cfg.model = raw.strip()
        return cfg
    if key == "seed":
        cfg.seed = _coerce(raw, 0, key)
        return cfg
    sec, dot, name = key.partition(".")
    if not dot:
        raise ConfigError(f"unknown config key {key!r}")
    obj = cfg.section(sec)
    names = {f.name for f in fields(obj)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    value = _coerce(raw, getattr(obj, name), key)
    setattr(cfg, sec, replace(obj, **{name: value}))
    return cfg


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        apply_setting(cfg, key, value)
    return cfg


def load_config(path, cfg: RunConfig | None = None) -> RunConfig:
    return parse_config_text(read_file(path).decode("utf-8"), cfg)


def seeded(cfg: RunConfig) -> RunConfig:
    """Push the top-level seed, when given, into every model section."""
    if cfg.seed is None:
        return cfg
    cfg.rf = replace(cfg.rf, seed=cfg.seed)
    cfg.reg = replace(cfg.reg, seed=cfg.seed)
    cfg.deeplda = replace(cfg.deeplda, seed=cfg.seed)
    return cfg
