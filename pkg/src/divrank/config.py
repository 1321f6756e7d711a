"""Experiment configuration with defaults, key=value file loading and
CLI override merging."""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields

from .errors import ConfigurationError


@dataclass
class ExperimentConfig:
    # contrastive stage
    tau: float = 0.2
    alpha: float = 0.01
    beta: float = 0.02
    lr_reencoder: float = 1e-5
    scl_epochs: int = 20
    max_irrelevant: int = 64
    epsilon: float = 0.01          # reserved, no effect on any update rule
    ema_swap_convention: bool = False
    drop_prototype_positives: bool = False
    drop_prototype_negatives: bool = False
    # classifier stage
    n_tokens: int = 200
    layers: int = 8
    heads: int = 4
    ffn_mult: int = 4
    lr_classifier: float = 1e-4
    ttc_epochs: int = 20
    # augmentation
    p_query: float = 0.5
    p_image: float = 0.2
    p_delete: float = 0.2
    p_copy: float = 0.2
    augment: bool = True
    # retrieval / evaluation
    per_category: int = 1          # X of the post-processing rule
    k: int = 20
    batch_size: int = 32
    seed: int = 0

    def validate(self) -> None:
        if self.tau <= 0:
            raise ConfigurationError("tau must be > 0")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigurationError("alpha must be in [0, 1]")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        if self.per_category < 1 or self.k < self.per_category:
            raise ConfigurationError("need k >= per_category >= 1")
        if self.layers < 1 or self.heads < 1 or self.n_tokens < 1:
            raise ConfigurationError("layers, heads and n_tokens must be >= 1")
        for name in ("p_query", "p_image", "p_delete", "p_copy"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ConfigurationError(f"{name} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _parse_value(text: str, target_type):
    if target_type is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"bad boolean value {text!r}")
    return target_type(text)


def load_config(path: str | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Flat key=value file; later CLI overrides win over file values."""
    cfg = ExperimentConfig()
    by_name = {f.name: f.type for f in fields(ExperimentConfig)}
    types = {"tau": float, "alpha": float, "beta": float,
             "lr_reencoder": float, "lr_classifier": float, "epsilon": float,
             "p_query": float, "p_image": float, "p_delete": float,
             "p_copy": float}

    def field_type(name):
        if name in types:
            return types[name]
        default = getattr(ExperimentConfig(), name)
        return type(default)

    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigurationError(f"{path}:{ln}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in by_name:
                    raise ConfigurationError(f"{path}:{ln}: unknown key {key!r}")
                setattr(cfg, key, _parse_value(value, field_type(key)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in by_name:
            raise ConfigurationError(f"unknown config key {key!r}")
        setattr(cfg, key, value)
    cfg.validate()
    return cfg
