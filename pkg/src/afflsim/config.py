"""Run configuration: strict schema, defaults, digest, scenario presets.

Configs are JSON files mirroring the block structure below. Parsing is
strict — any unknown key is rejected with its full path — and every
default is materialized before the digest is computed, so a digest pins
the complete effective configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1

ALGORITHMS = ("affl", "fedavg", "static_messenger", "uniform_weight_affl")


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or unreadable config files."""


@dataclass(frozen=True)
class FederationBlock:
    academic: int = 2
    regional: int = 4
    rural: int = 6
    num_classes: int = 4
    feature_dim: int = 20
    concentration: float = 0.5
    num_modalities: int = 1
    modalities_by_class: dict | None = None
    class_separation: float = 2.0
    feature_noise: float = 1.0
    radial_pairs: int = 0
    radial_scale: float = 2.4
    academic_hidden: int = 32
    regional_hidden: int = 16
    rural_hidden: int = 8

    def counts(self) -> dict:
        return {"academic": self.academic, "regional": self.regional, "rural": self.rural}

    def hidden_by_class(self) -> dict:
        return {
            "academic": self.academic_hidden,
            "regional": self.regional_hidden,
            "rural": self.rural_hidden,
        }


@dataclass(frozen=True)
class ProtocolBlock:
    algorithm: str = "affl"
    # messenger template grid: hidden widths, ascending (0 = logistic regression)
    grid_hidden: tuple = (6, 12, 24)
    initial_capacity_index: int = 0
    adapt_interval: int = 3
    probe_steps: int = 12
    probe_lr: float = 0.5
    lambda1: float = 0.05
    lambda2: float = 0.1
    lambda_kl: float = 1.0
    theta_fair: float = 0.1
    curriculum_tiers: int = 3
    curriculum_tau: tuple | None = None
    curriculum_sigma: tuple | None = None
    sample_rate: float = 1.0
    load_aware_sampling: bool = False
    dropout_rate: float = 0.0
    warmup_steps: int = 10
    local_steps: int = 6
    inject_steps: int = 4
    distill_steps: int = 12
    local_lr: float = 0.3
    inject_lr: float = 0.3
    distill_lr: float = 0.5
    shapley_mode: str = "monte_carlo"  # monte_carlo | exact
    shapley_perms: int = 60
    eps_smooth: float = 0.01
    delta_size: float = 0.2
    robust_method: str | None = None  # trimmed_mean | coordinate_median | null
    robust_f: int | str = "auto"  # auto = floor((cohort-1)/3)
    fedavg_hidden: int = 16
    active_modalities: tuple | None = None
    fused_dim: int | None = None
    fusion_weights: tuple | None = None  # pre-softmax, one per modality
    het_alpha: float = 1.0 / 3.0
    het_beta: float = 1.0 / 3.0
    het_gamma: float = 1.0 / 3.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.shapley_mode not in ("monte_carlo", "exact"):
            raise ConfigError(f"unknown shapley_mode {self.shapley_mode!r}")
        if self.robust_method not in (None, "trimmed_mean", "coordinate_median"):
            raise ConfigError(f"unknown robust_method {self.robust_method!r}")
        if not 0 < self.sample_rate <= 1:
            raise ConfigError("sample_rate must lie in (0, 1]")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if isinstance(self.robust_f, str) and self.robust_f != "auto":
            raise ConfigError("robust_f must be an integer or 'auto'")


@dataclass(frozen=True)
class PrivacyBlock:
    enabled: bool = False
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    delta: float = 1e-5


@dataclass(frozen=True)
class AttackBlock:
    kind: str | None = None  # sign_flip | large_norm | label_flip | null
    attacker_fraction: float = 0.0
    scale: float = 10.0

    def __post_init__(self):
        if self.kind not in (None, "sign_flip", "large_norm", "label_flip"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if not 0 <= self.attacker_fraction < 0.5:
            raise ConfigError("attacker_fraction must lie in [0, 0.5)")


@dataclass(frozen=True)
class MetricsBlock:
    cei_alpha: float = 0.5
    cei_beta: float = 0.5
    put_lambda: float = 0.1
    clinical_w1: float = 0.5
    clinical_w2: float = 0.3
    clinical_w3: float = 0.2
    physician_acceptance: float = 0.75
    regulatory_compliance: float = 0.8
    convergence_burn_in: int = 3


@dataclass(frozen=True)
class RunConfig:
    federation: FederationBlock = field(default_factory=FederationBlock)
    protocol: ProtocolBlock = field(default_factory=ProtocolBlock)
    privacy: PrivacyBlock = field(default_factory=PrivacyBlock)
    attack: AttackBlock = field(default_factory=AttackBlock)
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    seed: int = 0
    max_rounds: int = 25
    target_accuracy: float | None = None
    validation_samples: int = 400
    probe_samples: int = 120
    energy_coefficient: float = 3e-4
    output_dir: str = "runs"

    def __post_init__(self):
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be nonnegative")
        if self.target_accuracy is not None and not 0 < self.target_accuracy <= 1:
            raise ConfigError("target_accuracy must lie in (0, 1]")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


_BLOCKS = {
    "federation": FederationBlock,
    "protocol": ProtocolBlock,
    "privacy": PrivacyBlock,
    "attack": AttackBlock,
    "metrics": MetricsBlock,
}

_TUPLE_FIELDS = {
    "grid_hidden",
    "curriculum_tau",
    "curriculum_sigma",
    "active_modalities",
    "fusion_weights",
}


def _build_block(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {path}.{key}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in {path}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Build a fully validated RunConfig; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    for key in data:
        if key not in top_names:
            raise ConfigError(f"unknown key {key}")
    kwargs = {}
    for key, value in data.items():
        if key in _BLOCKS:
            kwargs[key] = _build_block(_BLOCKS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}") from exc


def load_config(path: str) -> RunConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Scenario presets. "default" is the 12-institution feasibility scenario
# (2 academic / 4 regional / 6 rural).
# ---------------------------------------------------------------------------


def preset_default(seed: int = 7, algorithm: str = "affl") -> dict:
    """12-institution scenario: skewed labels plus one radial class pair.

    The pair shares a mean and differs only in spread, so it is nearly
    separable by radius yet impossible for the smallest messenger — which
    is what makes capacity adaptation worth its bytes.
    """
    return {
        "federation": {
            "academic": 2,
            "regional": 4,
            "rural": 6,
            "num_classes": 4,
            "feature_dim": 10,
            "concentration": 0.3,
            "class_separation": 2.2,
            "radial_pairs": 1,
            "radial_scale": 5.0,
            "academic_hidden": 24,
            "regional_hidden": 12,
            "rural_hidden": 12,
        },
        "protocol": {
            "algorithm": algorithm,
            "grid_hidden": (2, 8, 18),
            "adapt_interval": 3,
            "probe_steps": 60,
            "probe_lr": 0.8,
            "lambda1": 0.01,
            "warmup_steps": 2,
            "local_steps": 5,
            "local_lr": 0.5,
            "inject_steps": 4,
            "inject_lr": 0.4,
            "distill_steps": 10,
            "distill_lr": 0.5,
            "shapley_perms": 30,
        },
        "seed": seed,
        "max_rounds": 30,
        "target_accuracy": 0.68,
    }


def preset_smoke(seed: int = 7) -> dict:
    return {
        "federation": {
            "academic": 0,
            "regional": 0,
            "rural": 4,
            "num_classes": 3,
            "feature_dim": 10,
            "concentration": 1.0,
            "class_separation": 2.5,
        },
        "protocol": {
            "algorithm": "affl",
            "grid_hidden": (4, 8),
            "shapley_perms": 20,
            "local_steps": 4,
            "inject_steps": 2,
            "distill_steps": 6,
        },
        "seed": seed,
        "max_rounds": 6,
        "target_accuracy": None,
        "validation_samples": 200,
        "probe_samples": 60,
    }


def preset_convex(seed: int = 7) -> dict:
    """All-logistic, near-IID scenario for convergence-trend fits.

    Distillation is deliberately gentle so the pooled-objective curve is
    still decaying across the whole horizon instead of hitting its floor
    in the first rounds.
    """
    return {
        "federation": {
            "academic": 1,
            "regional": 3,
            "rural": 4,
            "num_classes": 3,
            "feature_dim": 12,
            "concentration": 20.0,
            "class_separation": 1.6,
            "academic_hidden": 0,
            "regional_hidden": 0,
            "rural_hidden": 0,
        },
        "protocol": {
            "algorithm": "affl",
            "grid_hidden": (0,),
            "adapt_interval": 1000,
            "curriculum_tiers": 2,
            "shapley_perms": 30,
            "lambda_kl": 0.3,
            "local_steps": 4,
            "distill_steps": 4,
            "distill_lr": 0.3,
        },
        "seed": seed,
        "max_rounds": 20,
        "target_accuracy": None,
        "validation_samples": 600,
    }


def preset_privacy(seed: int = 7, enabled: bool = True) -> dict:
    """25-institution, low-dimensional, well-separated task for DP runs."""
    from .privacy import noise_multiplier_for_budget

    rounds = 25
    nm = noise_multiplier_for_budget(2.3, rounds, 1e-5) if enabled else 0.0
    return {
        "federation": {
            "academic": 0,
            "regional": 0,
            "rural": 25,
            "num_classes": 2,
            "feature_dim": 4,
            "concentration": 20.0,
            "class_separation": 5.0,
            "rural_hidden": 0,
        },
        "protocol": {
            "algorithm": "affl",
            "grid_hidden": (0,),
            "adapt_interval": 1000,
            "curriculum_tiers": 2,
            "shapley_perms": 20,
            "local_steps": 6,
            "distill_steps": 15,
        },
        "privacy": {
            "enabled": enabled,
            "clip_norm": 0.5,
            "noise_multiplier": nm,
            "delta": 1e-5,
        },
        "seed": seed,
        "max_rounds": rounds,
        "target_accuracy": None,
        "validation_samples": 500,
    }


def preset_multimodal(seed: int = 7, active_modalities: tuple | None = None) -> dict:
    """Three-modality task whose class signal is split across modalities."""
    return {
        "federation": {
            "academic": 0,
            "regional": 2,
            "rural": 4,
            "num_classes": 6,
            "feature_dim": 24,
            "concentration": 2.0,
            "num_modalities": 3,
            "class_separation": 2.4,
        },
        "protocol": {
            "algorithm": "affl",
            "grid_hidden": (8, 16),
            "shapley_perms": 20,
            "active_modalities": active_modalities,
            "fused_dim": 16,
        },
        "seed": seed,
        "max_rounds": 15,
        "target_accuracy": None,
        "validation_samples": 500,
    }


def preset_scale(n_clients: int, seed: int = 7, algorithm: str = "affl") -> dict:
    """Rural-only federation of n_clients for communication scaling sweeps."""
    return {
        "federation": {
            "academic": 0,
            "regional": 0,
            "rural": n_clients,
            "num_classes": 3,
            "feature_dim": 12,
            "concentration": 1.0,
            "class_separation": 2.5,
        },
        "protocol": {
            "algorithm": algorithm,
            "grid_hidden": (8,),
            "shapley_perms": 10,
            "local_steps": 2,
            "inject_steps": 1,
            "distill_steps": 3,
        },
        "seed": seed,
        "max_rounds": 3,
        "target_accuracy": None,
        "validation_samples": 150,
        "probe_samples": 60,
    }


def preset_robustness(
    seed: int = 7, attack: bool = True, robust: bool = True, algorithm: str = "affl"
) -> dict:
    """Default scenario with redundant class coverage for attack experiments.

    Higher concentration keeps honest clients collectively informed, so the
    attacked-vs-clean delta measures aggregator robustness rather than the
    loss of data only attackers held.
    """
    cfg = preset_default(seed, algorithm)
    cfg["federation"]["concentration"] = 1.5
    cfg["protocol"]["robust_method"] = "trimmed_mean" if robust else None
    cfg["protocol"]["robust_f"] = "auto"
    cfg["attack"] = {
        "kind": "sign_flip" if attack else None,
        "attacker_fraction": 0.33 if attack else 0.0,
    }
    cfg["max_rounds"] = 24
    cfg["target_accuracy"] = None
    return cfg


PRESETS = {
    "default": preset_default,
    "smoke": preset_smoke,
    "convex": preset_convex,
    "privacy": preset_privacy,
    "multimodal": preset_multimodal,
    "robustness": preset_robustness,
}
