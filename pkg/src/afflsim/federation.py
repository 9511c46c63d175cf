"""Synthetic federation generation.

Builds institution profiles and non-IID data shards for three institution
classes (academic, regional, rural) whose sample-count ranges, modality
coverage and compute budgets differ by construction. Label skew follows
per-client Dirichlet class priors; features are class-conditional
Gaussians, optionally laid out in per-modality column blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .models import Arch
from .rng import stream

SAMPLE_RANGES = {
    "academic": (10_000, 12_000),
    "regional": (3_000, 7_000),
    "rural": (500, 2_000),
}

# (capacity low/high, delay low/high) per institution class; capacities
# intentionally span orders of magnitude.
RESOURCE_RANGES = {
    "academic": ((50.0, 100.0), (1.0, 1.2)),
    "regional": ((10.0, 30.0), (1.2, 2.0)),
    "rural": ((1.0, 5.0), (2.0, 4.0)),
}

DEFAULT_HIDDEN = {"academic": 32, "regional": 16, "rural": 8}

HONEST = "honest"


@dataclass
class DatasetShard:
    """One institution's data: features, labels, modality layout, tiers."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    modality_blocks: tuple[tuple[int, tuple[int, int]], ...] = ()
    difficulty_tiers: np.ndarray | None = None
    num_tiers: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label ids must lie in [0, num_classes)")
        if not self.modality_blocks:
            self.modality_blocks = ((0, (0, self.features.shape[1])),)
        _check_blocks(self.modality_blocks, self.features.shape[1])
        if self.difficulty_tiers is not None:
            tiers = np.asarray(self.difficulty_tiers, dtype=np.int64)
            if tiers.shape != self.labels.shape:
                raise ValueError("difficulty tiers must cover every sample")
            if tiers.size and (tiers.min() < 0 or tiers.max() >= self.num_tiers):
                raise ValueError("tier ids must lie in [0, num_tiers)")
            self.difficulty_tiers = tiers

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    def label_histogram(self) -> np.ndarray:
        """Empirical label distribution (sums to 1)."""
        if self.sample_count == 0:
            raise ValueError("empty shard has no label distribution")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        return counts / counts.sum()

    def with_tiers(self, tiers: np.ndarray, num_tiers: int) -> "DatasetShard":
        return replace(self, difficulty_tiers=tiers, num_tiers=num_tiers)

    def with_features(self, features: np.ndarray) -> "DatasetShard":
        blocks = ((0, (0, features.shape[1])),)
        return replace(self, features=features, modality_blocks=blocks)

    def with_labels(self, labels: np.ndarray) -> "DatasetShard":
        return replace(self, labels=labels)

    def modality_columns(self, modality: int) -> slice:
        for mid, (start, stop) in self.modality_blocks:
            if mid == modality:
                return slice(start, stop)
        raise KeyError(f"modality {modality} not present in shard")


def _check_blocks(blocks, width: int) -> None:
    covered = np.zeros(width, dtype=bool)
    for _, (start, stop) in blocks:
        if start < 0 or stop > width or start >= stop:
            raise ValueError(f"bad modality column range ({start}, {stop})")
        if covered[start:stop].any():
            raise ValueError("modality column ranges overlap")
        covered[start:stop] = True
    if not covered.all():
        raise ValueError("modality column ranges must cover all columns")


@dataclass(frozen=True)
class ClientProfile:
    """Institution descriptor: data volume, resources, modalities, honesty."""

    id: int
    institution_class: str
    sample_count: int
    compute_capacity: float
    network_delay: float
    modalities: tuple[int, ...]
    honesty: str
    arch: Arch

    def __post_init__(self):
        lo, hi = SAMPLE_RANGES[self.institution_class]
        if not lo <= self.sample_count <= hi:
            raise ValueError(
                f"{self.institution_class} sample count {self.sample_count} outside [{lo}, {hi}]"
            )
        if self.compute_capacity <= 0:
            raise ValueError("compute_capacity must be positive")
        if self.network_delay < 1:
            raise ValueError("network_delay must be >= 1")

    @property
    def arch_descriptor(self) -> tuple[int, int, int]:
        return self.arch.descriptor

    @property
    def is_attacker(self) -> bool:
        return self.honesty != HONEST


@dataclass(frozen=True)
class FederationConfig:
    """Knobs for synthetic federation generation."""

    counts: dict
    num_classes: int = 4
    feature_dim: int = 20
    concentration: float = 0.5
    num_modalities: int = 1
    modalities_by_class: dict = field(
        default_factory=lambda: {"academic": None, "regional": None, "rural": None}
    )
    class_separation: float = 2.0
    feature_noise: float = 1.0
    hidden_by_class: dict = field(default_factory=lambda: dict(DEFAULT_HIDDEN))
    # fraction of feature columns that carry class signal, per modality block
    informative_fraction: float = 1.0
    # pairs of classes (2p, 2p+1) that share a mean and differ only in spread;
    # such pairs are not linearly separable, so model capacity matters
    radial_pairs: int = 0
    radial_scale: float = 2.4

    def __post_init__(self):
        for cls in self.counts:
            if cls not in SAMPLE_RANGES:
                raise ValueError(f"unknown institution class {cls!r}")
        if sum(self.counts.values()) < 1:
            raise ValueError("federation needs at least one client")
        if self.concentration <= 0:
            raise ValueError("concentration must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.num_modalities < 1:
            raise ValueError("need at least one modality")
        if self.feature_dim < self.num_modalities:
            raise ValueError("feature_dim must cover every modality block")
        if self.radial_pairs < 0 or 2 * self.radial_pairs > self.num_classes:
            raise ValueError("radial_pairs must fit inside num_classes")
        if self.radial_scale <= 1.0:
            raise ValueError("radial_scale must exceed 1")

    def modality_blocks(self) -> tuple[tuple[int, tuple[int, int]], ...]:
        """Contiguous, near-equal column blocks, one per modality."""
        edges = np.linspace(0, self.feature_dim, self.num_modalities + 1).astype(int)
        return tuple((m, (int(edges[m]), int(edges[m + 1]))) for m in range(self.num_modalities))

    def class_modalities(self, institution_class: str) -> tuple[int, ...]:
        configured = self.modalities_by_class.get(institution_class)
        if configured is None:
            return tuple(range(self.num_modalities))
        return tuple(int(m) for m in configured)


def _class_means(config: FederationConfig, seed: int) -> np.ndarray:
    rng = stream(seed, "class-means")
    means = rng.normal(0.0, 1.0, (config.num_classes, config.feature_dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    means = means / norms * config.class_separation
    if config.informative_fraction < 1.0:
        keep = max(1, int(round(config.informative_fraction * config.feature_dim)))
        means[:, keep:] = 0.0
    for p in range(config.radial_pairs):
        means[2 * p + 1] = means[2 * p]
    return means


def _class_noise_scales(config: FederationConfig) -> np.ndarray:
    scales = np.ones(config.num_classes)
    for p in range(config.radial_pairs):
        scales[2 * p + 1] = config.radial_scale
    return scales * config.feature_noise


def _sample_shard(
    config: FederationConfig,
    means: np.ndarray,
    label_probs: np.ndarray,
    n: int,
    rng: np.random.Generator,
    modalities: tuple[int, ...],
) -> DatasetShard:
    labels = rng.choice(config.num_classes, size=n, p=label_probs)
    scales = _class_noise_scales(config)[labels][:, None]
    feats = means[labels] + scales * rng.normal(0.0, 1.0, (n, config.feature_dim))
    blocks = config.modality_blocks()
    missing = set(range(config.num_modalities)) - set(modalities)
    for mid, (start, stop) in blocks:
        if mid in missing:
            feats[:, start:stop] = 0.0
    return DatasetShard(feats, labels, config.num_classes, blocks)


def gen_federation(
    config: FederationConfig, seed: int
) -> tuple[list[ClientProfile], list[DatasetShard]]:
    """Generate profiles and shards; bit-identical for equal (config, seed)."""
    means = _class_means(config, seed)
    profiles: list[ClientProfile] = []
    shards: list[DatasetShard] = []
    client_id = 0
    for cls in ("academic", "regional", "rural"):
        for _ in range(config.counts.get(cls, 0)):
            rng = stream(seed, "client", client_id)
            lo, hi = SAMPLE_RANGES[cls]
            n = int(rng.integers(lo, hi + 1))
            alpha = np.full(config.num_classes, config.concentration)
            label_probs = rng.dirichlet(alpha)
            (cap_lo, cap_hi), (del_lo, del_hi) = RESOURCE_RANGES[cls]
            modalities = config.class_modalities(cls)
            profile = ClientProfile(
                id=client_id,
                institution_class=cls,
                sample_count=n,
                compute_capacity=float(rng.uniform(cap_lo, cap_hi)),
                network_delay=float(rng.uniform(del_lo, del_hi)),
                modalities=modalities,
                honesty=HONEST,
                arch=Arch(
                    config.feature_dim, config.num_classes, config.hidden_by_class[cls]
                ),
            )
            shard = _sample_shard(config, means, label_probs, n, rng, modalities)
            profiles.append(profile)
            shards.append(shard)
            client_id += 1
    return profiles, shards


def gen_reference_shard(
    config: FederationConfig, seed: int, n: int, purpose: str = "validation"
) -> DatasetShard:
    """Server-side shard with a uniform label mixture (validation / probe)."""
    means = _class_means(config, seed)
    rng = stream(seed, "reference", purpose)
    uniform = np.full(config.num_classes, 1.0 / config.num_classes)
    return _sample_shard(config, means, uniform, n, rng, tuple(range(config.num_modalities)))


def pooled_label_distribution(shards: list[DatasetShard]) -> np.ndarray:
    """Label distribution of the union of all shards."""
    if not shards:
        raise ValueError("no shards")
    counts = np.zeros(shards[0].num_classes)
    for shard in shards:
        counts += np.bincount(shard.labels, minlength=shard.num_classes)
    return counts / counts.sum()
