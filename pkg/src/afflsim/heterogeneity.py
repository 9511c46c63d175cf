"""Network heterogeneity index.

Three bounded divergence components per client — statistical (label
distribution), architectural (model descriptor) and resource (compute and
network) — combine into a weighted per-round scalar in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .federation import ClientProfile, DatasetShard

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class HeterogeneityConfig:
    """Component weights; must sum to 1."""

    alpha: float = 1.0 / 3.0
    beta: float = 1.0 / 3.0
    gamma: float = 1.0 / 3.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("component weights must be nonnegative")
        if abs(self.alpha + self.beta + self.gamma - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")


@dataclass(frozen=True)
class HeterogeneityReport:
    per_client: tuple[tuple[float, float, float], ...]
    h_t: float


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def stat_divergence(shard: DatasetShard, global_label_dist: np.ndarray) -> float:
    """Jensen-Shannon divergence of shard labels vs the global mix, / ln 2."""
    q = np.asarray(global_label_dist, dtype=np.float64)
    if abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("global label distribution must sum to 1")
    p = shard.label_histogram()
    if p.shape != q.shape:
        raise ValueError("distribution lengths differ")
    m = 0.5 * (p + q)
    jsd = 0.5 * _kl(p, m) + 0.5 * _kl(q, m)
    return min(1.0, max(0.0, jsd / LN2))


def _scaled_l1(x: np.ndarray, y: np.ndarray, ranges: np.ndarray) -> float:
    """Mean of per-coordinate |x-y|/range over coordinates with range > 0."""
    informative = ranges > 0
    if not informative.any():
        return 0.0
    diffs = np.abs(x[informative] - y[informative]) / ranges[informative]
    return float(diffs.mean())


def descriptor_divergence(vectors: np.ndarray, index: int) -> float:
    ranges = vectors.max(axis=0) - vectors.min(axis=0)
    peers = [i for i in range(len(vectors)) if i != index]
    if not peers:
        return 0.0
    return float(
        np.mean([_scaled_l1(vectors[index], vectors[i], ranges) for i in peers])
    )


def arch_divergence(profile: ClientProfile, population: list[ClientProfile]) -> float:
    """Mean range-normalized L1 distance of arch descriptors to peers."""
    if not population:
        raise ValueError("population must be non-empty")
    vectors = np.array([p.arch_descriptor for p in population], dtype=np.float64)
    index = next(i for i, p in enumerate(population) if p.id == profile.id)
    return descriptor_divergence(vectors, index)


def res_divergence(profile: ClientProfile, population: list[ClientProfile]) -> float:
    """As arch_divergence over (log compute capacity, network delay)."""
    if not population:
        raise ValueError("population must be non-empty")
    vectors = np.array(
        [[np.log(p.compute_capacity), p.network_delay] for p in population]
    )
    index = next(i for i, p in enumerate(population) if p.id == profile.id)
    return descriptor_divergence(vectors, index)


def heterogeneity_index(
    components: list[tuple[float, float, float]], config: HeterogeneityConfig
) -> HeterogeneityReport:
    """H_t = mean over clients of alpha*D_stat + beta*D_arch + gamma*D_res."""
    if not components:
        raise ValueError("no per-client components")
    arr = np.asarray(components, dtype=np.float64)
    if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
        raise ValueError("divergence components must lie in [0, 1]")
    weights = np.array([config.alpha, config.beta, config.gamma])
    h_t = float(np.mean(arr @ weights))
    return HeterogeneityReport(
        per_client=tuple(tuple(float(v) for v in row) for row in arr), h_t=h_t
    )


def assess_cohort(
    shards: list[DatasetShard],
    cohort: list[ClientProfile],
    global_label_dist: np.ndarray,
    config: HeterogeneityConfig,
) -> HeterogeneityReport:
    """Full per-cohort assessment; components computed in client-id order."""
    components = [
        (
            stat_divergence(shard, global_label_dist),
            arch_divergence(profile, cohort),
            res_divergence(profile, cohort),
        )
        for profile, shard in zip(cohort, shards)
    ]
    return heterogeneity_index(components, config)
