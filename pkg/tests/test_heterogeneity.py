"""Divergence components and the heterogeneity index."""

import numpy as np
import pytest

from afflsim.federation import ClientProfile, DatasetShard
from afflsim.heterogeneity import (
    HeterogeneityConfig,
    arch_divergence,
    descriptor_divergence,
    heterogeneity_index,
    res_divergence,
    stat_divergence,
)
from afflsim.models import Arch
from afflsim.rng import stream


def shard_with_labels(labels, num_classes):
    labels = np.asarray(labels)
    return DatasetShard(np.zeros((len(labels), 2)), labels, num_classes)


def profile(pid, capacity=2.0, delay=1.0, hidden=8, cls="rural", samples=1000):
    return ClientProfile(
        id=pid,
        institution_class=cls,
        sample_count=samples,
        compute_capacity=capacity,
        network_delay=delay,
        modalities=(0,),
        honesty="honest",
        arch=Arch(4, 3, hidden),
    )


def reference_jsd(p, q):
    """Direct JSD formula, natural log."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    m = (p + q) / 2

    def kl(a, b):
        mask = a > 0
        return np.sum(a[mask] * np.log(a[mask] / b[mask]))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def test_stat_divergence_identical_is_zero():
    shard = shard_with_labels([0, 0, 1, 1], 2)
    assert stat_divergence(shard, np.array([0.5, 0.5])) == 0.0


def test_stat_divergence_disjoint_is_one():
    shard = shard_with_labels([0, 0, 0], 2)
    assert stat_divergence(shard, np.array([0.0, 1.0])) == pytest.approx(1.0)


def test_stat_divergence_half_vs_point_mass():
    shard = shard_with_labels([0, 1], 2)
    value = stat_divergence(shard, np.array([1.0, 0.0]))
    assert value == pytest.approx(0.3113, abs=1e-3)
    assert value == pytest.approx(reference_jsd([0.5, 0.5], [1.0, 0.0]) / np.log(2), abs=1e-12)


def test_stat_divergence_validates_inputs():
    shard = shard_with_labels([0, 1], 2)
    with pytest.raises(ValueError):
        stat_divergence(shard, np.array([0.9, 0.2]))
    empty = DatasetShard(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError):
        stat_divergence(empty, np.array([0.5, 0.5]))


def test_arch_divergence_homogeneous_population():
    pop = [profile(i, hidden=8) for i in range(4)]
    assert all(arch_divergence(p, pop) == 0.0 for p in pop)


def test_descriptor_divergence_two_client_example():
    vectors = np.array([[1.0, 8.0, 100.0], [2.0, 16.0, 300.0]])
    assert descriptor_divergence(vectors, 0) == pytest.approx(1.0)
    assert descriptor_divergence(vectors, 1) == pytest.approx(1.0)


def test_descriptor_divergence_rescaling_invariance():
    rng = stream(0, "rescale")
    vectors = rng.uniform(1, 5, (6, 3))
    base = [descriptor_divergence(vectors, i) for i in range(6)]
    scaled = vectors.copy()
    scaled[:, 1] *= 37.0
    rescaled = [descriptor_divergence(scaled, i) for i in range(6)]
    assert base == pytest.approx(rescaled, abs=1e-12)


def test_res_divergence_identical_resources():
    pop = [profile(i, capacity=3.0, delay=1.5) for i in range(3)]
    assert all(res_divergence(p, pop) == 0.0 for p in pop)


def test_res_divergence_log_spaced_capacities():
    # capacities 1, 10, 100 are equally spaced in log; delays identical, so
    # the delay coordinate is uninformative and the middle client sits at 0.5
    pop = [
        profile(0, capacity=1.0, delay=1.0),
        profile(1, capacity=10.0, delay=1.0),
        profile(2, capacity=100.0, delay=1.0),
    ]
    assert res_divergence(pop[1], pop) == pytest.approx(0.5)
    assert res_divergence(pop[0], pop) == pytest.approx(0.75)


def test_res_divergence_bounded_over_random_populations():
    rng = stream(1, "res-sweep")
    for _ in range(1000):
        n = int(rng.integers(2, 6))
        pop = [
            profile(
                i,
                capacity=float(rng.uniform(0.1, 1000.0)),
                delay=float(rng.uniform(1.0, 8.0)),
            )
            for i in range(n)
        ]
        for p in pop:
            assert 0.0 <= res_divergence(p, pop) <= 1.0


def test_index_all_zero_and_all_one():
    config = HeterogeneityConfig()
    assert heterogeneity_index([(0, 0, 0)] * 3, config).h_t == 0.0
    assert heterogeneity_index([(1, 1, 1)] * 3, config).h_t == pytest.approx(1.0)


def test_index_hand_example():
    config = HeterogeneityConfig()
    report = heterogeneity_index([(0.2, 0.4, 0.6), (0.8, 0.6, 0.4)], config)
    assert report.h_t == pytest.approx(0.5)


def test_index_monotone_in_components():
    config = HeterogeneityConfig(alpha=0.5, beta=0.3, gamma=0.2)
    base = heterogeneity_index([(0.2, 0.3, 0.4), (0.1, 0.1, 0.1)], config).h_t
    bumped = heterogeneity_index([(0.5, 0.3, 0.4), (0.1, 0.1, 0.1)], config).h_t
    assert bumped >= base


def test_index_permutation_invariant():
    config = HeterogeneityConfig()
    rows = [(0.2, 0.4, 0.6), (0.8, 0.6, 0.4), (0.1, 0.9, 0.5)]
    assert heterogeneity_index(rows, config).h_t == pytest.approx(
        heterogeneity_index(rows[::-1], config).h_t
    )


def test_index_bounds_over_random_inputs():
    rng = stream(2, "index-sweep")
    config = HeterogeneityConfig()
    for _ in range(500):
        rows = rng.uniform(0, 1, (int(rng.integers(1, 8)), 3))
        h = heterogeneity_index([tuple(r) for r in rows], config).h_t
        assert 0.0 <= h <= 1.0


def test_index_rejects_empty_and_bad_weights():
    with pytest.raises(ValueError):
        heterogeneity_index([], HeterogeneityConfig())
    with pytest.raises(ValueError):
        HeterogeneityConfig(alpha=0.5, beta=0.5, gamma=0.5)
