"""Adaptive knowledge messenger.

The messenger is a small shared model that moves knowledge between server
and clients by distillation. This module covers: capacity selection over a
fixed template grid (probe-based loss proxy + communication and fairness
penalties), function-preserving resizing between templates, softmax
curriculum weights, tier-weighted knowledge injection into clients,
per-client distillation back into messenger variants, and linear-encoder
multi-modal fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .federation import DatasetShard
from .models import Arch, ModelParams, _unpack, backprop, forward, logits, softmax
from .rng import stream


@dataclass(frozen=True)
class CapacityGrid:
    """Ordered messenger templates plus selection penalties."""

    templates: tuple[Arch, ...]
    lambda1: float = 0.1
    lambda2: float = 0.1
    probe_steps: int = 10
    probe_lr: float = 0.5
    adapt_interval: int = 5

    def __post_init__(self):
        if not self.templates:
            raise ValueError("capacity grid needs at least one template")
        counts = [t.param_count for t in self.templates]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("templates must be strictly ascending in param count")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be >= 1")


@dataclass(frozen=True)
class CapacityDecision:
    chosen_index: int
    # per template: (loss_proxy, comm_cost, fairness_penalty, total)
    composite_scores: tuple[tuple[float, float, float, float], ...]
    h_t: float = 0.0
    round_index: int = 0


@dataclass(frozen=True)
class CurriculumSchedule:
    """Softmax stage schedule: stage k has offset tau[k] and scale sigma[k]."""

    num_tiers: int
    tau: tuple[float, ...]
    sigma: tuple[float, ...]

    def __post_init__(self):
        if self.num_tiers < 1:
            raise ValueError("need at least one curriculum stage")
        if len(self.tau) != self.num_tiers or len(self.sigma) != self.num_tiers:
            raise ValueError("tau and sigma must have one entry per stage")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma entries must be positive")

    @classmethod
    def spread(cls, num_tiers: int, horizon: int) -> "CurriculumSchedule":
        """Offsets spread evenly over the horizon with shrinking sigmas.

        Sigmas must differ per stage: with equal sigmas the common t/sigma
        term cancels inside the softmax and the weights never move. Later
        stages get smaller sigmas, so weight flows easy -> hard over time.
        """
        tau = tuple(horizon * k / max(1, num_tiers) for k in range(num_tiers))
        sigma = tuple(max(1.0, horizon / (2.0 * (k + 1))) for k in range(num_tiers))
        return cls(num_tiers, tau, sigma)


def curriculum_weights(t: float, schedule: CurriculumSchedule) -> np.ndarray:
    """Stage weights softmax((t - tau_k) / sigma_k); sums to 1."""
    z = (t - np.asarray(schedule.tau)) / np.asarray(schedule.sigma)
    return softmax(z)


def resize_params(params: ModelParams, new_arch: Arch, seed: int) -> ModelParams:
    """Re-fit parameters to a new template, preserving the function.

    Same-depth resizes copy overlapping blocks; new hidden units get small
    seeded input-side weights and zero output rows, so the mapped function
    is unchanged at the moment of resize while the units stay trainable.
    Depth changes start from a fresh seeded init (no blocks overlap).
    """
    if new_arch == params.arch:
        return params.copy()
    rng = stream(seed, "resize", params.arch.descriptor, new_arch.descriptor)
    if new_arch.depth != params.arch.depth or new_arch.in_dim != params.arch.in_dim:
        from .models import init_params

        return init_params(new_arch, seed)
    theta = np.zeros(new_arch.param_count)
    if new_arch.hidden == 0:
        w_old, b_old = _unpack(params.arch, params.theta)
        w_new, b_new = _unpack(new_arch, theta)
        c = min(w_old.shape[1], w_new.shape[1])
        w_new[:, :c] = w_old[:, :c]
        b_new[:c] = b_old[:c]
        return ModelParams(new_arch, theta)
    w1o, b1o, w2o, b2o = _unpack(params.arch, params.theta)
    w1n, b1n, w2n, b2n = _unpack(new_arch, theta)
    h = min(params.arch.hidden, new_arch.hidden)
    w1n[:, :h] = w1o[:, :h]
    b1n[:h] = b1o[:h]
    w2n[:h, :] = w2o[:h, :]
    b2n[:] = b2o
    if new_arch.hidden > h:
        w1n[:, h:] = 0.01 * rng.normal(0.0, 1.0, w1n[:, h:].shape)
        b1n[h:] = 0.01 * rng.normal(0.0, 1.0, b1n[h:].shape)
        # w2 rows for new units stay zero: output unchanged until trained
    return ModelParams(new_arch, theta)


def _distill_toward_teacher(
    params: ModelParams,
    features: np.ndarray,
    teacher_probs: np.ndarray,
    steps: int,
    lr: float,
) -> tuple[ModelParams, float]:
    """Train params to match fixed teacher probabilities; returns final KL."""
    theta = params.theta.copy()
    current = ModelParams(params.arch, theta)
    n = features.shape[0]
    for _ in range(steps):
        z, hidden = forward(current, features)
        delta = (softmax(z) - teacher_probs) / n
        theta = theta - lr * backprop(current, features, delta, hidden)
        current = ModelParams(params.arch, theta)
    p = softmax(logits(current, features))
    kl = float(
        np.mean(np.sum(teacher_probs * (_safe_log(teacher_probs) - _safe_log(p)), axis=1))
    )
    # KL is nonnegative; clamp float dust so exact ties stay ties
    return current, max(kl, 0.0)


def _safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, 1e-300))


def select_capacity(
    grid: CapacityGrid,
    h_t: float,
    probe_shard: DatasetShard,
    teacher_logits: np.ndarray,
    client_loss_spread: float,
    round_index: int,
    prev: CapacityDecision | None,
    current: ModelParams,
    seed: int,
    lambda2: float | None = None,
) -> CapacityDecision:
    """Pick the messenger template minimizing probe loss + penalties.

    Off the adaptation interval the previous decision is returned
    unchanged. Each template is probed by resizing the current messenger
    and distilling probe_steps toward the averaged-logit teacher; its score
    is probe KL + lambda1 * normalized param count + lambda2 * loss spread
    scaled down linearly as capacity grows. Ties go to the smaller index.
    """
    if round_index % grid.adapt_interval != 0 and prev is not None:
        return prev
    if probe_shard.sample_count == 0:
        raise ValueError("probe shard is empty")
    lam2 = grid.lambda2 if lambda2 is None else lambda2
    teacher_probs = softmax(np.asarray(teacher_logits, dtype=np.float64))
    max_pc = grid.templates[-1].param_count
    scores = []
    for template in grid.templates:
        candidate = resize_params(current, template, seed)
        _, kl = _distill_toward_teacher(
            candidate, probe_shard.features, teacher_probs, grid.probe_steps, grid.probe_lr
        )
        comm_cost = template.param_count / max_pc
        penalty_scale = 1.0 - template.param_count / max_pc
        fairness_penalty = client_loss_spread * penalty_scale
        total = kl + grid.lambda1 * comm_cost + lam2 * fairness_penalty
        scores.append((kl, comm_cost, fairness_penalty, total))
    totals = np.array([s[3] for s in scores])
    chosen = int(np.argmin(totals))  # argmin takes the first (smallest) index on ties
    return CapacityDecision(
        chosen_index=chosen,
        composite_scores=tuple(scores),
        h_t=float(h_t),
        round_index=round_index,
    )


def _tier_sample_weights(shard: DatasetShard, pi: np.ndarray) -> np.ndarray:
    """Per-sample weights pi[tier]/|tier|; empty tiers contribute nothing."""
    if shard.difficulty_tiers is None:
        raise ValueError("shard needs difficulty tiers before injection")
    if shard.num_tiers != len(pi):
        raise ValueError(
            f"curriculum has {len(pi)} stages but shard has {shard.num_tiers} tiers"
        )
    tiers = shard.difficulty_tiers
    counts = np.bincount(tiers, minlength=len(pi)).astype(np.float64)
    weights = np.zeros(shard.sample_count)
    occupied = counts > 0
    per_tier = np.zeros(len(pi))
    per_tier[occupied] = np.asarray(pi)[occupied] / counts[occupied]
    weights = per_tier[tiers]
    return weights


def injection_loss(
    client: ModelParams, messenger: ModelParams, shard: DatasetShard, pi: np.ndarray
) -> float:
    """Sum over stages of pi_k * mean KL(messenger || client) on tier k."""
    w = _tier_sample_weights(shard, pi)
    p_m = softmax(logits(messenger, shard.features))
    p_c = softmax(logits(client, shard.features))
    per_sample = np.sum(p_m * (_safe_log(p_m) - _safe_log(p_c)), axis=1)
    return float(np.sum(w * per_sample))


def inject_knowledge(
    client: ModelParams,
    messenger: ModelParams,
    shard: DatasetShard,
    pi: np.ndarray,
    steps: int,
    lr: float,
) -> ModelParams:
    """Gradient steps on the curriculum-weighted distillation loss.

    Only the client tower moves; the messenger is frozen.
    """
    w = _tier_sample_weights(shard, pi)
    p_m = softmax(logits(messenger, shard.features))
    theta = client.theta.copy()
    current = ModelParams(client.arch, theta)
    for _ in range(steps):
        z, hidden = forward(current, shard.features)
        delta = w[:, None] * (softmax(z) - p_m)
        theta = theta - lr * backprop(current, shard.features, delta, hidden)
        current = ModelParams(client.arch, theta)
    return current


def distillation_loss(
    messenger: ModelParams, client: ModelParams, shard: DatasetShard, lambda_kl: float
) -> float:
    """CE(messenger, labels) + lambda_kl * mean KL(client || messenger)."""
    n = shard.sample_count
    p_m = softmax(logits(messenger, shard.features))
    p_c = softmax(logits(client, shard.features))
    ce = float(-np.mean(_safe_log(p_m[np.arange(n), shard.labels])))
    kl = float(np.mean(np.sum(p_c * (_safe_log(p_c) - _safe_log(p_m)), axis=1)))
    return ce + lambda_kl * kl


def distillation_grad(
    messenger: ModelParams, client: ModelParams, shard: DatasetShard, lambda_kl: float
) -> np.ndarray:
    """Gradient of distillation_loss w.r.t. the messenger parameters."""
    n = shard.sample_count
    p_m = softmax(logits(messenger, shard.features))
    p_c = softmax(logits(client, shard.features))
    onehot = np.zeros((n, shard.num_classes))
    onehot[np.arange(n), shard.labels] = 1.0
    delta = ((p_m - onehot) + lambda_kl * (p_m - p_c)) / n
    return backprop(messenger, shard.features, delta)


def distill_to_messenger(
    messenger: ModelParams,
    client: ModelParams,
    shard: DatasetShard,
    lambda_kl: float,
    steps: int,
    lr: float,
) -> ModelParams:
    """Train a per-client messenger variant; the client tower is frozen."""
    n = shard.sample_count
    p_c = softmax(logits(client, shard.features))
    onehot = np.zeros((n, shard.num_classes))
    onehot[np.arange(n), shard.labels] = 1.0
    theta = messenger.theta.copy()
    current = ModelParams(messenger.arch, theta)
    for _ in range(steps):
        z, hidden = forward(current, shard.features)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite distillation loss")
        p_m = softmax(z)
        delta = ((p_m - onehot) + lambda_kl * (p_m - p_c)) / n
        theta = theta - lr * backprop(current, shard.features, delta, hidden)
        current = ModelParams(messenger.arch, theta)
    return current


@dataclass(frozen=True)
class FusionConfig:
    """Pre-softmax modality weights plus one linear encoder per modality."""

    modality_ids: tuple[int, ...]
    raw_weights: tuple[float, ...]
    encoders: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.modality_ids:
            raise ValueError("fusion needs at least one modality")
        if len({e.shape[1] for e in self.encoders}) != 1:
            raise ValueError("all encoders must map into the same fused dimension")
        if not (len(self.modality_ids) == len(self.raw_weights) == len(self.encoders)):
            raise ValueError("modality ids, weights and encoders must align")

    @property
    def fused_dim(self) -> int:
        return self.encoders[0].shape[1]

    def normalized_weights(self, present: tuple[int, ...] | None = None) -> dict[int, float]:
        """Softmax weights, renormalized over the present modalities."""
        ids = self.modality_ids if present is None else tuple(present)
        raw = {m: w for m, w in zip(self.modality_ids, self.raw_weights)}
        z = np.array([raw[m] for m in ids])
        w = softmax(z)
        return {m: float(v) for m, v in zip(ids, w)}

    @classmethod
    def identity(cls, modality_ids: tuple[int, ...], dims: tuple[int, ...]) -> "FusionConfig":
        width = max(dims)
        encoders = []
        for d in dims:
            e = np.zeros((d, width))
            e[:d, :d] = np.eye(d)
            encoders.append(e)
        return cls(modality_ids, tuple(0.0 for _ in modality_ids), tuple(encoders))


def fuse_modalities(inputs: dict[int, np.ndarray], fusion: FusionConfig) -> np.ndarray:
    """Weighted sum of encoded modalities, weights renormalized over present ones."""
    present = tuple(m for m in fusion.modality_ids if m in inputs)
    if not present:
        raise ValueError("no configured modality present in inputs")
    weights = fusion.normalized_weights(present)
    encoder = {m: e for m, e in zip(fusion.modality_ids, fusion.encoders)}
    fused = None
    for m in present:
        x = np.asarray(inputs[m], dtype=np.float64)
        e = encoder[m]
        if x.shape[-1] != e.shape[0]:
            raise ValueError(
                f"modality {m} input width {x.shape[-1]} != encoder rows {e.shape[0]}"
            )
        term = weights[m] * (x @ e)
        fused = term if fused is None else fused + term
    return fused
