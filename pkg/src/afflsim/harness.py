"""Round loop: sampling, training, distillation, privacy, attacks, aggregation.

run_experiment drives the adaptive protocol (or a baseline) round by round,
appending one RoundRecord per round with every observable the metric suite
needs: heterogeneity, capacity decisions, Shapley weights, per-client
accuracy, byte and energy accounting, and privacy spend.

All randomness flows through per-(purpose, round, client) counter-based
streams, so a (config, seed) pair fully determines the run log at any
thread count.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import fairness as fair
from . import heterogeneity as het
from . import messenger as msg
from . import models, privacy
from .config import RunConfig
from .federation import (
    ClientProfile,
    DatasetShard,
    FederationConfig,
    gen_federation,
    gen_reference_shard,
    pooled_label_distribution,
)
from .models import Arch, ModelParams
from .rng import stream, subseed

SCHEMA_VERSION = 1

THREADS_ENV = "AFFLSIM_THREADS"
OUTPUT_DIR_ENV = "AFFLSIM_OUTPUT_DIR"


@dataclass(frozen=True)
class AttackSpec:
    kind: str | None = None  # sign_flip | large_norm | label_flip
    attacker_fraction: float = 0.0
    scale: float = 10.0

    def __post_init__(self):
        if not 0 <= self.attacker_fraction < 0.5:
            raise ValueError("attacker_fraction must lie in [0, 0.5)")
        if self.kind not in (None, "sign_flip", "large_norm", "label_flip"):
            raise ValueError(f"unknown attack kind {self.kind!r}")


@dataclass
class RoundRecord:
    round_index: int
    h_t: float
    capacity_index: int | None
    cohort: list[int]
    dropped: list[int]
    phi: list[float] | None
    weights: list[float] | None
    per_client: list[tuple[int, float, float]]  # (id, loss, accuracy)
    global_val_loss: float
    global_val_accuracy: float
    global_pool_loss: float  # loss on the pooled federation data (the global objective)
    fairness_gap: float
    lambda2: float
    bytes_up: int
    bytes_down: int
    energy_kwh: float
    eps_round: float
    eps_total: float
    empty: bool = False

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["per_client"] = [[int(i), float(l), float(a)] for i, l, a in self.per_client]
        return d


@dataclass
class RunLog:
    algorithm: str
    seed: int
    config_digest: str
    records: list[RoundRecord] = field(default_factory=list)
    h_max: float = 0.0
    target_accuracy: float | None = None
    rounds_to_target: int | None = None
    initial_val_loss: float = 0.0
    initial_val_accuracy: float = 0.0
    final_client_accuracy: dict[int, float] = field(default_factory=dict)
    final_class_accuracy: dict[str, float] = field(default_factory=dict)

    @property
    def rounds_run(self) -> int:
        return len(self.records)

    def final_val_accuracy(self) -> float:
        return self.records[-1].global_val_accuracy if self.records else self.initial_val_accuracy

    def mean_bytes_per_round(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.bytes_up + r.bytes_down for r in self.records]))

    def mean_kwh_per_round(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.energy_kwh for r in self.records]))

    def loss_curve(self) -> list[tuple[int, float]]:
        """(round, pooled-objective loss) pairs for convergence fits."""
        return [(r.round_index, r.global_pool_loss) for r in self.records]

    def summary_dict(self) -> dict:
        accs = list(self.final_client_accuracy.values())
        return {
            "schema_version": SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "rounds_run": self.rounds_run,
            "rounds_to_target": self.rounds_to_target,
            "target_accuracy": self.target_accuracy,
            "initial_val_accuracy": self.initial_val_accuracy,
            "final_val_accuracy": self.final_val_accuracy(),
            "final_client_accuracy": {str(k): v for k, v in sorted(self.final_client_accuracy.items())},
            "final_class_accuracy": dict(sorted(self.final_class_accuracy.items())),
            "gini_accuracy": fair.gini(accs) if accs else 0.0,
            "fairness_gap_final": fair.fairness_gap(accs) if accs else 0.0,
            "mean_bytes_per_round": self.mean_bytes_per_round(),
            "mean_kwh_per_round": self.mean_kwh_per_round(),
            "eps_total": self.records[-1].eps_total if self.records else 0.0,
            "h_max": self.h_max,
        }


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _parallel_map(fn, items: list):
    """Order-preserving map; thread count never changes the result."""
    threads = thread_count()
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Load model, sampling, attacks
# ---------------------------------------------------------------------------


def compute_load(profile: ClientProfile, work_units: float) -> float:
    """(work / capacity) * network delay; the per-round cost proxy."""
    if profile.compute_capacity <= 0:
        raise ValueError("capacity must be positive")
    return work_units / profile.compute_capacity * profile.network_delay


def sample_clients(
    population: list[ClientProfile],
    rate: float,
    load_aware: bool,
    seed: int,
    round_index: int,
) -> list[int]:
    """Sample a cohort without replacement; sorted client ids.

    Uniform mode draws a fixed-size cohort. Load-aware mode uses systematic
    sampling with inclusion probability proportional to 1/load, which keeps
    the expected cohort size within one client of rate*N.
    """
    n = len(population)
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    m = rate * n
    if m < 1:
        raise ValueError("rate * population must be at least 1")
    rng = stream(seed, "sample", round_index)
    if not load_aware:
        k = int(round(m))
        chosen = rng.choice(n, size=k, replace=False)
        return sorted(population[int(i)].id for i in chosen)
    inv = np.array([1.0 / compute_load(p, 1.0) for p in population])
    probs = m * inv / inv.sum()
    # cap at 1 and push the excess mass onto the rest
    for _ in range(n):
        over = probs > 1.0
        if not over.any():
            break
        excess = float(np.sum(probs[over] - 1.0))
        probs[over] = 1.0
        free = ~over
        if probs[free].sum() > 0:
            probs[free] += excess * probs[free] / probs[free].sum()
    cum = np.cumsum(probs)
    u = rng.uniform(0.0, 1.0)
    picks = np.floor(cum - u).astype(int) - np.floor(np.concatenate([[0.0], cum[:-1]]) - u).astype(int)
    return sorted(population[i].id for i in np.nonzero(picks > 0)[0])


def apply_attack_flags(profiles: list[ClientProfile], spec: AttackSpec) -> list[ClientProfile]:
    """Mark the floor(fraction*N) largest clients as attackers."""
    if spec.kind is None or spec.attacker_fraction == 0.0:
        return list(profiles)
    count = int(np.floor(spec.attacker_fraction * len(profiles)))
    by_size = sorted(profiles, key=lambda p: (-p.sample_count, p.id))
    attacker_ids = {p.id for p in by_size[:count]}
    return [
        replace(p, honesty=spec.kind) if p.id in attacker_ids else p for p in profiles
    ]


def flip_labels(shard: DatasetShard) -> DatasetShard:
    """Cyclic label permutation used by label_flip attackers at train time."""
    return shard.with_labels((shard.labels + 1) % shard.num_classes)


def inject_attack(
    variants: list[ModelParams],
    base: ModelParams,
    cohort: list[ClientProfile],
    spec: AttackSpec,
    seed: int,
) -> list[ModelParams]:
    """Apply delta-level attacks to the variants of flagged clients.

    sign_flip negates the attacker's delta; large_norm scales it. label_flip
    acts at the data level before training, so variants pass through here.
    """
    if spec.kind in (None, "label_flip"):
        return [v.copy() for v in variants]
    out = []
    for profile, variant in zip(cohort, variants):
        if profile.honesty != spec.kind:
            out.append(variant.copy())
            continue
        delta = variant.theta - base.theta
        factor = -1.0 if spec.kind == "sign_flip" else spec.scale
        out.append(ModelParams(variant.arch, base.theta + factor * delta))
    return out


# ---------------------------------------------------------------------------
# Simulation state
# ---------------------------------------------------------------------------


@dataclass
class SimState:
    config: RunConfig
    profiles: list[ClientProfile]
    shards: list[DatasetShard]  # tiers assigned, fused features if configured
    train_shards: list[DatasetShard]  # label-flipped views for attackers
    validation: DatasetShard
    probe: DatasetShard
    pooled_eval: DatasetShard
    pooled_dist: np.ndarray
    client_params: list[ModelParams]
    messenger: ModelParams
    global_model: ModelParams | None  # fedavg only
    grid: msg.CapacityGrid
    schedule: msg.CurriculumSchedule
    het_config: het.HeterogeneityConfig
    attack: AttackSpec
    capacity_decision: msg.CapacityDecision | None
    lambda2: float
    round_index: int
    h_max: float
    eps_total: float
    last_client_losses: dict[int, float]
    phi_prior: dict[int, float]  # latest Shapley estimate per client; uniform at start
    privacy_params: privacy.PrivacyParams
    per_round_eps: float


def _steps_per_round(cfg: RunConfig) -> int:
    p = cfg.protocol
    if p.algorithm == "fedavg":
        return p.local_steps
    return p.local_steps + p.inject_steps + p.distill_steps


def _round_energy(cfg: RunConfig, cohort_profiles: list[ClientProfile]) -> float:
    """kWh per round: sum over cohort of work/capacity times the coefficient."""
    steps = _steps_per_round(cfg)
    return sum(
        steps * pr.sample_count / pr.compute_capacity * cfg.energy_coefficient
        for pr in cohort_profiles
    )


def _build_fusion(cfg: RunConfig, fed: FederationConfig, seed: int) -> msg.FusionConfig | None:
    if fed.num_modalities <= 1 and cfg.protocol.fused_dim is None:
        return None
    blocks = fed.modality_blocks()
    dims = [stop - start for _, (start, stop) in blocks]
    fused_dim = cfg.protocol.fused_dim or max(dims)
    encoders = []
    for (mid, _), d in zip(blocks, dims):
        if d == fused_dim:
            encoders.append(np.eye(d))
        else:
            rng = stream(seed, "fusion-encoder", mid)
            encoders.append(rng.normal(0.0, 1.0, (d, fused_dim)) / np.sqrt(d))
    ids = tuple(m for m, _ in blocks)
    raw = cfg.protocol.fusion_weights
    if raw is None:
        raw = tuple(0.0 for _ in ids)
    elif len(raw) != len(ids):
        raise ValueError("fusion_weights needs one entry per modality")
    return msg.FusionConfig(ids, tuple(float(w) for w in raw), tuple(encoders))


def _fuse_shard(
    shard: DatasetShard,
    fusion: msg.FusionConfig,
    modalities: tuple[int, ...],
    active: tuple[int, ...] | None,
) -> DatasetShard:
    present = tuple(m for m in modalities if active is None or m in active)
    if not present:
        raise ValueError("client has no active modality")
    inputs = {m: shard.features[:, shard.modality_columns(m)] for m in present}
    return shard.with_features(msg.fuse_modalities(inputs, fusion))


def init_state(cfg: RunConfig) -> SimState:
    """Generate the federation and initialize every protocol object."""
    fed = FederationConfig(
        counts=cfg.federation.counts(),
        num_classes=cfg.federation.num_classes,
        feature_dim=cfg.federation.feature_dim,
        concentration=cfg.federation.concentration,
        num_modalities=cfg.federation.num_modalities,
        modalities_by_class=cfg.federation.modalities_by_class
        or {"academic": None, "regional": None, "rural": None},
        class_separation=cfg.federation.class_separation,
        feature_noise=cfg.federation.feature_noise,
        hidden_by_class=cfg.federation.hidden_by_class(),
        radial_pairs=cfg.federation.radial_pairs,
        radial_scale=cfg.federation.radial_scale,
    )
    profiles, shards = gen_federation(fed, cfg.seed)
    validation = gen_reference_shard(fed, cfg.seed, cfg.validation_samples, "validation")
    probe = gen_reference_shard(fed, cfg.seed, cfg.probe_samples, "probe")
    pooled = pooled_label_distribution(shards)

    fusion = _build_fusion(cfg, fed, cfg.seed)
    active = cfg.protocol.active_modalities
    if fusion is not None:
        shards = [
            _fuse_shard(s, fusion, p.modalities, active) for p, s in zip(profiles, shards)
        ]
        all_mods = tuple(range(fed.num_modalities))
        validation = _fuse_shard(validation, fusion, all_mods, active)
        probe = _fuse_shard(probe, fusion, all_mods, active)
        in_dim = fusion.fused_dim
        profiles = [replace(p, arch=Arch(in_dim, p.arch.num_classes, p.arch.hidden)) for p in profiles]
    in_dim = shards[0].features.shape[1]

    attack = AttackSpec(
        kind=cfg.attack.kind,
        attacker_fraction=cfg.attack.attacker_fraction,
        scale=cfg.attack.scale,
    )
    profiles = apply_attack_flags(profiles, attack)
    train_shards = [
        flip_labels(s) if p.honesty == "label_flip" else s
        for p, s in zip(profiles, shards)
    ]

    p = cfg.protocol
    algorithm = p.algorithm
    if algorithm == "fedavg":
        arch = Arch(in_dim, fed.num_classes, p.fedavg_hidden)
        profiles = [replace(pr, arch=arch) for pr in profiles]
        global_model = models.init_params(arch, subseed(cfg.seed, "global"))
        client_params = [global_model.copy() for _ in profiles]
    else:
        global_model = None
        client_params = [
            models.init_params(pr.arch, subseed(cfg.seed, "client-init", pr.id))
            for pr in profiles
        ]

    # warm-up pass: tiers come from each client's briefly trained model
    num_tiers = p.curriculum_tiers
    warmed = []
    tiered = []
    for pr, params, shard, tshard in zip(profiles, client_params, shards, train_shards):
        w = models.train_local(params, tshard, p.warmup_steps, p.local_lr)
        warmed.append(w)
        tiered.append(models.assign_difficulty_tiers(shard, w, num_tiers))
    shards = tiered
    train_shards = [
        flip_labels(s) if pr.honesty == "label_flip" else s
        for pr, s in zip(profiles, shards)
    ]
    client_params = warmed

    templates = tuple(Arch(in_dim, fed.num_classes, h) for h in p.grid_hidden)
    grid = msg.CapacityGrid(
        templates=templates,
        lambda1=p.lambda1,
        lambda2=p.lambda2,
        probe_steps=p.probe_steps,
        probe_lr=p.probe_lr,
        adapt_interval=p.adapt_interval,
    )
    if not 0 <= p.initial_capacity_index < len(templates):
        raise ValueError("initial_capacity_index outside the template grid")
    messenger = models.init_params(
        templates[p.initial_capacity_index], subseed(cfg.seed, "messenger")
    )
    if p.curriculum_tau is not None and p.curriculum_sigma is not None:
        schedule = msg.CurriculumSchedule(num_tiers, tuple(p.curriculum_tau), tuple(p.curriculum_sigma))
    else:
        schedule = msg.CurriculumSchedule.spread(num_tiers, max(cfg.max_rounds, 1))

    pooled_eval = DatasetShard(
        np.concatenate([s.features for s in shards]),
        np.concatenate([s.labels for s in shards]),
        shards[0].num_classes,
    )

    priv = privacy.PrivacyParams(
        clip_norm=cfg.privacy.clip_norm,
        noise_multiplier=cfg.privacy.noise_multiplier,
        delta=cfg.privacy.delta,
        enabled=cfg.privacy.enabled,
    )
    per_round_eps = 0.0
    if priv.enabled and priv.noise_multiplier > 0:
        priv.check_delta(min(pr.sample_count for pr in profiles))
        per_round_eps = privacy.account_privacy(1, priv).per_round_eps

    decision = msg.CapacityDecision(
        chosen_index=p.initial_capacity_index,
        composite_scores=(),
        h_t=0.0,
        round_index=0,
    )
    return SimState(
        config=cfg,
        profiles=profiles,
        shards=shards,
        train_shards=train_shards,
        validation=validation,
        probe=probe,
        pooled_eval=pooled_eval,
        pooled_dist=pooled,
        client_params=client_params,
        messenger=messenger,
        global_model=global_model,
        grid=grid,
        schedule=schedule,
        het_config=het.HeterogeneityConfig(p.het_alpha, p.het_beta, p.het_gamma),
        attack=attack,
        capacity_decision=decision,
        lambda2=p.lambda2,
        round_index=0,
        h_max=0.0,
        eps_total=0.0,
        last_client_losses={},
        phi_prior={pr.id: 1.0 / len(profiles) for pr in profiles},
        privacy_params=priv,
        per_round_eps=per_round_eps,
    )


# ---------------------------------------------------------------------------
# Round loop
# ---------------------------------------------------------------------------


def _sample_cohort(state: SimState, round_index: int) -> tuple[list[int], list[int]]:
    cfg = state.config
    ids = sample_clients(
        state.profiles,
        cfg.protocol.sample_rate,
        cfg.protocol.load_aware_sampling,
        cfg.seed,
        round_index,
    )
    if cfg.protocol.dropout_rate <= 0:
        return ids, []
    kept, dropped = [], []
    for i in ids:
        u = stream(cfg.seed, "dropout", round_index, i).random()
        (dropped if u < cfg.protocol.dropout_rate else kept).append(i)
    return kept, dropped


def probe_teacher_logits(state: SimState, cohort: list[int]) -> np.ndarray:
    """Averaged client logits on the probe shard (the probe teacher)."""
    stacked = [
        models.logits(state.client_params[i], state.probe.features) for i in cohort
    ]
    return np.mean(stacked, axis=0)


def _loss_spread(state: SimState, cohort: list[int]) -> float:
    losses = [state.last_client_losses[i] for i in cohort if i in state.last_client_losses]
    if len(losses) < 2:
        return 0.0
    mean = float(np.mean(losses))
    if mean <= 0:
        return 0.0
    return float(np.std(losses) / mean)


def _resolve_f(robust_f, cohort_size: int) -> int:
    if robust_f == "auto":
        return max(0, (cohort_size - 1) // 3)
    return int(robust_f)


def _empty_record(state: SimState, round_index: int, dropped: list[int]) -> RoundRecord:
    model = state.global_model if state.global_model is not None else state.messenger
    loss, acc = models.evaluate(model, state.validation)
    pool_loss, _ = models.evaluate(model, state.pooled_eval)
    return RoundRecord(
        round_index=round_index,
        h_t=0.0,
        capacity_index=(
            state.capacity_decision.chosen_index if state.global_model is None else None
        ),
        cohort=[],
        dropped=dropped,
        phi=None,
        weights=None,
        per_client=[],
        global_val_loss=loss,
        global_val_accuracy=acc,
        global_pool_loss=pool_loss,
        fairness_gap=0.0,
        lambda2=state.lambda2,
        bytes_up=0,
        bytes_down=0,
        energy_kwh=0.0,
        eps_round=0.0,
        eps_total=state.eps_total,
        empty=True,
    )


def run_round(state: SimState, cfg: RunConfig | None = None) -> tuple[SimState, RoundRecord]:
    """Advance one protocol round; returns new state plus its record."""
    cfg = cfg or state.config
    if cfg.protocol.algorithm == "fedavg":
        return _run_round_fedavg(state, cfg)
    return _run_round_messenger(state, cfg)


def _run_round_messenger(state: SimState, cfg: RunConfig) -> tuple[SimState, RoundRecord]:
    p = cfg.protocol
    algorithm = p.algorithm
    t = state.round_index + 1
    cohort, dropped = _sample_cohort(state, t)
    if not cohort:
        new_state = replace(state, round_index=t)
        return new_state, _empty_record(new_state, t, dropped)
    cohort_profiles = [state.profiles[i] for i in cohort]
    cohort_shards = [state.shards[i] for i in cohort]

    # phase 1: heterogeneity assessment on the sampled cohort
    report = het.assess_cohort(
        cohort_shards, cohort_profiles, state.pooled_dist, state.het_config
    )
    h_max = max(state.h_max, report.h_t)

    # phase 2: capacity adaptation on the configured interval
    messenger_model = state.messenger
    decision = state.capacity_decision
    if algorithm in ("affl", "uniform_weight_affl") and t % state.grid.adapt_interval == 0:
        teacher = probe_teacher_logits(state, cohort)
        decision = msg.select_capacity(
            state.grid,
            report.h_t,
            state.probe,
            teacher,
            _loss_spread(state, cohort),
            t,
            state.capacity_decision,
            state.messenger,
            subseed(cfg.seed, "capacity", t),
            lambda2=state.lambda2,
        )
        if decision.chosen_index != state.capacity_decision.chosen_index:
            messenger_model = msg.resize_params(
                state.messenger,
                state.grid.templates[decision.chosen_index],
                subseed(cfg.seed, "resize", t),
            )

    # phase 3+4: local training, curriculum injection, distillation (per client)
    if algorithm == "static_messenger":
        pi = np.full(state.schedule.num_tiers, 1.0 / state.schedule.num_tiers)
    else:
        pi = msg.curriculum_weights(t, state.schedule)

    def client_work(i: int) -> tuple[ModelParams, ModelParams]:
        train_shard = state.train_shards[i]
        params = models.train_local(state.client_params[i], train_shard, p.local_steps, p.local_lr)
        params = msg.inject_knowledge(
            params, messenger_model, train_shard, pi, p.inject_steps, p.inject_lr
        )
        variant = msg.distill_to_messenger(
            messenger_model, params, train_shard, p.lambda_kl, p.distill_steps, p.distill_lr
        )
        return params, variant

    results = _parallel_map(client_work, cohort)
    client_params = list(state.client_params)
    variants = []
    for i, (params, variant) in zip(cohort, results):
        client_params[i] = params
        variants.append(variant)

    # privacy on the variant deltas that leave clients
    eps_round = 0.0
    if state.privacy_params.enabled and state.privacy_params.noise_multiplier > 0:
        private = []
        for i, variant in zip(cohort, variants):
            delta = variant.theta - messenger_model.theta
            noisy = privacy.privatize(
                delta, state.privacy_params, subseed(cfg.seed, "dp", t, i)
            )
            private.append(ModelParams(variant.arch, messenger_model.theta + noisy))
        variants = private
        eps_round = state.per_round_eps
    eps_total = state.eps_total + eps_round

    # attack injection on flagged clients' deltas
    variants = inject_attack(
        variants, messenger_model, cohort_profiles, state.attack, subseed(cfg.seed, "attack", t)
    )

    # phase 5: influence weights and aggregation
    phi_list = None
    if algorithm == "affl":
        _, v_empty = models.evaluate(messenger_model, state.validation)
        by_id = {i: v for i, v in zip(cohort, variants)}

        def value_fn(subset: tuple[int, ...]) -> float:
            if not subset:
                return v_empty
            uniform = np.full(len(subset), 1.0 / len(subset))
            agg = fair.aggregate_messengers([by_id[i] for i in subset], uniform)
            return models.evaluate(agg, state.validation)[1]

        phi = fair.shapley_estimate(
            cohort,
            value_fn,
            mode=p.shapley_mode,
            num_perms=p.shapley_perms,
            seed=subseed(cfg.seed, "shapley", t),
        )
        weights = fair.fair_weights(
            phi,
            np.array([pr.sample_count for pr in cohort_profiles]),
            p.eps_smooth,
            p.delta_size,
        ).w
        phi_list = [float(v) for v in phi]
        phi_prior = dict(state.phi_prior)
        phi_prior.update({i: float(v) for i, v in zip(cohort, phi)})
    elif algorithm == "uniform_weight_affl":
        weights = np.full(len(cohort), 1.0 / len(cohort))
        phi_prior = state.phi_prior
    else:  # static_messenger: size-proportional
        counts = np.array([pr.sample_count for pr in cohort_profiles], dtype=np.float64)
        weights = counts / counts.sum()
        phi_prior = state.phi_prior

    if p.robust_method is not None:
        robust_cfg = fair.RobustAggConfig(
            method=p.robust_method, f=_resolve_f(p.robust_f, len(cohort))
        )
        new_messenger = fair.robust_aggregate(variants, robust_cfg, weights=weights)
    else:
        new_messenger = fair.aggregate_messengers(variants, weights)

    # phase 6: fairness monitoring
    per_client = []
    losses = dict(state.last_client_losses)
    for i in cohort:
        loss, acc = models.evaluate(client_params[i], state.shards[i])
        per_client.append((i, loss, acc))
        losses[i] = loss
    accs = np.array([a for _, _, a in per_client])
    gap = fair.fairness_gap(accs)
    lambda2 = fair.monitor_and_adjust(gap, p.theta_fair, state.lambda2)

    gv_loss, gv_acc = models.evaluate(new_messenger, state.validation)
    pool_loss, _ = models.evaluate(new_messenger, state.pooled_eval)
    pc = new_messenger.param_count
    bytes_down = len(cohort) * 4 * messenger_model.param_count
    bytes_up = len(cohort) * 4 * pc
    energy = _round_energy(cfg, cohort_profiles)

    record = RoundRecord(
        round_index=t,
        h_t=report.h_t,
        capacity_index=decision.chosen_index,
        cohort=list(cohort),
        dropped=dropped,
        phi=phi_list,
        weights=[float(w) for w in weights],
        per_client=per_client,
        global_val_loss=gv_loss,
        global_val_accuracy=gv_acc,
        global_pool_loss=pool_loss,
        fairness_gap=gap,
        lambda2=state.lambda2,
        bytes_up=bytes_up,
        bytes_down=bytes_down,
        energy_kwh=energy,
        eps_round=eps_round,
        eps_total=eps_total,
        empty=False,
    )
    new_state = replace(
        state,
        client_params=client_params,
        messenger=new_messenger,
        capacity_decision=decision,
        lambda2=lambda2,
        round_index=t,
        h_max=h_max,
        eps_total=eps_total,
        last_client_losses=losses,
        phi_prior=phi_prior,
    )
    return new_state, record


def _run_round_fedavg(state: SimState, cfg: RunConfig) -> tuple[SimState, RoundRecord]:
    p = cfg.protocol
    t = state.round_index + 1
    cohort, dropped = _sample_cohort(state, t)
    if not cohort:
        new_state = replace(state, round_index=t)
        return new_state, _empty_record(new_state, t, dropped)
    cohort_profiles = [state.profiles[i] for i in cohort]
    cohort_shards = [state.shards[i] for i in cohort]
    report = het.assess_cohort(
        cohort_shards, cohort_profiles, state.pooled_dist, state.het_config
    )
    h_max = max(state.h_max, report.h_t)
    base = state.global_model

    def client_work(i: int) -> ModelParams:
        return models.train_local(base, state.train_shards[i], p.local_steps, p.local_lr)

    trained = _parallel_map(client_work, cohort)

    eps_round = 0.0
    if state.privacy_params.enabled and state.privacy_params.noise_multiplier > 0:
        noised = []
        for i, model in zip(cohort, trained):
            delta = privacy.privatize(
                model.theta - base.theta, state.privacy_params, subseed(cfg.seed, "dp", t, i)
            )
            noised.append(ModelParams(base.arch, base.theta + delta))
        trained = noised
        eps_round = state.per_round_eps
    eps_total = state.eps_total + eps_round

    trained = inject_attack(
        trained, base, cohort_profiles, state.attack, subseed(cfg.seed, "attack", t)
    )

    counts = np.array([pr.sample_count for pr in cohort_profiles], dtype=np.float64)
    weights = counts / counts.sum()
    if p.robust_method is not None:
        robust_cfg = fair.RobustAggConfig(
            method=p.robust_method, f=_resolve_f(p.robust_f, len(cohort))
        )
        new_global = fair.robust_aggregate(trained, robust_cfg, weights=weights)
    else:
        new_global = fair.aggregate_messengers(trained, weights)

    per_client = []
    losses = dict(state.last_client_losses)
    for i in cohort:
        loss, acc = models.evaluate(new_global, state.shards[i])
        per_client.append((i, loss, acc))
        losses[i] = loss
    accs = np.array([a for _, _, a in per_client])
    gap = fair.fairness_gap(accs)
    gv_loss, gv_acc = models.evaluate(new_global, state.validation)
    pool_loss, _ = models.evaluate(new_global, state.pooled_eval)
    pc = new_global.param_count
    energy = _round_energy(cfg, cohort_profiles)
    record = RoundRecord(
        round_index=t,
        h_t=report.h_t,
        capacity_index=None,
        cohort=list(cohort),
        dropped=dropped,
        phi=None,
        weights=[float(w) for w in weights],
        per_client=per_client,
        global_val_loss=gv_loss,
        global_val_accuracy=gv_acc,
        global_pool_loss=pool_loss,
        fairness_gap=gap,
        lambda2=state.lambda2,
        bytes_up=len(cohort) * 4 * pc,
        bytes_down=len(cohort) * 4 * pc,
        energy_kwh=energy,
        eps_round=eps_round,
        eps_total=eps_total,
        empty=False,
    )
    new_state = replace(
        state,
        global_model=new_global,
        client_params=[new_global.copy() for _ in state.profiles],
        round_index=t,
        h_max=h_max,
        eps_total=eps_total,
        last_client_losses=losses,
    )
    return new_state, record


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------


def run_experiment(cfg: RunConfig) -> RunLog:
    """Run the configured algorithm to target accuracy or max rounds."""
    state = init_state(cfg)
    model = state.global_model if state.global_model is not None else state.messenger
    loss0, acc0 = models.evaluate(model, state.validation)
    log = RunLog(
        algorithm=cfg.protocol.algorithm,
        seed=cfg.seed,
        config_digest=cfg.digest(),
        target_accuracy=cfg.target_accuracy,
        initial_val_loss=loss0,
        initial_val_accuracy=acc0,
    )
    for _ in range(cfg.max_rounds):
        state, record = run_round(state, cfg)
        log.records.append(record)
        log.h_max = state.h_max
        if (
            cfg.target_accuracy is not None
            and log.rounds_to_target is None
            and record.global_val_accuracy >= cfg.target_accuracy
        ):
            log.rounds_to_target = record.round_index
            break
    final_model = state.global_model if state.global_model is not None else state.messenger
    class_accs: dict[str, list[float]] = {}
    for profile, shard in zip(state.profiles, state.shards):
        eval_model = (
            final_model if cfg.protocol.algorithm == "fedavg" else state.client_params[profile.id]
        )
        _, acc = models.evaluate(eval_model, shard)
        log.final_client_accuracy[profile.id] = acc
        class_accs.setdefault(profile.institution_class, []).append(acc)
    log.final_class_accuracy = {k: float(np.mean(v)) for k, v in class_accs.items()}
    return log


def run_baseline(cfg: RunConfig, kind: str) -> RunLog:
    """Run a named baseline regardless of the config's algorithm field."""
    from .config import config_from_dict

    data = cfg.to_dict()
    data.pop("schema_version")
    data["protocol"]["algorithm"] = kind
    return run_experiment(config_from_dict(data))


def centralized_reference_loss(cfg: RunConfig, steps: int = 3000, lr: float = 0.5) -> float:
    """Objective floor: a long centralized run on the pooled federation data.

    Trains the largest messenger template on the union of all shards and
    returns its pooled loss — the F* that convergence-trend fits subtract.
    """
    state = init_state(cfg)
    arch = state.grid.templates[-1]
    model = models.init_params(arch, subseed(cfg.seed, "central-oracle"))
    trained = models.train_local(model, state.pooled_eval, steps, lr)
    return models.evaluate(trained, state.pooled_eval)[0]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def write_run_outputs(log: RunLog, outdir: str) -> dict[str, str]:
    """Write rounds.jsonl and summary.json; returns the file paths."""
    os.makedirs(outdir, exist_ok=True)
    rounds_path = os.path.join(outdir, "rounds.jsonl")
    with open(rounds_path, "w", encoding="utf-8") as fh:
        for record in log.records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    summary_path = os.path.join(outdir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(log.summary_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"rounds": rounds_path, "summary": summary_path}


def load_records(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_summary(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        summary = json.load(fh)
    if summary.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"summary schema version {summary.get('schema_version')} != {SCHEMA_VERSION}"
        )
    return summary
