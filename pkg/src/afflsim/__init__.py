"""Desk-scale simulator of adaptive fair federated learning.

Heterogeneity-driven messenger adaptation, curriculum knowledge transfer,
Shapley-weighted fair aggregation, differential privacy, Byzantine-robust
consensus, and a healthcare-style benchmark metric suite — all deterministic
given (config, seed).
"""

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .fairness import (
    FairWeights,
    RobustAggConfig,
    aggregate_messengers,
    fair_weights,
    fairness_gap,
    gini,
    monitor_and_adjust,
    robust_aggregate,
    shapley_estimate,
)
from .federation import (
    ClientProfile,
    DatasetShard,
    FederationConfig,
    gen_federation,
    gen_reference_shard,
    pooled_label_distribution,
)
from .harness import (
    AttackSpec,
    RoundRecord,
    RunLog,
    compute_load,
    inject_attack,
    run_baseline,
    run_experiment,
    run_round,
    sample_clients,
)
from .heterogeneity import (
    HeterogeneityConfig,
    HeterogeneityReport,
    arch_divergence,
    heterogeneity_index,
    res_divergence,
    stat_divergence,
)
from .messenger import (
    CapacityDecision,
    CapacityGrid,
    CurriculumSchedule,
    FusionConfig,
    curriculum_weights,
    distill_to_messenger,
    fuse_modalities,
    inject_knowledge,
    select_capacity,
)
from .models import (
    Arch,
    ModelParams,
    assign_difficulty_tiers,
    evaluate,
    init_params,
    train_local,
)
from .privacy import (
    PrivacyParams,
    PrivacySpend,
    account_privacy,
    clip_update,
    mia_attack,
    privatize,
)

__version__ = "0.1.0"
