"""Robot-learning paradigms driven by affordance predictions."""

from .action_space import DiscreteActionMap, DqnConfig, QNetwork, build_action_space, dqn_train
from .bc import BcPolicy, bc_execute, bc_train
from .features import EncoderEmbedding, EnvChangeModel, PixelEmbedding, env_change, make_embedding
from .metrics import classify_outcome, feature_distance_curve, time_correlation
from .paradigms import (
    EliteDistribution,
    IterationStats,
    ModelPolicy,
    World,
    collect,
    fit_elite,
    knn_execute,
    rank_by_exploration,
    rank_by_goal,
    run_paradigm_loop,
)

__all__ = [
    "BcPolicy", "DiscreteActionMap", "DqnConfig", "EliteDistribution", "EncoderEmbedding", "EnvChangeModel",
    "IterationStats", "ModelPolicy", "PixelEmbedding", "QNetwork", "World", "bc_execute", "bc_train",
    "build_action_space", "classify_outcome", "collect", "dqn_train", "env_change", "feature_distance_curve",
    "fit_elite", "knn_execute", "make_embedding", "rank_by_exploration", "rank_by_goal", "run_paradigm_loop",
    "time_correlation",
]
