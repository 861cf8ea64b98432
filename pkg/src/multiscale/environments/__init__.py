from .base import MultiScaleEnv, StepRecord, Users, group_means, sample_by_member
from .conversational import (
    ConvEnvSpec,
    ConversationalEnv,
    TokenModel,
    conv_level2_reward,
    conv_level3_reward,
    conv_micro_reward,
    conv_parameterized_feedback,
    diversity_batch,
    diversity_score,
)
from .finite import FiniteEnv
from .ranking import (
    RankEnvSpec,
    RankingEnv,
    expected_inverse_return_day,
    rank_step,
    retention_reward,
    retention_weight,
)
from .toy import ToyEnv, ToyEnvSpec, top_k, toy_long_term_reward

__all__ = [
    "ConvEnvSpec",
    "ConversationalEnv",
    "FiniteEnv",
    "MultiScaleEnv",
    "RankEnvSpec",
    "RankingEnv",
    "StepRecord",
    "TokenModel",
    "ToyEnv",
    "ToyEnvSpec",
    "Users",
    "conv_level2_reward",
    "conv_level3_reward",
    "conv_micro_reward",
    "conv_parameterized_feedback",
    "diversity_batch",
    "diversity_score",
    "expected_inverse_return_day",
    "group_means",
    "rank_step",
    "retention_reward",
    "retention_weight",
    "sample_by_member",
    "top_k",
    "toy_long_term_reward",
]
