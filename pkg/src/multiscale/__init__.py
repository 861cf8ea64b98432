"""Multi-scale policy learning: micro policy families indexed by macro actions, trained
level by level with off-policy (IPS) objectives on logged data."""
from .core import LevelSpec, LoggedDataset, RngStream, make_rng, read_dataset, validate_dataset, write_dataset
from .estimators import ValueEstimate, brute_force_value, clipped_ips_value, ips_gradient, ips_value
from .msbl import (
    LevelConfig,
    LevelStack,
    MultiScalePolicy,
    load_multiscale,
    multiscale_inference,
    policy_learning,
    policy_learning_recursive,
    save_multiscale,
)
from .optim import NetworkSpec, OptimizerConfig, train_policy
from .pacbayes import GaussianSpec, gaussian_kl, reproduce_numerical_example, sample_savings
from .policies import FamilyMode, MacroAction, PolicyFamily, SoftmaxPolicy, UniformPolicy

__version__ = "0.1.0"

__all__ = [
    "FamilyMode",
    "GaussianSpec",
    "LevelConfig",
    "LevelSpec",
    "LevelStack",
    "LoggedDataset",
    "MacroAction",
    "MultiScalePolicy",
    "NetworkSpec",
    "OptimizerConfig",
    "PolicyFamily",
    "RngStream",
    "SoftmaxPolicy",
    "UniformPolicy",
    "ValueEstimate",
    "brute_force_value",
    "clipped_ips_value",
    "gaussian_kl",
    "ips_gradient",
    "ips_value",
    "load_multiscale",
    "make_rng",
    "multiscale_inference",
    "policy_learning",
    "policy_learning_recursive",
    "read_dataset",
    "reproduce_numerical_example",
    "sample_savings",
    "save_multiscale",
    "train_policy",
    "validate_dataset",
    "write_dataset",
]
