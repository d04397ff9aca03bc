"""Python access to the slpt core."""

from ._slpt import (
    DegenerateScores,
    FrozenParameterError,
    NumericError,
    TrainingFailure,
    combined_scores,
    config_echo,
    dice,
    divergence_score,
    diversity_loss,
    downstream_case,
    kcenter_greedy,
    lesion_count,
    lesion_pr,
    run,
    select_batch,
    tversky_index,
)

__all__ = [
    "DegenerateScores",
    "FrozenParameterError",
    "NumericError",
    "TrainingFailure",
    "combined_scores",
    "config_echo",
    "dice",
    "divergence_score",
    "diversity_loss",
    "downstream_case",
    "kcenter_greedy",
    "lesion_count",
    "lesion_pr",
    "run",
    "select_batch",
    "tversky_index",
]
