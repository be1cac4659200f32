"""Deep Bayesian active learning: MC-dropout CNN, acquisition functions and the AL loop."""

from ._dbal import (
    Config,
    ConfigError,
    ConfigFileError,
    LoadError,
    Model,
    SelectionError,
    cli,
    consensus_probs,
    evaluate_probs,
    generate_synthetic,
    load_image,
    run_experiment,
    score,
    select_top_k,
    weight_decay_coefficient,
)

__all__ = [
    "Config",
    "ConfigError",
    "ConfigFileError",
    "LoadError",
    "Model",
    "SelectionError",
    "cli",
    "consensus_probs",
    "evaluate_probs",
    "generate_synthetic",
    "load_image",
    "run_experiment",
    "score",
    "select_top_k",
    "weight_decay_coefficient",
]
