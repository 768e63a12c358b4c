from ._core import (
    ConfigError,
    DataError,
    Error,
    GrammarError,
    Model,
    NumericError,
    feature_names,
    generate_corpus,
    grad_check,
    membership,
    mixture_distribution,
    presets,
    train,
    tri,
    vocabulary,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "GrammarError",
    "Model",
    "NumericError",
    "feature_names",
    "generate_corpus",
    "grad_check",
    "membership",
    "mixture_distribution",
    "presets",
    "train",
    "tri",
    "vocabulary",
]
