"""Recurrent topic model: corpus tools, training, evaluation, generation, LDA baseline."""

from ._core import (
    Assignment,
    Document,
    LdaModel,
    Model,
    NumericError,
    TrainConfig,
    Vocabulary,
    default_stopwords,
    digamma,
    encode_document,
    kl_dirichlet,
    lda_assignments,
    lda_fit,
    lda_mean_theta_entropy,
    load_stopwords,
    lowercase,
    read_corpus,
    sample_dirichlet,
    switchp,
    switchp_sequences,
    train,
)

__all__ = [
    "Assignment",
    "Document",
    "LdaModel",
    "Model",
    "NumericError",
    "TrainConfig",
    "Vocabulary",
    "default_stopwords",
    "digamma",
    "encode_document",
    "kl_dirichlet",
    "lda_assignments",
    "lda_fit",
    "lda_mean_theta_entropy",
    "load_stopwords",
    "lowercase",
    "read_corpus",
    "sample_dirichlet",
    "switchp",
    "switchp_sequences",
    "train",
]
