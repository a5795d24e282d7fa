"""Two-step identification: bagging ensembles, one-class envelopes, segment voting, GDA."""

from .ensemble import (DEFAULT_CANDIDATES, EnsembleConfig, EnsembleModel, LabeledDataset, SchemaMismatchError,
                       cross_validate, select_best_model, stratified_folds, train_binary_ensemble)
from .gda import GdaEmbedding, gda_embed, tune_gamma
from .identify import (UNKNOWN_ORIGIN, RegistryError, Verdict, predict_segments, two_step_identify,
                       verdict_from_posteriors)
from .oneclass import OneClassEnvelope, train_one_class

__all__ = [
    "DEFAULT_CANDIDATES", "EnsembleConfig", "EnsembleModel", "LabeledDataset", "SchemaMismatchError",
    "cross_validate", "select_best_model", "stratified_folds", "train_binary_ensemble",
    "GdaEmbedding", "gda_embed", "tune_gamma",
    "UNKNOWN_ORIGIN", "RegistryError", "Verdict", "predict_segments", "two_step_identify",
    "verdict_from_posteriors", "OneClassEnvelope", "train_one_class",
]
