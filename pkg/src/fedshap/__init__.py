"""Shapley-value explanations for a two-party vertically federated KNN."""

from .data import (
    ADULT_GUEST_3,
    ADULT_GUEST_5,
    ADULT_SCHEMA,
    FeaturePartition,
    FeatureSchema,
    NumericDataset,
    ReferenceVector,
    compute_reference,
    encode_and_normalize,
    load_adult,
    load_census_csv,
    train_test_split,
)
from .explainer import (
    ExplainConfig,
    Workspace,
    batch_explain,
    explain_federated,
    explain_full,
    explain_grouped,
    rank_agreement,
)
from .knn import KnnModel, accuracy, fit, partial_sq_dist
from .shapley import (
    CoalitionMask,
    ShapleyGame,
    ShapleyReport,
    brute_force_shapley,
    coalition_weight,
    masked_instance,
    model_value_fn,
    shapley_values,
)

__version__ = "0.1.0"
