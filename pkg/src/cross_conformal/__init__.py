"""Inductive, cross- and naive cross-conformal prediction for binary classification."""

from .conformal import (
    CrossConformalPredictor,
    InductiveConformalPredictor,
    InductiveConformityMeasure,
    LogitDeltaMeasure,
    NaiveCrossConformalPredictor,
    ccp_pvalues,
    confidence_credibility,
    fisher_combine,
    fold_pvalue,
    icp_pvalues,
    modified_mean,
    naive_ccp_pvalues,
    prediction_set,
)
from .core import (
    ConfidenceCredibility,
    Example,
    FoldPartition,
    LabeledDataset,
    PredictionSet,
    PValueMap,
    SplitPartition,
    make_folds,
    make_split,
    shuffle_and_split,
)
from .learners import (
    BaselineLearner,
    BoostingConfig,
    BoostingLearner,
    ExternalLearner,
    MissingScoreError,
    external_scores,
    train_baseline,
    train_boosted_stumps,
)

__version__ = "0.1.0"
