"""Deep Vecchia ensembles: per-layer Vecchia GPs on the intermediate
representations of a feed-forward composite model, combined by a generalized
product of experts."""

from .composite import CompositeModel, LayerSpec, extract_datasets, forward, make_scurve, train_toy_mlp
from .ensemble import CombinedPrediction, EnsembleConfig, combine, weights
from .kernel import KernelParams, gram, k
from .neighbors import ConditioningSets, IvfIndex, Ordering, ivf_build, ivf_query, ordered_knn_exact, random_ordering
from .pipeline import (
    BackendSpec,
    FittedEnsemble,
    build,
    explain,
    load_ensemble,
    metrics,
    predict_batch,
    save_ensemble,
    uncertainty_split,
)
from .vecchia import (
    EmbeddingDataset,
    GaussianPrediction,
    OptimizerConfig,
    conditional_moments,
    fit,
    predict,
    vecchia_nll,
)

__version__ = "0.1.0"
