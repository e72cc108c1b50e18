"""Dynamic covariate-assisted spectral clustering toolkit."""

from .clustering import (
    KMeansResult,
    PipelineRun,
    SpectralEmbedding,
    casc_dc,
    cluster_similarity,
    cluster_similarity_series,
    dsc_aggregate,
    dsc_covariates,
    dsc_smoothed,
    run_casc_dc,
    select_k,
    spectral_embed,
    spherical_kmeans,
)
from .errors import (
    ConfigurationError,
    DegenerateGraphError,
    InfeasibleError,
    IngestError,
    NumericalError,
)
from .evaluation import (
    BacktestResult,
    BoundParams,
    BoundResult,
    contrarian_backtest,
    group_centrality,
    group_connections,
    misclustering_rate,
    misclustering_upper_bound,
)
from .netbuild import (
    ContractAttributes,
    LassoConfig,
    LassoFit,
    ReturnPanel,
    adaptive_lasso_fit,
    contract_adjacency,
    covariate_dummies,
    degree_centrality_normalized,
    eigenvector_centrality,
    return_network,
)
from .sbm import (
    BlockProbabilitySeries,
    CovariateMatrix,
    DegreeParams,
    DynamicNetwork,
    MembershipSeries,
    SimConfig,
    population_adjacency,
    population_similarity,
    sample_dynamic_dcbm,
)
from .similarity import (
    KernelWeights,
    SimilaritySeries,
    build_series,
    covariate_component,
    kernel_weights,
    lepski_bandwidth,
    regularized_laplacian,
    smoothed_similarity,
    spectral_norm,
    tune_alpha,
)

__all__ = [name for name in dir() if not name.startswith("_")]
