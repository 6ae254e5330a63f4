"""Exact GTR+Gamma joint distributions on trees and their inversion."""

from ._kernels import backend
from .errors import (
    DegenerateInstanceError,
    DeskScaleExceeded,
    DomainError,
    GTRIdentError,
    InconsistentDistributionError,
    InternalInconsistencyError,
    NonIdentifiableError,
    NotATreeMetricError,
    NumericalError,
    UnsupportedRegimeError,
    ValidationError,
)
from .forward import (
    JointTensor,
    LabeledTree,
    joint3_exact,
    joint_n_spectral,
    joint_quadrature_oracle,
    marginalize,
    permute_taxa,
)
from .identify import (
    ExtractedData,
    RecoveredModel,
    extract_d,
    extract_data,
    rank_edges,
    recover_all,
    recover_eigenbasis,
    recover_pi,
    solve_beta,
)
from .model import (
    GammaRates,
    GTRModel,
    GTRRateMatrix,
    NuTensor,
    SpectralForm,
    StateDistribution,
    TripleTree,
    build_gtr,
    mgf_gamma,
    mgf_gamma_inverse,
    nu_tensor,
    spectral_decompose,
)
from .regimes import (
    RegimeTag,
    check_rate_inequalities,
    classify_model,
    classify_regime,
    nonzero_triple_search,
)
from .trees import DistanceMatrix, build_tree, distances_from_joint

__version__ = "0.1.0"

__all__ = [
    "backend",
    "DegenerateInstanceError",
    "DeskScaleExceeded",
    "DomainError",
    "GTRIdentError",
    "InconsistentDistributionError",
    "InternalInconsistencyError",
    "NonIdentifiableError",
    "NotATreeMetricError",
    "NumericalError",
    "UnsupportedRegimeError",
    "ValidationError",
    "JointTensor",
    "LabeledTree",
    "joint3_exact",
    "joint_n_spectral",
    "joint_quadrature_oracle",
    "marginalize",
    "permute_taxa",
    "ExtractedData",
    "RecoveredModel",
    "extract_d",
    "extract_data",
    "rank_edges",
    "recover_all",
    "recover_eigenbasis",
    "recover_pi",
    "solve_beta",
    "GammaRates",
    "GTRModel",
    "GTRRateMatrix",
    "NuTensor",
    "SpectralForm",
    "StateDistribution",
    "TripleTree",
    "build_gtr",
    "mgf_gamma",
    "mgf_gamma_inverse",
    "nu_tensor",
    "spectral_decompose",
    "RegimeTag",
    "check_rate_inequalities",
    "classify_model",
    "classify_regime",
    "nonzero_triple_search",
    "DistanceMatrix",
    "build_tree",
    "distances_from_joint",
]
