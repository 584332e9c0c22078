"""Demand estimation from product embeddings.

Text or image embeddings are reduced to principal components, which then
carry random coefficients in a mixed logit estimated by simulated maximum
likelihood. Specifications are chosen by forward AIC search and judged by
how well they predict second choices; fitted models feed diversion ratios
and merger price simulations.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .counterfactual import (
    DiversionMatrix,
    EquilibriumResult,
    OwnershipMap,
    bertrand_equilibrium,
    closest_substitute_diversion,
    empirical_diversions,
    merger_simulation,
    predicted_diversions,
    removal_shares,
    second_choice_rmse,
    shares,
)
from .data import (
    ChoiceObservation,
    Dataset,
    EmbeddingMatrix,
    Product,
    Source,
    attach_attributes_as_embedding,
    load_choices,
    load_dataset,
    load_embeddings,
    write_dataset,
)
from .design import SubsetConstraint, TruthParams, generate_synthetic, make_truth, max_variance_subset
from .draws import DrawConfig, make_draws
from .errors import EmbedChoiceError, MissingArtifactError, NumericalError, ParseError, ValidationError
from .mixlogit import (
    ChoiceData,
    Covariates,
    FitResult,
    MixedLogitProblem,
    ModelSpec,
    OptConfig,
    Params,
    fit_mle,
    information_criteria,
    standard_errors,
    utility,
)
from .pca import PCStore, fit_pca, standardize
from .selection import (
    AkaikeWeights,
    FitCache,
    SelectionTrace,
    akaike_weights,
    algorithm1,
    exhaustive_search,
    extend_candidate_set,
    select_across_specs,
    support_label,
)
from .text import Vocabulary, average_review_embedding, bow_vectorize, preprocess, tfidf_vectorize
