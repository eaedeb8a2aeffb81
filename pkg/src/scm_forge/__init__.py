"""Stochastic configuration machines: constructive randomized networks with
binary hidden weights, pseudoinverse readout and early stopping, plus the
RVFL/SCN baseline family, synthetic benchmarks, storage accounting and a
model-complexity estimator."""

from .activations import ActivationKind, activate
from .builder import (
    ALGORITHMS,
    UNBOUNDED,
    BuilderConfig,
    CandidateEvaluation,
    CandidateStream,
    TrainingTrace,
    build_baseline,
    build_scm,
    candidate_search,
    compute_xi,
    early_stop_check,
    fit_linear_mechanism,
    solve_readout,
)
from .complexity import Box, McEstimate, count_extrema, estimate_mc_1d, estimate_mc_nd
from .dataset import (
    Dataset,
    NormParams,
    gen_rastrigin,
    gen_rdb7,
    load_csv,
    normalize_minmax,
    split,
)
from .model import (
    BinaryWeightMatrix,
    ExternalMechanism,
    Layer,
    LinearMechanism,
    ScmModel,
    deserialize,
    forward,
    hidden_outputs,
    register_mechanism,
    serialize,
    storage_report,
)
from .numerics import LassoSolution, lasso_fit, least_squares_pinv, rmse

__version__ = "0.1.0"
