"""chimp: the Choquet integral as an explicit, trainable fusion network.

Fuzzy-measure data structures, four equivalent integral evaluators, a
monotone-by-construction trainable parameterization with analytic SGD
gradients, introspection indices, and a reproducible experiment harness.
"""

from .dataset import Dataset, NoiseSpec, generate, generate_sweep
from .fusion import FusionTask, ingest_posteriors, run_fusion
from .integral import (
    LcsWeights,
    SortPermutation,
    chi_k_additive,
    chi_maxmin,
    chi_mobius,
    chi_sort,
    chi_sort_batch,
    chimp_select_forward,
    lcs_expand,
)
from .measure import (
    FuzzyMeasure,
    MobiusMeasure,
    Violation,
    k_truncate,
    load_measure,
    make_special,
    mobius,
    save_measure,
    validate,
    zeta,
)
from .network import (
    ChimpParams,
    IntegrandVector,
    MaterializedMeasure,
    flop_count,
    forward,
    integrand,
    load_params,
    materialize,
    normalize_option,
    save_params,
)
from .training import (
    GradientBundle,
    NumericError,
    TrainConfig,
    backward_inputs,
    backward_params,
    grad_check,
    loss,
    max_derivative_weights,
    min_derivative_weights,
    sgd_fit,
)
from .experiment import run_experiment1, target_measures
from .xai import WalkStats, XaiReport, build_report, interaction, operator_distances, shapley, trust, walk_stats

__version__ = "0.1.0"
