"""Shapley-value attributions for small feed-forward networks.

Exact enumeration, permutation sampling, occlusion, gradient-based
baselines and Deep Approximate Shapley Propagation (DASP), plus a
benchmark harness scoring them against exact ground truth.
"""

import os

if os.environ.get("SHAPPROP_STRICT", "") == "1":
    # single-threaded BLAS keeps every reduction in a fixed order
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, "1")

from .attribution import (AttributionResult, dasp, exact_shapley, gradient_x_input,  # noqa: E402
                          integrated_gradients, occlusion, run_method, shapley_sampling)
from .coalition import CoalitionStats, SizeSchedule, coalition_input_stats, pick_coalition_sizes  # noqa: E402
from .counter import EvalCounter  # noqa: E402
from .gaussian import (MomentPair, max_pair_moments, relu_gaussian_moments,  # noqa: E402
                       std_normal_cdf)
from .harness import ComparisonConfig, ComparisonReport, rmse, run_comparison, spearman  # noqa: E402
from .network import (LayerSpec, Model, forward, generate_random_model, gradient,  # noqa: E402
                      load_model, save_model)
from .probnet import GaussianActivation, propagate_tail  # noqa: E402

__version__ = "0.1.0"
